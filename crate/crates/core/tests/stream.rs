mod common;

use cdml_core::data::synth::{generate, SynthConfig};
use cdml_core::data::{Label3, Label5, NormStats, Record, SensorFrame};
use cdml_core::nn::{build_classifier, Arch, LayerSpec, NetworkModel};
use cdml_core::stream::*;
use cdml_core::Error;
use common::oracles::{debounce_oracle, score_oracle};
use proptest::prelude::*;

fn untrained() -> NetworkModel<f32> {
    let emb = Arch::Conv1DNet.build::<f32>().initialized(3);
    emb.compose(&build_classifier::<f32>().initialized(4))
        .unwrap()
}

/// Ignores its input and always answers `class`.
fn constant_model(class: Label3) -> NetworkModel<f64> {
    let mut m = NetworkModel::new(vec![
        LayerSpec::Input {
            shape: vec![28, 28],
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 784,
            units: 3,
        },
        LayerSpec::Softmax,
    ])
    .unwrap();
    let mut bias = vec![0.0; 3];
    bias[class.index()] = 5.0;
    let mut params = m.params().to_vec();
    params[2] = vec![
        cdml_core::Tensor::zeros(&[3, 784]),
        cdml_core::Tensor::vector(bias),
    ];
    m.set_params(params).unwrap();
    m
}

fn one_record(label5: Label5, frames: usize) -> Vec<Record> {
    let recs = generate(&SynthConfig {
        records_per_label: [1; 5],
        frames,
        ..SynthConfig::default()
    })
    .unwrap();
    recs.into_iter().filter(|r| r.label5 == label5).collect()
}

#[test]
fn two_hundred_frames_give_173_predictions() {
    let recs = one_record(Label5::NonContact, 200);
    let out = replay(
        &untrained(),
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert_eq!(out.predictions.len(), 173);
    assert_eq!(out.predictions[0].frame, 27);
    assert_eq!(out.predictions[172].frame, 199);
    assert_eq!(out.frames, 200);
    assert_eq!(out.dropped, 0);
    for p in &out.predictions {
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
    assert!(out.latency.median_ms > 0.0);
    assert!(out.latency.within_budget(), "{:?}", out.latency);
}

#[test]
fn short_logs_only_warm_up() {
    let recs = one_record(Label5::NonContact, 27);
    let out = replay(
        &untrained(),
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert!(out.predictions.is_empty());
    assert!(out.events.is_empty());
}

#[test]
fn constant_noncontact_log_has_no_events() {
    let recs = one_record(Label5::NonContact, 200);
    let model = constant_model(Label3::NonContact);
    let out = replay(
        &model,
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert!(out.events.is_empty());
    let s = score_replay(&out, &recs).unwrap();
    assert_eq!(s.score.failures[0], Ratio { count: 0, total: 1 });
    assert_eq!(s.score.false_alarms[0], Ratio { count: 0, total: 1 });
    assert_eq!(s.window_accuracy, 1.0);
}

#[test]
fn constant_collision_model_opens_one_event() {
    let recs = one_record(Label5::IncidentalL5, 100);
    let model = constant_model(Label3::Collision);
    let out = replay(
        &model,
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    assert_eq!(
        out.detected,
        vec![DetectedEvent {
            class3: Label3::Collision,
            start: 29,
            end: 100,
        }]
    );
    assert_eq!(out.events.len(), 2);
    assert_eq!(out.events[0].kind, EventKind::ContactStart);
    assert_eq!(out.events[1].kind, EventKind::ContactEnd);
}

#[test]
fn out_of_order_frames_are_rejected() {
    let mut recs = one_record(Label5::NonContact, 40);
    recs[0].frames.swap(10, 11);
    let r = replay(
        &untrained(),
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    );
    assert!(matches!(r, Err(Error::Input(_))));
}

#[test]
fn parse_errors_reach_the_caller() {
    let frames = (0..40).map(|i| {
        if i == 30 {
            Err(Error::Parse {
                line: 31,
                msg: "bad".into(),
            })
        } else {
            Ok(SensorFrame::from_features(i as f64 * 0.005, &[0.0; 28]))
        }
    });
    for speed in [Speed::Max, Speed::Realtime] {
        let opts = ReplayOptions {
            speed,
            ..ReplayOptions::default()
        };
        let r = replay(&untrained(), &NormStats::identity(), frames.clone(), &opts);
        assert!(matches!(r, Err(Error::Parse { line: 31, .. })), "{speed:?}");
    }
}

#[test]
fn realtime_matches_max_speed_when_nothing_drops() {
    let recs = one_record(Label5::IntentionalL6, 80);
    let model = untrained();
    let stats = NormStats::identity();
    let fast = replay(
        &model,
        &stats,
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    let rt = replay(
        &model,
        &stats,
        record_frames(&recs),
        &ReplayOptions {
            speed: Speed::Realtime,
            ..ReplayOptions::default()
        },
    )
    .unwrap();
    let pacing = rt.pacing.expect("realtime reports pacing");
    assert_eq!(pacing.frames, 80);
    // Pacing is reported, not asserted: a loaded machine may stretch it.
    eprintln!(
        "mean frame interval {:.3} ms, dropped {}",
        pacing.mean_interval_ms, rt.dropped
    );
    assert_eq!(rt.predictions.len() + rt.dropped, 80 - 27);
    if rt.dropped == 0 {
        let a: Vec<_> = fast
            .predictions
            .iter()
            .map(|p| (p.frame, p.class3))
            .collect();
        let b: Vec<_> = rt.predictions.iter().map(|p| (p.frame, p.class3)).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn realtime_overflow_drops_oldest() {
    let recs = one_record(Label5::NonContact, 120);
    let opts = ReplayOptions {
        speed: Speed::Realtime,
        queue_capacity: 1,
        ..ReplayOptions::default()
    };
    // A Conv2DNet forward takes longer than a frame period, so a one-slot
    // queue must overflow.
    let slow = Arch::Conv2DNet
        .build::<f64>()
        .initialized(0)
        .compose(&build_classifier::<f64>().initialized(1))
        .unwrap();
    let out = replay(&slow, &NormStats::identity(), record_frames(&recs), &opts).unwrap();
    let frames: Vec<usize> = out.predictions.iter().map(|p| p.frame).collect();
    assert!(frames.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(out.frames, 120);
    eprintln!("dropped {} of 120", out.dropped);
}

#[test]
fn predictions_jsonl() {
    let recs = one_record(Label5::NonContact, 30);
    let out = replay(
        &untrained(),
        &NormStats::identity(),
        record_frames(&recs),
        &ReplayOptions::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_predictions(&out.predictions, &mut buf, false).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["frame"], 27);
    assert_eq!(v["infer_ms"], 0.0);
    assert_eq!(v["probs"].as_array().unwrap().len(), 3);
    assert!(["C1", "C2", "C3"].contains(&v["class3"].as_str().unwrap()));
}

#[test]
fn identical_logs_score_identically() {
    let recs = generate(&SynthConfig {
        records_per_label: [2, 1, 1, 1, 1],
        ..SynthConfig::default()
    })
    .unwrap();
    let g = generalization_eval(
        &untrained(),
        &NormStats::identity(),
        &recs,
        &recs,
        DEFAULT_HOLD,
    )
    .unwrap();
    assert_eq!(g.source, g.target);
    assert_eq!(g.source.windows, 6 * 200 - 27);
    assert!(g.render().contains("Detection failures"));
}

fn label(i: usize) -> Label3 {
    Label3::ALL[i]
}

/// Segments of `len` frames: `c1` non-contact, then the contact segments,
/// each followed by a non-contact gap so events never touch. The first
/// `miss` segments of each contact class get an event of the other class.
fn crafted(
    c1: usize,
    c2: (usize, usize),
    c3: (usize, usize),
) -> (Vec<Segment>, Vec<DetectedEvent>, usize) {
    let len = 50;
    let mut segs = Vec::new();
    let mut events = Vec::new();
    let mut at = 0;
    let push = |class3, segs: &mut Vec<Segment>, at: &mut usize| {
        segs.push(Segment {
            class3,
            start: *at,
            end: *at + len,
        });
        *at += len;
    };
    let contact: Vec<(Label3, bool)> = (0..c2.0)
        .map(|i| (Label3::Intentional, i < c2.1))
        .chain((0..c3.0).map(|i| (Label3::Collision, i < c3.1)))
        .collect();
    let mut quiet = c1;
    for &(class3, missed) in &contact {
        if quiet > 0 {
            push(Label3::NonContact, &mut segs, &mut at);
            quiet -= 1;
        }
        let start = at;
        push(class3, &mut segs, &mut at);
        let predicted = match (class3, missed) {
            (c, false) => c,
            (Label3::Intentional, true) => Label3::Collision,
            _ => Label3::Intentional,
        };
        events.push(DetectedEvent {
            class3: predicted,
            start,
            end: start + len,
        });
    }
    for _ in 0..quiet {
        push(Label3::NonContact, &mut segs, &mut at);
    }
    (segs, events, at)
}

#[test]
fn source_table_shape() {
    let (segs, events, end) = crafted(447, (19, 6), (11, 1));
    let s = score_events(&events, &segs, 0, end).unwrap();
    assert_eq!(s.failures[0].to_string(), "0/447");
    assert_eq!(s.failures[1].to_string(), "6/19");
    assert_eq!(s.failures[2].to_string(), "1/11");
    assert_eq!(s.false_alarms[0].count, 0);
    // A misclassified event is both a failure of its true class and a false
    // alarm of the predicted one.
    assert_eq!(s.false_alarms[1].count, 1);
    assert_eq!(s.false_alarms[2].count, 6);
    assert_eq!(s.contact_failures.count, 0);
}

#[test]
fn target_table_shape_renders() {
    let (ss, se, send) = crafted(447, (19, 6), (11, 1));
    let (ts, te, tend) = crafted(612, (34, 17), (30, 13));
    let src = score_events(&se, &ss, 0, send).unwrap();
    let tgt = score_events(&te, &ts, 0, tend).unwrap();
    let table = render_event_table(&[("source", &src), ("target", &tgt)]);
    let fail = table
        .lines()
        .find(|l| l.starts_with("Detection failures"))
        .unwrap();
    let cells: Vec<&str> = fail.split_whitespace().skip(2).collect();
    assert_eq!(cells, ["0/447", "6/19", "1/11", "0/612", "17/34", "13/30"]);
    let alarms = table
        .lines()
        .find(|l| l.starts_with("False alarms"))
        .unwrap();
    let cells: Vec<&str> = alarms.split_whitespace().skip(2).collect();
    assert_eq!(cells[1], "1/14");
    assert_eq!(cells[4], "13/30");
}

fn windows(classes: &[Label3]) -> Vec<WindowClass> {
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| WindowClass {
            frame: i,
            class3: c,
            latency_ms: 0.0,
        })
        .collect()
}

#[test]
fn alternating_hold_one_matches_oracle() {
    let classes: Vec<Label3> = (0..20)
        .map(|i| {
            if i % 2 == 0 {
                Label3::Intentional
            } else {
                Label3::NonContact
            }
        })
        .collect();
    let (ev, _) = debounce(&windows(&classes), 1).unwrap();
    let got: Vec<_> = ev.iter().map(|e| (e.class3, e.start, e.end)).collect();
    assert_eq!(got, debounce_oracle(&classes, 1));
    assert_eq!(got.len(), 10);
}

fn class_strategy() -> impl Strategy<Value = Label3> {
    prop_oneof![3 => Just(Label3::NonContact), 1 => Just(Label3::Intentional), 1 => Just(Label3::Collision)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn debounce_matches_oracle(classes in prop::collection::vec(class_strategy(), 0..120), hold in 1usize..5) {
        let (ev, st) = debounce(&windows(&classes), hold).unwrap();
        let got: Vec<_> = ev.iter().map(|e| (e.class3, e.start, e.end)).collect();
        prop_assert_eq!(got, debounce_oracle(&classes, hold));
        prop_assert_eq!(st.len(), 2 * ev.len());
        for (k, e) in st.iter().enumerate() {
            let want = if k % 2 == 0 { EventKind::ContactStart } else { EventKind::ContactEnd };
            prop_assert_eq!(e.kind, want);
        }
        prop_assert!(st.windows(2).all(|w| w[0].frame <= w[1].frame));
        prop_assert!(ev.windows(2).all(|w| w[0].end <= w[1].start));
        // Events only touch at a change of contact class.
        prop_assert!(ev.windows(2).all(|w| w[0].end < w[1].start || st.iter().filter(|e| e.frame == w[0].end).count() == 2));
    }

    #[test]
    fn scoring_matches_oracle(
        lens in prop::collection::vec((5usize..40, 0usize..3), 10),
        classes in prop::collection::vec(class_strategy(), 400),
        hold in 1usize..4,
        first in 0usize..30,
    ) {
        let mut segs = Vec::new();
        let mut at = 0;
        for &(len, c) in &lens {
            segs.push(Segment { class3: label(c), start: at, end: at + len });
            at += len;
        }
        let end = at;
        let first = first.min(end - 1);
        let (events, _) = debounce(&windows(&classes[..end - first]).iter().map(|w| WindowClass { frame: w.frame + first, ..*w }).collect::<Vec<_>>(), hold).unwrap();
        let got = score_events(&events, &segs, first, end).unwrap();
        prop_assert_eq!(got, score_oracle(&events, &segs, first, end));
        for r in got.failures.iter().chain(&got.false_alarms) {
            prop_assert!(r.count <= r.total);
        }
    }

    #[test]
    fn perfect_hold_one_predictions_score_zero(lens in prop::collection::vec((28usize..60, 0usize..3), 1..8)) {
        let mut segs = Vec::new();
        let mut at = 0;
        for &(len, c) in &lens {
            segs.push(Segment { class3: label(c), start: at, end: at + len });
            at += len;
        }
        let wins: Vec<WindowClass> = (27..at)
            .map(|f| WindowClass {
                frame: f,
                class3: segs.iter().find(|g| g.start <= f && f < g.end).unwrap().class3,
                latency_ms: 0.0,
            })
            .collect();
        let (events, _) = debounce(&wins, 1).unwrap();
        let s = score_events(&events, &segs, 27, at).unwrap();
        // Segments lying wholly inside the warm-up cannot be seen.
        for (k, r) in s.failures.iter().enumerate() {
            let hidden = segs.iter().filter(|g| g.class3.index() == k && g.end <= 27).count() as u64;
            prop_assert_eq!(r.count, hidden);
        }
        for r in &s.false_alarms {
            prop_assert_eq!(r.count, 0);
        }
    }
}
