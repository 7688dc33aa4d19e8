use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::Path;
use std::sync::Mutex;

use cdml_core::data::synth::{generate, perturb, Perturbation, SynthConfig};
use cdml_core::data::{
    parse_log, split_dataset, write_log, write_windows, FrameReader, Label3, NormStats, Record,
    SensorWindow,
};
use cdml_core::eval::{
    compare_table, embed_all, evaluate, export_embeddings, knn_accuracy, projection_silhouette,
    write_projection, CellSummary,
};
use cdml_core::nn::{save, Arch};
use cdml_core::stream::{
    render_event_table, replay, score_events, score_log, write_predictions, DetectedEvent,
    EventScore, ReplayOptions, Segment, Speed,
};
use cdml_core::train::{
    parse_list, run_grid, split_composite, train_cell, GridOptions, GridSpec, LossKind, TrainConfig,
};
use cdml_core::{Error, Result, Tensor};
use serde::Serialize;

use crate::args::*;
use crate::io::*;

/// Exit status of a command that ran to completion.
pub type Status = u8;

fn json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

pub fn synth(a: &SynthArgs) -> Result<Status> {
    ensure_dir(&a.out.out)?;
    let records = match &a.from {
        Some(src) => {
            let records = parse_log(require(src)?).map_err(|e| in_file(src, e))?;
            let p = Perturbation {
                torque_offset: a.torque_offset,
                noise_scale: a.noise_scale,
                time_warp: a.time_warp,
            };
            perturb(&records, &p, a.seed)?
        }
        None => {
            let counts: Vec<usize> = parse_list("records_per_label", &a.records_per_label)?;
            let records_per_label: [usize; 5] = counts
                .try_into()
                .map_err(|_| Error::Input("--records-per-label needs five counts".into()))?;
            generate(&SynthConfig {
                records_per_label,
                frames: a.frames,
                ambiguity: a.ambiguity,
                noise: a.noise,
                seed: a.seed,
            })?
        }
    };
    let path = a.out.out.join(&a.name);
    let mut buf = Vec::new();
    write_log(&records, &mut buf)?;
    write(&path, buf)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(0)
}

fn side_counts(records: usize, windows: &[SensorWindow]) -> SideCounts {
    let mut classes = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for l in Label3::ALL {
        classes.insert(l.short().to_string(), 0);
    }
    for w in windows {
        *classes.entry(w.label3.short().to_string()).or_insert(0) += 1;
        *labels.entry(w.label5.as_str().to_string()).or_insert(0) += 1;
    }
    SideCounts {
        records,
        windows: windows.len(),
        classes,
        labels,
    }
}

pub fn prepare(a: &PrepareArgs) -> Result<Status> {
    let records = parse_log(require(&a.input)?).map_err(|e| in_file(&a.input, e))?;
    let split = split_dataset(&records, a.stride, a.seed)?;
    let stats = NormStats::fit(&split.train)?;
    let dir = &a.out.out;
    ensure_dir(dir)?;
    let mut buf = Vec::new();
    write_windows(&split.train, &mut buf)?;
    write(&dir.join(TRAIN_WINDOWS), &buf)?;
    buf.clear();
    write_windows(&split.test, &mut buf)?;
    write(&dir.join(TEST_WINDOWS), &buf)?;
    buf.clear();
    let held_out: Vec<Record> = records
        .iter()
        .filter(|r| split.test_records.contains(&r.id))
        .cloned()
        .collect();
    write_log(&held_out, &mut buf)?;
    write(&dir.join(TEST_LOG), &buf)?;
    stats.save(dir.join(NORM))?;

    let mut per_record: BTreeMap<String, usize> = BTreeMap::new();
    for w in split.train.iter().chain(&split.test) {
        *per_record.entry(w.record_id.clone()).or_insert(0) += 1;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        input: a
            .input
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        seed: a.seed,
        stride: a.stride,
        total_windows: split.train.len() + split.test.len(),
        train: side_counts(split.train_records.len(), &split.train),
        test: side_counts(split.test_records.len(), &split.test),
        skipped_records: records
            .iter()
            .filter(|r| !per_record.contains_key(&r.id))
            .map(|r| r.id.clone())
            .collect(),
        windows_per_record: per_record,
        train_records: split.train_records.clone(),
        test_records: split.test_records.clone(),
    };
    json_file(&dir.join(MANIFEST), &manifest)?;
    println!(
        "{} records -> {} train / {} test windows (stride {}, seed {})",
        records.len(),
        split.train.len(),
        split.test.len(),
        a.stride,
        a.seed
    );
    Ok(0)
}

fn build_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &flags.config {
        let text = fs::read_to_string(require(p)?)?;
        cfg.apply_text(&text).map_err(|e| in_file(p, e))?;
    }
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn copy_stats(data: &Path, out: &Path) -> Result<()> {
    fs::copy(data.join(NORM), out.join(NORM))?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<Status> {
    let cfg = build_config(&a.train)?;
    let prepared = Prepared::load(&a.data)?;
    let data = prepared.train_data()?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    ensure_dir(&a.out.out)?;
    let mut cell = train_cell(&cfg, &data, seed)?;
    if a.out.no_timestamps {
        cell.report.wall_s = 0.0;
    }
    let r = &cell.report;
    let stem = format!("{}_{}_{}", r.arch, r.loss_fn, r.seed);
    save(&cell.composite()?, a.out.out.join(format!("{stem}.ckpt")))?;
    json_file(&a.out.out.join(format!("{stem}.json")), r)?;
    copy_stats(&a.data, &a.out.out)?;
    println!(
        "{} / {} seed {}: train acc {:.4}, test loss {:.4}, test acc {:.4}",
        r.arch.title(),
        r.loss_fn.title(),
        r.seed,
        r.train_acc,
        r.test_loss,
        r.test_acc
    );
    print!("{}", r.confusion);
    Ok(0)
}

pub fn grid(a: &GridArgs) -> Result<Status> {
    let base = build_config(&a.train)?;
    let spec = GridSpec {
        archs: parse_list::<String>("archs", &a.archs)?
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?,
        losses: parse_list::<String>("losses", &a.losses)?
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?,
        seeds: base.seeds.clone(),
        base,
    };
    let prepared = Prepared::load(&a.data)?;
    let data = prepared.train_data()?;
    ensure_dir(&a.out.out)?;
    let outcome = run_grid(
        &spec,
        &data,
        &GridOptions {
            out_dir: a.out.out.clone(),
            jobs: a.jobs,
            timestamps: !a.out.no_timestamps,
        },
    )?;
    copy_stats(&a.data, &a.out.out)?;
    print!("{}", fs::read_to_string(a.out.out.join("table.txt"))?);
    println!(
        "{} cells reported ({} resumed), {} aborted",
        outcome.reports.len(),
        outcome.resumed,
        outcome.aborted.len()
    );
    for (key, msg) in &outcome.aborted {
        eprintln!("{}: {msg}", key.stem());
    }
    Ok(if outcome.aborted.is_empty() { 0 } else { 1 })
}

/// (architecture, objective) from a `best_<arch>_<loss>` or
/// `<arch>_<loss>_<seed>` checkpoint name.
fn cell_of(model: &Path) -> Option<(Arch, LossKind)> {
    let stem = model.file_stem()?.to_str()?;
    let parts: Vec<&str> = stem.trim_start_matches("best_").split('_').collect();
    Some((parts.first()?.parse().ok()?, parts.get(1)?.parse().ok()?))
}

#[derive(Serialize)]
struct EvalRecord {
    model: String,
    windows: usize,
    accuracy: f64,
    loss: f64,
    confusion: [[u64; 3]; 3],
    knn_k: Option<usize>,
    knn_accuracy: Option<f64>,
}

pub fn eval(a: &EvalArgs) -> Result<Status> {
    let prepared = Prepared::load(&a.data)?;
    let model = load_model(&a.model)?;
    let (embedding, classifier) = split_composite(&model)?;
    let data = prepared.train_data()?;
    if data.test_x.is_empty() {
        return Err(Error::Input(format!(
            "no test windows in {}",
            a.data.join(TEST_WINDOWS).display()
        )));
    }
    let e = evaluate(&embedding, &classifier, &data.test_x, &data.test_y)?;
    let knn = match a.knn {
        Some(k) => {
            let tr: Tensor<f32> = embed_all(&embedding, &data.train_x)?;
            let te: Tensor<f32> = embed_all(&embedding, &data.test_x)?;
            Some(knn_accuracy(&tr, &data.train_y, &te, &data.test_y, k)?)
        }
        None => None,
    };
    ensure_dir(&a.out.out)?;
    write(&a.out.out.join("confusion.csv"), e.confusion.to_csv())?;
    json_file(
        &a.out.out.join("eval.json"),
        &EvalRecord {
            model: a.model.display().to_string(),
            windows: data.test_y.len(),
            accuracy: e.accuracy,
            loss: e.loss,
            confusion: e.confusion.counts,
            knn_k: a.knn,
            knn_accuracy: knn,
        },
    )?;
    match cell_of(&a.model) {
        Some((arch, loss_fn)) => print!(
            "{}",
            compare_table(&[CellSummary {
                arch,
                loss_fn,
                test_loss: e.loss,
                test_acc: e.accuracy,
            }])
            .render_text()
        ),
        None => println!("test loss {:.4} / accuracy {:.4}", e.loss, e.accuracy),
    }
    print!("{}", e.confusion);
    if let (Some(k), Some(acc)) = (a.knn, knn) {
        println!("{k}-NN accuracy in embedding space: {acc:.4}");
    }
    Ok(0)
}

pub fn embed(a: &EmbedArgs) -> Result<Status> {
    let prepared = Prepared::load(&a.data)?;
    let model = load_model(&a.model)?;
    let (embedding, _) = split_composite(&model)?;
    let raw = match a.split {
        Side::Train => &prepared.train,
        Side::Test => &prepared.test,
    };
    let rows = export_embeddings(&embedding, &prepared.normalized(raw), a.components)?;
    ensure_dir(&a.out.out)?;
    let mut buf = Vec::new();
    write_projection(&rows, &mut buf)?;
    write(&a.out.out.join("projection.csv"), buf)?;
    let s = projection_silhouette(&rows)?;
    println!(
        "{} windows projected onto {} components; silhouette {s:.4}",
        rows.len(),
        a.components
    );
    Ok(0)
}

#[derive(Serialize)]
struct StreamRecord {
    frames: usize,
    predictions: usize,
    dropped: usize,
    hold: usize,
    median_infer_ms: f64,
    p98_infer_ms: f64,
    within_budget: bool,
    mean_frame_interval_ms: Option<f64>,
    events: Vec<DetectedEvent>,
    score: EventScore,
}

/// Frame rows tagged with their record, collected while streaming.
#[derive(Default)]
struct SegmentTracker {
    runs: Vec<(String, Label3, usize)>,
}

impl SegmentTracker {
    fn push(&mut self, id: &str, class3: Label3) {
        match self.runs.last_mut() {
            Some((last, c, n)) if last == id && *c == class3 => *n += 1,
            _ => self.runs.push((id.to_string(), class3, 1)),
        }
    }

    fn segments(&self) -> Vec<Segment> {
        let mut at = 0;
        self.runs
            .iter()
            .map(|(_, class3, n)| {
                let s = Segment {
                    class3: *class3,
                    start: at,
                    end: at + n,
                };
                at += n;
                s
            })
            .collect()
    }
}

pub fn stream(a: &StreamArgs) -> Result<Status> {
    let model = load_model(&a.model)?;
    let stats = find_stats(a.stats.as_deref(), &a.model)?;
    let source: Box<dyn Read + Send> = if a.log.as_os_str() == "-" {
        Box::new(std::io::stdin())
    } else {
        Box::new(BufReader::new(File::open(require(&a.log)?)?))
    };
    let tracker = Mutex::new(SegmentTracker::default());
    let frames = FrameReader::new(source).map(|row| {
        let row = row.map_err(|e| in_file(&a.log, e))?;
        tracker
            .lock()
            .expect("tracker lock")
            .push(&row.id, row.label5.label3());
        Ok(row.frame)
    });
    let opts = ReplayOptions {
        speed: match a.speed {
            SpeedArg::Max => Speed::Max,
            SpeedArg::Realtime => Speed::Realtime,
        },
        hold: a.hold,
        queue_capacity: a.queue,
    };
    let mut out = replay(&model, &stats, frames, &opts)?;
    let segments = tracker.into_inner().expect("tracker lock").segments();
    let end = segments.last().map_or(0, |s| s.end);
    let first = out.predictions.first().map_or(end, |p| p.frame);
    let score = score_events(&out.detected, &segments, first, end)?;
    let stamps = !a.out.no_timestamps;
    if !stamps {
        out.events.iter_mut().for_each(|e| e.latency_ms = 0.0);
    }
    ensure_dir(&a.out.out)?;
    let mut buf = Vec::new();
    write_predictions(&out.predictions, &mut buf, stamps)?;
    write(&a.out.out.join("predictions.jsonl"), &buf)?;
    let mut ev = String::new();
    for e in &out.events {
        ev.push_str(&serde_json::to_string(e)?);
        ev.push('\n');
    }
    write(&a.out.out.join("events.jsonl"), ev)?;
    let table = render_event_table(&[("stream", &score)]);
    write(&a.out.out.join("stream_score.txt"), &table)?;
    let zero = |v: f64| if stamps { v } else { 0.0 };
    json_file(
        &a.out.out.join("stream.json"),
        &StreamRecord {
            frames: out.frames,
            predictions: out.predictions.len(),
            dropped: out.dropped,
            hold: a.hold,
            median_infer_ms: zero(out.latency.median_ms),
            p98_infer_ms: zero(out.latency.p98_ms),
            within_budget: out.latency.within_budget(),
            mean_frame_interval_ms: out.pacing.map(|p| zero(p.mean_interval_ms)),
            events: out.detected.clone(),
            score,
        },
    )?;
    print!("{table}");
    println!(
        "{} frames, {} predictions, {} events, {} dropped",
        out.frames,
        out.predictions.len(),
        out.detected.len(),
        out.dropped
    );
    println!(
        "inference per window: median {:.3} ms, p98 {:.3} ms (budget 50 ms: {})",
        out.latency.median_ms,
        out.latency.p98_ms,
        if out.latency.within_budget() {
            "met"
        } else {
            "exceeded"
        }
    );
    if let Some(p) = out.pacing {
        println!("mean frame interval {:.3} ms", p.mean_interval_ms);
    }
    Ok(0)
}

pub fn score(a: &ScoreArgs) -> Result<Status> {
    let model = load_model(&a.model)?;
    let stats = find_stats(a.stats.as_deref(), &a.model)?;
    let load = |p: &Path| parse_log(require(p)?).map_err(|e| in_file(p, e));
    let mut logs = vec![("source", load(&a.source)?)];
    if let Some(t) = &a.target {
        logs.push(("target", load(t)?));
    }
    let mut scores = BTreeMap::new();
    for (name, records) in &logs {
        scores.insert(*name, score_log(&model, &stats, records, a.hold)?);
    }
    let cols: Vec<(&str, &EventScore)> = logs.iter().map(|(n, _)| (*n, &scores[n].score)).collect();
    let table = render_event_table(&cols);
    ensure_dir(&a.out.out)?;
    write(&a.out.out.join("score.txt"), &table)?;
    json_file(&a.out.out.join("score.json"), &scores)?;
    print!("{table}");
    for (name, s) in &scores {
        println!(
            "{name}: window accuracy {:.4}, contact detection failures {}",
            s.window_accuracy, s.score.contact_failures
        );
    }
    Ok(0)
}
