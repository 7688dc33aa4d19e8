use std::collections::HashSet;

use cdml_core::data::synth::{generate, SynthConfig};
use cdml_core::data::{
    build_all_windows, map_label, parse_log, read_windows, sample_pk_batch, split_dataset,
    write_log, write_windows, Label3, Label5, NormStats, SAMPLE_PERIOD,
};
use proptest::prelude::*;

fn five_records() -> Vec<cdml_core::data::Record> {
    generate(&SynthConfig {
        records_per_label: [1; 5],
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn generated_log_round_trips_through_csv() {
    let records = five_records();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    write_log(&records, std::fs::File::create(&path).unwrap()).unwrap();
    let back = parse_log(&path).unwrap();
    assert_eq!(back.len(), 5);
    let labels: Vec<Label5> = back.iter().map(|r| r.label5).collect();
    assert_eq!(labels, records.iter().map(|r| r.label5).collect::<Vec<_>>());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            // Shortest round-trip float formatting is exact.
            assert_eq!(fa, fb);
        }
    }
}

#[test]
fn windows_cache_round_trips() {
    let (windows, skipped) = build_all_windows(&five_records(), 14).unwrap();
    assert_eq!(skipped, 0);
    assert_eq!(windows.len(), 5 * 13);
    let mut buf = Vec::new();
    write_windows(&windows, &mut buf).unwrap();
    assert_eq!(read_windows(buf.as_slice()).unwrap(), windows);
}

#[test]
fn missing_file_is_an_input_error() {
    let err = parse_log("/nonexistent/log.csv").unwrap_err();
    assert!(matches!(err, cdml_core::Error::Input(_)), "{err:?}");
}

#[test]
fn split_is_record_disjoint_and_eighty_twenty() {
    let records = generate(&SynthConfig {
        records_per_label: [10, 5, 5, 5, 5],
        ..Default::default()
    })
    .unwrap();
    let split = split_dataset(&records, 14, 3).unwrap();
    let train: HashSet<&str> = split.train.iter().map(|w| w.record_id.as_str()).collect();
    let test: HashSet<&str> = split.test.iter().map(|w| w.record_id.as_str()).collect();
    assert!(train.is_disjoint(&test));
    assert_eq!(split.train_records.len(), 24);
    assert_eq!(split.test_records.len(), 6);
    // Equal-length records: the window ratio is exactly the record ratio.
    let total = (split.train.len() + split.test.len()) as f64;
    assert!((split.train.len() as f64 - 0.8 * total).abs() <= 1.0);
    assert_eq!(split, split_dataset(&records, 14, 3).unwrap());
}

#[test]
fn window_spans_are_140_ms() {
    let (windows, _) = build_all_windows(&five_records(), 1).unwrap();
    assert_eq!(windows.len(), 5 * 173);
    for w in &windows {
        assert!(
            (w.span_seconds() - 0.140).abs() <= SAMPLE_PERIOD,
            "{}",
            w.span_seconds()
        );
    }
}

#[test]
fn normalization_uses_training_statistics() {
    let records = generate(&SynthConfig::default()).unwrap();
    let split = split_dataset(&records, 14, 0).unwrap();
    let stats = NormStats::fit(&split.train).unwrap();
    let train = stats.apply_all(&split.train);
    for c in 0..28 {
        let col: Vec<f64> = train
            .iter()
            .flat_map(|w| (0..28).map(move |r| w.row(r)[c]))
            .collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "col {c} mean {mean}");
        assert!((sd - 1.0).abs() < 1e-6, "col {c} sd {sd}");
    }
}

#[test]
fn pk_batches_from_windows() {
    let (windows, _) = build_all_windows(&generate(&SynthConfig::default()).unwrap(), 14).unwrap();
    let labels: Vec<usize> = windows.iter().map(|w| w.label3.index()).collect();
    let b = sample_pk_batch(&labels, 3, 16, 9).unwrap();
    assert_eq!(b.indices.len(), 48);
    for k in 0..3 {
        assert_eq!(b.indices.iter().filter(|&&i| labels[i] == k).count(), 16);
    }
    assert!(!b.with_replacement);
}

#[test]
fn label_projection_is_surjective() {
    let image: HashSet<Label3> = Label5::ALL.iter().map(|&l| map_label(l)).collect();
    assert_eq!(image.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_invariants(counts in proptest::collection::vec(2usize..9, 5), seed in 0u64..1000) {
        let labels: Vec<Label5> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat(Label5::ALL[k]).take(n))
            .collect();
        let s = cdml_core::data::split_records(&labels, seed).unwrap();
        let n = labels.len();
        prop_assert_eq!(s.train.len() + s.test.len(), n);
        prop_assert_eq!(s.test.len(), (2 * n + 5) / 10);
        let train: HashSet<usize> = s.train.iter().copied().collect();
        prop_assert!(s.test.iter().all(|i| !train.contains(i)));
        for l in Label5::ALL {
            prop_assert!(s.train.iter().any(|&i| labels[i] == l));
        }
    }
}
