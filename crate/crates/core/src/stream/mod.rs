//! Online replay of a sensor log: per-window classification, debounced
//! contact events and event-level scoring.

mod events;
mod replay;

pub use events::{
    debounce, noncontact_spans, render_event_table, score_events, segments_from_records,
    DetectedEvent, EventKind, EventScore, Ratio, Segment, StreamEvent, WindowClass, DEFAULT_HOLD,
};
pub use replay::{
    replay, write_predictions, LatencySummary, PacingSummary, Prediction, ReplayOptions,
    ReplayOutput, Speed, StreamClassifier, FRAME_PERIOD, LATENCY_BUDGET_MS,
};

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, Record};
use crate::error::Result;
use crate::nn::{NetworkModel, WINDOW};
use crate::scalar::Scalar;

/// Frames of `records` in log order.
pub fn record_frames(
    records: &[Record],
) -> impl Iterator<Item = Result<crate::data::SensorFrame>> + Send + '_ {
    records
        .iter()
        .flat_map(|r| r.frames.iter().copied().map(Ok))
}

/// Event scores and window accuracy of one replayed log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogScore {
    pub score: EventScore,
    /// Windows whose predicted class matches the label of their newest frame.
    pub window_accuracy: f64,
    pub windows: usize,
    pub events: usize,
}

/// Replays `records` at full speed and scores the result against the
/// per-record ground truth.
pub fn score_log<T: Scalar>(
    model: &NetworkModel<T>,
    stats: &NormStats,
    records: &[Record],
    hold: usize,
) -> Result<LogScore> {
    let opts = ReplayOptions {
        hold,
        ..ReplayOptions::default()
    };
    let out = replay(model, stats, record_frames(records), &opts)?;
    score_replay(&out, records)
}

/// Scores an existing replay of `records`.
pub fn score_replay(out: &ReplayOutput, records: &[Record]) -> Result<LogScore> {
    let segments = segments_from_records(records);
    let end = segments.last().map_or(0, |s| s.end);
    let first = out.predictions.first().map_or(WINDOW - 1, |p| p.frame);
    let score = score_events(&out.detected, &segments, first, end)?;
    let mut hits = 0usize;
    for p in &out.predictions {
        if let Some(g) = segments
            .iter()
            .find(|g| g.start <= p.frame && p.frame < g.end)
        {
            hits += usize::from(g.class3 == p.class3);
        }
    }
    let n = out.predictions.len();
    Ok(LogScore {
        score,
        window_accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        windows: n,
        events: out.detected.len(),
    })
}

/// Source and target scores for the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub source: LogScore,
    pub target: LogScore,
}

impl Generalization {
    pub fn render(&self) -> String {
        render_event_table(&[
            ("source", &self.source.score),
            ("target", &self.target.score),
        ])
    }
}

pub fn generalization_eval<T: Scalar>(
    model: &NetworkModel<T>,
    stats: &NormStats,
    source: &[Record],
    target: &[Record],
    hold: usize,
) -> Result<Generalization> {
    Ok(Generalization {
        source: score_log(model, stats, source, hold)?,
        target: score_log(model, stats, target, hold)?,
    })
}
