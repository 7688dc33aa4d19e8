use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossbeam::queue::ArrayQueue;
use serde::{Deserialize, Serialize};

use super::events::{debounce, DetectedEvent, StreamEvent, WindowClass};
use crate::data::{Label3, NormStats, SensorFrame, FEATURES};
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::nn::{Mode, NetworkModel, WINDOW};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nominal frame spacing of the robot's sensor stream.
pub const FRAME_PERIOD: Duration = Duration::from_millis(5);
/// Median per-window inference budget.
pub const LATENCY_BUDGET_MS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speed {
    /// Feed frames as fast as they can be classified.
    Max,
    /// Feed frames at [`FRAME_PERIOD`] through a bounded queue that drops
    /// the oldest frame when the consumer falls behind.
    Realtime,
}

#[derive(Debug, Clone, Copy)]
pub struct ReplayOptions {
    pub speed: Speed,
    pub hold: usize,
    pub queue_capacity: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            speed: Speed::Max,
            hold: super::DEFAULT_HOLD,
            queue_capacity: 64,
        }
    }
}

/// Classification of the window whose newest frame is `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame: usize,
    pub timestamp: f64,
    pub class3: Label3,
    pub probs: [f64; 3],
    pub infer_ms: f64,
    /// Frame arrival to classification, including queueing.
    #[serde(skip)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub median_ms: f64,
    pub p98_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            median_ms: pick(0.5),
            p98_ms: pick(0.98),
            max_ms: s[s.len() - 1],
        }
    }

    pub fn within_budget(&self) -> bool {
        self.median_ms < LATENCY_BUDGET_MS
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PacingSummary {
    pub frames: usize,
    pub mean_interval_ms: f64,
}

impl PacingSummary {
    /// Mean inter-arrival within 20% of the nominal period.
    pub fn on_schedule(&self) -> bool {
        let nominal = FRAME_PERIOD.as_secs_f64() * 1e3;
        (self.mean_interval_ms - nominal).abs() <= 0.2 * nominal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub predictions: Vec<Prediction>,
    pub events: Vec<StreamEvent>,
    pub detected: Vec<DetectedEvent>,
    pub frames: usize,
    pub dropped: usize,
    pub latency: LatencySummary,
    pub pacing: Option<PacingSummary>,
}

/// Streaming classifier: the full network plus the training normalization.
pub struct StreamClassifier<'a, T: Scalar> {
    model: &'a NetworkModel<T>,
    stats: &'a NormStats,
    rows: VecDeque<[f64; FEATURES]>,
    last_timestamp: Option<f64>,
}

impl<'a, T: Scalar> StreamClassifier<'a, T> {
    /// `model` maps a 28×28 window to three class probabilities.
    pub fn new(model: &'a NetworkModel<T>, stats: &'a NormStats) -> Result<Self> {
        if model.output_dim() != 3 {
            return Err(Error::dim("stream model outputs", 3, model.output_dim()));
        }
        Ok(Self {
            model,
            stats,
            rows: VecDeque::with_capacity(WINDOW),
            last_timestamp: None,
        })
    }

    /// Pushes one frame; returns a prediction once 28 frames are buffered.
    pub fn push(&mut self, index: usize, frame: &SensorFrame) -> Result<Option<Prediction>> {
        if !frame.is_finite() {
            return Err(Error::Input(format!("frame {index} has non-finite values")));
        }
        if let Some(prev) = self.last_timestamp {
            if frame.timestamp <= prev {
                return Err(Error::Input(format!(
                    "frame {index} is out of timestamp order ({} after {prev})",
                    frame.timestamp
                )));
            }
        }
        self.last_timestamp = Some(frame.timestamp);
        let mut row = frame.features();
        self.stats.apply_row(&mut row);
        if self.rows.len() == WINDOW {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
        if self.rows.len() < WINDOW {
            return Ok(None);
        }
        let started = Instant::now();
        let x = Tensor::from_fn(&[WINDOW, FEATURES], |i| {
            T::lit(self.rows[i / FEATURES][i % FEATURES])
        });
        let out = self.model.forward(&x, Mode::Infer)?;
        let p = out.data();
        let probs = [
            p[0].to_f64_lossy(),
            p[1].to_f64_lossy(),
            p[2].to_f64_lossy(),
        ];
        let infer_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(Some(Prediction {
            frame: index,
            timestamp: frame.timestamp,
            class3: Label3::from_index(argmax(&probs))?,
            probs,
            infer_ms,
            latency_ms: infer_ms,
        }))
    }
}

/// Replays a frame stream through the classifier and forms contact events.
/// Frames are numbered in arrival order from 0; a stream of `n` frames
/// yields `n - 27` predictions when nothing is dropped.
pub fn replay<T, I>(
    model: &NetworkModel<T>,
    stats: &NormStats,
    frames: I,
    opts: &ReplayOptions,
) -> Result<ReplayOutput>
where
    T: Scalar,
    I: Iterator<Item = Result<SensorFrame>> + Send,
{
    let mut clf = StreamClassifier::new(model, stats)?;
    let mut predictions = Vec::new();
    let (frames_seen, dropped, pacing) = match opts.speed {
        Speed::Max => {
            let mut n = 0;
            for (i, f) in frames.enumerate() {
                if let Some(p) = clf.push(i, &f?)? {
                    predictions.push(p);
                }
                n += 1;
            }
            (n, 0, None)
        }
        Speed::Realtime => realtime(&mut clf, frames, opts.queue_capacity, &mut predictions)?,
    };
    let windows: Vec<WindowClass> = predictions
        .iter()
        .map(|p| WindowClass {
            frame: p.frame,
            class3: p.class3,
            latency_ms: p.latency_ms,
        })
        .collect();
    let (detected, events) = debounce(&windows, opts.hold)?;
    let infer: Vec<f64> = predictions.iter().map(|p| p.infer_ms).collect();
    Ok(ReplayOutput {
        latency: LatencySummary::from_samples(&infer),
        predictions,
        events,
        detected,
        frames: frames_seen,
        dropped,
        pacing,
    })
}

type Item = (usize, SensorFrame, Instant);

fn realtime<T, I>(
    clf: &mut StreamClassifier<'_, T>,
    frames: I,
    capacity: usize,
    predictions: &mut Vec<Prediction>,
) -> Result<(usize, usize, Option<PacingSummary>)>
where
    T: Scalar,
    I: Iterator<Item = Result<SensorFrame>> + Send,
{
    let queue: ArrayQueue<Item> = ArrayQueue::new(capacity.max(1));
    let done = AtomicBool::new(false);
    let dropped = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let mut consumer_error = None;
    let pacing = std::thread::scope(|s| {
        let producer = s.spawn(|| {
            let start = Instant::now();
            let mut last = start;
            let mut n = 0usize;
            for (i, f) in frames.enumerate() {
                let due = start + FRAME_PERIOD * i as u32;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
                match f {
                    Ok(f) => {
                        last = Instant::now();
                        if queue.force_push((i, f, last)).is_some() {
                            dropped.fetch_add(1, Ordering::Relaxed);
                        }
                        n += 1;
                    }
                    Err(e) => {
                        *failure.lock().expect("producer lock") = Some(e);
                        break;
                    }
                }
                if done.load(Ordering::Relaxed) {
                    break;
                }
            }
            done.store(true, Ordering::Release);
            PacingSummary {
                frames: n,
                mean_interval_ms: if n > 1 {
                    last.duration_since(start).as_secs_f64() * 1e3 / (n - 1) as f64
                } else {
                    0.0
                },
            }
        });
        loop {
            match queue.pop() {
                Some((i, f, arrived)) => match clf.push(i, &f) {
                    Ok(Some(mut p)) => {
                        p.latency_ms = arrived.elapsed().as_secs_f64() * 1e3;
                        predictions.push(p);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        consumer_error = Some(e);
                        done.store(true, Ordering::Release);
                        break;
                    }
                },
                None if done.load(Ordering::Acquire) && queue.is_empty() => break,
                None => std::thread::sleep(Duration::from_micros(100)),
            }
        }
        producer.join().expect("producer thread panicked")
    });
    if let Some(e) = consumer_error.or_else(|| failure.into_inner().expect("producer lock")) {
        return Err(e);
    }
    Ok((pacing.frames, dropped.into_inner(), Some(pacing)))
}

/// Predictions as JSON lines. Without timestamps, `infer_ms` is written as 0
/// so the file is reproducible.
pub fn write_predictions<W: Write>(
    predictions: &[Prediction],
    mut writer: W,
    timestamps: bool,
) -> Result<()> {
    #[derive(Serialize)]
    struct Line {
        frame: usize,
        class3: &'static str,
        probs: [f64; 3],
        infer_ms: f64,
    }
    for p in predictions {
        let line = Line {
            frame: p.frame,
            class3: p.class3.short(),
            probs: p.probs,
            infer_ms: if timestamps { p.infer_ms } else { 0.0 },
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
