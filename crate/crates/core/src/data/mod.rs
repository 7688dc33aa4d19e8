//! Sensor logs, 28×28 proprioception windows, labels, the record-level
//! train/test split, feature normalization and batch samplers.

mod csv_io;
mod norm;
mod sample;
mod split;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use csv_io::{
    log_header, parse_log, parse_log_reader, read_windows, write_log, write_windows, FrameReader,
    FrameRow,
};
pub use norm::NormStats;
pub use sample::{sample_pairs, sample_pk_batch, PairBatch, PkBatch};
pub use split::{split_dataset, split_records, DatasetSplit, RecordSplit};

use crate::error::{Error, Result};
use crate::nn::WINDOW;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const JOINTS: usize = 7;
/// τ_J, τ_ext, e and ė for each of the seven joints.
pub const FEATURES: usize = 4 * JOINTS;
/// Nominal spacing of the 200 Hz sensor stream, in seconds.
pub const SAMPLE_PERIOD: f64 = 0.005;
pub const DEFAULT_STRIDE: usize = 14;

/// Raw five-way capture label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label5 {
    NonContact,
    IntentionalL5,
    IntentionalL6,
    IncidentalL5,
    IncidentalL6,
}

impl Label5 {
    pub const ALL: [Label5; 5] = [
        Label5::NonContact,
        Label5::IntentionalL5,
        Label5::IntentionalL6,
        Label5::IncidentalL5,
        Label5::IncidentalL6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label5::NonContact => "noncontact",
            Label5::IntentionalL5 => "intentional_l5",
            Label5::IntentionalL6 => "intentional_l6",
            Label5::IncidentalL5 => "incidental_l5",
            Label5::IncidentalL6 => "incidental_l6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label3(self) -> Label3 {
        map_label(self)
    }

    /// The robot link touched, if any.
    pub fn link(self) -> Option<usize> {
        match self {
            Label5::NonContact => None,
            Label5::IntentionalL5 | Label5::IncidentalL5 => Some(5),
            Label5::IntentionalL6 | Label5::IncidentalL6 => Some(6),
        }
    }
}

impl fmt::Display for Label5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label5 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label5::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Label(s.to_string()))
    }
}

/// The three classes the classifier predicts (C1, C2, C3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label3 {
    NonContact,
    Intentional,
    Collision,
}

impl Label3 {
    pub const ALL: [Label3; 3] = [Label3::NonContact, Label3::Intentional, Label3::Collision];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Label3::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Contract(format!("class index {i} out of range")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label3::NonContact => "noncontact",
            Label3::Intentional => "intentional",
            Label3::Collision => "collision",
        }
    }

    /// Short column name: C1, C2 or C3.
    pub fn short(self) -> &'static str {
        match self {
            Label3::NonContact => "C1",
            Label3::Intentional => "C2",
            Label3::Collision => "C3",
        }
    }

    pub fn is_contact(self) -> bool {
        self != Label3::NonContact
    }
}

impl fmt::Display for Label3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn map_label(label: Label5) -> Label3 {
    match label {
        Label5::NonContact => Label3::NonContact,
        Label5::IntentionalL5 | Label5::IntentionalL6 => Label3::Intentional,
        Label5::IncidentalL5 | Label5::IncidentalL6 => Label3::Collision,
    }
}

/// One sample of the sensor stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    /// Seconds.
    pub timestamp: f64,
    pub tau_j: [f64; JOINTS],
    pub tau_ext: [f64; JOINTS],
    pub e: [f64; JOINTS],
    pub e_dot: [f64; JOINTS],
}

impl SensorFrame {
    /// Features in window column order: τ_J1..7, τ_ext1..7, e1..7, ė1..7.
    pub fn features(&self) -> [f64; FEATURES] {
        let mut out = [0.0; FEATURES];
        for (k, group) in [&self.tau_j, &self.tau_ext, &self.e, &self.e_dot]
            .into_iter()
            .enumerate()
        {
            out[k * JOINTS..(k + 1) * JOINTS].copy_from_slice(group);
        }
        out
    }

    pub fn from_features(timestamp: f64, f: &[f64; FEATURES]) -> Self {
        let group = |k: usize| -> [f64; JOINTS] {
            f[k * JOINTS..(k + 1) * JOINTS]
                .try_into()
                .expect("7 joints")
        };
        Self {
            timestamp,
            tau_j: group(0),
            tau_ext: group(1),
            e: group(2),
            e_dot: group(3),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.features().iter().all(|v| v.is_finite())
    }
}

/// One labeled capture (nominally one second at 200 Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub label5: Label5,
    pub frames: Vec<SensorFrame>,
}

impl Record {
    pub fn label3(&self) -> Label3 {
        self.label5.label3()
    }
}

/// A 28-frame slice of a record: rows are time, columns the 28 features.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    /// `<record id>/<first frame index>`.
    pub id: String,
    pub record_id: String,
    pub start_frame: usize,
    pub timestamps: Vec<f64>,
    /// Row-major 28×28.
    pub matrix: Vec<f64>,
    pub label5: Label5,
    pub label3: Label3,
}

impl SensorWindow {
    pub fn from_frames(
        record_id: &str,
        start_frame: usize,
        label5: Label5,
        frames: &[SensorFrame],
    ) -> Result<Self> {
        if frames.len() != WINDOW {
            return Err(Error::dim("window frames", WINDOW, frames.len()));
        }
        Ok(Self {
            id: window_id(record_id, start_frame),
            record_id: record_id.to_string(),
            start_frame,
            timestamps: frames.iter().map(|f| f.timestamp).collect(),
            matrix: frames.iter().flat_map(|f| f.features()).collect(),
            label5,
            label3: label5.label3(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.matrix[r * FEATURES..(r + 1) * FEATURES]
    }

    /// Time covered by the window: 28 times the mean frame spacing.
    pub fn span_seconds(&self) -> f64 {
        let first = self.timestamps[0];
        let last = *self.timestamps.last().expect("28 timestamps");
        (last - first) * WINDOW as f64 / (WINDOW - 1) as f64
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[WINDOW, FEATURES], |i| T::lit(self.matrix[i]))
    }
}

pub(crate) fn window_id(record_id: &str, start: usize) -> String {
    format!("{record_id}/{start}")
}

/// Sliding 28-frame windows at `stride`. Records shorter than 28 frames
/// yield no windows.
pub fn build_windows(record: &Record, stride: usize) -> Result<Vec<SensorWindow>> {
    if stride == 0 {
        return Err(Error::Contract("window stride must be positive".into()));
    }
    if record.frames.len() < WINDOW {
        return Ok(Vec::new());
    }
    (0..=record.frames.len() - WINDOW)
        .step_by(stride)
        .map(|s| {
            SensorWindow::from_frames(&record.id, s, record.label5, &record.frames[s..s + WINDOW])
        })
        .collect()
}

/// Windows of every record, in record order, and the number of records
/// skipped for being shorter than one window.
pub fn build_all_windows(records: &[Record], stride: usize) -> Result<(Vec<SensorWindow>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in records {
        let w = build_windows(r, stride)?;
        if w.is_empty() {
            skipped += 1;
        }
        out.extend(w);
    }
    Ok((out, skipped))
}

/// Windows as a batch of `[28, 28]` tensors.
pub fn window_tensors<T: Scalar>(windows: &[SensorWindow]) -> Vec<Tensor<T>> {
    windows.iter().map(SensorWindow::to_tensor).collect()
}

pub fn class_indices(windows: &[SensorWindow]) -> Vec<usize> {
    windows.iter().map(|w| w.label3.index()).collect()
}
