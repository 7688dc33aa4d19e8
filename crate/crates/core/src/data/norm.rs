use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SensorWindow, FEATURES};
use crate::error::{Error, Result};

/// Per-feature-column z-score statistics fit on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population mean and standard deviation of every feature column over
    /// all rows of all `windows`.
    pub fn fit(windows: &[SensorWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Contract(
                "normalization needs at least one window".into(),
            ));
        }
        let rows = windows.iter().flat_map(|w| w.matrix.chunks_exact(FEATURES));
        let n = (windows.len() * windows[0].timestamps.len()) as f64;
        let mut mean = vec![0.0; FEATURES];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURES];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / n).sqrt().max(Self::STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FEATURES],
            std: vec![1.0; FEATURES],
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, window: &SensorWindow) -> SensorWindow {
        let mut w = window.clone();
        w.matrix
            .chunks_exact_mut(FEATURES)
            .for_each(|r| self.apply_row(r));
        w
    }

    pub fn apply_all(&self, windows: &[SensorWindow]) -> Vec<SensorWindow> {
        windows.iter().map(|w| self.apply(w)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        let s: Self = serde_json::from_str(&text)?;
        if s.mean.len() != FEATURES || s.std.len() != FEATURES {
            return Err(Error::dim(
                "normalization statistics",
                FEATURES,
                s.mean.len().min(s.std.len()),
            ));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_windows, Label5, Record, SensorFrame};

    fn windows(shift: f64) -> Vec<SensorWindow> {
        let frames = (0..80)
            .map(|i| {
                let mut f = [5.0; FEATURES];
                for (c, v) in f.iter_mut().enumerate().skip(1) {
                    *v = ((i * 7 + c * 13) % 17) as f64 * c as f64 + shift;
                }
                SensorFrame::from_features(i as f64 * 0.005, &f)
            })
            .collect();
        let r = Record {
            id: "r".into(),
            label5: Label5::NonContact,
            frames,
        };
        build_windows(&r, 10).unwrap()
    }

    #[test]
    fn standardizes_training_columns() {
        let w = windows(0.0);
        let s = NormStats::fit(&w).unwrap();
        let z = s.apply_all(&w);
        let n = (z.len() * 28) as f64;
        for c in 0..FEATURES {
            let col: Vec<f64> = z
                .iter()
                .flat_map(|w| (0..28).map(move |r| w.row(r)[c]))
                .collect();
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-9);
            if c == 0 {
                // Constant column.
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                assert!((sd - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shifted_data_shifts_means() {
        let s = NormStats::fit(&windows(0.0)).unwrap();
        let z = s.apply_all(&windows(2.0));
        let n = (z.len() * 28) as f64;
        for c in 1..FEATURES {
            let m: f64 = z
                .iter()
                .flat_map(|w| (0..28).map(move |r| w.row(r)[c]))
                .sum::<f64>()
                / n;
            assert!((m - 2.0 / s.std[c]).abs() < 1e-9);
        }
    }
}
