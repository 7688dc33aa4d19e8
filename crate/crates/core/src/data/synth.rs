//! Synthetic proprioception logs with the qualitative structure of the
//! contact dataset, used for tests and as a stand-in when no recorded data
//! is available.
//!
//! Every record drives all seven joints along slow sinusoids. Joint torque
//! follows a gravity-like load plus damping; the external-torque estimate is
//! sensor noise. Contact on link L adds a torque profile to joints 1..L,
//! weighted toward the contacted link:
//!
//! * intentional contact: a sustained push with slow modulation,
//! * collision: a zero-mean ringing at 15–25 Hz.
//!
//! `ambiguity` blends a fraction of the other contact profile into each
//! contact record, so intentional and collision records can overlap while
//! non-contact stays separable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Label5, Record, SensorFrame, JOINTS, SAMPLE_PERIOD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Records per raw label, in [`Label5::ALL`] order.
    pub records_per_label: [usize; 5],
    pub frames: usize,
    /// Upper bound of the per-record blend toward the other contact profile, in [0, 1].
    pub ambiguity: f64,
    /// Standard deviation of the external-torque sensor noise (N·m).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            records_per_label: [8, 4, 4, 4, 4],
            frames: 200,
            ambiguity: 0.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Distribution shift applied to existing records.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Perturbation {
    /// Added to every joint torque and external torque (N·m).
    pub torque_offset: f64,
    /// Standard deviation of extra Gaussian noise on all features.
    pub noise_scale: f64,
    /// Playback rate: frame `i` takes the value at `i * time_warp` (linear
    /// interpolation, clamped at the last frame). 1 leaves records unchanged.
    pub time_warp: f64,
}

const LINK5_WEIGHTS: [f64; JOINTS] = [0.3, 0.5, 0.4, 0.7, 1.0, 0.0, 0.0];
const LINK6_WEIGHTS: [f64; JOINTS] = [0.2, 0.4, 0.3, 0.6, 0.8, 1.0, 0.0];

#[derive(Debug, Clone, Copy)]
enum Profile {
    Push { amp: f64, freq: f64, phase: f64 },
    Ring { amp: f64, freq: f64, phase: f64 },
}

impl Profile {
    fn draw(collision: bool, rng: &mut ChaCha8Rng) -> Self {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let amp = sign * rng.gen_range(3.0..6.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        if collision {
            Profile::Ring {
                amp,
                freq: rng.gen_range(15.0..25.0),
                phase,
            }
        } else {
            Profile::Push {
                amp,
                freq: rng.gen_range(0.5..2.0),
                phase,
            }
        }
    }

    fn at(&self, t: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            Profile::Push { amp, freq, phase } => {
                amp * (1.0 + 0.3 * (TAU * freq * t + phase).sin())
            }
            Profile::Ring { amp, freq, phase } => amp * (TAU * freq * t + phase).sin(),
        }
    }
}

/// Generates `records_per_label` records per label with ids `s<seed>-r<k>`.
/// Timestamps run continuously across records so the list is also a valid
/// stream log.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Record>> {
    if !(0.0..=1.0).contains(&cfg.ambiguity) {
        return Err(Error::Contract(format!(
            "ambiguity must lie in [0, 1], got {}",
            cfg.ambiguity
        )));
    }
    if cfg.frames == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::Contract(
            "frames must be positive and noise nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<Label5> = Vec::new();
    for (k, &n) in cfg.records_per_label.iter().enumerate() {
        labels.extend(std::iter::repeat(Label5::ALL[k]).take(n));
    }
    // Interleave labels so stream logs alternate between contact types.
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);
    let mut t0 = 0.0;
    let mut out = Vec::with_capacity(labels.len());
    for (k, label5) in labels.into_iter().enumerate() {
        let r = record(&format!("s{}-r{k:04}", cfg.seed), label5, t0, cfg, &mut rng);
        t0 += cfg.frames as f64 * SAMPLE_PERIOD;
        out.push(r);
    }
    Ok(out)
}

fn record(id: &str, label5: Label5, t0: f64, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Record {
    let sensor = Normal::new(0.0, cfg.noise).expect("valid noise");
    let small = Normal::new(0.0, 1e-3).expect("valid");
    let q_amp: Vec<f64> = (0..JOINTS).map(|_| rng.gen_range(0.2..0.6)).collect();
    let q_freq: Vec<f64> = (0..JOINTS).map(|_| rng.gen_range(0.1..0.3)).collect();
    let q_phase: Vec<f64> = (0..JOINTS)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let gravity: Vec<f64> = (0..JOINTS).map(|j| 20.0 / (1.0 + j as f64)).collect();
    let contact = label5.link().map(|link| {
        let collision = label5.label3().index() == 2;
        let own = Profile::draw(collision, rng);
        let other = Profile::draw(!collision, rng);
        let blend = if cfg.ambiguity > 0.0 {
            rng.gen_range(0.0..cfg.ambiguity)
        } else {
            0.0
        };
        let weights = if link == 5 {
            LINK5_WEIGHTS
        } else {
            LINK6_WEIGHTS
        };
        (own, other, blend, weights)
    });
    let frames = (0..cfg.frames)
        .map(|i| {
            let t = i as f64 * SAMPLE_PERIOD;
            let s = contact.map_or(0.0, |(own, other, m, _)| {
                (1.0 - m) * own.at(t) + m * other.at(t)
            });
            let mut f = SensorFrame::from_features(t0 + t, &[0.0; 28]);
            for j in 0..JOINTS {
                use std::f64::consts::TAU;
                let w = TAU * q_freq[j];
                let q = q_amp[j] * (w * t + q_phase[j]).sin();
                let qd = q_amp[j] * w * (w * t + q_phase[j]).cos();
                let ext = contact.map_or(0.0, |(.., weights)| weights[j] * s);
                f.tau_j[j] = gravity[j] * q.cos() + 0.5 * qd + ext + sensor.sample(rng);
                f.tau_ext[j] = ext + sensor.sample(rng);
                f.e[j] = 2e-3 * ext + small.sample(rng);
                f.e_dot[j] = 1e-2 * ext + 5.0 * small.sample(rng);
            }
            f
        })
        .collect();
    Record {
        id: id.to_string(),
        label5,
        frames,
    }
}

/// Returns perturbed copies of `records` (timestamps unchanged).
pub fn perturb(records: &[Record], p: &Perturbation, seed: u64) -> Result<Vec<Record>> {
    if !(p.time_warp > 0.0) || !(p.noise_scale >= 0.0) {
        return Err(Error::Contract(
            "time_warp must be positive and noise_scale nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_scale.max(0.0)).expect("valid noise");
    Ok(records
        .iter()
        .map(|r| {
            let n = r.frames.len();
            let feats: Vec<[f64; 28]> = r.frames.iter().map(SensorFrame::features).collect();
            let frames = (0..n)
                .map(|i| {
                    let x = (i as f64 * p.time_warp).min((n - 1) as f64);
                    let lo = x.floor() as usize;
                    let hi = (lo + 1).min(n - 1);
                    let a = x - lo as f64;
                    let mut f = [0.0; 28];
                    for c in 0..28 {
                        f[c] = (1.0 - a) * feats[lo][c] + a * feats[hi][c];
                        if c < 2 * JOINTS {
                            f[c] += p.torque_offset;
                        }
                        if p.noise_scale > 0.0 {
                            f[c] += noise.sample(&mut rng);
                        }
                    }
                    SensorFrame::from_features(r.frames[i].timestamp, &f)
                })
                .collect();
            Record {
                id: r.id.clone(),
                label5: r.label5,
                frames,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_labels_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a.len(), 24);
        for (k, &n) in cfg.records_per_label.iter().enumerate() {
            assert_eq!(a.iter().filter(|r| r.label5 == Label5::ALL[k]).count(), n);
        }
        assert!(a
            .iter()
            .all(|r| r.frames.len() == 200 && r.frames.iter().all(SensorFrame::is_finite)));
        assert_eq!(a, generate(&cfg).unwrap());
        let ts: Vec<f64> = a
            .iter()
            .flat_map(|r| r.frames.iter().map(|f| f.timestamp))
            .collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn contact_shows_in_external_torque() {
        let a = generate(&SynthConfig::default()).unwrap();
        for r in &a {
            let peak = r
                .frames
                .iter()
                .map(|f| f.tau_ext[4].abs())
                .fold(0.0, f64::max);
            if r.label3().is_contact() {
                assert!(peak > 1.5, "{} {peak}", r.id);
            } else {
                assert!(peak < 1.0, "{} {peak}", r.id);
            }
        }
    }

    #[test]
    fn identity_perturbation() {
        let a = generate(&SynthConfig::default()).unwrap();
        let p = Perturbation {
            time_warp: 1.0,
            ..Default::default()
        };
        assert_eq!(perturb(&a, &p, 0).unwrap(), a);
    }
}
