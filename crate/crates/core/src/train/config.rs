use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DEFAULT_ALPHA, DEFAULT_CLUSTERS, DEFAULT_MARGIN};
use crate::nn::Arch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    Pairwise,
    Triplet,
    Magnet,
    Baseline,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Pairwise,
        LossKind::Triplet,
        LossKind::Magnet,
        LossKind::Baseline,
    ];
    /// Row order of the comparison table.
    pub const TABLE_ORDER: [LossKind; 4] = [
        LossKind::Pairwise,
        LossKind::Magnet,
        LossKind::Triplet,
        LossKind::Baseline,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LossKind::Pairwise => "pairwise",
            LossKind::Triplet => "triplet",
            LossKind::Magnet => "magnet",
            LossKind::Baseline => "baseline",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            LossKind::Pairwise => "Pairwise",
            LossKind::Triplet => "Triplet",
            LossKind::Magnet => "Magnet",
            LossKind::Baseline => "Baseline",
        }
    }

    pub fn is_metric(self) -> bool {
        self != LossKind::Baseline
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|l| l.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown loss `{s}`")))
    }
}

/// Hyperparameters of one training run. Every field has a config-file key
/// of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub arch: Arch,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Pairwise: pairs per step (half similar).
    pub batch_pairs: usize,
    /// Triplet: classes per step.
    pub batch_classes: usize,
    /// Triplet: windows per class per step.
    pub batch_per_class: usize,
    /// Cross-entropy minibatch (baseline and classifier head).
    pub batch_size: usize,
    pub margin: f64,
    pub alpha: f64,
    /// Magnet: clusters per class.
    pub clusters: usize,
    /// Magnet: steps between cluster refreshes; `None` means one pass over
    /// the training set.
    pub refresh_steps: Option<usize>,
    /// Magnet: imposter clusters added to the seed cluster.
    pub neighbors: usize,
    /// Magnet: windows drawn from each batch cluster.
    pub samples_per_cluster: usize,
    /// Epochs for the classifier head on frozen embeddings; `None` uses `epochs`.
    pub classifier_epochs: Option<usize>,
    pub l2_normalize: bool,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Triplet,
            arch: Arch::Conv1DNet,
            epochs: 200,
            learning_rate: 1e-3,
            batch_pairs: 64,
            batch_classes: 3,
            batch_per_class: 16,
            batch_size: 32,
            margin: DEFAULT_MARGIN,
            alpha: DEFAULT_ALPHA,
            clusters: DEFAULT_CLUSTERS,
            refresh_steps: None,
            neighbors: 4,
            samples_per_cluster: 8,
            classifier_epochs: None,
            l2_normalize: false,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Input(format!("invalid value `{value}` for `{key}`")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match parse::<usize>(key, value)? {
        0 => Err(Error::Input(format!("`{key}` must be positive"))),
        v => Ok(v),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "loss",
        "arch",
        "epochs",
        "learning_rate",
        "batch_pairs",
        "batch_classes",
        "batch_per_class",
        "batch_size",
        "margin",
        "alpha",
        "clusters",
        "refresh_steps",
        "neighbors",
        "samples_per_cluster",
        "classifier_epochs",
        "l2_normalize",
        "seeds",
    ];

    /// Sets one field from its textual form. `refresh_steps` and
    /// `classifier_epochs` accept `auto` for the default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "loss" => self.loss = value.parse()?,
            "arch" => self.arch = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_pairs" => self.batch_pairs = positive(key, value)?,
            "batch_classes" => self.batch_classes = positive(key, value)?,
            "batch_per_class" => self.batch_per_class = positive(key, value)?,
            "batch_size" => self.batch_size = positive(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "clusters" => self.clusters = positive(key, value)?,
            "refresh_steps" => {
                self.refresh_steps = if value == "auto" {
                    None
                } else {
                    Some(positive(key, value)?)
                }
            }
            "neighbors" => self.neighbors = positive(key, value)?,
            "samples_per_cluster" => self.samples_per_cluster = positive(key, value)?,
            "classifier_epochs" => {
                self.classifier_epochs = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "l2_normalize" => self.l2_normalize = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            _ => return Err(Error::Input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_config_text(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Input(format!("{what} must be positive and finite")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin");
        }
        if !self.alpha.is_finite() {
            return Err(Error::Input("alpha must be finite".into()));
        }
        if self.batch_per_class < 2 {
            return Err(Error::Input("batch_per_class must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Input("seeds must be nonempty".into()));
        }
        Ok(())
    }

    pub fn classifier_epochs(&self) -> usize {
        self.classifier_epochs.unwrap_or(self.epochs)
    }
}

/// Comma-separated list, e.g. `1,2,3`.
pub fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `(key, value)` pairs of a flat config file, in order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut c = TrainConfig::default();
        c.apply_text("# magnet run\nloss = magnet\narch=facenet  # small\nrefresh_steps = 7\nseeds = 3, 4\n\n")
            .unwrap();
        assert_eq!(c.loss, LossKind::Magnet);
        assert_eq!(c.arch, Arch::FaceNet);
        assert_eq!(c.refresh_steps, Some(7));
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.epochs, 200);
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = TrainConfig::default();
        let values = [
            "pairwise",
            "conv2dnet",
            "3",
            "0.01",
            "8",
            "3",
            "4",
            "16",
            "0.5",
            "2",
            "2",
            "auto",
            "2",
            "4",
            "5",
            "true",
            "9",
        ];
        for (k, v) in TrainConfig::KEYS.iter().zip(values) {
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let mut c = TrainConfig::default();
        assert!(matches!(c.set("momentum", "0.9"), Err(Error::Input(_))));
        assert!(matches!(c.set("epochs", "-1"), Err(Error::Input(_))));
        assert!(matches!(c.set("batch_size", "0"), Err(Error::Input(_))));
        assert!(matches!(
            c.apply_text("epochs 3"),
            Err(Error::Parse { line: 1, .. })
        ));
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
