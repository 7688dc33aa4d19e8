//! Artifact files shared between subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cdml_core::data::{class_indices, read_windows, window_tensors, NormStats, SensorWindow};
use cdml_core::nn::NetworkModel;
use cdml_core::train::TrainData;
use cdml_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const TRAIN_WINDOWS: &str = "train_windows.csv";
pub const TEST_WINDOWS: &str = "test_windows.csv";
pub const TEST_LOG: &str = "test_log.csv";
pub const NORM: &str = "norm.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCounts {
    pub records: usize,
    pub windows: usize,
    /// Windows per three-way class.
    pub classes: BTreeMap<String, usize>,
    /// Windows per raw label.
    pub labels: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub input: String,
    pub seed: u64,
    pub stride: usize,
    pub total_windows: usize,
    pub train: SideCounts,
    pub test: SideCounts,
    pub windows_per_record: BTreeMap<String, usize>,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    /// Records shorter than one window.
    pub skipped_records: Vec<String>,
}

pub fn require(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Input(format!("missing file {}", path.display())))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))
}

fn windows_file(path: &Path) -> Result<Vec<SensorWindow>> {
    let f = File::open(require(path)?)?;
    read_windows(BufReader::new(f)).map_err(|e| in_file(path, e))
}

/// Prefixes parse errors with the file they came from.
pub fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// Prepared data: raw windows of both sides and the training statistics.
pub struct Prepared {
    pub train: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub stats: NormStats,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let stats = NormStats::load(require(&dir.join(NORM))?)?;
        Ok(Self {
            train: windows_file(&dir.join(TRAIN_WINDOWS))?,
            test: windows_file(&dir.join(TEST_WINDOWS))?,
            stats,
        })
    }

    pub fn normalized(&self, windows: &[SensorWindow]) -> Vec<SensorWindow> {
        self.stats.apply_all(windows)
    }

    pub fn train_data(&self) -> Result<TrainData<f32>> {
        let tr = self.normalized(&self.train);
        let te = self.normalized(&self.test);
        TrainData::new(
            window_tensors(&tr),
            class_indices(&tr),
            window_tensors(&te),
            class_indices(&te),
        )
    }
}

pub fn load_model(path: &Path) -> Result<NetworkModel<f32>> {
    cdml_core::nn::load(require(path)?)
}

/// `--stats`, else `norm.json` beside the model or in its parent directory.
pub fn find_stats(explicit: Option<&Path>, model: &Path) -> Result<NormStats> {
    if let Some(p) = explicit {
        return NormStats::load(require(p)?);
    }
    let dir = model.parent().unwrap_or(Path::new("."));
    let candidates: Vec<PathBuf> = [Some(dir), dir.parent()]
        .into_iter()
        .flatten()
        .map(|d| d.join(NORM))
        .collect();
    match candidates.iter().find(|p| p.is_file()) {
        Some(p) => NormStats::load(p),
        None => Err(Error::Input(format!(
            "missing file {} (pass --stats)",
            candidates[0].display()
        ))),
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}
