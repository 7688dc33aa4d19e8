use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{train_cell, LossKind, TrainConfig, TrainData, TrainReport};
use crate::error::{Error, Result};
use crate::eval::{compare_table, CellSummary};
use crate::nn::{save, Arch};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub archs: Vec<Arch>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    /// Hyperparameters shared by every cell; `arch` and `loss` are overridden.
    pub base: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub out_dir: PathBuf,
    /// Cells trained concurrently.
    pub jobs: usize,
    /// Record wall-clock times; when false every `wall_s` is 0 so reruns
    /// are byte-identical.
    pub timestamps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub arch: Arch,
    pub loss_fn: LossKind,
    pub seed: u64,
}

impl CellKey {
    pub fn stem(&self) -> String {
        format!("{}_{}_{}", self.arch, self.loss_fn, self.seed)
    }
}

/// Stored per cell: the report, or why the run aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellRecord {
    key: CellKey,
    report: Option<TrainReport>,
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Completed cells in (arch, loss, seed) order, including ones found on disk.
    pub reports: Vec<TrainReport>,
    pub aborted: Vec<(CellKey, String)>,
    /// Cells skipped because their report already existed.
    pub resumed: usize,
}

impl GridSpec {
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &arch in &self.archs {
            for &loss_fn in &self.losses {
                for &seed in &self.seeds {
                    out.push(CellKey {
                        arch,
                        loss_fn,
                        seed,
                    });
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

fn report_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join("reports").join(format!("{}.json", key.stem()))
}

fn checkpoint_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join("checkpoints").join(format!("{}.ckpt", key.stem()))
}

/// Path of the best checkpoint of an (architecture, objective) cell.
pub fn best_checkpoint_path(dir: &Path, arch: Arch, loss: LossKind) -> PathBuf {
    dir.join(format!("best_{arch}_{loss}.ckpt"))
}

fn run_one<T: Scalar>(
    spec: &GridSpec,
    data: &TrainData<T>,
    opts: &GridOptions,
    key: CellKey,
) -> Result<CellRecord> {
    let cfg = TrainConfig {
        arch: key.arch,
        loss: key.loss_fn,
        ..spec.base.clone()
    };
    let record = match train_cell(&cfg, data, key.seed) {
        Ok(mut cell) => {
            if !opts.timestamps {
                cell.report.wall_s = 0.0;
            }
            save(&cell.composite()?, checkpoint_path(&opts.out_dir, &key))?;
            CellRecord {
                key,
                report: Some(cell.report),
                error: None,
            }
        }
        Err(e @ Error::TrainAbort { .. }) => CellRecord {
            key,
            report: None,
            error: Some(e.to_string()),
        },
        Err(e) => return Err(e),
    };
    fs::write(
        report_path(&opts.out_dir, &key),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;
    Ok(record)
}

fn better(a: &TrainReport, b: &TrainReport) -> bool {
    (a.test_acc, -a.test_loss, std::cmp::Reverse(a.seed))
        > (b.test_acc, -b.test_loss, std::cmp::Reverse(b.seed))
}

/// Trains every (architecture, objective, seed) cell not already reported
/// under `out_dir`, then writes `grid.csv`, `epochs.jsonl`, `table.txt`,
/// `table.csv` and the best checkpoint per (architecture, objective).
/// Aborted cells are recorded and the grid continues.
pub fn run_grid<T: Scalar>(
    spec: &GridSpec,
    data: &TrainData<T>,
    opts: &GridOptions,
) -> Result<GridOutcome> {
    if spec.archs.is_empty() || spec.losses.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Input(
            "grid needs at least one architecture, loss and seed".into(),
        ));
    }
    spec.base.validate()?;
    fs::create_dir_all(opts.out_dir.join("reports"))?;
    fs::create_dir_all(opts.out_dir.join("checkpoints"))?;
    let cells = spec.cells();
    let mut records: Vec<Option<CellRecord>> = cells
        .iter()
        .map(|k| {
            let text = fs::read_to_string(report_path(&opts.out_dir, k)).ok()?;
            serde_json::from_str::<CellRecord>(&text)
                .ok()
                .filter(|r| r.key == *k)
        })
        .collect();
    let resumed = records.iter().filter(|r| r.is_some()).count();
    let todo: Vec<usize> = (0..cells.len()).filter(|&i| records[i].is_none()).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<CellRecord>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..opts.jobs.max(1).min(todo.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let r = run_one(spec, data, opts, cells[i]);
                results.lock().expect("no worker panicked").push((i, r));
            });
        }
    });
    for (i, r) in results.into_inner().expect("no worker panicked") {
        records[i] = Some(r?);
    }
    let records: Vec<CellRecord> = records
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    write_summaries(&opts.out_dir, &records)?;
    Ok(GridOutcome {
        reports: records.iter().filter_map(|r| r.report.clone()).collect(),
        aborted: records
            .iter()
            .filter_map(|r| r.error.clone().map(|e| (r.key, e)))
            .collect(),
        resumed,
    })
}

fn write_summaries(dir: &Path, records: &[CellRecord]) -> Result<()> {
    let mut csv = String::from("arch,loss_fn,seed,test_loss,test_acc,wall_s\n");
    let mut jsonl = String::new();
    let mut best: Vec<&TrainReport> = Vec::new();
    for r in records {
        let Some(rep) = &r.report else { continue };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            rep.arch, rep.loss_fn, rep.seed, rep.test_loss, rep.test_acc, rep.wall_s
        );
        for (phase, losses) in [
            ("embedding", &rep.epoch_losses),
            ("classifier", &rep.classifier_losses),
        ] {
            for (epoch, loss) in losses.iter().enumerate() {
                let line = serde_json::json!({
                    "arch": rep.arch.key(),
                    "loss_fn": rep.loss_fn.key(),
                    "seed": rep.seed,
                    "phase": phase,
                    "epoch": epoch,
                    "loss": loss,
                });
                jsonl.push_str(&line.to_string());
                jsonl.push('\n');
            }
        }
        match best
            .iter_mut()
            .find(|b| b.arch == rep.arch && b.loss_fn == rep.loss_fn)
        {
            Some(b) if better(rep, b) => *b = rep,
            Some(_) => {}
            None => best.push(rep),
        }
    }
    fs::write(dir.join("grid.csv"), csv)?;
    fs::write(dir.join("epochs.jsonl"), jsonl)?;
    for b in &best {
        let key = CellKey {
            arch: b.arch,
            loss_fn: b.loss_fn,
            seed: b.seed,
        };
        fs::copy(
            checkpoint_path(dir, &key),
            best_checkpoint_path(dir, b.arch, b.loss_fn),
        )?;
    }
    let summaries: Vec<CellSummary> = records
        .iter()
        .filter_map(|r| r.report.as_ref())
        .map(|r| CellSummary {
            arch: r.arch,
            loss_fn: r.loss_fn,
            test_loss: r.test_loss,
            test_acc: r.test_acc,
        })
        .collect();
    let table = compare_table(&summaries);
    fs::write(dir.join("table.txt"), table.render_text())?;
    fs::write(dir.join("table.csv"), table.render_csv())?;
    Ok(())
}
