use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::nn::Arch;
use crate::train::LossKind;

/// One trained cell: test loss and accuracy of an (architecture, objective) run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub arch: Arch,
    pub loss_fn: LossKind,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// Objective rows by architecture columns. Each cell keeps the best run
/// (highest accuracy, ties by lower loss).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareTable {
    pub cells: BTreeMap<(LossKind, Arch), CellSummary>,
}

pub fn compare_table(reports: &[CellSummary]) -> CompareTable {
    let mut cells: BTreeMap<(LossKind, Arch), CellSummary> = BTreeMap::new();
    for r in reports {
        cells
            .entry((r.loss_fn, r.arch))
            .and_modify(|best| {
                if better(r, best) {
                    *best = *r;
                }
            })
            .or_insert(*r);
    }
    CompareTable { cells }
}

fn better(a: &CellSummary, b: &CellSummary) -> bool {
    a.test_acc > b.test_acc || (a.test_acc == b.test_acc && a.test_loss < b.test_loss)
}

impl CompareTable {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Highest accuracy in an architecture column, if any cell is present.
    pub fn column_max(&self, arch: Arch) -> Option<f64> {
        self.cells
            .values()
            .filter(|c| c.arch == arch)
            .map(|c| c.test_acc)
            .fold(None, |m, a| Some(m.map_or(a, |m: f64| m.max(a))))
    }

    pub fn is_column_max(&self, loss: LossKind, arch: Arch) -> bool {
        match (self.cells.get(&(loss, arch)), self.column_max(arch)) {
            (Some(c), Some(m)) => c.test_acc == m,
            _ => false,
        }
    }

    /// Aligned text: one row per objective, `loss / accuracy` per
    /// architecture, `*` marking each column's best accuracy and `-` a gap.
    pub fn render_text(&self) -> String {
        if self.is_empty() {
            return String::new();
        }
        let w = 20;
        let mut s = format!("{:<10}", "");
        for a in Arch::ALL {
            let _ = write!(s, "{:>w$}", a.title());
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<10}{:>w$}{:>w$}{:>w$}",
            "", "loss / acc", "loss / acc", "loss / acc"
        );
        for l in LossKind::TABLE_ORDER {
            let _ = write!(s, "{:<10}", l.title());
            for a in Arch::ALL {
                let cell = match self.cells.get(&(l, a)) {
                    Some(c) => format!(
                        "{:.4} / {:.4}{}",
                        c.test_loss,
                        c.test_acc,
                        if self.is_column_max(l, a) { "*" } else { " " }
                    ),
                    None => "-".to_string(),
                };
                let _ = write!(s, "{cell:>w$}");
            }
            s.push('\n');
        }
        s
    }

    /// `loss_fn,arch,test_loss,test_acc,column_max`, gaps omitted.
    pub fn render_csv(&self) -> String {
        let mut s = String::from("loss_fn,arch,test_loss,test_acc,column_max\n");
        for l in LossKind::TABLE_ORDER {
            for a in Arch::ALL {
                if let Some(c) = self.cells.get(&(l, a)) {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        l.key(),
                        a.key(),
                        c.test_loss,
                        c.test_acc,
                        self.is_column_max(l, a)
                    );
                }
            }
        }
        s
    }
}
