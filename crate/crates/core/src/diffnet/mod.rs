//! Small differentiable-programming kernel: row-wise MLP fields, a first-order
//! optimizer, exact nearest-neighbor search and Chamfer distance.

mod adam;
mod chamfer;
mod kdtree;
mod mlp;

use std::fmt::Write as _;
use std::path::Path;

pub use adam::{AdamConfig, OptimizerState, ParamTensor};
pub use chamfer::{chamfer, chamfer_with_tree, ChamferResult};
pub use kdtree::KdTree;
pub use mlp::{Activation, ForwardTrace, Layer, MlpField, MlpGradients};

use crate::{Error, Result};

/// Per-iteration loss values of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    pub terms: Vec<String>,
    pub records: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub terms: Vec<f64>,
}

impl LossHistory {
    pub fn new<S: Into<String>>(terms: impl IntoIterator<Item = S>) -> Self {
        LossHistory {
            terms: terms.into_iter().map(Into::into).collect(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, terms: Vec<f64>) {
        debug_assert_eq!(terms.len(), self.terms.len());
        let total = terms.iter().sum();
        self.records.push(LossRecord {
            iteration,
            total,
            terms,
        });
    }

    pub fn first(&self) -> Option<&LossRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,total");
        for t in &self.terms {
            s.push(',');
            s.push_str(t);
        }
        s.push('\n');
        for r in &self.records {
            write!(s, "{},{:e}", r.iteration, r.total).unwrap();
            for v in &r.terms {
                write!(s, ",{v:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_record() {
        let mut h = LossHistory::new(["data", "edge"]);
        h.push(0, vec![1.0, 0.5]);
        h.push(1, vec![0.25, 0.0]);
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,total,data,edge");
        assert_eq!(lines[1], "0,1.5e0,1e0,5e-1");
        assert_eq!(lines.len(), 3);
        assert_eq!(h.last().unwrap().total, 0.25);
    }
}
