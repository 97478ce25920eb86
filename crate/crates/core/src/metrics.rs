//! Confusion matrices and per-class precision / recall / F1 / accuracy.
//!
//! Matrices are stored with rows = true class and columns = predicted class.
//! Published figures that use the opposite layout go through
//! [`ConfusionMatrix::from_predicted_rows`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelMap;
use crate::{Error, Result};

/// Orientation note written next to serialized matrices.
pub const INTERNAL_ORIENTATION: &str = "rows=true,cols=predicted";
pub const PAPER_ORIENTATION: &str = "rows=predicted,cols=true";

/// Square count grid, `counts[t][p]` = samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    orientation: String,
    counts: Vec<Vec<u64>>,
}

impl TryFrom<MatrixRepr> for ConfusionMatrix {
    type Error = Error;

    fn try_from(repr: MatrixRepr) -> Result<Self> {
        let m = ConfusionMatrix::from_true_rows(&repr.counts)?;
        match repr.orientation.as_str() {
            INTERNAL_ORIENTATION => Ok(m),
            PAPER_ORIENTATION => Ok(m.transposed()),
            other => Err(Error::Input(format!("unknown matrix orientation {other:?}"))),
        }
    }
}

impl From<ConfusionMatrix> for MatrixRepr {
    fn from(m: ConfusionMatrix) -> Self {
        MatrixRepr {
            orientation: INTERNAL_ORIENTATION.into(),
            counts: m.rows(),
        }
    }
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds a matrix from rows indexed by true class.
    pub fn from_true_rows<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Input("confusion matrix needs at least one class".into()));
        }
        let mut counts = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Input(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            counts.extend_from_slice(row);
        }
        Ok(Self {
            num_classes: n,
            counts,
        })
    }

    /// Imports a matrix laid out with rows = predicted class (the layout of
    /// the published figures) by transposing it.
    pub fn from_predicted_rows<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        Ok(Self::from_true_rows(rows)?.transposed())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes + predicted]
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.num_classes + predicted] += 1;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.num_classes)
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn transposed(&self) -> Self {
        let n = self.num_classes;
        let mut counts = vec![0; n * n];
        for t in 0..n {
            for p in 0..n {
                counts[p * n + t] = self.get(t, p);
            }
        }
        Self {
            num_classes: n,
            counts,
        }
    }

    /// Relabels classes so that new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_classes;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::Input("permutation does not match class count".into()));
        }
        let mut counts = vec![0; n * n];
        for t in 0..n {
            for p in 0..n {
                counts[t * n + p] = self.get(perm[t], perm[p]);
            }
        }
        Ok(Self {
            num_classes: n,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(true_class, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, predicted)).sum()
    }
}

/// Tallies (true, predicted) pairs into a matrix.
pub fn confusion_matrix(
    true_labels: &[usize],
    predicted_labels: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::Input(format!(
            "label length mismatch: {} true vs {} predicted",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Input("num_classes must be at least 1".into()));
    }
    let mut m = ConfusionMatrix::zeros(num_classes);
    for (i, (&t, &p)) in true_labels.iter().zip(predicted_labels).enumerate() {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Input(format!(
                "pair {i} = ({t}, {p}) outside 0..{num_classes}"
            )));
        }
        m.add(t, p);
    }
    Ok(m)
}

/// One-vs-rest decomposition for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

pub fn class_counts(matrix: &ConfusionMatrix, class_id: usize) -> Result<ClassCounts> {
    if class_id >= matrix.num_classes() {
        return Err(Error::Input(format!(
            "class id {class_id} outside 0..{}",
            matrix.num_classes()
        )));
    }
    let tp = matrix.get(class_id, class_id);
    let fn_ = matrix.row_sum(class_id) - tp;
    let fp = matrix.col_sum(class_id) - tp;
    Ok(ClassCounts {
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
        true_negative: matrix.total() - tp - fp - fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when a zero denominator forced one of the ratios to 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(counts: &ClassCounts) -> Result<ClassMetrics> {
    if counts.total() == 0 {
        return Err(Error::Input("class counts are all zero".into()));
    }
    let ClassCounts {
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
        true_negative: tn,
    } = *counts;
    let mut degenerate = false;
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = (tp + tn) as f64 / counts.total() as f64;
    Ok(ClassMetrics {
        precision,
        recall,
        f1,
        accuracy,
        degenerate,
    })
}

/// Corpus-level accuracy, trace / total.
pub fn overall_accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    Ok(matrix.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_class: Vec<ClassReport>,
    pub overall_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub matrix: ConfusionMatrix,
}

pub fn build_report(matrix: &ConfusionMatrix, labels: &LabelMap) -> Result<EvaluationReport> {
    let n = matrix.num_classes();
    if labels.len() != n {
        return Err(Error::Input(format!(
            "label map has {} classes, matrix has {n}",
            labels.len()
        )));
    }
    let overall = overall_accuracy(matrix)?;
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let counts = class_counts(matrix, c)?;
        let m = class_metrics(&counts)?;
        per_class.push(ClassReport {
            class_name: labels.name(c)?.into(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: matrix.row_sum(c),
            degenerate: m.degenerate,
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
    Ok(EvaluationReport {
        overall_accuracy: overall,
        macro_precision: mean(|r| r.precision),
        macro_recall: mean(|r| r.recall),
        macro_f1: mean(|r| r.f1),
        per_class,
        matrix: matrix.clone(),
    })
}

/// Half-up rounding to two decimals for display.
///
/// Values whose shortest decimal form ends in an exact 5 (0.995, 0.985) round
/// up even when their binary representation sits just below the midpoint.
pub fn round2(x: f64) -> f64 {
    libm::floor(x * 100.0 + 0.5 + 1e-9) / 100.0
}
