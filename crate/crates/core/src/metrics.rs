//! Accuracy-parity metrics: macro, micro, worst-class and per-group accuracy.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::models::{predict, ModelState};

/// `matrix[true][pred]` tallies over `K` classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    num_classes: usize,
    matrix: Vec<Vec<usize>>,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn matrix(&self) -> &[Vec<usize>] {
        &self.matrix
    }

    pub fn true_positives(&self, class: usize) -> usize {
        self.matrix[class][class]
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.matrix[class].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    /// `TP_k / N_k` per class; errors on the first empty class.
    pub fn per_class_accuracy(&self) -> Result<Vec<f64>> {
        (0..self.num_classes)
            .map(|k| match self.class_total(k) {
                0 => Err(Error::Metric(format!("class {k} has no samples"))),
                n => Ok(self.true_positives(k) as f64 / n as f64),
            })
            .collect()
    }
}

pub fn confusion_counts(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension { expected: labels.len(), got: preds.len() });
    }
    let mut matrix = vec![vec![0; num_classes]; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= num_classes || p >= num_classes {
            return Err(Error::Metric(format!(
                "class index {} out of range for {num_classes} classes",
                y.max(p)
            )));
        }
        matrix[y][p] += 1;
    }
    Ok(ConfusionCounts { num_classes, matrix })
}

/// `(1/K) Σ_k TP_k / N_k`.
pub fn macro_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let per = c.per_class_accuracy()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// `Σ TP_k / Σ N_k`.
pub fn micro_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Metric("no samples".into()));
    }
    let tp: usize = (0..c.num_classes).map(|k| c.true_positives(k)).sum();
    Ok(tp as f64 / total as f64)
}

/// `(min_k TP_k/N_k, argmin)`, lowest class index on ties.
pub fn worst_class_accuracy(c: &ConfusionCounts) -> Result<(f64, usize)> {
    let per = c.per_class_accuracy()?;
    let mut worst = (per[0], 0);
    for (k, &a) in per.iter().enumerate().skip(1) {
        if a < worst.0 {
            worst = (a, k);
        }
    }
    Ok(worst)
}

/// Accuracy restricted to each protected group.
pub fn group_accuracy(preds: &[usize], labels: &[usize], groups: &[usize], num_groups: usize) -> Result<Vec<f64>> {
    if preds.len() != labels.len() || groups.len() != labels.len() {
        return Err(Error::Dimension { expected: labels.len(), got: preds.len().min(groups.len()) });
    }
    let mut correct = vec![0usize; num_groups];
    let mut total = vec![0usize; num_groups];
    for ((&p, &y), &g) in preds.iter().zip(labels).zip(groups) {
        if g >= num_groups {
            return Err(Error::Metric(format!("group {g} out of range")));
        }
        total[g] += 1;
        correct[g] += usize::from(p == y);
    }
    (0..num_groups)
        .map(|g| match total[g] {
            0 => Err(Error::Metric(format!("group {g} has no samples"))),
            n => Ok(correct[g] as f64 / n as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub macro_acc: f64,
    pub micro_acc: f64,
    pub worst_acc: f64,
    pub worst_class: usize,
    pub per_class_acc: Vec<f64>,
    pub group_acc: Option<Vec<f64>>,
}

/// Predicts on `ds` and computes every metric above.
pub fn evaluate(state: &ModelState, ds: &Dataset) -> Result<EvalMetrics> {
    let pred = predict(state, ds.features())?;
    let preds = pred
        .labels()
        .ok_or_else(|| Error::Metric("classification metrics need a classifier".into()))?;
    let counts = confusion_counts(preds, ds.labels(), ds.num_classes())?;
    let (worst_acc, worst_class) = worst_class_accuracy(&counts)?;
    let group_acc = match ds.groups() {
        Some(g) => Some(group_accuracy(preds, ds.labels(), g, ds.num_groups())?),
        None => None,
    };
    Ok(EvalMetrics {
        macro_acc: macro_accuracy(&counts)?,
        micro_acc: micro_accuracy(&counts)?,
        worst_acc,
        worst_class,
        per_class_acc: counts.per_class_accuracy()?,
        group_acc,
    })
}
