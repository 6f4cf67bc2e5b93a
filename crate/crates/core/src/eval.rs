//! Classification metrics and data splitting: confusion matrices, macro
//! precision/recall/F1, binary sensitivity/specificity, and stratified
//! k-fold assignment.
//!
//! All undefined ratios (0/0) are defined as 0, the strict convention for
//! imbalanced label sets. For sensitivity/specificity the positive class is
//! class 1.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// C×C count matrix; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Build a confusion matrix from parallel label slices.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    if truth.is_empty() {
        return Err(Error::Data("cannot build a confusion matrix from no labels".into()));
    }
    if truth.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Data("class count must be >= 1".into()));
    }
    let mut cm = ConfusionMatrix {
        classes,
        counts: vec![0; classes * classes],
    };
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Data(format!(
                "label pair ({t}, {p}) outside 0..{classes}"
            )));
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes || classes == 0 {
            return Err(Error::Shape(format!(
                "expected {classes}x{classes} counts, got {}",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / total as f64
    }

    fn tp(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    fn fp(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&t| t != c)
            .map(|t| self.count(t, c))
            .sum()
    }

    fn fn_(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.count(c, p))
            .sum()
    }

    pub fn per_class_precision(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| ratio(self.tp(c), self.tp(c) + self.fp(c)))
            .collect()
    }

    pub fn per_class_recall(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| ratio(self.tp(c), self.tp(c) + self.fn_(c)))
            .collect()
    }

    /// Per-class `2TP / (2TP + FP + FN)`, 0/0 -> 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| ratio(2 * self.tp(c), 2 * self.tp(c) + self.fp(c) + self.fn_(c)))
            .collect()
    }

    pub fn macro_precision(&self) -> f64 {
        mean(&self.per_class_precision())
    }

    pub fn macro_recall(&self) -> f64 {
        mean(&self.per_class_recall())
    }

    pub fn macro_f1(&self) -> f64 {
        mean(&self.per_class_f1())
    }

    /// Binary only; class 1 is the positive class.
    /// `sen = TP/(TP+FN)`, `spe = TN/(TN+FP)`.
    pub fn sensitivity_specificity(&self) -> Result<(f64, f64)> {
        if self.classes != 2 {
            return Err(Error::InvalidConfig(format!(
                "sensitivity/specificity need a binary matrix, got {} classes",
                self.classes
            )));
        }
        let tp = self.count(1, 1);
        let fn_ = self.count(1, 0);
        let tn = self.count(0, 0);
        let fp = self.count(0, 1);
        Ok((ratio(tp, tp + fn_), ratio(tn, tn + fp)))
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            accuracy: self.accuracy(),
            per_class_precision: self.per_class_precision(),
            per_class_recall: self.per_class_recall(),
            per_class_f1: self.per_class_f1(),
            macro_precision: self.macro_precision(),
            macro_recall: self.macro_recall(),
            macro_f1: self.macro_f1(),
            sen_spe: self.sensitivity_specificity().ok(),
        }
    }

    /// CSV with a header row of predicted classes; one row per true class.
    pub fn csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for p in 0..self.classes {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for t in 0..self.classes {
            let _ = write!(out, "{t}");
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.count(t, p));
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Derived metrics in one bundle; `sen_spe` is present only for binary
/// matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub sen_spe: Option<(f64, f64)>,
}

impl MetricsReport {
    /// Plain-text rendering, one metric per line.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy {:.6}", self.accuracy);
        let _ = writeln!(out, "macro_f1 {:.6}", self.macro_f1);
        let _ = writeln!(out, "macro_precision {:.6}", self.macro_precision);
        let _ = writeln!(out, "macro_recall {:.6}", self.macro_recall);
        if let Some((sen, spe)) = self.sen_spe {
            let _ = writeln!(out, "sensitivity {sen:.6}");
            let _ = writeln!(out, "specificity {spe:.6}");
        }
        for c in 0..self.per_class_f1.len() {
            let _ = writeln!(
                out,
                "class{c} precision {:.6} recall {:.6} f1 {:.6}",
                self.per_class_precision[c], self.per_class_recall[c], self.per_class_f1[c]
            );
        }
        out
    }
}

/// Assign each index to one of `k` folds so per-class counts across folds
/// differ by at most one. Same seed, same folds. Each fold is returned
/// sorted.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs k >= 2 folds, got {k}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset("no labels to split".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for (&class, members) in &by_class {
        if members.len() < k {
            return Err(Error::InvalidDataset(format!(
                "class {class} has only {} members, cannot fill {k} folds",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for idx in members {
            folds[next].push(idx);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
