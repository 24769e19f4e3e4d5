//! Accuracy, binned expected calibration error and predictive entropy.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EceConfig {
    pub n_bins: usize,
}

impl Default for EceConfig {
    fn default() -> Self {
        Self { n_bins: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ece: f64,
    pub mean_normalized_entropy: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax outputs of one model over a dataset, computed once and reused.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    probs: Vec<f64>,
    n_classes: usize,
}

impl Predictions {
    pub fn new(params: &ParamVector, data: &LabeledDataset) -> Result<Self> {
        let n_classes = params.spec().n_classes();
        let mut probs = Vec::with_capacity(data.len() * n_classes);
        for (row, _) in data.rows() {
            probs.extend(nn::predict_proba(params, row)?);
        }
        Ok(Self { probs, n_classes })
    }

    /// Wraps precomputed per-sample distributions (row-major, `n x K`).
    pub fn from_probs(probs: Vec<f64>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 || !probs.len().is_multiple_of(n_classes) {
            return Err(Error::InvalidArgument("probability matrix is not n x K".into()));
        }
        Ok(Self { probs, n_classes })
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_classes)
    }

    pub fn predicted(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    pub fn correct(&self, labels: &[usize]) -> Vec<bool> {
        self.rows().zip(labels).map(|(p, &y)| argmax(p) == y).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.rows().map(|p| p[argmax(p)]).collect()
    }

    pub fn accuracy(&self, labels: &[usize]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyData("accuracy"));
        }
        let hits = self.correct(labels).iter().filter(|&&c| c).count();
        Ok(hits as f64 / self.len() as f64)
    }

    pub fn ece(&self, labels: &[usize], cfg: EceConfig) -> Result<f64> {
        ece_from_confidences(&self.confidences(), &self.correct(labels), cfg)
    }

    /// Per-sample entropy, normalized by `ln K` when `normalized`.
    pub fn entropies(&self, normalized: bool) -> Vec<f64> {
        self.rows()
            .map(|p| {
                let h = entropy(p);
                if normalized {
                    h / (self.n_classes as f64).ln()
                } else {
                    h
                }
            })
            .collect()
    }
}

pub fn accuracy(params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("accuracy"));
    }
    Predictions::new(params, data)?.accuracy(data.labels())
}

pub fn ece(params: &ParamVector, data: &LabeledDataset, cfg: EceConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("ece"));
    }
    Predictions::new(params, data)?.ece(data.labels(), cfg)
}

fn bin_index(confidence: f64, n_bins: usize) -> usize {
    // bins are (lo, hi]; the first bin also holds confidence 0
    let b = (confidence * n_bins as f64).ceil() as usize;
    b.saturating_sub(1).min(n_bins - 1)
}

/// `sum_b (n_b / n) * |acc_b - conf_b|` over equal-width bins on `[0, 1]`.
pub fn ece_from_confidences(confidences: &[f64], correct: &[bool], cfg: EceConfig) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::EmptyData("ece"));
    }
    if cfg.n_bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::DimensionMismatch {
            expected: confidences.len(),
            found: correct.len(),
        });
    }
    let mut count = vec![0usize; cfg.n_bins];
    let mut conf_sum = vec![0.0; cfg.n_bins];
    let mut hit_sum = vec![0.0; cfg.n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, cfg.n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        if ok {
            hit_sum[b] += 1.0;
        }
    }
    let n = confidences.len() as f64;
    Ok((0..cfg.n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hit_sum[b] / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn normalized_entropy(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidDistribution("need at least 2 classes".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidDistribution("entries must lie in [0, 1]".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok((entropy(probs) / (probs.len() as f64).ln()).clamp(0.0, 1.0))
}

pub fn evaluate(params: &ParamVector, data: &LabeledDataset, cfg: EceConfig) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyData("evaluate"));
    }
    let preds = Predictions::new(params, data)?;
    let ent = preds.entropies(true);
    Ok(EvalReport {
        accuracy: preds.accuracy(data.labels())?,
        ece: preds.ece(data.labels(), cfg)?,
        mean_normalized_entropy: ent.iter().sum::<f64>() / ent.len() as f64,
    })
}
