//! Function-space agreement between a client's reference model and a received
//! update, measured on the client's validation set.
//!
//! The composite score is the unweighted mean of three components:
//!
//! * accuracy agreement, from the per-sample correctness indicators of both models;
//! * calibration agreement, `1 - |ECE_i - ECE_j|`;
//! * sharpness agreement, `1 - mean |H(p_i(x)) - H(p_j(x))|`.
//!
//! A peer enters the aggregation set when its composite is at least `tau`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{EceConfig, Predictions};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccMode {
    /// Signed mean of `1[h_i correct] - 1[h_j correct]`, in `[-1, 1]`.
    Literal,
    /// `1 - |literal|`, in `[0, 1]`.
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub tau: f64,
    pub acc_mode: AccMode,
    pub ece_bins: usize,
    pub entropy_normalized: bool,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            tau: 0.75,
            acc_mode: AccMode::Symmetric,
            ece_bins: 10,
            entropy_normalized: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub peer_id: usize,
    pub a_acc: f64,
    pub a_ece: f64,
    pub a_sharp: f64,
    pub composite: f64,
    pub selected: bool,
}

fn check_pair(h_i: &ParamVector, h_j: &ParamVector, v: &LabeledDataset) -> Result<()> {
    if !h_i.same_spec(h_j) {
        return Err(Error::SpecMismatch);
    }
    if v.is_empty() {
        return Err(Error::EmptyData("agreement"));
    }
    Ok(())
}

fn acc_component(ref_correct: &[bool], peer_correct: &[bool], mode: AccMode) -> f64 {
    let diff: i64 = ref_correct
        .iter()
        .zip(peer_correct)
        .map(|(&a, &b)| a as i64 - b as i64)
        .sum();
    let literal = diff as f64 / ref_correct.len() as f64;
    match mode {
        AccMode::Literal => literal,
        AccMode::Symmetric => 1.0 - literal.abs(),
    }
}

fn sharp_component(ref_entropy: &[f64], peer_entropy: &[f64]) -> f64 {
    let gap: f64 = ref_entropy.iter().zip(peer_entropy).map(|(a, b)| (a - b).abs()).sum();
    1.0 - gap / ref_entropy.len() as f64
}

pub fn acc_agreement(h_i: &ParamVector, h_j: &ParamVector, v: &LabeledDataset, mode: AccMode) -> Result<f64> {
    check_pair(h_i, h_j, v)?;
    let pi = Predictions::new(h_i, v)?;
    let pj = Predictions::new(h_j, v)?;
    Ok(acc_component(&pi.correct(v.labels()), &pj.correct(v.labels()), mode))
}

pub fn ece_agreement(h_i: &ParamVector, h_j: &ParamVector, v: &LabeledDataset, ece_bins: usize) -> Result<f64> {
    check_pair(h_i, h_j, v)?;
    let cfg = EceConfig { n_bins: ece_bins };
    let ei = Predictions::new(h_i, v)?.ece(v.labels(), cfg)?;
    let ej = Predictions::new(h_j, v)?.ece(v.labels(), cfg)?;
    Ok(1.0 - (ei - ej).abs())
}

pub fn sharp_agreement(h_i: &ParamVector, h_j: &ParamVector, v: &LabeledDataset, entropy_normalized: bool) -> Result<f64> {
    check_pair(h_i, h_j, v)?;
    let hi = Predictions::new(h_i, v)?.entropies(entropy_normalized);
    let hj = Predictions::new(h_j, v)?.entropies(entropy_normalized);
    Ok(sharp_component(&hi, &hj))
}

pub fn agreement_score(
    peer_id: usize,
    h_i: &ParamVector,
    h_j: &ParamVector,
    v: &LabeledDataset,
    cfg: &AgreementConfig,
) -> Result<AgreementReport> {
    AgreementScorer::new(h_i, v, *cfg)?.score(peer_id, h_j)
}

/// Scores many peers against one reference, caching the reference's
/// validation-set predictions.
#[derive(Debug)]
pub struct AgreementScorer<'a> {
    reference: &'a ParamVector,
    val: &'a LabeledDataset,
    cfg: AgreementConfig,
    correct: Vec<bool>,
    ece: f64,
    entropy: Vec<f64>,
}

impl<'a> AgreementScorer<'a> {
    pub fn new(reference: &'a ParamVector, val: &'a LabeledDataset, cfg: AgreementConfig) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::EmptyData("agreement"));
        }
        if cfg.ece_bins == 0 {
            return Err(Error::InvalidArgument("ece_bins must be >= 1".into()));
        }
        let preds = Predictions::new(reference, val)?;
        Ok(Self {
            reference,
            val,
            cfg,
            correct: preds.correct(val.labels()),
            ece: preds.ece(val.labels(), EceConfig { n_bins: cfg.ece_bins })?,
            entropy: preds.entropies(cfg.entropy_normalized),
        })
    }

    pub fn score(&self, peer_id: usize, peer: &ParamVector) -> Result<AgreementReport> {
        check_pair(self.reference, peer, self.val)?;
        let preds = Predictions::new(peer, self.val)?;
        let labels = self.val.labels();
        let a_acc = acc_component(&self.correct, &preds.correct(labels), self.cfg.acc_mode);
        let a_ece = 1.0 - (self.ece - preds.ece(labels, EceConfig { n_bins: self.cfg.ece_bins })?).abs();
        let a_sharp = sharp_component(&self.entropy, &preds.entropies(self.cfg.entropy_normalized));
        let composite = (a_acc + a_ece + a_sharp) / 3.0;
        Ok(AgreementReport {
            peer_id,
            a_acc,
            a_ece,
            a_sharp,
            composite,
            selected: composite >= self.cfg.tau,
        })
    }
}

/// Peers whose composite score is at least `tau`.
pub fn select_aggregation_set(reports: &[AgreementReport], tau: f64) -> BTreeSet<usize> {
    reports
        .iter()
        .filter(|r| r.composite >= tau)
        .map(|r| r.peer_id)
        .collect()
}
