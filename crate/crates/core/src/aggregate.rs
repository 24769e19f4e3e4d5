//! Aggregation rules: round-decayed regularized averaging plus the FedAvg,
//! Krum, BALANCE and self-centered clipping baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightyearConfig {
    pub gamma: f64,
    /// The decay exponent is `round_t - round_index_base`.
    pub round_index_base: u32,
    /// Average over the selected set plus the client's own model.
    pub include_self: bool,
}

impl Default for LightyearConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            round_index_base: 0,
            include_self: false,
        }
    }
}

impl LightyearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn step(&self, round_t: u32) -> Result<f64> {
        if round_t < self.round_index_base {
            return Err(Error::InvalidArgument(format!(
                "round {round_t} precedes round_index_base {}",
                self.round_index_base
            )));
        }
        Ok(self.gamma.powi((round_t - self.round_index_base) as i32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub krum_f: usize,
    pub balance_gamma: f64,
    pub balance_kappa: f64,
    /// `None` fixes the radius at the median first-round distance.
    pub scclip_radius: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            krum_f: 1,
            balance_gamma: 0.3,
            balance_kappa: 1.0,
            scclip_radius: None,
        }
    }
}

fn check_specs(own: &ParamVector, others: &[&ParamVector]) -> Result<()> {
    if others.iter().any(|p| !own.same_spec(p)) {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

/// Unweighted elementwise mean.
pub fn fedavg(updates: &[&ParamVector]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::EmptyData("fedavg"))?;
    check_specs(first, updates)?;
    let mut acc = vec![0.0; first.len()];
    for p in updates {
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    first.with_values(acc)
}

/// `own + gamma^t * mean_j(theta_j - own)`, evaluated as the convex
/// combination `(1 - g) * own + g * mean(selected)`. Empty selection keeps `own`.
pub fn lightyear_aggregate(
    own: &ParamVector,
    selected: &[&ParamVector],
    round_t: u32,
    cfg: &LightyearConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    let g = cfg.step(round_t)?;
    if selected.is_empty() {
        return Ok(own.clone());
    }
    check_specs(own, selected)?;
    let mean = fedavg(selected)?;
    let keep = 1.0 - g;
    let values = own
        .values()
        .iter()
        .zip(mean.values())
        .map(|(o, m)| keep * o + g * m)
        .collect();
    own.with_values(values)
}

fn squared_distance(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum scores: each update's summed squared distance to its `n - f - 2`
/// nearest other updates.
pub fn krum_scores(updates: &[&ParamVector], f: usize) -> Result<Vec<f64>> {
    let n = updates.len();
    if n < f + 3 {
        return Err(Error::InvalidArgument(format!("krum needs n >= f + 3 (n={n}, f={f})")));
    }
    check_specs(updates[0], updates)?;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(updates[i], updates[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let m = n - f - 2;
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..m].iter().sum()
        })
        .collect())
}

/// Index of the Krum winner; ties go to the lowest index.
pub fn krum_select(updates: &[&ParamVector], f: usize) -> Result<usize> {
    let scores = krum_scores(updates, f)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn krum(updates: &[&ParamVector], f: usize) -> Result<ParamVector> {
    Ok(updates[krum_select(updates, f)?].clone())
}

/// Indices BALANCE accepts: `||theta_j - own|| <= gamma * exp(-kappa * t / T) * ||own||`.
pub fn balance_accepted(
    own: &ParamVector,
    updates: &[&ParamVector],
    round_t: u32,
    total_rounds: u32,
    cfg: &BaselineConfig,
) -> Result<Vec<usize>> {
    if total_rounds == 0 {
        return Err(Error::InvalidArgument("total_rounds must be >= 1".into()));
    }
    check_specs(own, updates)?;
    let threshold =
        cfg.balance_gamma * (-cfg.balance_kappa * round_t as f64 / total_rounds as f64).exp() * own.norm();
    Ok(updates
        .iter()
        .enumerate()
        .filter(|(_, p)| p.distance(own) <= threshold)
        .map(|(i, _)| i)
        .collect())
}

/// `0.5 * own + 0.5 * mean(accepted)`, or `own` when nothing is accepted.
pub fn balance(
    own: &ParamVector,
    updates: &[&ParamVector],
    round_t: u32,
    total_rounds: u32,
    cfg: &BaselineConfig,
) -> Result<ParamVector> {
    let accepted = balance_accepted(own, updates, round_t, total_rounds, cfg)?;
    if accepted.is_empty() {
        return Ok(own.clone());
    }
    let chosen: Vec<&ParamVector> = accepted.iter().map(|&i| updates[i]).collect();
    let mean = fedavg(&chosen)?;
    let values = own
        .values()
        .iter()
        .zip(mean.values())
        .map(|(o, m)| 0.5 * o + 0.5 * m)
        .collect();
    own.with_values(values)
}

/// Self-centered clipping: each `d_j = theta_j - own` is scaled by
/// `min(1, radius / ||d_j||)`, and `own` moves by the mean clipped difference.
pub fn scclip(own: &ParamVector, updates: &[&ParamVector], radius: f64) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::EmptyData("scclip"));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("scclip radius must be > 0".into()));
    }
    check_specs(own, updates)?;
    let mut step = vec![0.0; own.len()];
    for p in updates {
        let norm = p.distance(own);
        let scale = if norm > radius { radius / norm } else { 1.0 };
        for ((s, t), o) in step.iter_mut().zip(p.values()).zip(own.values()) {
            *s += scale * (t - o);
        }
    }
    let n = updates.len() as f64;
    let values = own.values().iter().zip(&step).map(|(o, s)| o + s / n).collect();
    own.with_values(values)
}

/// Median of `||theta_j - own||`, the default clipping radius.
pub fn median_distance(own: &ParamVector, updates: &[&ParamVector]) -> Option<f64> {
    let mut d: Vec<f64> = updates.iter().map(|p| p.distance(own)).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len().is_multiple_of(2) { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] })
}
