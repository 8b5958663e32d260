//! Return targets and advantage estimates.
//!
//! Rewards use discounted returns and GAE. Cost increments use undiscounted
//! suffix sums (their targets are the remaining rise of the running maximum)
//! and are never normalized, since their absolute scale enters the
//! constraint slack.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    pub gamma: f64,
    pub lam: f64,
    /// Always 1: increments are summed without discounting.
    pub cost_gamma: f64,
    pub cost_lam: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.97,
            cost_gamma: 1.0,
            cost_lam: 0.95,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [("lam", self.lam), ("cost_lam", self.cost_lam)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.cost_gamma != 1.0 {
            return Err(Error::config("cost_gamma is fixed to 1"));
        }
        Ok(())
    }
}

/// `R_t = sum_{k >= t} gamma^(k-t) r_k + gamma^(T-t) * bootstrap` for one
/// episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimation for one episode.
///
/// `values` holds `V(s_0..s_{T-1})` plus one bootstrap entry `V(s_T)` (zero
/// for a terminal state). With `lam = 0` this is the one-step estimate
/// `r_t + gamma V(s_{t+1}) - V(s_t)`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::domain(format!(
            "gae needs {} values (one bootstrap entry), got {}",
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Undiscounted suffix sums of cost increments: the regression targets for
/// the increment value function.
pub fn d_return_targets(increments: &[f64]) -> Result<Vec<f64>> {
    if let Some(d) = increments.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::domain(format!("cost increments must be non-negative, got {d}")));
    }
    Ok(discounted_returns(increments, 1.0, 0.0))
}

/// Drops zero-valued targets so that at most as many zeros as non-zeros
/// remain. Non-zero pairs are always kept, and kept pairs retain their
/// original order. If every target is zero a single pair survives.
pub fn subsample_zero_targets<T, R: Rng + ?Sized>(pairs: Vec<(T, f64)>, rng: &mut R) -> Vec<(T, f64)> {
    if pairs.is_empty() {
        return pairs;
    }
    let zero_idx: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| *t == 0.0)
        .map(|(i, _)| i)
        .collect();
    let nonzero = pairs.len() - zero_idx.len();
    let keep_zeros = if nonzero == 0 { 1 } else { zero_idx.len().min(nonzero) };
    if keep_zeros == zero_idx.len() {
        return pairs;
    }
    let mut keep = vec![true; pairs.len()];
    for &i in &zero_idx {
        keep[i] = false;
    }
    for k in index::sample(rng, zero_idx.len(), keep_zeros) {
        keep[zero_idx[k]] = true;
    }
    pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Shifts and scales to zero mean and unit variance (population variance).
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-8 { 1.0 / std } else { 1.0 };
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
}
