use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};

pub const INITIAL_LOG_STD: f64 = -0.5;
pub const MEAN_OUTPUT_SCALE: f64 = 0.01;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian policy: an MLP for the mean and a state-independent
/// log standard deviation.
///
/// The flat parameter vector is the mean network's parameters followed by
/// `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

/// log N(action; mean, diag(exp(log_std))^2).
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&mu, &ls), &a)| {
            let z = (a - mu) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_2PI
        })
        .sum()
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Ok(Self {
            mean_net: Mlp::new(&sizes, MEAN_OUTPUT_SCALE, rng)?,
            log_std: vec![INITIAL_LOG_STD; action_dim],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::domain(format!(
                "policy has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let n = self.mean_net.num_params();
        self.mean_net.set_params(&params[..n])?;
        self.log_std.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn with_flat_params(&self, params: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat_params(params)?;
        Ok(p)
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(obs)
    }

    pub fn mean_batch(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mean_net.forward_batch(obs)
    }

    /// Draws an action and returns it with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&mu, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * eps
            })
            .collect();
        let lp = gaussian_log_density(&mean, &self.log_std, &action);
        if !lp.is_finite() {
            return Err(Error::numeric("non-finite log-probability while sampling"));
        }
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        self.check_action(action.len())?;
        let mean = self.mean(obs)?;
        Ok(gaussian_log_density(&mean, &self.log_std, action))
    }

    pub fn log_prob_batch(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_action(actions.ncols())?;
        let means = self.mean_batch(obs)?;
        Ok(self.log_prob_from_means(&means, actions))
    }

    pub(crate) fn log_prob_from_means(&self, means: &Array2<f64>, actions: ArrayView2<f64>) -> Array1<f64> {
        let log_norm: f64 = self.log_std.iter().sum::<f64>() + HALF_LOG_2PI * self.action_dim() as f64;
        let inv_var: Vec<f64> = self.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        Array1::from_iter(means.outer_iter().zip(actions.outer_iter()).map(|(m, a)| {
            let quad: f64 = m
                .iter()
                .zip(a.iter())
                .zip(&inv_var)
                .map(|((mu, x), iv)| (x - mu) * (x - mu) * iv)
                .sum();
            -0.5 * quad - log_norm
        }))
    }

    fn check_action(&self, dim: usize) -> Result<()> {
        if dim != self.action_dim() {
            return Err(Error::domain(format!(
                "policy has action dimension {}, got {dim}",
                self.action_dim()
            )));
        }
        Ok(())
    }

    /// Gradient of `log pi(action | obs)` with respect to all parameters.
    pub fn grad_log_prob(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.check_action(action.len())?;
        let obs = ArrayView2::from_shape((1, obs.len()), obs)
            .map_err(|e| Error::domain(e.to_string()))?;
        let actions = ArrayView2::from_shape((1, action.len()), action)
            .map_err(|e| Error::domain(e.to_string()))?;
        self.weighted_score(obs, actions, &[1.0])
    }

    /// `sum_i w_i * grad log pi(a_i | s_i)`.
    ///
    /// With `w_i = A_i / N` this is the gradient of the importance-sampled
    /// surrogate `mean(ratio * A)` at the sampling parameters.
    pub fn weighted_score(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_action(actions.ncols())?;
        if obs.nrows() != actions.nrows() || weights.len() != obs.nrows() {
            return Err(Error::domain("observation, action and weight counts differ"));
        }
        let cache = self.mean_net.forward_cached(obs)?;
        self.weighted_score_cached(&cache, actions, weights)
    }

    pub(crate) fn weighted_score_cached(
        &self,
        cache: &ForwardCache,
        actions: ArrayView2<f64>,
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        let means = cache.output();
        let inv_var: Vec<f64> = self.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut grad_mean = Array2::<f64>::zeros(means.raw_dim());
        let mut grad_log_std = vec![0.0; self.action_dim()];
        for (i, w) in weights.iter().enumerate() {
            for j in 0..self.action_dim() {
                let diff = actions[[i, j]] - means[[i, j]];
                grad_mean[[i, j]] = w * diff * inv_var[j];
                grad_log_std[j] += w * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let mut grad = self.mean_net.backward(cache, grad_mean.view());
        grad.extend(grad_log_std);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite log-probability gradient"));
        }
        Ok(grad)
    }
}

/// Closed-form KL between diagonal Gaussians, per dimension summed:
/// `KL(N(mu_p, s_p) || N(mu_q, s_q))`.
pub fn diag_gaussian_kl(mu_p: &[f64], ls_p: &[f64], mu_q: &[f64], ls_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mu_p.len() {
        let var_ratio = (2.0 * (ls_p[j] - ls_q[j])).exp();
        let d = mu_p[j] - mu_q[j];
        kl += ls_q[j] - ls_p[j] + 0.5 * (var_ratio + d * d * (-2.0 * ls_q[j]).exp()) - 0.5;
    }
    kl
}

/// Mean over the batch of `KL(new(.|s) || old(.|s))`.
pub fn kl_diag_gaussian(new: &GaussianPolicy, old: &GaussianPolicy, obs: ArrayView2<f64>) -> Result<f64> {
    let old_means = old.mean_batch(obs)?;
    kl_to_reference(new, &old_means, &old.log_std, obs)
}

/// Mean KL from `new` to a fixed reference given by precomputed means.
pub fn kl_to_reference(
    new: &GaussianPolicy,
    ref_means: &Array2<f64>,
    ref_log_std: &[f64],
    obs: ArrayView2<f64>,
) -> Result<f64> {
    if new.action_dim() != ref_log_std.len() {
        return Err(Error::domain("policies have different action dimensions"));
    }
    let n = obs.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let means = new.mean_batch(obs)?;
    let total: f64 = means
        .outer_iter()
        .zip(ref_means.outer_iter())
        .map(|(m, r)| {
            diag_gaussian_kl(
                m.as_slice().expect("row-major"),
                &new.log_std,
                r.as_slice().expect("row-major"),
                ref_log_std,
            )
        })
        .sum();
    Ok(total / n as f64)
}

/// Gradient of [`kl_diag_gaussian`] with respect to `new`'s parameters.
pub fn kl_grad(new: &GaussianPolicy, old: &GaussianPolicy, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
    if new.action_dim() != old.action_dim() {
        return Err(Error::domain("policies have different action dimensions"));
    }
    let n = obs.nrows().max(1) as f64;
    let old_means = old.mean_batch(obs)?;
    let cache = new.mean_net.forward_cached(obs)?;
    let means = cache.output();
    let inv_var_q: Vec<f64> = old.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let grad_mean = (means - &old_means) * &Array1::from(inv_var_q) / n;
    let mut grad = new.mean_net.backward(&cache, grad_mean.view());
    for j in 0..new.action_dim() {
        // d/d ls_p of [ls_q - ls_p + 0.5 exp(2(ls_p - ls_q))]
        grad.push(-1.0 + (2.0 * (new.log_std[j] - old.log_std[j])).exp());
    }
    Ok(grad)
}

/// Differential entropy of the action distribution (state independent).
pub fn entropy(policy: &GaussianPolicy) -> f64 {
    policy
        .log_std
        .iter()
        .map(|l| l + 0.5 * (2.0 * PI).ln() + 0.5)
        .sum()
}
