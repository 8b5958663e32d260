//! The constrained natural-gradient step.
//!
//! Solves the linear/quadratic program
//!
//! ```text
//! maximize    g^T x
//! subject to  1/2 x^T H x <= delta
//!             c + b^T x   <= 0
//! ```
//!
//! through its two-variable dual, with `H^{-1} g` and `H^{-1} b` obtained by
//! conjugate gradient on matrix-free KL-Hessian products. When no point of
//! the trust region satisfies the linearized constraint the step falls back
//! to pure constraint reduction. Proposed steps are then shrunk
//! geometrically until the sampled KL, cost and reward conditions hold.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{ForwardCache, GaussianPolicy};

/// Matrix-free access to a symmetric positive-definite matrix.
pub trait HessianOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hessian of the mean sampled KL `KL(pi_theta || pi_k)` at `theta = theta_k`
/// plus `damping * I`.
///
/// At the expansion point the KL Hessian equals the Fisher information, so
/// the product is computed as `J^T diag(1/sigma^2) J v / N` for the mean
/// network (one forward-mode and one reverse-mode pass) and `2 v` for the
/// log-std block.
pub struct FisherOperator<'a> {
    policy: &'a GaussianPolicy,
    cache: ForwardCache,
    inv_var: Array1<f64>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(policy: &'a GaussianPolicy, obs: ArrayView2<f64>, damping: f64) -> Result<Self> {
        if obs.nrows() == 0 {
            return Err(Error::domain("Fisher operator needs at least one observation"));
        }
        let cache = policy.mean_net.forward_cached(obs)?;
        let inv_var = policy.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        Ok(Self {
            policy,
            cache,
            inv_var,
            damping,
        })
    }
}

impl HessianOperator for FisherOperator<'_> {
    fn dim(&self) -> usize {
        self.policy.num_params()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::domain(format!(
                "vector has {} entries, policy has {} parameters",
                v.len(),
                self.dim()
            )));
        }
        let net = &self.policy.mean_net;
        let n_mean = net.num_params();
        let n = self.cache.output().nrows() as f64;
        let jv = net.jvp(&self.cache, &v[..n_mean])?;
        let weighted = jv * &self.inv_var / n;
        let mut out = net.backward(&self.cache, weighted.view());
        out.extend(v[n_mean..].iter().map(|x| 2.0 * x));
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite Fisher-vector product"));
        }
        Ok(out)
    }
}

/// `(Hessian of mean KL) v + damping v` at the policy's current parameters.
pub fn fisher_vector_product(
    policy: &GaussianPolicy,
    obs: ArrayView2<f64>,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    FisherOperator::new(policy, obs, damping)?.apply(v)
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::domain("dense operator needs n*n entries"));
        }
        Ok(Self { n, data })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self { n, data }
    }
}

impl HessianOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::domain("dimension mismatch"));
        }
        Ok(self.data.chunks_exact(self.n).map(|row| dot(row, v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub max_iters: usize,
    pub residual_tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            residual_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||r|| / ||rhs||` from the CG recursion.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradient for `H x = rhs` starting from `x = 0`.
pub fn conjugate_gradient<H: HessianOperator + ?Sized>(
    hvp: &H,
    rhs: &[f64],
    config: &CgConfig,
) -> Result<CgSolution> {
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::solver("conjugate gradient right-hand side is not finite"));
    }
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    let mut relative_residual = 1.0;
    while iterations < config.max_iters {
        let hp = hvp.apply(&p)?;
        let curvature = dot(&p, &hp);
        if !(curvature > 0.0) {
            return Err(Error::solver(format!(
                "conjugate gradient breakdown at iteration {iterations}: p^T H p = {curvature:e}, \
                 residual {relative_residual:e}"
            )));
        }
        let alpha = rs / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        iterations += 1;
        let rs_new = dot(&r, &r);
        relative_residual = rs_new.sqrt() / rhs_norm;
        if relative_residual <= config.residual_tol {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(CgSolution {
        x,
        iterations,
        relative_residual,
        converged: relative_residual <= config.residual_tol,
    })
}

/// Below this norm the constraint gradient is treated as absent.
const ZERO_GRADIENT_NORM: f64 = 1e-8;

pub struct TrustRegionProblem<'a> {
    /// Gradient of the reward surrogate.
    pub g: &'a [f64],
    /// Gradient of the cost surrogate.
    pub b: &'a [f64],
    /// Constraint slack; positive means the current policy violates it.
    pub c: f64,
    /// KL radius.
    pub delta: f64,
    pub hvp: &'a dyn HessianOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    Feasible,
    InfeasibleRecovery,
}

impl StepMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepMode::Feasible => "feasible",
            StepMode::InfeasibleRecovery => "infeasible-recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub direction: Vec<f64>,
    pub mode: StepMode,
    /// Trust-region multiplier (feasible mode).
    pub lambda: Option<f64>,
    /// Cost-constraint multiplier (feasible mode).
    pub nu: Option<f64>,
    /// `1/2 x^T H x` of the returned direction.
    pub predicted_kl: f64,
    /// `b^T x` of the returned direction.
    pub predicted_constraint_change: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub cg_iterations: usize,
}

/// Dual objective (to be minimized) with the cost multiplier eliminated.
fn dual_value(lambda: f64, q: f64, r: f64, s: f64, c: f64, delta: f64) -> (f64, f64) {
    let nu = ((r + lambda * c) / s).max(0.0);
    let value = (q - 2.0 * nu * r + nu * nu * s) / (2.0 * lambda) + lambda * delta - nu * c;
    (value, nu)
}

/// Solves the trust-region program for one constraint.
pub fn solve_step(problem: &TrustRegionProblem<'_>, cg: &CgConfig) -> Result<StepResult> {
    let TrustRegionProblem { g, b, c, delta, hvp } = *problem;
    if !(delta > 0.0) {
        return Err(Error::domain("trust region radius must be positive"));
    }
    if g.len() != hvp.dim() || b.len() != hvp.dim() {
        return Err(Error::domain("gradient and operator dimensions differ"));
    }
    if !c.is_finite() {
        return Err(Error::numeric("constraint slack is not finite"));
    }
    let sol_g = conjugate_gradient(hvp, g, cg)?;
    let x_g = sol_g.x;
    let q = dot(g, &x_g);
    let mut cg_iterations = sol_g.iterations;

    let trpo_step = |x_g: &[f64], q: f64| -> (Vec<f64>, Option<f64>) {
        if q > 0.0 {
            let scale = (2.0 * delta / q).sqrt();
            (x_g.iter().map(|v| v * scale).collect(), Some((q / (2.0 * delta)).sqrt()))
        } else {
            (vec![0.0; x_g.len()], None)
        }
    };

    if dot(b, b).sqrt() <= ZERO_GRADIENT_NORM {
        if c > 0.0 {
            // nothing within reach changes the linearized constraint
            return Ok(StepResult {
                direction: vec![0.0; g.len()],
                mode: StepMode::InfeasibleRecovery,
                lambda: None,
                nu: None,
                predicted_kl: 0.0,
                predicted_constraint_change: 0.0,
                q,
                r: 0.0,
                s: 0.0,
                cg_iterations,
            });
        }
        let (direction, lambda) = trpo_step(&x_g, q);
        let predicted_kl = if lambda.is_some() { delta } else { 0.0 };
        return Ok(StepResult {
            direction,
            mode: StepMode::Feasible,
            lambda,
            nu: Some(0.0),
            predicted_kl,
            predicted_constraint_change: 0.0,
            q,
            r: 0.0,
            s: 0.0,
            cg_iterations,
        });
    }

    let sol_b = conjugate_gradient(hvp, b, cg)?;
    cg_iterations += sol_b.iterations;
    let x_b = sol_b.x;
    let r = dot(g, &x_b);
    let s = dot(b, &x_b);
    if !(s > 0.0) {
        return Err(Error::solver(format!(
            "degenerate constraint: b^T H^-1 b = {s:e} for a non-zero b"
        )));
    }
    let slack_reach = 2.0 * delta - c * c / s;

    if slack_reach < 0.0 && c > 0.0 {
        let scale = (2.0 * delta / s).sqrt();
        return Ok(StepResult {
            direction: x_b.iter().map(|v| -scale * v).collect(),
            mode: StepMode::InfeasibleRecovery,
            lambda: None,
            nu: None,
            predicted_kl: delta,
            predicted_constraint_change: -scale * s,
            q,
            r,
            s,
            cg_iterations,
        });
    }

    if slack_reach < 0.0 || q <= 0.0 {
        // the whole trust region satisfies the constraint (or g vanishes)
        let (direction, lambda) = trpo_step(&x_g, q);
        let predicted_kl = if lambda.is_some() { delta } else { 0.0 };
        let change = dot(b, &direction);
        return Ok(StepResult {
            direction,
            mode: StepMode::Feasible,
            lambda,
            nu: Some(0.0),
            predicted_kl,
            predicted_constraint_change: change,
            q,
            r,
            s,
            cg_iterations,
        });
    }

    // Piecewise-smooth convex dual in lambda: compare the stationary points
    // of both pieces and the kink where the cost multiplier switches on.
    let a_coef = (q - r * r / s).max(0.0);
    let mut candidates = vec![(q / (2.0 * delta)).sqrt()];
    if slack_reach > 0.0 && a_coef > 0.0 {
        candidates.push((a_coef / slack_reach).sqrt());
    }
    if c != 0.0 {
        let kink = -r / c;
        if kink > 0.0 && kink.is_finite() {
            candidates.push(kink);
        }
    }
    let (lambda, nu) = candidates
        .into_iter()
        .filter(|l| *l > 0.0 && l.is_finite())
        .map(|l| {
            let (v, nu) = dual_value(l, q, r, s, c, delta);
            (v, l, nu)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l, nu)| (l, nu))
        .ok_or_else(|| Error::solver("dual problem has no admissible multiplier"))?;

    let direction: Vec<f64> = x_g
        .iter()
        .zip(&x_b)
        .map(|(xg, xb)| (xg - nu * xb) / lambda)
        .collect();
    let predicted_kl = (q - 2.0 * nu * r + nu * nu * s) / (2.0 * lambda * lambda);
    let predicted_constraint_change = (r - nu * s) / lambda;
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite step direction"));
    }
    Ok(StepResult {
        direction,
        mode: StepMode::Feasible,
        lambda: Some(lambda),
        nu: Some(nu),
        predicted_kl,
        predicted_constraint_change,
        q,
        r,
        s,
        cg_iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            backtrack_coeff: 0.8,
            max_backtracks: 100,
        }
    }
}

/// Surrogate quantities of a candidate policy on the update batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateEval {
    /// Mean sampled `KL(candidate || pi_k)`.
    pub kl: f64,
    /// Importance-weighted reward advantage.
    pub reward: f64,
    /// Importance-weighted cost advantage; `None` for unconstrained updates.
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceCriteria {
    pub delta: f64,
    pub c: f64,
    /// The direction came from the recovery branch, so reward may drop.
    pub infeasible: bool,
}

impl AcceptanceCriteria {
    /// Trust region, cost, and reward conditions.
    pub fn accepts(&self, candidate: &SurrogateEval, baseline: &SurrogateEval) -> bool {
        if !candidate.kl.is_finite() || !candidate.reward.is_finite() {
            return false;
        }
        let kl_ok = candidate.kl <= self.delta;
        let cost_ok = match (candidate.cost, baseline.cost) {
            (Some(new), Some(old)) => new.is_finite() && new - old <= (-self.c).max(0.0),
            (None, None) => true,
            _ => false,
        };
        let reward_ok = self.infeasible || candidate.reward >= baseline.reward;
        kl_ok && cost_ok && reward_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    /// Backtracking exponent `j` of the accepted candidate.
    pub accepted: Option<usize>,
    /// Accepted parameters, or `theta_k` when every candidate failed.
    pub params: Vec<f64>,
    pub eval: Option<SurrogateEval>,
    pub candidates_tried: usize,
}

/// Tries `theta_k + xi^j * direction` for `j = 0, 1, ...` and keeps the
/// first candidate the criteria accept. Evaluator errors reject the
/// candidate.
pub fn line_search<F>(
    theta_k: &[f64],
    direction: &[f64],
    baseline: &SurrogateEval,
    criteria: &AcceptanceCriteria,
    config: &LineSearchConfig,
    mut evaluate: F,
) -> LineSearchOutcome
where
    F: FnMut(&[f64]) -> Result<SurrogateEval>,
{
    let mut step = 1.0;
    let mut candidate = vec![0.0; theta_k.len()];
    for j in 0..config.max_backtracks {
        for ((c, t), d) in candidate.iter_mut().zip(theta_k).zip(direction) {
            *c = t + step * d;
        }
        match evaluate(&candidate) {
            Ok(eval) if criteria.accepts(&eval, baseline) => {
                return LineSearchOutcome {
                    accepted: Some(j),
                    params: candidate,
                    eval: Some(eval),
                    candidates_tried: j + 1,
                };
            }
            Ok(_) => {}
            Err(e) => log::debug!("line search candidate {j} rejected: {e}"),
        }
        step *= config.backtrack_coeff;
    }
    LineSearchOutcome {
        accepted: None,
        params: theta_k.to_vec(),
        eval: None,
        candidates_tried: config.max_backtracks,
    }
}
