use ndarray::{Array1, Array2, ArrayView2};

use super::config::Algo;
use crate::error::Result;
use crate::neural::{diag_gaussian_kl, GaussianPolicy};
use crate::trust_region::{
    line_search, solve_step, AcceptanceCriteria, CgConfig, FisherOperator, LineSearchConfig,
    StepMode, StepResult, SurrogateEval, TrustRegionProblem,
};

/// `2 (H + 1) eps sqrt(kl / 2)`: the penalty term of the increment bound.
pub fn epsilon_term(eps: f64, horizon: usize, kl: f64) -> f64 {
    2.0 * (horizon as f64 + 1.0) * eps * (kl.max(0.0) / 2.0).sqrt()
}

/// Batch maximum of `|A_D|`, the estimate of the advantage bound.
pub fn advantage_bound(adv: &[f64]) -> f64 {
    adv.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}

/// Slack of the increment constraint: `J_D + [eps term] - w`.
pub fn compute_slack_c(
    mean_increment_sum: f64,
    increment_adv: &[f64],
    w: f64,
    epsilon_term_on: bool,
    delta: f64,
    horizon: usize,
) -> f64 {
    let eps_term = if epsilon_term_on {
        epsilon_term(advantage_bound(increment_adv), horizon, delta)
    } else {
        0.0
    };
    mean_increment_sum + eps_term - w
}

/// Surrogates of a candidate policy on a fixed batch, relative to the
/// sampling policy.
pub struct SurrogateContext<'a> {
    template: &'a GaussianPolicy,
    inputs: ArrayView2<'a, f64>,
    actions: ArrayView2<'a, f64>,
    old_means: Array2<f64>,
    old_log_prob: Array1<f64>,
    objective_adv: &'a [f64],
    cost: Option<(&'a [f64], f64)>,
}

impl<'a> SurrogateContext<'a> {
    /// `cost` is the cost advantage and the factor that turns its batch
    /// mean into an episodic change.
    pub fn new(
        policy: &'a GaussianPolicy,
        inputs: ArrayView2<'a, f64>,
        actions: ArrayView2<'a, f64>,
        objective_adv: &'a [f64],
        cost: Option<(&'a [f64], f64)>,
    ) -> Result<Self> {
        let old_means = policy.mean_batch(inputs)?;
        let old_log_prob = policy.log_prob_from_means(&old_means, actions);
        Ok(Self {
            template: policy,
            inputs,
            actions,
            old_means,
            old_log_prob,
            objective_adv,
            cost,
        })
    }

    pub fn evaluate(&self, params: &[f64]) -> Result<SurrogateEval> {
        let candidate = self.template.with_flat_params(params)?;
        let means = candidate.mean_batch(self.inputs)?;
        let log_prob = candidate.log_prob_from_means(&means, self.actions);
        let n = self.inputs.nrows() as f64;
        let ratio: Vec<f64> = log_prob
            .iter()
            .zip(&self.old_log_prob)
            .map(|(new, old)| (new - old).exp())
            .collect();
        let weighted = |adv: &[f64]| ratio.iter().zip(adv).map(|(r, a)| r * a).sum::<f64>() / n;
        let kl = means
            .outer_iter()
            .zip(self.old_means.outer_iter())
            .map(|(m, o)| {
                diag_gaussian_kl(
                    m.as_slice().expect("row-major"),
                    &candidate.log_std,
                    o.as_slice().expect("row-major"),
                    &self.template.log_std,
                )
            })
            .sum::<f64>()
            / n;
        Ok(SurrogateEval {
            kl,
            reward: weighted(self.objective_adv),
            cost: self.cost.map(|(adv, scale)| scale * weighted(adv)),
        })
    }
}

/// Everything one algorithm contributes to the shared update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSpec {
    pub algo: Algo,
    /// Advantage whose importance-weighted mean is maximized.
    pub objective_adv: Vec<f64>,
    /// Constrained cost advantage and its episodic scale.
    pub cost_adv: Option<(Vec<f64>, f64)>,
    pub c: f64,
}

/// Gradients and the solved step, before any line search.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub step: StepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub mode: String,
    pub accepted: bool,
    pub backtracks: Option<usize>,
    pub kl: f64,
    pub c: f64,
    pub predicted_change: f64,
    pub realized_change: f64,
    pub eq16_ok: bool,
    pub cg_iterations: usize,
    pub solver_error: Option<String>,
    /// Cost surrogate of the accepted parameters (zero change if rejected).
    pub cost_surrogate: Option<f64>,
}

fn scaled(adv: &[f64], scale: f64) -> Vec<f64> {
    adv.iter().map(|a| scale * a).collect()
}

/// Assembles `g`, `b` and solves the trust-region program.
pub fn propose(
    policy: &GaussianPolicy,
    inputs: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    spec: &UpdateSpec,
    delta: f64,
    damping: f64,
    cg: &CgConfig,
) -> Result<Proposal> {
    let n = inputs.nrows() as f64;
    let cache = policy.mean_net.forward_cached(inputs)?;
    let g = policy.weighted_score_cached(&cache, actions, &scaled(&spec.objective_adv, 1.0 / n))?;
    let b = match &spec.cost_adv {
        Some((adv, scale)) if adv.iter().any(|a| *a != 0.0) => {
            policy.weighted_score_cached(&cache, actions, &scaled(adv, scale / n))?
        }
        _ => vec![0.0; g.len()],
    };
    drop(cache);
    let fisher = FisherOperator::new(policy, inputs, damping)?;
    let step = solve_step(
        &TrustRegionProblem {
            g: &g,
            b: &b,
            c: spec.c,
            delta,
            hvp: &fisher,
        },
        cg,
    )?;
    Ok(Proposal { g, b, c: spec.c, step })
}

/// Backtracks along the proposed direction and applies the accepted
/// parameters to `policy`.
pub fn apply_update(
    policy: &mut GaussianPolicy,
    inputs: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    spec: &UpdateSpec,
    proposal: &Proposal,
    delta: f64,
    ls: &LineSearchConfig,
) -> Result<UpdateDiagnostics> {
    let theta_k = policy.flat_params();
    let old = policy.clone();
    let (accepted, params, baseline, eval) = {
        let ctx = SurrogateContext::new(
            &old,
            inputs,
            actions,
            &spec.objective_adv,
            spec.cost_adv.as_ref().map(|(a, s)| (a.as_slice(), *s)),
        )?;
        let baseline = ctx.evaluate(&theta_k)?;
        let criteria = AcceptanceCriteria {
            delta,
            c: proposal.c,
            infeasible: proposal.step.mode == StepMode::InfeasibleRecovery,
        };
        let outcome = line_search(&theta_k, &proposal.step.direction, &baseline, &criteria, ls, |p| {
            ctx.evaluate(p)
        });
        (outcome.accepted, outcome.params, baseline, outcome.eval)
    };
    policy.set_flat_params(&params)?;
    let kl = crate::neural::kl_diag_gaussian(policy, &old, inputs)?;
    let realized_change = match (eval.and_then(|e| e.cost), baseline.cost) {
        (Some(new), Some(old)) => new - old,
        _ => 0.0,
    };
    let predicted_change = match accepted {
        Some(j) => ls.backtrack_coeff.powi(j as i32) * crate::trust_region::dot(&proposal.b, &proposal.step.direction),
        None => 0.0,
    };
    let eq16_ok = realized_change <= (-proposal.c).max(0.0);
    let cost_surrogate = match eval {
        Some(e) => e.cost,
        None => baseline.cost,
    };
    Ok(UpdateDiagnostics {
        mode: proposal.step.mode.as_str().to_string(),
        accepted: accepted.is_some(),
        backtracks: accepted,
        kl,
        c: proposal.c,
        predicted_change,
        realized_change,
        eq16_ok,
        cg_iterations: proposal.step.cg_iterations,
        solver_error: None,
        cost_surrogate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slack_examples() {
        assert_eq!(compute_slack_c(0.0, &[0.0; 4], 0.0, false, 0.02, 200), 0.0);
        assert!((compute_slack_c(0.3, &[0.1, -0.5], 0.0, false, 0.02, 200) - 0.3).abs() < 1e-15);
        let with_eps = compute_slack_c(0.3, &[0.1, -0.5], 0.0, true, 0.02, 200);
        let expected = 0.3 + 2.0 * 201.0 * 0.5 * 0.01f64.sqrt();
        assert!((with_eps - expected).abs() < 1e-12);
        assert!((compute_slack_c(0.3, &[], 0.1, false, 0.02, 200) - 0.2).abs() < 1e-15);
    }

    fn fixture() -> (GaussianPolicy, Array2<f64>, Array2<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = GaussianPolicy::new(3, &[6], 2, &mut rng).unwrap();
        let n = 64;
        let obs = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mut actions = Array2::zeros((n, 2));
        for i in 0..n {
            let (a, _) = policy.sample(obs.row(i).as_slice().unwrap(), &mut rng).unwrap();
            actions[[i, 0]] = a[0];
            actions[[i, 1]] = a[1];
        }
        let adv: Vec<f64> = (0..n).map(|i| actions[[i, 0]] - 0.3 * actions[[i, 1]]).collect();
        let cost: Vec<f64> = (0..n).map(|i| actions[[i, 1]].max(0.0)).collect();
        (policy, obs, actions, adv, cost)
    }

    #[test]
    fn baseline_surrogate_has_unit_ratio() {
        let (policy, obs, actions, adv, cost) = fixture();
        let ctx = SurrogateContext::new(&policy, obs.view(), actions.view(), &adv, Some((&cost, 10.0))).unwrap();
        let base = ctx.evaluate(&policy.flat_params()).unwrap();
        assert_eq!(base.kl, 0.0);
        let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((base.reward - mean_adv).abs() < 1e-12);
        let mean_cost = cost.iter().sum::<f64>() / cost.len() as f64;
        assert!((base.cost.unwrap() - 10.0 * mean_cost).abs() < 1e-12);
    }

    #[test]
    fn accepted_update_respects_conditions() {
        let (mut policy, obs, actions, adv, cost) = fixture();
        let delta = 0.01;
        let spec = UpdateSpec {
            algo: Algo::Scpo,
            objective_adv: adv,
            cost_adv: Some((cost, 5.0)),
            c: 0.05,
        };
        let prop = propose(&policy, obs.view(), actions.view(), &spec, delta, 0.01, &CgConfig::default()).unwrap();
        let diag = apply_update(
            &mut policy,
            obs.view(),
            actions.view(),
            &spec,
            &prop,
            delta,
            &LineSearchConfig::default(),
        )
        .unwrap();
        assert!(diag.accepted);
        assert!(diag.kl <= delta);
        assert!(diag.eq16_ok);
        assert!(diag.realized_change <= 0.0);
    }
}
