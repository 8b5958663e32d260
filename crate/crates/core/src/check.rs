//! Self-contained property suites: analytic gradients against finite
//! differences, the KL-Hessian product against a dense Hessian, conjugate
//! gradient against a dense solve, the dual step against a grid search, and
//! the increment identity.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::subsample_zero_targets;
use crate::error::Result;
use crate::mmdp::{replay_costs, AugmentedState, EpisodeBuffer, Transition};
use crate::neural::{kl_diag_gaussian, kl_grad, GaussianPolicy, ValueFunction};
use crate::trust_region::{
    conjugate_gradient, dot, fisher_vector_product, solve_step, CgConfig, DenseOperator, StepMode,
    TrustRegionProblem,
};

/// Deliberate defects used to confirm that the suites catch bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Perturbs one entry of the analytic log-probability gradient.
    GradLogProb,
    /// Drops the log-std block of the KL-Hessian product.
    FisherVectorProduct,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grad_log_prob" => Some(Fault::GradLogProb),
            "fisher_vector_product" | "fvp" => Some(Fault::FisherVectorProduct),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 0, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCase {
    pub case: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<FailedCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl CheckReport {
    pub fn failing_suites(&self) -> Vec<&str> {
        self.suites
            .iter()
            .filter(|s| s.failed > 0)
            .map(|s| s.name.as_str())
            .collect()
    }
}

struct Suite {
    name: &'static str,
    cases: usize,
    failures: Vec<FailedCase>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(FailedCase {
                case: self.cases,
                detail: detail(),
            });
        }
        self.cases += 1;
    }

    fn error(&mut self, e: crate::Error) {
        self.record(false, || format!("error: {e}"));
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            cases: self.cases,
            passed: self.cases - self.failures.len(),
            failed: self.failures.len(),
            failures: self.failures,
        }
    }
}

const GRADIENT_POINTS: usize = 20;
const GRADIENT_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `||a - b|| / max(||a||, ||b||, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> Result<f64>>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

fn random_policy(rng: &mut ChaCha8Rng, obs_dim: usize, hidden: &[usize], act_dim: usize) -> Result<GaussianPolicy> {
    let mut policy = GaussianPolicy::new(obs_dim, hidden, act_dim, rng)?;
    // move off the near-zero output initialization
    let params: Vec<f64> = policy
        .flat_params()
        .iter()
        .map(|p| p + rng.random_range(-0.3..0.3))
        .collect();
    policy.set_flat_params(&params)?;
    Ok(policy)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn suite_mmdp_identity(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("mmdp_identity");
    for _ in 0..1000 {
        let len = rng.random_range(1..=200);
        let costs: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.6) { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let mut ep = EpisodeBuffer::new(len);
        let mut state = AugmentedState::reset(vec![0.0], 1);
        let mut ok = true;
        for &c in &costs {
            match crate::mmdp::augment_step(&state, vec![0.0], &[c]) {
                Ok((next, inc)) => {
                    ep.push(Transition {
                        state: state.clone(),
                        action: vec![0.0],
                        next_state: next.clone(),
                        reward: 0.0,
                        costs: vec![c],
                        increments: inc,
                        log_prob: 0.0,
                        done: false,
                    });
                    state = next;
                }
                Err(_) => ok = false,
            }
        }
        let brute = costs.iter().copied().fold(0.0_f64, f64::max);
        let sum = ep.increment_sum(0);
        let replay_ok = replay_costs(&costs).is_ok_and(|(_, d)| d == ep.transitions.iter().map(|t| t.increments[0]).collect::<Vec<_>>());
        suite.record(ok && replay_ok && (sum - brute).abs() <= 1e-9, || {
            format!("length {len}: sum of increments {sum} vs max cost {brute}")
        });
    }
    suite.finish()
}

fn suite_grad_log_prob(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> SuiteReport {
    let mut suite = Suite::new("grad_log_prob");
    for _ in 0..GRADIENT_POINTS {
        let res = (|| -> Result<(f64, usize)> {
            let policy = random_policy(rng, 4, &[6, 5], 2)?;
            let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (action, _) = policy.sample(&obs, rng)?;
            let mut analytic = policy.grad_log_prob(&obs, &action)?;
            if fault == Some(Fault::GradLogProb) {
                analytic[0] += 0.05;
            }
            let theta = policy.flat_params();
            let numeric = central_difference(&theta, FD_STEP, |p| policy.with_flat_params(p)?.log_prob(&obs, &action))?;
            Ok((relative_error(&analytic, &numeric), theta.len()))
        })();
        match res {
            Ok((err, n)) => suite.record(err <= GRADIENT_REL_TOL, || {
                format!("grad_log_prob relative error {err:e} over {n} parameters")
            }),
            Err(e) => suite.error(e),
        }
    }
    suite.finish()
}

fn suite_value_grad(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("value_mse_grad");
    for _ in 0..GRADIENT_POINTS {
        let res = (|| -> Result<f64> {
            let mut value = ValueFunction::new(3, &[7, 5], rng)?;
            let params: Vec<f64> = value.net.params().iter().map(|p| p + rng.random_range(-0.2..0.2)).collect();
            value.net.set_params(&params)?;
            let x = random_matrix(rng, 9, 3);
            let y: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, analytic) = value.mse_grad(x.view(), &y)?;
            let mut probe = value.clone();
            let numeric = central_difference(&params, FD_STEP, |p| {
                probe.net.set_params(p)?;
                probe.mse(x.view(), &y)
            })?;
            Ok(relative_error(&analytic, &numeric))
        })();
        match res {
            Ok(err) => suite.record(err <= GRADIENT_REL_TOL, || format!("relative error {err:e}")),
            Err(e) => suite.error(e),
        }
    }
    suite.finish()
}

fn suite_kl_grad(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("kl_grad");
    for _ in 0..GRADIENT_POINTS {
        let res = (|| -> Result<f64> {
            let old = random_policy(rng, 3, &[5], 2)?;
            let new = random_policy(rng, 3, &[5], 2)?;
            let obs = random_matrix(rng, 6, 3);
            let analytic = kl_grad(&new, &old, obs.view())?;
            let numeric = central_difference(&new.flat_params(), FD_STEP, |p| {
                kl_diag_gaussian(&new.with_flat_params(p)?, &old, obs.view())
            })?;
            Ok(relative_error(&analytic, &numeric))
        })();
        match res {
            Ok(err) => suite.record(err <= GRADIENT_REL_TOL, || format!("relative error {err:e}")),
            Err(e) => suite.error(e),
        }
    }
    suite.finish()
}

fn suite_fvp(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> SuiteReport {
    let mut suite = Suite::new("fisher_vector_product");
    for _ in 0..5 {
        let res = (|| -> Result<(f64, f64)> {
            let policy = random_policy(rng, 3, &[4], 2)?;
            let obs = random_matrix(rng, 8, 3);
            let n = policy.num_params();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut hv = fisher_vector_product(&policy, obs.view(), &v, 0.0)?;
            if fault == Some(Fault::FisherVectorProduct) {
                let k = n - policy.action_dim();
                hv[k..].iter_mut().for_each(|x| *x = 0.0);
            }
            let hu = fisher_vector_product(&policy, obs.view(), &u, 0.0)?;
            // directional derivative of the analytic KL gradient
            let h = 1e-5;
            let theta = policy.flat_params();
            let shift = |s: f64| -> Vec<f64> { theta.iter().zip(&v).map(|(t, d)| t + s * d).collect() };
            let up = kl_grad(&policy.with_flat_params(&shift(h))?, &policy, obs.view())?;
            let down = kl_grad(&policy.with_flat_params(&shift(-h))?, &policy, obs.view())?;
            let numeric: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let max_diff = hv.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let (a, b) = (dot(&u, &hv), dot(&v, &hu));
            Ok((max_diff, (a - b).abs() / a.abs().max(b.abs()).max(1e-300)))
        })();
        match res {
            Ok((diff, asym)) => suite.record(diff <= 1e-5 && asym <= 1e-8, || {
                format!("max abs diff {diff:e}, asymmetry {asym:e}")
            }),
            Err(e) => suite.error(e),
        }
    }
    suite.finish()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1)
}

fn suite_cg(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("conjugate_gradient");
    for case in 0..10 {
        let n = [2, 5, 20, 60, 150][case % 5];
        let a = random_spd(rng, n);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = DenseOperator::new(n, a.transpose().as_slice().to_vec()).expect("square");
        let cfg = CgConfig {
            max_iters: 4 * n,
            residual_tol: 1e-12,
        };
        let direct = a
            .clone()
            .cholesky()
            .map(|c| c.solve(&DVector::from_vec(rhs.clone())));
        match (conjugate_gradient(&op, &rhs, &cfg), direct) {
            (Ok(sol), Some(x)) => {
                let diff = sol.x.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                suite.record(diff <= 1e-6, || format!("dim {n}: max abs diff {diff:e}"));
            }
            (Err(e), _) => suite.error(e),
            (_, None) => suite.record(false, || "dense factorization failed".into()),
        }
    }
    let op = DenseOperator::diagonal(&[1.0, 2.0, 3.0]);
    let zero = conjugate_gradient(&op, &[0.0; 3], &CgConfig::default());
    suite.record(zero.is_ok_and(|s| s.x == vec![0.0; 3]), || "rhs = 0 did not give x = 0".into());
    suite.finish()
}

/// Best feasible objective on a polar grid over the trust-region disk in the
/// whitened span of `H^-1 g` and `H^-1 b` (diagonal `H`).
fn grid_optimum(h: &[f64], g: &[f64], b: &[f64], c: f64, delta: f64) -> Option<f64> {
    let gw: Vec<f64> = g.iter().zip(h).map(|(x, d)| x / d.sqrt()).collect();
    let bw: Vec<f64> = b.iter().zip(h).map(|(x, d)| x / d.sqrt()).collect();
    let e1: Vec<f64> = gw.iter().map(|x| x / norm(&gw)).collect();
    let proj = dot(&bw, &e1);
    let rest: Vec<f64> = bw.iter().zip(&e1).map(|(x, e)| x - proj * e).collect();
    let e2: Vec<f64> = if norm(&rest) > 1e-12 {
        rest.iter().map(|x| x / norm(&rest)).collect()
    } else {
        vec![0.0; g.len()]
    };
    let (g1, g2) = (dot(&gw, &e1), dot(&gw, &e2));
    let (b1, b2) = (dot(&bw, &e1), dot(&bw, &e2));
    let radius = (2.0 * delta).sqrt();
    let mut best: Option<(f64, f64, f64)> = None;
    let (mut phi_lo, mut phi_hi, mut r_lo, mut r_hi) = (0.0, std::f64::consts::TAU, 0.0, radius);
    for _ in 0..4 {
        let (na, nr) = (720, 120);
        for i in 0..=na {
            let phi = phi_lo + (phi_hi - phi_lo) * i as f64 / na as f64;
            for j in 0..=nr {
                let r = (r_lo + (r_hi - r_lo) * j as f64 / nr as f64).min(radius);
                let (y1, y2) = (r * phi.cos(), r * phi.sin());
                if c + b1 * y1 + b2 * y2 > 0.0 {
                    continue;
                }
                let f = g1 * y1 + g2 * y2;
                if best.is_none_or(|(bf, _, _)| f > bf) {
                    best = Some((f, phi, r));
                }
            }
        }
        let (_, phi, r) = best?;
        let dphi = (phi_hi - phi_lo) / 720.0 * 3.0;
        let dr = (r_hi - r_lo) / 120.0 * 3.0;
        (phi_lo, phi_hi) = (phi - dphi, phi + dphi);
        (r_lo, r_hi) = ((r - dr).max(0.0), (r + dr).min(radius));
    }
    best.map(|(f, _, _)| f)
}

fn suite_dual_step(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("dual_step");
    for _ in 0..20 {
        let n = rng.random_range(2..6);
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta = rng.random_range(0.005..0.1);
        let c = rng.random_range(-0.3..0.3);
        let op = DenseOperator::diagonal(&h);
        let problem = TrustRegionProblem {
            g: &g,
            b: &b,
            c,
            delta,
            hvp: &op,
        };
        let step = match solve_step(&problem, &CgConfig::default()) {
            Ok(s) => s,
            Err(e) => {
                suite.error(e);
                continue;
            }
        };
        let value = dot(&g, &step.direction);
        match (step.mode, grid_optimum(&h, &g, &b, c, delta)) {
            (StepMode::Feasible, Some(oracle)) => {
                let scale = oracle.abs().max(1e-6);
                suite.record((value - oracle).abs() <= 1e-3 * scale, || {
                    format!("objective {value} vs grid {oracle}")
                });
            }
            (StepMode::InfeasibleRecovery, None) => {
                suite.record(dot(&b, &step.direction) < 0.0, || "recovery does not reduce the constraint".into())
            }
            (mode, oracle) => suite.record(false, || format!("mode {mode:?} but grid optimum {oracle:?}")),
        }
    }
    suite.finish()
}

fn suite_subsample(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut suite = Suite::new("subsample_zero_targets");
    for _ in 0..50 {
        let zeros = rng.random_range(0..100);
        let nonzero = rng.random_range(0..100);
        let mut pairs: Vec<(usize, f64)> = (0..zeros).map(|i| (i, 0.0)).collect();
        pairs.extend((0..nonzero).map(|i| (zeros + i, 1.0 + i as f64)));
        let kept = subsample_zero_targets(pairs, rng);
        let kz = kept.iter().filter(|p| p.1 == 0.0).count();
        let knz = kept.len() - kz;
        let expected_zeros = if nonzero == 0 { zeros.min(1) } else { zeros.min(nonzero) };
        suite.record(knz == nonzero && kz == expected_zeros, || {
            format!("{zeros} zeros / {nonzero} non-zeros kept {kz} / {knz}")
        });
    }
    suite.finish()
}

/// Runs every suite. The report passes iff no case failed.
pub fn run_checks(options: &CheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let suites = vec![
        suite_mmdp_identity(&mut rng),
        suite_grad_log_prob(&mut rng, options.fault),
        suite_value_grad(&mut rng),
        suite_kl_grad(&mut rng),
        suite_fvp(&mut rng, options.fault),
        suite_cg(&mut rng),
        suite_dual_step(&mut rng),
        suite_subsample(&mut rng),
    ];
    CheckReport {
        passed: suites.iter().all(|s| s.failed == 0),
        suites,
    }
}
