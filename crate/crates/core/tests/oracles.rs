mod common;

use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scpo_core::advantage::{d_return_targets, gae, subsample_zero_targets};
use scpo_core::envs::{EnvConfig, PointNavEnv};
use scpo_core::mmdp::{cost_increment, replay_costs};
use scpo_core::neural::{kl_diag_gaussian, GaussianPolicy, Mlp, VALUE_ITERATIONS, VALUE_LEARNING_RATE};
use scpo_core::trainer::{epsilon_term, RunConfig};
use scpo_core::trust_region::{solve_step, CgConfig, DenseOperator, StepMode, TrustRegionProblem};

#[test]
fn first_increment_is_the_first_cost() {
    assert_eq!(cost_increment(0.7, 0.0).unwrap(), 0.7);
}

#[test]
fn increment_suffix_sums_match_brute_force_suffix_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let len = rng.random_range(1..60);
        let costs: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) })
            .collect();
        let (tags, inc) = replay_costs(&costs).unwrap();
        let targets = d_return_targets(&inc).unwrap();
        for t in 0..len {
            let m_t = costs[..t].iter().copied().fold(0.0, f64::max);
            assert_eq!(tags[t], m_t);
            let future = costs[t..].iter().copied().fold(m_t, f64::max);
            assert!((targets[t] - (future - m_t)).abs() < 1e-12);
        }
    }
}

#[test]
fn mlp_matches_straight_line_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sizes = [6, 9, 7, 3];
    let net = Mlp::new(&sizes, 1.0, &mut rng).unwrap();
    for _ in 0..20 {
        let x = random_vec(&mut rng, 6, 2.0);
        let out = net.forward(&x).unwrap();
        let oracle = mlp_forward(&sizes, net.params(), &x);
        assert!(out.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn shifting_log_std_rescales_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = GaussianPolicy::new(4, &[8], 2, &mut rng).unwrap();
    let (x, a) = (random_vec(&mut rng, 4, 1.0), random_vec(&mut rng, 2, 1.0));
    let shift = 0.3;
    let mut theta = policy.flat_params();
    let n = theta.len();
    for p in &mut theta[n - 2..] {
        *p += shift;
    }
    let shifted = policy.with_flat_params(&theta).unwrap();
    let mu = policy.mean(&x).unwrap();
    let ls = policy.log_std.clone();
    let quad: f64 = (0..2).map(|j| ((a[j] - mu[j]) / ls[j].exp()).powi(2)).sum();
    let expected = policy.log_prob(&x, &a).unwrap() - 2.0 * shift + 0.5 * quad * (1.0 - (-2.0 * shift).exp());
    assert!((shifted.log_prob(&x, &a).unwrap() - expected).abs() < 1e-12);
    // d log p / d log_std_j = z_j^2 - 1
    let grad = shifted.grad_log_prob(&x, &a).unwrap();
    for j in 0..2 {
        let z = (a[j] - mu[j]) / (ls[j] + shift).exp();
        assert!((grad[n - 2 + j] - (z * z - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn kl_matches_monte_carlo_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = [3, 5, 2];
    let mk = |rng: &mut ChaCha8Rng| {
        let mut p = GaussianPolicy::new(3, &[5], 2, rng).unwrap();
        let theta: Vec<f64> = p.flat_params().iter().map(|t| t + rng.random_range(-0.5..0.5)).collect();
        p.set_flat_params(&theta).unwrap();
        p
    };
    for _ in 0..5 {
        let (p, q) = (mk(&mut rng), mk(&mut rng));
        let x = random_vec(&mut rng, 3, 1.0);
        let obs = Array2::from_shape_vec((1, 3), x.clone()).unwrap();
        let exact = kl_diag_gaussian(&p, &q, obs.view()).unwrap();
        let (pp, qp) = (p.flat_params(), q.flat_params());
        let (rp, rq) = (RefPolicy { sizes: &sizes, params: &pp }, RefPolicy { sizes: &sizes, params: &qp });
        let (mu, ls) = (rp.mean(&x), rp.log_std());
        let n = 200_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let a: Vec<f64> = (0..2)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mu[j] + ls[j].exp() * z
                    })
                    .collect();
                rp.log_prob(&x, &a) - rq.log_prob(&x, &a)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((exact - mean).abs() <= 3.0 * se, "exact {exact}, mc {mean} +- {se}");
    }
}

fn gae_oracle(r: &[f64], v: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
    let t_len = r.len();
    (0..t_len)
        .map(|t| {
            (t..t_len)
                .map(|k| (gamma * lam).powi((k - t) as i32) * (r[k] + gamma * v[k + 1] - v[k]))
                .sum()
        })
        .collect()
}

#[test]
fn gae_matches_nested_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let len = rng.random_range(1..80);
        let r = random_vec(&mut rng, len, 1.0);
        let v = random_vec(&mut rng, len + 1, 3.0);
        for (gamma, lam) in [(0.99, 0.97), (1.0, 0.95), (0.9, 0.0)] {
            let got = gae(&r, &v, gamma, lam).unwrap();
            let want = gae_oracle(&r, &v, gamma, lam);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9));
        }
        let one_step = gae(&r, &v, 0.99, 0.0).unwrap();
        for t in 0..len {
            assert!((one_step[t] - (r[t] + 0.99 * v[t + 1] - v[t])).abs() < 1e-12);
        }
    }
}

#[test]
fn ninety_zero_targets_shrink_to_ten() {
    let mut pairs: Vec<(usize, f64)> = (0..90).map(|i| (i, 0.0)).collect();
    pairs.extend((90..100).map(|i| (i, 0.5)));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kept = subsample_zero_targets(pairs, &mut rng);
    assert_eq!(kept.iter().filter(|(_, t)| *t == 0.0).count(), 10);
    assert_eq!(kept.iter().filter(|(_, t)| *t != 0.0).count(), 10);
}

#[test]
fn agent_never_starts_or_rests_inside_a_pillar() {
    let env = PointNavEnv::new(EnvConfig::preset("point-pillar-8").unwrap()).unwrap();
    let pillars = env.config().pillars.clone();
    let outside = |p: [f64; 2]| {
        pillars
            .iter()
            .all(|c| ((p[0] - c.center[0]).powi(2) + (p[1] - c.center[1]).powi(2)).sqrt() >= c.radius - 1e-12)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..100 {
        let (mut state, _) = env.reset(seed).unwrap();
        assert!(outside(state.position), "reset {seed} inside a pillar");
        for _ in 0..50 {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            state = env.step(&state, a).unwrap().state;
            assert!(outside(state.position));
        }
    }
}

#[test]
fn grazing_trajectory_costs_match_circle_test() {
    let mut cfg = EnvConfig::open_field();
    cfg.hazards = vec![scpo_core::envs::Circle::new(0.0, 0.0, 0.2)];
    let env = PointNavEnv::new(cfg).unwrap();
    let (mut state, _) = env.reset(0).unwrap();
    state.position = [-1.0, 0.19];
    state.velocity = [0.0, 0.0];
    let mut saw_cost = false;
    for _ in 0..60 {
        let out = env.step(&state, [1.0, 0.0]).unwrap();
        let p = out.state.position;
        let d = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let expected = (0.2 - d).max(0.0);
        assert!((out.costs[0] - expected).abs() < 1e-12, "at {p:?}: {} vs {expected}", out.costs[0]);
        saw_cost |= expected > 0.0;
        state = out.state;
        if out.done {
            break;
        }
    }
    assert!(saw_cost);
}

#[test]
fn recovery_step_points_against_the_cost_gradient() {
    let h = [1.0, 3.0, 0.5];
    let b = [0.4, -0.2, 0.1];
    let op = DenseOperator::diagonal(&h);
    let delta = 1e-4;
    let step = solve_step(
        &TrustRegionProblem {
            g: &[1.0, 1.0, 1.0],
            b: &b,
            c: 5.0,
            delta,
            hvp: &op,
        },
        &CgConfig::default(),
    )
    .unwrap();
    assert_eq!(step.mode, StepMode::InfeasibleRecovery);
    let hinv_b: Vec<f64> = b.iter().zip(&h).map(|(x, d)| x / d).collect();
    let s = dot(&b, &hinv_b);
    for (x, y) in step.direction.iter().zip(&hinv_b) {
        assert!((x + (2.0 * delta / s).sqrt() * y).abs() < 1e-10);
    }
}

#[test]
fn hyperparameter_defaults_follow_the_reference_table() {
    let cfg = RunConfig::default();
    assert_eq!((VALUE_ITERATIONS, VALUE_LEARNING_RATE), (80, 0.001));
    assert_eq!((cfg.training.value_iters, cfg.training.value_lr), (80, 0.001));
    let ls = cfg.line_search();
    assert_eq!((ls.backtrack_coeff, ls.max_backtracks), (0.8, 100));
    assert_eq!((cfg.algo.delta, cfg.algo.gamma, cfg.algo.lam), (0.02, 0.99, 0.97));
    assert_eq!(cfg.algo.lagrangian_lr, 0.005);
    assert_eq!(cfg.training.hidden, vec![64, 64]);
}

#[test]
fn epsilon_term_value() {
    let eps = 0.37;
    let want = 2.0 * 201.0 * eps * 0.01_f64.sqrt();
    assert!((epsilon_term(eps, 200, 0.02) - want).abs() < 1e-12);
}
