//! Reference implementations used as oracles by the integration tests.
//! Written directly from the definitions, without calling the library's
//! forward or gradient code.

#![allow(dead_code)]

use rand::Rng;

/// Forward pass of a tanh MLP stored as `[W_0 (out x in, row-major), b_0, W_1, b_1, ...]`.
pub fn mlp_forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut s = b[o];
            for i in 0..n_in {
                s += w[o * n_in + i] * h[i];
            }
            z[o] = if l + 1 < layers { s.tanh() } else { s };
        }
        h = z;
    }
    h
}

pub fn mlp_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Policy parameters split into mean-network weights and trailing log-stds.
pub struct RefPolicy<'a> {
    pub sizes: &'a [usize],
    pub params: &'a [f64],
}

impl RefPolicy<'_> {
    fn split(&self) -> (&[f64], &[f64]) {
        self.params.split_at(mlp_param_count(self.sizes))
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        mlp_forward(self.sizes, self.split().0, x)
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.split().1.to_vec()
    }

    pub fn log_prob(&self, x: &[f64], a: &[f64]) -> f64 {
        let mu = self.mean(x);
        let ls = self.log_std();
        let mut lp = 0.0;
        for j in 0..a.len() {
            let z = (a[j] - mu[j]) / ls[j].exp();
            lp += -0.5 * z * z - ls[j] - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        lp
    }
}

/// KL(p || q) between diagonal Gaussians.
pub fn gaussian_kl(mu_p: &[f64], ls_p: &[f64], mu_q: &[f64], ls_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mu_p.len() {
        let var_p = (2.0 * ls_p[j]).exp();
        let var_q = (2.0 * ls_q[j]).exp();
        kl += ls_q[j] - ls_p[j] + (var_p + (mu_p[j] - mu_q[j]).powi(2)) / (2.0 * var_q) - 0.5;
    }
    kl
}

/// Batch-mean KL from the policy with `new` parameters to the one with `old`.
pub fn mean_kl(sizes: &[usize], new: &[f64], old: &[f64], obs: &[Vec<f64>]) -> f64 {
    let p = RefPolicy { sizes, params: new };
    let q = RefPolicy { sizes, params: old };
    let (ls_p, ls_q) = (p.log_std(), q.log_std());
    obs.iter()
        .map(|x| gaussian_kl(&p.mean(x), &ls_p, &q.mean(x), &ls_q))
        .sum::<f64>()
        / obs.len() as f64
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Dense Hessian by second-order central differences.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut p = x.to_vec();
    for i in 0..n {
        for j in i..n {
            let mut eval = |si: f64, sj: f64| {
                p[i] += si * h;
                p[j] += sj * h;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max g.x` over `x = a u + b v` with `0.5 x'Hx <= delta` and `bvec.x + c <= 0`,
/// `H` diagonal. Returns `None` when the feasible set is empty.
///
/// Works in whitened coordinates of the plane, where the trust region is a
/// disc: the optimum lies on the circle or on the chord, and both are
/// scanned densely and then refined around the best sample.
pub fn plane_oracle(g: &[f64], bvec: &[f64], c: f64, delta: f64, h: &[f64], u: &[f64], v: &[f64]) -> Option<f64> {
    let quad = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).zip(h).map(|((a, b), d)| a * b * d).sum() };
    // Gram matrix of (u, v) under H, and its Cholesky factor L (lower).
    let (guu, guv, gvv) = (quad(u, u), quad(u, v), quad(v, v));
    let l11 = guu.sqrt();
    let l21 = guv / l11;
    let l22 = (gvv - l21 * l21).max(0.0).sqrt();
    let radius = (2.0 * delta).sqrt();
    // coefficient (alpha, beta) from whitened z, where x'Hx = |z|^2 and z = L' (alpha, beta)
    let coeffs = |z0: f64, z1: f64| -> (f64, f64) {
        if l22 < 1e-14 * l11 {
            (z0 / l11, 0.0)
        } else {
            let beta = z1 / l22;
            ((z0 - l21 * beta) / l11, beta)
        }
    };
    let (gu, gv, bu, bv) = (dot(g, u), dot(g, v), dot(bvec, u), dot(bvec, v));
    let objective = |z0: f64, z1: f64| {
        let (a, b) = coeffs(z0, z1);
        a * gu + b * gv
    };
    let constraint = |z0: f64, z1: f64| {
        let (a, b) = coeffs(z0, z1);
        a * bu + b * bv + c
    };
    let tol = 1e-12 * (1.0 + c.abs());
    let mut best: Option<f64> = None;
    let mut consider = |val: f64| best = Some(best.map_or(val, |b: f64| b.max(val)));

    // circle arc
    let arc = |t: f64| (radius * t.cos(), radius * t.sin());
    let n = 20_000;
    let mut best_t = None;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..n {
        let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (z0, z1) = arc(t);
        if constraint(z0, z1) <= tol {
            let val = objective(z0, z1);
            if val > best_val {
                best_val = val;
                best_t = Some(t);
            }
        }
    }
    if let Some(mut t) = best_t {
        let mut width = 2.0 * std::f64::consts::PI / n as f64;
        for _ in 0..60 {
            let mut local = (t, best_val);
            for k in -20..=20 {
                let tt = t + width * k as f64 / 10.0;
                let (z0, z1) = arc(tt);
                if constraint(z0, z1) <= tol && objective(z0, z1) > local.1 {
                    local = (tt, objective(z0, z1));
                }
            }
            t = local.0;
            best_val = local.1;
            width /= 4.0;
        }
        consider(best_val);
    }

    // chord: points in the disc where the constraint is active
    let (nb0, nb1) = {
        // gradient of the constraint in whitened coordinates
        let eps = 1.0;
        let base = constraint(0.0, 0.0);
        (constraint(eps, 0.0) - base, constraint(0.0, eps) - base)
    };
    let norm = (nb0 * nb0 + nb1 * nb1).sqrt();
    if norm > 1e-14 {
        let c0 = constraint(0.0, 0.0);
        // closest point of the line to the origin, and its direction
        let (p0, p1) = (-c0 * nb0 / (norm * norm), -c0 * nb1 / (norm * norm));
        let dist = (p0 * p0 + p1 * p1).sqrt();
        if dist <= radius {
            let half = (radius * radius - dist * dist).sqrt();
            let (d0, d1) = (-nb1 / norm, nb0 / norm);
            // linear along the chord: optimum at an endpoint
            for s in [-half, half] {
                consider(objective(p0 + s * d0, p1 + s * d1));
            }
        }
    }
    best
}
