use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Table 3 defaults for value and cost-value fitting.
pub const VALUE_ITERATIONS: usize = 80;
pub const VALUE_LEARNING_RATE: f64 = 0.001;

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub net: Mlp,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, 1.0, rng)?,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward_batch(x)?.column(0).to_owned())
    }

    /// Mean squared error over the batch.
    pub fn mse(&self, inputs: ArrayView2<f64>, targets: &[f64]) -> Result<f64> {
        check_batch(inputs, targets)?;
        let pred = self.predict_batch(inputs)?;
        Ok(pred
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / targets.len() as f64)
    }

    /// Loss and parameter gradient of [`ValueFunction::mse`].
    pub fn mse_grad(&self, inputs: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_batch(inputs, targets)?;
        let n = targets.len() as f64;
        let cache = self.net.forward_cached(inputs)?;
        let out = cache.output();
        let mut grad_out = Array2::<f64>::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let r = out[[i, 0]] - t;
            loss += r * r;
            grad_out[[i, 0]] = 2.0 * r / n;
        }
        let grad = self.net.backward(&cache, grad_out.view());
        Ok((loss / n, grad))
    }
}

fn check_batch(inputs: ArrayView2<f64>, targets: &[f64]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::domain("value fitting needs a non-empty batch"));
    }
    if inputs.nrows() != targets.len() {
        return Err(Error::domain(format!(
            "{} inputs but {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    Ok(())
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// One descent step on `params` given the loss gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Full-batch Adam regression of `value` onto `targets`.
///
/// Returns the loss before every step followed by the final loss
/// (`iterations + 1` entries).
pub fn adam_fit(
    value: &mut ValueFunction,
    inputs: ArrayView2<f64>,
    targets: &[f64],
    iterations: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    check_batch(inputs, targets)?;
    let mut adam = Adam::new(value.net.num_params(), lr);
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (loss, grad) = value.mse_grad(inputs, targets)?;
        trace.push(loss);
        adam.step(value.net.params_mut(), &grad);
    }
    trace.push(value.mse(inputs, targets)?);
    finish(value, trace)
}

/// Adam regression where each step uses `batch_size` rows drawn without
/// replacement. Returns the per-step minibatch losses followed by the final
/// full-batch loss.
pub fn adam_fit_minibatch<R: Rng + ?Sized>(
    value: &mut ValueFunction,
    inputs: ArrayView2<f64>,
    targets: &[f64],
    iterations: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_batch(inputs, targets)?;
    if batch_size == 0 || batch_size >= targets.len() {
        return adam_fit(value, inputs, targets, iterations, lr);
    }
    let mut adam = Adam::new(value.net.num_params(), lr);
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let mut rows = index::sample(rng, targets.len(), batch_size).into_vec();
        rows.sort_unstable();
        let x = inputs.select(Axis(0), &rows);
        let y: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
        let (loss, grad) = value.mse_grad(x.view(), &y)?;
        trace.push(loss);
        adam.step(value.net.params_mut(), &grad);
    }
    trace.push(value.mse(inputs, targets)?);
    finish(value, trace)
}

fn finish(value: &ValueFunction, trace: Vec<f64>) -> Result<Vec<f64>> {
    if value.net.params().iter().any(|p| !p.is_finite()) || trace.iter().any(|l| !l.is_finite()) {
        return Err(Error::numeric("value fitting diverged"));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn table_defaults() {
        assert_eq!(VALUE_ITERATIONS, 80);
        assert_eq!(VALUE_LEARNING_RATE, 0.001);
    }

    #[test]
    fn constant_targets_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = ValueFunction::new(3, &[64, 64], &mut rng).unwrap();
        let x = inputs(64, 3, 2);
        let y = vec![0.5; 64];
        let trace = adam_fit(&mut v, x.view(), &y, VALUE_ITERATIONS, VALUE_LEARNING_RATE).unwrap();
        assert_eq!(trace.len(), VALUE_ITERATIONS + 1);
        // momentum overshoots once the fit is exact, so look at the best point
        let best = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-2 * trace[0], "{trace:?}");
        assert!(*trace.last().unwrap() < 0.1 * trace[0], "{trace:?}");
    }

    #[test]
    fn loss_trace_mostly_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut v = ValueFunction::new(4, &[64, 64], &mut rng).unwrap();
        let x = inputs(512, 4, 13);
        // return-scale targets, as seen when fitting reward-to-go
        let y: Vec<f64> = x
            .outer_iter()
            .map(|r| 8.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] * r[3])
            .collect();
        let trace = adam_fit(&mut v, x.view(), &y, VALUE_ITERATIONS, VALUE_LEARNING_RATE).unwrap();
        let steps = trace.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(steps as f64 >= 0.9 * VALUE_ITERATIONS as f64, "{trace:?}");
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn linear_targets_linear_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = ValueFunction::new(2, &[], &mut rng).unwrap();
        let x = inputs(100, 2, 4);
        let y: Vec<f64> = x.outer_iter().map(|r| 0.7 * r[0] - 0.2 * r[1] + 0.1).collect();
        let trace = adam_fit(&mut v, x.view(), &y, 2000, 0.01).unwrap();
        assert!(*trace.last().unwrap() < 1e-10, "{}", trace.last().unwrap());
        let p = v.net.params();
        assert!((p[0] - 0.7).abs() < 1e-4 && (p[1] + 0.2).abs() < 1e-4 && (p[2] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn minibatch_fit_is_seeded() {
        let x = inputs(300, 3, 5);
        let y: Vec<f64> = x.outer_iter().map(|r| r[0] * r[1]).collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut v = ValueFunction::new(3, &[8], &mut rng).unwrap();
            adam_fit_minibatch(&mut v, x.view(), &y, 50, 0.01, 32, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_batch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = ValueFunction::new(2, &[4], &mut rng).unwrap();
        let x = Array2::<f64>::zeros((0, 2));
        assert!(adam_fit(&mut v, x.view(), &[], 5, 0.01).is_err());
        let x = Array2::<f64>::zeros((3, 2));
        assert!(adam_fit(&mut v, x.view(), &[1.0], 5, 0.01).is_err());
    }
}
