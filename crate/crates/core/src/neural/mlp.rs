use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Fully connected network with tanh hidden layers and a linear output.
///
/// Parameters live in one flat vector, layer by layer: the `out x in`
/// weight matrix in row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer inputs recorded by a batched forward pass, reused by
/// [`Mlp::backward`] and [`Mlp::jvp`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

fn count_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count_params(sizes)],
        })
    }

    /// Glorot-uniform weights, zero biases; the output layer's weights are
    /// multiplied by `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let scale = if l + 1 == layers { output_scale } else { 1.0 };
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = dist.sample(rng) * scale;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize, usize) {
        let offset: usize = self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum();
        (offset, self.sizes[l], self.sizes[l + 1])
    }

    fn layer_in<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (off, n_in, n_out) = self.layer_offsets(l);
        let w = ArrayView2::from_shape((n_out, n_in), &params[off..off + n_in * n_out])
            .expect("layer shape matches parameter layout");
        let b = ArrayView1::from(&params[off + n_in * n_out..off + n_in * n_out + n_out]);
        (w, b)
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::domain(format!(
                "network expects inputs of width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer_in(&self.params, l);
            let mut z = w.dot(&ArrayView1::from(&h[..]));
            z += &b;
            if l + 1 < self.num_layers() {
                z.mapv_inplace(f64::tanh);
            }
            h = z.to_vec();
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            h = self.apply_layer(h.view(), l);
        }
        Ok(h)
    }

    fn apply_layer(&self, h: ArrayView2<f64>, l: usize) -> Array2<f64> {
        let (w, b) = self.layer_in(&self.params, l);
        let mut z = h.dot(&w.t());
        z += &b;
        if l + 1 < self.num_layers() {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_batch(&x)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_owned());
        for l in 0..self.num_layers() {
            let next = self.apply_layer(activations[l].view(), l);
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse pass: parameter gradient of `sum_ij grad_out[i, j] * out[i, j]`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = grad_out.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (off, n_in, n_out) = self.layer_offsets(l);
            let input = &cache.activations[l];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grad[off..off + n_in * n_out]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(g, v)| *g = *v);
            grad[off + n_in * n_out..off + n_in * n_out + n_out]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g = *v);
            if l > 0 {
                let (w, _) = self.layer_in(&self.params, l);
                let mut prev = delta.dot(&w);
                prev.zip_mut_with(input, |d, &h| *d *= 1.0 - h * h);
                delta = prev;
            }
        }
        grad
    }

    /// Forward-mode derivative of the batch output along parameter
    /// direction `v`, at the parameters the cache was built with.
    pub fn jvp(&self, cache: &ForwardCache, v: &[f64]) -> Result<Array2<f64>> {
        if v.len() != self.num_params() {
            return Err(Error::domain(format!(
                "tangent has {} entries, network has {} parameters",
                v.len(),
                self.num_params()
            )));
        }
        let mut tangent: Option<Array2<f64>> = None;
        for l in 0..self.num_layers() {
            let (w, _) = self.layer_in(&self.params, l);
            let (vw, vb) = self.layer_in(v, l);
            let input = &cache.activations[l];
            let mut dz = input.dot(&vw.t());
            dz += &vb;
            if let Some(t) = &tangent {
                dz += &t.dot(&w.t());
            }
            if l + 1 < self.num_layers() {
                dz.zip_mut_with(&cache.activations[l + 1], |d, &h| *d *= 1.0 - h * h);
            }
            tangent = Some(dz);
        }
        Ok(tangent.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line loop implementation of the same arithmetic.
    fn reference_forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = params[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += params[off + o * n_in + i] * h[i];
                }
                z[o] = if l + 2 < sizes.len() { acc.tanh() } else { acc };
            }
            off += n_in * n_out + n_out;
            h = z;
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_params(&[3, 3], params).unwrap();
        assert_eq!(net.forward(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn matches_reference_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sizes = [4, 7, 6, 3];
        let net = Mlp::new(&sizes, 1.0, &mut rng).unwrap();
        let x = [0.3, -0.8, 1.1, 0.05];
        let out = net.forward(&x).unwrap();
        let want = reference_forward(&sizes, net.params(), &x);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let batch = Array2::from_shape_vec((2, 4), [x, x].concat()).unwrap();
        let out_b = net.forward_batch(batch.view()).unwrap();
        for j in 0..3 {
            assert!((out_b[[1, j]] - want[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_error() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.forward_batch(Array2::zeros((2, 4)).view()).is_err());
        assert!(Mlp::zeros(&[3]).is_err());
    }

    #[test]
    fn backward_and_jvp_agree_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = [3, 5, 4, 2];
        let net = Mlp::new(&sizes, 1.0, &mut rng).unwrap();
        let x = Array2::from_shape_vec((2, 3), vec![0.2, -0.4, 0.9, -1.0, 0.3, 0.1]).unwrap();
        let weights = Array2::from_shape_vec((2, 2), vec![0.7, -1.3, 0.4, 2.0]).unwrap();
        let cache = net.forward_cached(x.view()).unwrap();
        let grad = net.backward(&cache, weights.view());
        let objective = |p: &[f64]| {
            let n = Mlp::from_params(&sizes, p.to_vec()).unwrap();
            (&n.forward_batch(x.view()).unwrap() * &weights).sum()
        };
        let h = 1e-6;
        let mut p = net.params().to_vec();
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            let up = objective(&p);
            p[k] = orig - h;
            let down = objective(&p);
            p[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}");
        }
        // jvp . weights == grad . v
        let v: Vec<f64> = (0..p.len()).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let t = net.jvp(&cache, &v).unwrap();
        let lhs = (&t * &weights).sum();
        let rhs: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
    }

    proptest::proptest! {
        #[test]
        fn flat_round_trip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::new(&[2, 4, 3], 1.0, &mut rng).unwrap();
            let p = net.params().to_vec();
            let before = net.clone();
            net.set_params(&p).unwrap();
            proptest::prop_assert_eq!(net, before);
        }
    }
}
