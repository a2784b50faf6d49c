//! Affine maps, layer normalization and GELU with their backward passes.

use rand::Rng;

use crate::numerics::{Mat, Real};

/// `y = x · W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f64> {
    pub weight: Mat<T>,
    pub bias: Mat<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Mat::zeros(input, output), bias: Mat::zeros(1, output) }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Mat::from_fn(input, output, |_, _| T::lit(rng.gen_range(-limit..limit))),
            bias: Mat::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        let mut y = x.matmul(&self.weight);
        y.add_row_broadcast(self.bias.data());
        y
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

impl Linear<f64> {
    /// Returns `dL/dx` and accumulates parameter gradients into `grads`.
    pub fn backward(&self, x: &Mat, grad_out: &Mat, grads: &mut Linear) -> Mat {
        grads.weight.add_assign(&x.matmul_tn(grad_out));
        for (b, g) in grads.bias.data_mut().iter_mut().zip(grad_out.col_sums()) {
            *b += g;
        }
        grad_out.matmul_nt(&self.weight)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization with learned scale and shift (`1 × d` each).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Mat,
    pub beta: Mat,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Mat::new(1, dim, vec![1.0; dim]).expect("shape"), beta: Mat::zeros(1, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { gamma: Mat::zeros(1, dim), beta: Mat::zeros(1, dim) }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols();
        let mut normalized = Mat::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut y = Mat::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let n = (row[c] - mean) * is;
                normalized[(r, c)] = n;
                y[(r, c)] = n * self.gamma.data()[c] + self.beta.data()[c];
            }
        }
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, grad_out: &Mat, grads: &mut LayerNorm) -> Mat {
        let d = grad_out.cols();
        let mut dx = Mat::zeros(grad_out.rows(), d);
        for r in 0..grad_out.rows() {
            let gy = grad_out.row(r);
            let xn = cache.normalized.row(r);
            let mut dxn = vec![0.0; d];
            for c in 0..d {
                grads.gamma.data_mut()[c] += gy[c] * xn[c];
                grads.beta.data_mut()[c] += gy[c];
                dxn[c] = gy[c] * self.gamma.data()[c];
            }
            let mean_dxn = dxn.iter().sum::<f64>() / d as f64;
            let mean_dxn_xn = dxn.iter().zip(xn).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let out = dx.row_mut(r);
            for c in 0..d {
                out[c] = cache.inv_std[r] * (dxn[c] - mean_dxn - xn[c] * mean_dxn_xn);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, grad_check, GradGroup};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gelu_gradient_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let numeric = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((numeric - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(3, 5, |_, _| rng.sample(StandardNormal));
        let target = Mat::from_fn(3, 5, |_, _| rng.sample(StandardNormal));
        let mut ln = LayerNorm::new(5);
        ln.gamma = Mat::from_fn(1, 5, |_, c| 1.0 + 0.1 * c as f64);
        ln.beta = Mat::from_fn(1, 5, |_, c| 0.05 * c as f64);
        let (_, cache) = ln.forward_cached(&x);
        let mut grads = LayerNorm::zeros(5);
        let dx = ln.backward(&cache, &target, &mut grads);
        let mut groups = vec![
            GradGroup::new("x", x.data().to_vec(), dx.into_data()),
            GradGroup::new("gamma", ln.gamma.data().to_vec(), grads.gamma.data().to_vec()),
            GradGroup::new("beta", ln.beta.data().to_vec(), grads.beta.data().to_vec()),
        ];
        let report = grad_check(&mut groups, 1e-5, 1e-6, |g| {
            let ln = LayerNorm {
                gamma: Mat::new(1, 5, g[1].values.clone()).unwrap(),
                beta: Mat::new(1, 5, g[2].values.clone()).unwrap(),
            };
            let y = ln.forward(&Mat::new(3, 5, g[0].values.clone()).unwrap());
            dot(y.data(), target.data())
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
