//! Orthogonal matrices parameterized as products of Householder reflections.
//!
//! A stack of vectors `v_1..v_m` in `R^d` defines
//! `W = H_1 H_2 ... H_m` with `H_i = I - 2 v_i v_iᵀ / ‖v_i‖²`. Every `H_i` is
//! symmetric and orthogonal, so `W` is orthogonal for any parameter values:
//! gradient steps on the `v_i` can never leave the orthogonal group.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{bail_arg, Result};
use crate::numerics::{dot, Mat, Real};

/// Reflections whose vector norm falls below this act as the identity.
pub const DEFAULT_NORM_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderStack<T = f64> {
    /// One reflection vector per row (`m × d`).
    vectors: Mat<T>,
    norm_guard: T,
}

impl<T: Real> HouseholderStack<T> {
    pub fn new(vectors: Mat<T>) -> Result<Self> {
        let (m, d) = vectors.shape();
        if d == 0 || d % 2 != 0 {
            bail_arg!("householder dimension must be positive and even, got {d}");
        }
        if m > d {
            bail_arg!("at most {d} reflections allowed in dimension {d}, got {m}");
        }
        let stack = Self { vectors, norm_guard: T::lit(DEFAULT_NORM_GUARD) };
        for i in 0..m {
            if stack.is_skipped(i) {
                log::warn!("householder reflection {i} has norm below the guard and acts as identity");
            }
        }
        Ok(stack)
    }

    /// The empty stack: `W = I`.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(Mat::zeros(0, dim))
    }

    /// `count` reflections with i.i.d. standard normal entries, each scaled to
    /// unit norm.
    pub fn random(dim: usize, count: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut vectors = Mat::<T>::from_fn(count, dim, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        for i in 0..count {
            let row = vectors.row_mut(i);
            let norm = dot(row, row).sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|x| *x = *x / norm);
            }
        }
        Self::new(vectors)
    }

    /// Zero-valued stack used to hold `dL/dv`; skips all validation.
    pub(crate) fn gradient_slot(count: usize, dim: usize) -> Self {
        Self { vectors: Mat::zeros(count, dim), norm_guard: T::lit(DEFAULT_NORM_GUARD) }
    }

    pub fn with_norm_guard(mut self, guard: T) -> Self {
        self.norm_guard = guard;
        self
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Number of reflections `m`.
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &Mat<T> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Mat<T> {
        &mut self.vectors
    }

    pub fn is_skipped(&self, i: usize) -> bool {
        let v = self.vectors.row(i);
        dot(v, v).sqrt() < self.norm_guard
    }

    pub fn active_count(&self) -> usize {
        (0..self.len()).filter(|&i| !self.is_skipped(i)).count()
    }

    pub fn cast<U: Real>(&self) -> HouseholderStack<U> {
        HouseholderStack { vectors: self.vectors.cast(), norm_guard: U::lit(self.norm_guard.to_f64_lossy()) }
    }

    /// `W = H_1 H_2 ... H_m` as a dense `d × d` matrix.
    pub fn materialize(&self) -> Mat<T> {
        let mut w = Mat::identity(self.dim());
        for i in 0..self.len() {
            self.reflect_rows(i, &mut w);
        }
        w
    }

    /// `X · W` via `m` rank-one updates, without forming `W`.
    pub fn apply_right(&self, x: &Mat<T>) -> Result<Mat<T>> {
        if x.cols() != self.dim() {
            bail_arg!("apply_right: input has {} columns, stack dimension is {}", x.cols(), self.dim());
        }
        let mut out = x.clone();
        for i in 0..self.len() {
            self.reflect_rows(i, &mut out);
        }
        Ok(out)
    }

    /// Like [`apply_right`](Self::apply_right) but keeps the intermediates
    /// needed by [`backward`](Self::backward).
    pub fn apply_right_taped(&self, x: &Mat<T>) -> Result<(Mat<T>, HouseholderTape<T>)> {
        if x.cols() != self.dim() {
            bail_arg!("apply_right: input has {} columns, stack dimension is {}", x.cols(), self.dim());
        }
        let mut inputs = Vec::with_capacity(self.len());
        let mut out = x.clone();
        for i in 0..self.len() {
            inputs.push(out.clone());
            self.reflect_rows(i, &mut out);
        }
        Ok((out, HouseholderTape { inputs }))
    }

    /// Given `dL/dY` for `Y = X · W`, returns `(dL/dX, dL/dV)` where `dL/dV`
    /// has one row per reflection vector.
    pub fn backward(&self, tape: &HouseholderTape<T>, grad_out: &Mat<T>) -> (Mat<T>, Mat<T>) {
        assert_eq!(tape.inputs.len(), self.len(), "tape does not belong to this stack");
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let mut g = grad_out.clone();
        let mut dv = Mat::zeros(self.len(), self.dim());
        for i in (0..self.len()).rev() {
            if self.is_skipped(i) {
                continue;
            }
            let v = self.vectors.row(i);
            let s = dot(v, v);
            let x = &tape.inputs[i];
            // u = X v, gv = G v
            let u: Vec<T> = (0..x.rows()).map(|k| dot(x.row(k), v)).collect();
            let gv: Vec<T> = (0..g.rows()).map(|k| dot(g.row(k), v)).collect();
            let ugv = dot(&u, &gv);
            let out = dv.row_mut(i);
            for k in 0..x.rows() {
                let (gk, xk) = (g.row(k), x.row(k));
                for j in 0..out.len() {
                    // Gᵀu + Xᵀ(Gv)
                    out[j] += -(two / s) * (gk[j] * u[k] + xk[j] * gv[k]);
                }
            }
            for (o, &vj) in out.iter_mut().zip(v) {
                *o += four / (s * s) * ugv * vj;
            }
            // G <- G H_i (H_i symmetric)
            for k in 0..g.rows() {
                let c = two * gv[k] / s;
                for (gj, &vj) in g.row_mut(k).iter_mut().zip(v) {
                    *gj -= c * vj;
                }
            }
        }
        (g, dv)
    }

    fn reflect_rows(&self, i: usize, x: &mut Mat<T>) {
        if self.is_skipped(i) {
            return;
        }
        let v = self.vectors.row(i);
        let s = dot(v, v);
        let two = T::lit(2.0);
        for k in 0..x.rows() {
            let row = x.row_mut(k);
            let c = two * dot(row, v) / s;
            for (r, &vj) in row.iter_mut().zip(v) {
                *r -= c * vj;
            }
        }
    }
}

/// Per-reflection inputs recorded by [`HouseholderStack::apply_right_taped`].
#[derive(Debug, Clone)]
pub struct HouseholderTape<T = f64> {
    inputs: Vec<Mat<T>>,
}

/// Splits a `d × d` matrix into its first and last `d/2` rows.
pub fn split_rows<T: Real>(w: &Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
    let d = w.rows();
    if d == 0 || d % 2 != 0 {
        bail_arg!("split_rows needs an even number of rows, got {d}");
    }
    Ok((w.row_slice(0, d / 2), w.row_slice(d / 2, d)))
}

/// `‖W Wᵀ − I‖_max`.
pub fn orthogonality_residual<T: Real>(w: &Mat<T>) -> T {
    w.matmul_nt(w).sub(&Mat::identity(w.rows())).max_abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradGroup};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    fn determinant(m: &Mat) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
            if a[(p, c)] == 0.0 {
                return 0.0;
            }
            if p != c {
                for k in 0..n {
                    let t = a[(p, k)];
                    a[(p, k)] = a[(c, k)];
                    a[(c, k)] = t;
                }
                det = -det;
            }
            det *= a[(c, c)];
            for r in c + 1..n {
                let f = a[(r, c)] / a[(c, c)];
                for k in c..n {
                    let t = a[(c, k)];
                    a[(r, k)] -= f * t;
                }
            }
        }
        det
    }

    /// Explicit product of explicit reflection matrices.
    fn naive_product(stack: &HouseholderStack) -> Mat {
        let d = stack.dim();
        let mut w = Mat::identity(d);
        for i in 0..stack.len() {
            if stack.is_skipped(i) {
                continue;
            }
            let v = stack.vectors().row(i);
            let s = dot(v, v);
            let h = Mat::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 } - 2.0 * v[r] * v[c] / s);
            w = w.matmul(&h);
        }
        w
    }

    #[test]
    fn single_reflection_and_empty() {
        let stack = HouseholderStack::new(Mat::from_rows(&[[1.0, 0.0]])).unwrap();
        assert_eq!(stack.materialize(), Mat::from_rows(&[[-1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(HouseholderStack::<f64>::identity(6).unwrap().materialize(), Mat::identity(6));
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(HouseholderStack::new(Mat::<f64>::zeros(1, 3)).is_err());
        assert!(split_rows(&Mat::<f64>::identity(3)).is_err());
    }

    #[test]
    fn random_stack_orthogonal_and_matches_naive_product() {
        let mut r = rng(1);
        let stack = HouseholderStack::<f64>::random(8, 8, &mut r).unwrap();
        let w = stack.materialize();
        assert!(orthogonality_residual(&w) <= 1e-10);
        assert!(w.sub(&naive_product(&stack)).max_abs() <= 1e-12);
    }

    #[test]
    fn apply_right_matches_materialized() {
        let mut r = rng(2);
        let stack = HouseholderStack::<f64>::random(8, 5, &mut r).unwrap();
        let x = random_mat(7, 8, &mut r);
        let fast = stack.apply_right(&x).unwrap();
        assert!(fast.sub(&x.matmul(&stack.materialize())).max_abs() <= 1e-10);
        for k in 0..x.rows() {
            let before = dot(x.row(k), x.row(k)).sqrt();
            let after = dot(fast.row(k), fast.row(k)).sqrt();
            assert!((before - after).abs() <= 1e-10);
        }
        assert_eq!(HouseholderStack::identity(8).unwrap().apply_right(&x).unwrap(), x);
        assert!(stack.apply_right(&random_mat(2, 6, &mut r)).is_err());
    }

    #[test]
    fn split_rows_examples() {
        let (top, bot) = split_rows(&Mat::<f64>::identity(4)).unwrap();
        assert_eq!(top, Mat::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]));
        assert_eq!(bot, Mat::from_rows(&[[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]));
        let (top, bot) = split_rows(&Mat::<f64>::identity(2)).unwrap();
        assert_eq!((top.rows(), bot.rows()), (1, 1));

        let w = HouseholderStack::<f64>::random(8, 8, &mut rng(3)).unwrap().materialize();
        let (top, bot) = split_rows(&w).unwrap();
        assert!(top.matmul_nt(&bot).max_abs() <= 1e-10);
        assert!(top.matmul_nt(&top).sub(&Mat::identity(4)).max_abs() <= 1e-10);
    }

    #[test]
    fn skipped_reflection_is_identity() {
        let mut v = Mat::from_rows(&[[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0]]);
        v[(0, 0)] = 1e-12;
        let stack = HouseholderStack::new(v).unwrap();
        assert!(stack.is_skipped(0));
        assert_eq!(stack.active_count(), 1);
        assert!(orthogonality_residual(&stack.materialize()) <= 1e-12);
    }

    #[test]
    fn determinant_tracks_active_reflections() {
        let mut r = rng(4);
        for m in 0..=6 {
            let stack = HouseholderStack::<f64>::random(6, m, &mut r).unwrap();
            let det = determinant(&stack.materialize());
            let expected = if stack.active_count() % 2 == 0 { 1.0 } else { -1.0 };
            assert!((det - expected).abs() <= 1e-8, "m={m} det={det}");
        }
    }

    #[test]
    fn endogenous_under_perturbation() {
        let mut r = rng(5);
        let mut stack = HouseholderStack::<f64>::random(8, 8, &mut r).unwrap();
        for _ in 0..50 {
            let noise = random_mat(8, 8, &mut r).scale(0.5);
            stack.vectors_mut().add_assign(&noise);
            assert!(orthogonality_residual(&stack.materialize()) <= 1e-10);
        }
    }

    #[test]
    fn backward_passes_grad_check() {
        let mut r = rng(6);
        let stack = HouseholderStack::<f64>::random(6, 4, &mut r).unwrap();
        let x = random_mat(3, 6, &mut r);
        let target = random_mat(3, 6, &mut r);
        // L = sum(target ⊙ X W)
        let (_, tape) = stack.apply_right_taped(&x).unwrap();
        let (dx, dv) = stack.backward(&tape, &target);
        let loss = |g: &[GradGroup]| {
            let s = HouseholderStack::new(Mat::new(4, 6, g[0].values.clone()).unwrap()).unwrap();
            let xx = Mat::new(3, 6, g[1].values.clone()).unwrap();
            dot(s.apply_right(&xx).unwrap().data(), target.data())
        };
        let mut groups = vec![
            GradGroup::new("v", stack.vectors().data().to_vec(), dv.into_data()),
            GradGroup::new("x", x.data().to_vec(), dx.into_data()),
        ];
        let report = grad_check(&mut groups, 1e-5, 1e-4, loss).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn single_precision_orthogonality() {
        let stack = HouseholderStack::<f64>::random(64, 64, &mut rng(7)).unwrap().cast::<f32>();
        assert!(orthogonality_residual(&stack.materialize()) <= 1e-5);
    }
}
