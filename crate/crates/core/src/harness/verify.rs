//! Runtime re-check of the structural guarantees, used by
//! `check-invariants`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Image, Modality};
use crate::error::Result;
use crate::householder::{orthogonality_residual, HouseholderStack};
use crate::hypergraph::Hypergraph;
use crate::model::{check_model_gradients, ModelConfig, NferFormer};
use crate::numerics::{softmax_rows, Mat};
use crate::saod::{dual_head_attention, AttentionParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.measured <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<46} {:>10.3e} <= {:<8.0e} {}",
                c.name,
                c.measured,
                c.bound,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Runs every suite with `draws` random cases per width/length pair.
pub fn check_invariants(seed: u64, draws: usize) -> Result<InvariantReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut orth64, mut orth32, mut complete, mut basis, mut apply, mut iso) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &d in &[4usize, 8, 64] {
        for &n in &[3usize, 10, 50] {
            for _ in 0..draws {
                let params = AttentionParams::init(d, d, &mut rng)?;
                let z = gaussian(n, d, &mut rng);
                let out = dual_head_attention(&z, &params)?;
                orth64 = orth64.max(out.orthogonality_residual());
                let narrow = dual_head_attention(&z.cast::<f32>(), &params.cast::<f32>())?;
                orth32 = orth32.max(f64::from(narrow.orthogonality_residual()));

                let w = params.householder.materialize();
                let q = params.query.forward(&z);
                let k = params.key.forward(&z);
                let v = params.value.forward(&z);
                let a = softmax_rows(&q.matmul_nt(&k).scale(1.0 / (d as f64).sqrt()));
                complete = complete.max(out.combined().sub(&a.matmul(&v).matmul(&w)).max_abs());

                basis = basis.max(orthogonality_residual(&w));
                apply = apply.max(params.householder.apply_right(&z)?.sub(&z.matmul(&w)).max_abs());
                let y = params.householder.apply_right(&z)?;
                for r in 0..n {
                    let (a, b) = (z.row(r), y.row(r));
                    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    iso = iso.max((na - nb).abs());
                }
            }
        }
    }

    // perturbing the vectors cannot leave the orthogonal group
    let mut endo = 0.0f64;
    for _ in 0..draws.max(1) {
        let mut stack = HouseholderStack::random(8, 8, &mut rng)?;
        let noise = gaussian(8, 8, &mut rng).scale(0.1);
        stack.vectors_mut().add_assign(&noise);
        endo = endo.max(orthogonality_residual(&stack.materialize()));
    }

    let graph = Hypergraph::default_knowledge();
    let p = graph.propagation_matrix();
    let symmetry = p.sub(&p.transpose()).max_abs();
    let spectral = spectral_norm(&p);

    let cfg = ModelConfig {
        image_size: 4,
        channels: 1,
        patch_size: 4,
        dim: 4,
        depth: 1,
        ffn_ratio: 4,
        reflections: None,
        hgfe_dims: vec![2, 2, 1],
        num_classes: 3,
    };
    let model = NferFormer::init(cfg, graph.restrict(3, 3)?, seed)?;
    let image = Image::from_fn(1, 4, 4, |_, _, _| rng.gen_range(0.0..1.0));
    let grads = check_model_gradients(&model, &image, 2, Modality::Nir, 0.1, 1e-5, 1e-4)?;
    let zero_groups = grads.groups.iter().filter(|g| g.zero_bound.is_some()).map(|g| g.max_abs).fold(0.0, f64::max);

    let check = |name: &str, measured: f64, bound: f64| CheckResult { name: name.into(), measured, bound };
    Ok(InvariantReport {
        checks: vec![
            check("orthogonality ‖O_S O_Iᵀ‖ (f64)", orth64, 1e-10),
            check("orthogonality ‖O_S O_Iᵀ‖ (f32)", orth32, 1e-5),
            check("completeness O_S + O_I = A V W", complete, 1e-10),
            check("basis ‖W Wᵀ − I‖", basis, 1e-10),
            check("apply_right vs materialized product", apply, 1e-10),
            check("isometry of row norms", iso, 1e-10),
            check("basis after perturbation", endo, 1e-10),
            check("propagation symmetry", symmetry, 1e-12),
            check("propagation spectral norm − 1", (spectral - 1.0).max(0.0), 1e-10),
            check("gradient max relative error", grads.max_rel_error, 1e-4),
            check("structurally zero gradients", zero_groups, crate::model::ZERO_GRADIENT_BOUND),
        ],
    })
}

/// Largest singular value of a symmetric matrix by power iteration.
fn spectral_norm(p: &Mat) -> f64 {
    let n = p.rows();
    let mut v = Mat::from_fn(n, 1, |r, _| 1.0 + r as f64 * 0.01);
    let mut estimate = 0.0;
    for _ in 0..500 {
        let w = p.matmul(&v);
        let norm = w.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm / v.frobenius_norm();
        v = w.scale(1.0 / norm);
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_passes_on_a_few_draws() {
        let report = check_invariants(1, 2).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 11);
    }
}
