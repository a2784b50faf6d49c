//! Hypergraph-guided feature embedding.
//!
//! The `[class]` embedding is mapped into one branch per AU vertex, the
//! branch matrix is run through a stack of HGNN layers whose width shrinks to
//! one, and the sigmoid of that final column weights the branches in a sum.
//! A single affine layer turns the aggregate into class logits.

use rand::Rng;

use crate::error::{bail_arg, Result};
use crate::hypergraph::hgnn_conv_with;
use crate::layers::Linear;
use crate::numerics::{argmax, sigmoid, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct HgfeParams {
    /// `FC_i`, one per vertex, each `d × d⁽⁰⁾`.
    pub branches: Vec<Linear>,
    /// `Θ⁽⁰⁾..Θ⁽ᴸ⁻¹⁾`; the last maps to width 1.
    pub theta: Vec<Mat>,
    pub classifier: Linear,
}

impl HgfeParams {
    /// `layer_dims` lists `d⁽⁰⁾, …, d⁽ᴸ⁾` and must end in 1.
    pub fn init(dim: usize, num_vertices: usize, layer_dims: &[usize], num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        validate_layer_dims(layer_dims)?;
        let d0 = layer_dims[0];
        let branches = (0..num_vertices).map(|_| Linear::xavier(dim, d0, rng)).collect();
        let theta = layer_dims
            .windows(2)
            .map(|w| Linear::<f64>::xavier(w[0], w[1], rng).weight)
            .collect();
        Ok(Self { branches, theta, classifier: Linear::xavier(d0, num_classes, rng) })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branches: self.branches.iter().map(|b| Linear::zeros(b.input_dim(), b.output_dim())).collect(),
            theta: self.theta.iter().map(|t| Mat::zeros(t.rows(), t.cols())).collect(),
            classifier: Linear::zeros(self.classifier.input_dim(), self.classifier.output_dim()),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }
}

pub fn validate_layer_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        bail_arg!("HGNN stack needs at least one layer");
    }
    if *dims.last().unwrap() != 1 {
        bail_arg!("HGNN stack must end in width 1, got {dims:?}");
    }
    if dims.windows(2).any(|w| w[1] > w[0]) || dims.contains(&0) {
        bail_arg!("HGNN widths must be positive and non-increasing, got {dims:?}");
    }
    Ok(())
}

/// Row `i` is `e_cls · W_i + b_i`.
pub fn decompose_branches(e_cls: &[f64], params: &HgfeParams) -> Result<Mat> {
    let d0 = params.branch_dim();
    let mut out = Mat::zeros(params.num_vertices(), d0);
    let x = Mat::row_vector(e_cls);
    for (i, fc) in params.branches.iter().enumerate() {
        if fc.input_dim() != e_cls.len() || fc.output_dim() != d0 {
            bail_arg!("branch {i} maps {}→{}, embedding width is {}", fc.input_dim(), fc.output_dim(), e_cls.len());
        }
        out.row_mut(i).copy_from_slice(fc.forward(&x).data());
    }
    Ok(out)
}

/// Sigmoid of the last HGNN layer output: one weight per vertex.
pub fn attention_weights(branches: &Mat, propagation: &Mat, params: &HgfeParams) -> Result<Vec<f64>> {
    Ok(hgnn_forward(branches, propagation, params)?.weights)
}

/// `Σ_i w_i · e_i`.
pub fn aggregate(branches: &Mat, weights: &[f64]) -> Result<Vec<f64>> {
    if branches.rows() != weights.len() {
        bail_arg!("{} branches but {} weights", branches.rows(), weights.len());
    }
    let mut out = vec![0.0; branches.cols()];
    for (i, &w) in weights.iter().enumerate() {
        for (o, &e) in out.iter_mut().zip(branches.row(i)) {
            *o += w * e;
        }
    }
    Ok(out)
}

pub fn classify(aggregate: &[f64], params: &HgfeParams) -> Result<Vec<f64>> {
    if aggregate.len() != params.branch_dim() {
        bail_arg!("aggregate width {} does not match classifier input {}", aggregate.len(), params.branch_dim());
    }
    Ok(params.classifier.forward(&Mat::row_vector(aggregate)).into_data())
}

/// Predicted class: argmax with ties to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    argmax(logits)
}

#[derive(Debug, Clone)]
pub(crate) struct HgnnTrace {
    /// Input to each layer.
    inputs: Vec<Mat>,
    /// `P · E · Θ` before activation, per layer.
    pre: Vec<Mat>,
    pub(crate) weights: Vec<f64>,
}

pub(crate) fn hgnn_forward(branches: &Mat, propagation: &Mat, params: &HgfeParams) -> Result<HgnnTrace> {
    let layers = params.theta.len();
    let mut inputs = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    let mut e = branches.clone();
    for (l, theta) in params.theta.iter().enumerate() {
        let p = hgnn_conv_with(propagation, &e, theta, true)?;
        inputs.push(e);
        e = if l + 1 == layers { p.clone() } else { p.map(|x| x.max(0.0)) };
        pre.push(p);
    }
    if e.cols() != 1 {
        bail_arg!("HGNN stack ends in width {}, expected 1", e.cols());
    }
    let weights = e.data().iter().map(|&x| sigmoid(x)).collect();
    Ok(HgnnTrace { inputs, pre, weights })
}

/// Cached intermediates of the full HGFE path.
#[derive(Debug, Clone)]
pub(crate) struct HgfeCache {
    e_cls: Vec<f64>,
    pub(crate) branches: Mat,
    trace: HgnnTrace,
    pub(crate) aggregate: Vec<f64>,
}

impl HgfeCache {
    pub(crate) fn vertex_weights(&self) -> &[f64] {
        &self.trace.weights
    }
}

pub(crate) fn hgfe_forward(e_cls: &[f64], propagation: &Mat, params: &HgfeParams) -> Result<(Vec<f64>, HgfeCache)> {
    let branches = decompose_branches(e_cls, params)?;
    let trace = hgnn_forward(&branches, propagation, params)?;
    let agg = aggregate(&branches, &trace.weights)?;
    let logits = classify(&agg, params)?;
    Ok((logits, HgfeCache { e_cls: e_cls.to_vec(), branches, trace, aggregate: agg }))
}

/// Returns `dL/de_cls` and accumulates parameter gradients.
pub(crate) fn hgfe_backward(
    params: &HgfeParams,
    propagation: &Mat,
    cache: &HgfeCache,
    grad_logits: &[f64],
    grads: &mut HgfeParams,
) -> Vec<f64> {
    let agg = Mat::row_vector(&cache.aggregate);
    let grad_agg = params.classifier.backward(&agg, &Mat::row_vector(grad_logits), &mut grads.classifier);
    let grad_agg = grad_agg.data();

    let nv = params.num_vertices();
    let weights = &cache.trace.weights;
    // direct path e_i -> w_i e_i, and the weight path through the HGNN stack
    let mut grad_branches = Mat::zeros(nv, params.branch_dim());
    let mut grad_e = Mat::zeros(nv, 1);
    for i in 0..nv {
        let gw: f64 = grad_agg.iter().zip(cache.branches.row(i)).map(|(a, b)| a * b).sum();
        grad_e[(i, 0)] = gw * weights[i] * (1.0 - weights[i]);
        for (g, &a) in grad_branches.row_mut(i).iter_mut().zip(grad_agg) {
            *g += weights[i] * a;
        }
    }
    let layers = params.theta.len();
    for l in (0..layers).rev() {
        let mut grad_pre = grad_e;
        if l + 1 != layers {
            for (g, &p) in grad_pre.data_mut().iter_mut().zip(cache.trace.pre[l].data()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        // pre = P · E · Θ with P symmetric
        let propagated = propagation.matmul(&grad_pre);
        let pe = propagation.matmul(&cache.trace.inputs[l]);
        grads.theta[l].add_assign(&pe.matmul_tn(&grad_pre));
        grad_e = propagated.matmul_nt(&params.theta[l]);
    }
    grad_branches.add_assign(&grad_e);

    let x = Mat::row_vector(&cache.e_cls);
    let mut grad_cls = vec![0.0; cache.e_cls.len()];
    for (i, fc) in params.branches.iter().enumerate() {
        let g = fc.backward(&x, &grad_branches.row_slice(i, i + 1), &mut grads.branches[i]);
        for (o, &v) in grad_cls.iter_mut().zip(g.data()) {
            *o += v;
        }
    }
    grad_cls
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Hypergraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(nv: usize, d: usize, dims: &[usize], m: usize) -> HgfeParams {
        HgfeParams::init(d, nv, dims, m, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn decompose_examples() {
        let p = toy(3, 4, &[2, 1], 3);
        let rows = decompose_branches(&[0.0; 4], &p).unwrap();
        for i in 0..3 {
            assert_eq!(rows.row(i), p.branches[i].bias.data());
        }
        let mut shared = p.clone();
        shared.branches = vec![p.branches[0].clone(); 3];
        let rows = decompose_branches(&[0.3, -1.0, 2.0, 0.5], &shared).unwrap();
        assert_eq!(rows.row(0), rows.row(2));

        let mut hand = toy(2, 2, &[1, 1], 2);
        hand.branches[0] = Linear { weight: Mat::from_rows(&[[1.0], [2.0]]), bias: Mat::from_rows(&[[0.5]]) };
        hand.branches[1] = Linear { weight: Mat::from_rows(&[[-1.0], [3.0]]), bias: Mat::zeros(1, 1) };
        let rows = decompose_branches(&[2.0, 1.0], &hand).unwrap();
        // 2*1 + 1*2 + 0.5 and 2*(-1) + 1*3
        assert_eq!(rows, Mat::from_rows(&[[4.5], [1.0]]));
        assert!(decompose_branches(&[1.0; 3], &hand).is_err());
    }

    #[test]
    fn attention_weight_examples() {
        let mut p = toy(3, 4, &[2, 1], 3);
        p.theta.iter_mut().for_each(|t| *t = Mat::zeros(t.rows(), t.cols()));
        let g = Hypergraph::default_knowledge().restrict(3, 3).unwrap();
        let w = attention_weights(&Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [-1.0, 0.0]]), &g.propagation_matrix(), &p).unwrap();
        assert_eq!(w, vec![0.5; 3]);

        let mut single = toy(1, 2, &[1, 1], 1);
        single.theta = vec![Mat::from_rows(&[[1.0]])];
        let w = attention_weights(&Mat::from_rows(&[[3f64.ln()]]), &Mat::identity(1), &single).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12);

        let mut pair = toy(2, 2, &[1, 1], 1);
        pair.theta = vec![Mat::from_rows(&[[1.0]])];
        let prop = Mat::from_rows(&[[0.5, 0.5], [0.5, 0.5]]);
        let w = attention_weights(&Mat::from_rows(&[[1.0], [0.0]]), &prop, &pair).unwrap();
        for wi in w {
            assert!((wi - sigmoid(0.5)).abs() < 1e-15);
            assert!((wi - 0.6225).abs() < 1e-4);
        }
    }

    #[test]
    fn aggregate_examples() {
        let e = Mat::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        assert_eq!(aggregate(&e, &[0.5, 0.5]).unwrap(), vec![2.0, -1.0]);
        assert_eq!(aggregate(&Mat::from_rows(&[[2.0, 6.0]]), &[0.25]).unwrap(), vec![0.5, 1.5]);
        assert_eq!(aggregate(&Mat::identity(2), &[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
        assert!(aggregate(&e, &[1.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        let mut p = toy(2, 4, &[3, 1], 3);
        p.classifier.bias = Mat::from_rows(&[[0.1, -0.2, 0.3]]);
        assert_eq!(classify(&[0.0; 3], &p).unwrap(), vec![0.1, -0.2, 0.3]);
        p.classifier.weight = Mat::identity(3);
        let logits = classify(&[1.0, 2.0, 3.0], &p).unwrap();
        assert!((logits[0] - 1.1).abs() < 1e-15 && (logits[2] - 3.3).abs() < 1e-15);
        assert_eq!(predict(&[0.2, 0.7, 0.7]), 1);
    }

    #[test]
    fn layer_dims_validation() {
        assert!(validate_layer_dims(&[8, 4, 1]).is_ok());
        assert!(validate_layer_dims(&[8, 4]).is_err());
        assert!(validate_layer_dims(&[4, 8, 1]).is_err());
        assert!(validate_layer_dims(&[1]).is_err());
    }
}
