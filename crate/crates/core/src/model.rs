//! Full network: patch embedding → SAOD encoder stack → spectrum head on the
//! final `O_S` and the HGFE path on the final `O_I` → joint loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Image, Modality};
use crate::error::{bail_arg, Error, Result};
use crate::hgfe::{hgfe_backward, hgfe_forward, validate_layer_dims, HgfeCache, HgfeParams};
use crate::householder::HouseholderTape;
use crate::hypergraph::Hypergraph;
use crate::layers::{LayerNorm, LayerNormCache};
use crate::numerics::{
    binary_cross_entropy, cross_entropy_loss, grad_check, softmax_in_place, GradCheckReport, GradGroup, Mat, BCE_CLAMP,
};
use crate::saod::{
    dual_head_attention, embed, embed_backward, encoder_block, encoder_block_backward, encoder_block_cached, extract_patches, BlockCache, EmbeddingParams,
    SaodBlockParams, SpectrumHead, CLASS_TOKEN, SPECIAL_TOKENS, SPECTRUM_TOKEN,
};

/// Balance between expression and spectrum losses.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub ffn_ratio: usize,
    /// Householder reflections per block; `None` means `dim`.
    pub reflections: Option<usize>,
    /// HGNN widths `d⁽⁰⁾ … 1`.
    pub hgfe_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            patch_size: 4,
            dim: 64,
            depth: 4,
            ffn_ratio: 4,
            reflections: None,
            hgfe_dims: vec![64, 16, 1],
            num_classes: 6,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + SPECIAL_TOKENS
    }

    pub fn reflections(&self) -> usize {
        self.reflections.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            bail_arg!("model width must be positive and even, got {}", self.dim);
        }
        if self.depth == 0 {
            bail_arg!("depth must be at least 1");
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            bail_arg!("image size {} is not a multiple of patch size {}", self.image_size, self.patch_size);
        }
        if self.channels == 0 || self.ffn_ratio == 0 || self.num_classes < 2 {
            bail_arg!("channels and ffn ratio must be positive and at least two classes are needed");
        }
        if self.reflections() > self.dim {
            bail_arg!("at most {} reflections allowed", self.dim);
        }
        validate_layer_dims(&self.hgfe_dims)
    }
}

/// How optimizers treat a tensor. Decoupled weight decay applies to
/// [`ParamKind::Weight`] only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    /// Householder vectors. The basis they define is invariant to their
    /// scale, so decay would only shrink them toward the norm guard.
    Reflection,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a Mat,
    pub kind: ParamKind,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub value: &'a mut Mat,
    pub kind: ParamKind,
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NferFormerParams {
    pub embedding: EmbeddingParams,
    pub blocks: Vec<SaodBlockParams>,
    pub final_norm: LayerNorm,
    pub spectrum_head: SpectrumHead,
    pub hgfe: HgfeParams,
}

macro_rules! visit_params {
    ($self:ident, $push:ident) => {{
        use ParamKind::*;
        $push("embedding.patch.weight".into(), ref_of!($self.embedding.patch.weight), Weight);
        $push("embedding.patch.bias".into(), ref_of!($self.embedding.patch.bias), Bias);
        $push("embedding.class_token".into(), ref_of!($self.embedding.class_token), Weight);
        $push("embedding.spectrum_token".into(), ref_of!($self.embedding.spectrum_token), Weight);
        $push("embedding.position".into(), ref_of!($self.embedding.position), Weight);
        for (b, block) in iter_of!($self.blocks).enumerate() {
            let p = format!("blocks.{b}");
            $push(format!("{p}.norm1.gamma"), ref_of!(block.norm1.gamma), Norm);
            $push(format!("{p}.norm1.beta"), ref_of!(block.norm1.beta), Norm);
            $push(format!("{p}.attention.query.weight"), ref_of!(block.attention.query.weight), Weight);
            $push(format!("{p}.attention.query.bias"), ref_of!(block.attention.query.bias), Bias);
            $push(format!("{p}.attention.key.weight"), ref_of!(block.attention.key.weight), Weight);
            $push(format!("{p}.attention.key.bias"), ref_of!(block.attention.key.bias), Bias);
            $push(format!("{p}.attention.value.weight"), ref_of!(block.attention.value.weight), Weight);
            $push(format!("{p}.attention.value.bias"), ref_of!(block.attention.value.bias), Bias);
            $push(format!("{p}.attention.householder"), vectors_of!(block.attention.householder), Reflection);
            $push(format!("{p}.norm2.gamma"), ref_of!(block.norm2.gamma), Norm);
            $push(format!("{p}.norm2.beta"), ref_of!(block.norm2.beta), Norm);
            $push(format!("{p}.ffn_in.weight"), ref_of!(block.ffn_in.weight), Weight);
            $push(format!("{p}.ffn_in.bias"), ref_of!(block.ffn_in.bias), Bias);
            $push(format!("{p}.ffn_out.weight"), ref_of!(block.ffn_out.weight), Weight);
            $push(format!("{p}.ffn_out.bias"), ref_of!(block.ffn_out.bias), Bias);
        }
        $push("final_norm.gamma".into(), ref_of!($self.final_norm.gamma), Norm);
        $push("final_norm.beta".into(), ref_of!($self.final_norm.beta), Norm);
        $push("spectrum_head.weight".into(), ref_of!($self.spectrum_head.weight), Weight);
        $push("spectrum_head.bias".into(), ref_of!($self.spectrum_head.bias), Bias);
        for (i, fc) in iter_of!($self.hgfe.branches).enumerate() {
            $push(format!("hgfe.branch.{i}.weight"), ref_of!(fc.weight), Weight);
            $push(format!("hgfe.branch.{i}.bias"), ref_of!(fc.bias), Bias);
        }
        for (l, theta) in iter_of!($self.hgfe.theta).enumerate() {
            $push(format!("hgfe.theta.{l}"), ref_of!(*theta), Weight);
        }
        $push("hgfe.classifier.weight".into(), ref_of!($self.hgfe.classifier.weight), Weight);
        $push("hgfe.classifier.bias".into(), ref_of!($self.hgfe.classifier.bias), Bias);
    }};
}

impl NferFormerParams {
    pub fn init(config: &ModelConfig, num_vertices: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let embedding = EmbeddingParams::init(config.channels, config.patch_size, config.num_patches(), d, rng);
        let blocks = (0..config.depth)
            .map(|_| SaodBlockParams::init(d, d * config.ffn_ratio, config.reflections(), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding,
            blocks,
            final_norm: LayerNorm::new(d),
            spectrum_head: SpectrumHead::init(d, rng),
            hgfe: HgfeParams::init(d, num_vertices, &config.hgfe_dims, config.num_classes, rng)?,
        })
    }

    /// Zero tensors of identical shapes, used as gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: self.embedding.zeros_like(),
            blocks: self.blocks.iter().map(SaodBlockParams::zeros_like).collect(),
            final_norm: LayerNorm::zeros(self.final_norm.gamma.cols()),
            spectrum_head: SpectrumHead::zeros(self.spectrum_head.weight.cols()),
            hgfe: self.hgfe.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.dim()
    }

    /// All tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        let mut push = |name, value, kind| out.push(ParamRef { name, value, kind });
        macro_rules! ref_of {
            ($e:expr) => {
                &$e
            };
        }
        macro_rules! vectors_of {
            ($e:expr) => {
                $e.vectors()
            };
        }
        macro_rules! iter_of {
            ($e:expr) => {
                $e.iter()
            };
        }
        visit_params!(self, push);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        let mut push = |name, value, kind| out.push(ParamMut { name, value, kind });
        macro_rules! ref_of {
            ($e:expr) => {
                &mut $e
            };
        }
        macro_rules! vectors_of {
            ($e:expr) => {
                $e.vectors_mut()
            };
        }
        macro_rules! iter_of {
            ($e:expr) => {
                $e.iter_mut()
            };
        }
        visit_params!(self, push);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.value.data().len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.value.add_assign(src.value);
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.value.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.value.is_finite())
    }

    /// Every scalar in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.value.data().iter().copied()).collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            bail_arg!("expected {} scalars, got {}", self.num_scalars(), flat.len());
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.value.data().len();
            t.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Everything [`NferFormer::forward`] exposes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// Spectrum score in (0, 1); VIS is the positive class.
    pub spectrum_score: f64,
    /// Normalized `[class]` row of the final `O_I`.
    pub e_cls: Vec<f64>,
    pub e_agg: Vec<f64>,
    pub vertex_weights: Vec<f64>,
    /// Final block `O_S`.
    pub specific: Mat,
    /// Final block `O_I`.
    pub invariant: Mat,
}

impl ForwardOutput {
    pub fn prediction(&self) -> usize {
        crate::hgfe::predict(&self.logits)
    }

    pub fn orthogonality_residual(&self) -> f64 {
        self.specific.matmul_nt(&self.invariant).max_abs()
    }
}

/// Loss components for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub classification: f64,
    pub spectrum: f64,
    pub total: f64,
}

/// `L = CE(logits, y) + λ · BCE(score, l)`.
pub fn joint_loss(out: &ForwardOutput, expression: usize, modality: Modality, lambda: f64) -> Result<f64> {
    Ok(loss_parts(out, expression, modality, lambda)?.total)
}

pub fn loss_parts(out: &ForwardOutput, expression: usize, modality: Modality, lambda: f64) -> Result<LossParts> {
    if !(lambda >= 0.0) {
        bail_arg!("λ must be non-negative, got {lambda}");
    }
    let classification = cross_entropy_loss(&out.logits, expression)?;
    let spectrum = binary_cross_entropy(out.spectrum_score, modality.label());
    let total = if lambda == 0.0 { classification } else { classification + lambda * spectrum };
    Ok(LossParts { classification, spectrum, total })
}

/// Orthogonal bases materialized once per parameter state and shared by
/// every sample evaluated against it.
pub struct Prepared {
    bases: Vec<Mat>,
    tapes: Vec<HouseholderTape>,
}

/// Per-sample gradient before the Householder chain rule is applied: the
/// basis gradients `dL/dW` are summed across a batch first.
#[derive(Debug, Clone)]
pub struct PartialGradients {
    pub params: NferFormerParams,
    pub bases: Vec<Mat>,
}

impl PartialGradients {
    pub fn accumulate(&mut self, other: &Self) {
        self.params.accumulate(&other.params);
        for (a, b) in self.bases.iter_mut().zip(&other.bases) {
            a.add_assign(b);
        }
    }
}

pub struct ForwardCache {
    patches: Mat,
    blocks: Vec<BlockCache>,
    head_norm: LayerNormCache,
    head_rows: Mat,
    hgfe: HgfeCache,
}

/// The network bound to its knowledge hypergraph.
#[derive(Debug, Clone, PartialEq)]
pub struct NferFormer {
    pub config: ModelConfig,
    pub hypergraph: Hypergraph,
    pub params: NferFormerParams,
    propagation: Mat,
}

impl NferFormer {
    pub fn new(config: ModelConfig, hypergraph: Hypergraph, params: NferFormerParams) -> Result<Self> {
        config.validate()?;
        if params.hgfe.num_vertices() != hypergraph.num_vertices() {
            bail_arg!(
                "{} HGFE branches for a hypergraph with {} vertices",
                params.hgfe.num_vertices(),
                hypergraph.num_vertices()
            );
        }
        if params.dim() != config.dim || params.blocks.len() != config.depth {
            bail_arg!("parameters do not match the model config");
        }
        let propagation = hypergraph.propagation_matrix();
        Ok(Self { config, hypergraph, params, propagation })
    }

    /// Random initialization from `seed`.
    pub fn init(config: ModelConfig, hypergraph: Hypergraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NferFormerParams::init(&config, hypergraph.num_vertices(), &mut rng)?;
        Self::new(config, hypergraph, params)
    }

    pub fn propagation(&self) -> &Mat {
        &self.propagation
    }

    pub fn prepare(&self) -> Prepared {
        let d = self.config.dim;
        let mut bases = Vec::with_capacity(self.params.blocks.len());
        let mut tapes = Vec::with_capacity(self.params.blocks.len());
        for block in &self.params.blocks {
            let (w, tape) = block.attention.householder.apply_right_taped(&Mat::identity(d)).expect("square basis");
            bases.push(w);
            tapes.push(tape);
        }
        Prepared { bases, tapes }
    }

    pub fn forward(&self, image: &Image) -> Result<ForwardOutput> {
        Ok(self.forward_prepared(&self.prepare(), image)?.0)
    }

    pub fn forward_prepared(&self, prep: &Prepared, image: &Image) -> Result<(ForwardOutput, ForwardCache)> {
        let p = &self.params;
        if image.height() != self.config.image_size || image.width() != self.config.image_size {
            bail_arg!(
                "image is {}x{}, model expects {}x{}",
                image.height(),
                image.width(),
                self.config.image_size,
                self.config.image_size
            );
        }
        let patches = extract_patches(image, self.config.patch_size)?;
        let mut z = embed(image, &p.embedding)?.z;
        let mut caches = Vec::with_capacity(p.blocks.len());
        let mut last = None;
        for (block, basis) in p.blocks.iter().zip(&prep.bases) {
            let (out, cache) = encoder_block_cached(&z, block, basis)?;
            caches.push(cache);
            z = out.z.clone();
            last = Some(out);
        }
        let last = last.expect("depth >= 1");

        let mut head_rows = Mat::zeros(2, self.config.dim);
        head_rows.row_mut(0).copy_from_slice(last.specific.row(SPECTRUM_TOKEN));
        head_rows.row_mut(1).copy_from_slice(last.invariant.row(CLASS_TOKEN));
        let (normed, head_norm) = p.final_norm.forward_cached(&head_rows);
        let spectrum_score = p.spectrum_head.score_row(normed.row(0));
        let e_cls = normed.row(1).to_vec();
        let (logits, hgfe) = hgfe_forward(&e_cls, &self.propagation, &p.hgfe)?;

        let out = ForwardOutput {
            logits,
            spectrum_score,
            e_cls,
            e_agg: hgfe.aggregate.clone(),
            vertex_weights: hgfe.vertex_weights().to_vec(),
            specific: last.specific,
            invariant: last.invariant,
        };
        Ok((out, ForwardCache { patches, blocks: caches, head_norm, head_rows: normed, hgfe }))
    }

    /// Backward pass for one sample of the joint loss.
    pub fn backward_prepared(
        &self,
        prep: &Prepared,
        out: &ForwardOutput,
        cache: &ForwardCache,
        expression: usize,
        modality: Modality,
        lambda: f64,
    ) -> Result<PartialGradients> {
        let p = &self.params;
        let d = self.config.dim;
        if expression >= out.logits.len() {
            bail_arg!("label {expression} out of range for {} classes", out.logits.len());
        }
        let mut grads = p.zeros_like();

        let mut grad_logits = out.logits.clone();
        softmax_in_place(&mut grad_logits);
        grad_logits[expression] -= 1.0;

        // BCE through the sigmoid collapses to (score - label) unless clamped
        let s = out.spectrum_score;
        let grad_pre_score = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&s) && lambda != 0.0 {
            lambda * (s - f64::from(modality.label()))
        } else {
            0.0
        };
        let mut grad_head_rows = Mat::zeros(2, d);
        let spec_row = cache.head_rows.row(0);
        for (g, &x) in grads.spectrum_head.weight.data_mut().iter_mut().zip(spec_row) {
            *g += grad_pre_score * x;
        }
        grads.spectrum_head.bias.data_mut()[0] += grad_pre_score;
        for (g, &w) in grad_head_rows.row_mut(0).iter_mut().zip(p.spectrum_head.weight.data()) {
            *g = grad_pre_score * w;
        }

        let grad_cls = hgfe_backward(&p.hgfe, &self.propagation, &cache.hgfe, &grad_logits, &mut grads.hgfe);
        grad_head_rows.row_mut(1).copy_from_slice(&grad_cls);
        let grad_rows = p.final_norm.backward(&cache.head_norm, &grad_head_rows, &mut grads.final_norm);

        let n = self.config.num_tokens();
        let mut grad_specific = Mat::zeros(n, d);
        grad_specific.row_mut(SPECTRUM_TOKEN).copy_from_slice(grad_rows.row(0));
        let mut grad_invariant = Mat::zeros(n, d);
        grad_invariant.row_mut(CLASS_TOKEN).copy_from_slice(grad_rows.row(1));

        let mut bases: Vec<Mat> = prep.bases.iter().map(|b| Mat::zeros(b.rows(), b.cols())).collect();
        let mut grad_z = Mat::zeros(n, d);
        let depth = p.blocks.len();
        for b in (0..depth).rev() {
            let heads = b + 1 == depth;
            grad_z = encoder_block_backward(
                &p.blocks[b],
                &prep.bases[b],
                &cache.blocks[b],
                &grad_z,
                heads.then_some(&grad_specific),
                heads.then_some(&grad_invariant),
                &mut grads.blocks[b],
                &mut bases[b],
            );
        }
        embed_backward(&cache.patches, &p.embedding, &grad_z, &mut grads.embedding);
        Ok(PartialGradients { params: grads, bases })
    }

    /// Converts summed basis gradients into Householder vector gradients.
    pub fn finish_gradients(&self, prep: &Prepared, mut partial: PartialGradients) -> NferFormerParams {
        for (b, block) in self.params.blocks.iter().enumerate() {
            let (_, dv) = block.attention.householder.backward(&prep.tapes[b], &partial.bases[b]);
            partial.params.blocks[b].attention.householder.vectors_mut().add_assign(&dv);
        }
        partial.params
    }

    /// Largest `‖O_S O_Iᵀ‖_max` over all blocks for `image`, evaluated in
    /// double and in single precision.
    pub fn orthogonality_residuals(&self, image: &Image) -> Result<(f64, f64)> {
        let mut z = embed(image, &self.params.embedding)?.z;
        let (mut double, mut single) = (0.0_f64, 0.0_f64);
        for block in &self.params.blocks {
            let normed = block.norm1.forward(&z);
            double = double.max(dual_head_attention(&normed, &block.attention)?.orthogonality_residual());
            let narrow = dual_head_attention(&normed.cast::<f32>(), &block.attention.cast::<f32>())?;
            single = single.max(f64::from(narrow.orthogonality_residual()));
            z = encoder_block(&z, block)?.z;
        }
        Ok((double, single))
    }

    /// Gradient of the joint loss for one sample over every parameter.
    pub fn gradients(&self, image: &Image, expression: usize, modality: Modality, lambda: f64) -> Result<(LossParts, NferFormerParams)> {
        let prep = self.prepare();
        let (out, cache) = self.forward_prepared(&prep, image)?;
        let parts = loss_parts(&out, expression, modality, lambda)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("joint loss ({parts:?})")));
        }
        let partial = self.backward_prepared(&prep, &out, &cache, expression, modality, lambda)?;
        Ok((parts, self.finish_gradients(&prep, partial)))
    }
}

/// Absolute bound for gradients that vanish identically. Key biases add the
/// same score to every key of a query row, which softmax cancels.
pub const ZERO_GRADIENT_BOUND: f64 = 1e-9;

/// Central-difference check of every parameter group on one sample.
pub fn check_model_gradients(
    model: &NferFormer,
    image: &Image,
    expression: usize,
    modality: Modality,
    lambda: f64,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.gradients(image, expression, modality, lambda)?;
    let mut groups: Vec<GradGroup> = model
        .params
        .tensors()
        .into_iter()
        .zip(grads.tensors())
        .map(|(p, g)| {
            let group = GradGroup::new(p.name.clone(), p.value.data().to_vec(), g.value.data().to_vec());
            if p.name.ends_with("attention.key.bias") {
                group.structurally_zero(ZERO_GRADIENT_BOUND)
            } else {
                group
            }
        })
        .collect();
    let mut probe = model.clone();
    let mut flat = Vec::with_capacity(model.params.num_scalars());
    grad_check(&mut groups, eps, tolerance, |groups| {
        flat.clear();
        flat.extend(groups.iter().flat_map(|g| g.values.iter().copied()));
        probe.params.set_flat(&flat).expect("same layout");
        probe
            .forward(image)
            .and_then(|out| joint_loss(&out, expression, modality, lambda))
            .unwrap_or(f64::NAN)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NferFormer {
        let cfg = ModelConfig {
            image_size: 4,
            channels: 1,
            patch_size: 4,
            dim: 4,
            depth: 1,
            ffn_ratio: 2,
            reflections: None,
            hgfe_dims: vec![2, 1],
            num_classes: 3,
        };
        let g = Hypergraph::default_knowledge().restrict(3, 3).unwrap();
        NferFormer::init(cfg, g, 11).unwrap()
    }

    #[test]
    fn joint_loss_examples() {
        let model = toy();
        let img = Image::from_fn(1, 4, 4, |_, y, x| ((y + x) % 3) as f64 / 2.0);
        let mut out = model.forward(&img).unwrap();
        assert_eq!(out.logits.len(), 3);
        assert!(out.spectrum_score > 0.0 && out.spectrum_score < 1.0);
        assert_eq!(joint_loss(&out, 1, Modality::Nir, 0.0).unwrap(), cross_entropy_loss(&out.logits, 1).unwrap());

        out.logits = vec![0.0; 6];
        out.spectrum_score = 0.5;
        let l = joint_loss(&out, 4, Modality::Vis, 0.1).unwrap();
        assert!((l - (6f64.ln() + 0.1 * 2f64.ln())).abs() < 1e-12);
        assert!((l - 1.861074).abs() < 1e-6);
        assert!(joint_loss(&out, 6, Modality::Vis, 0.1).is_err());
        assert!(joint_loss(&out, 0, Modality::Vis, -1.0).is_err());
    }

    #[test]
    fn lambda_zero_leaves_spectrum_head_untouched() {
        let model = toy();
        let img = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f64 / 16.0);
        let (_, g) = model.gradients(&img, 2, Modality::Vis, 0.0).unwrap();
        assert!(g.spectrum_head.weight.data().iter().all(|&x| x == 0.0));
        assert_eq!(g.spectrum_head.bias.data()[0], 0.0);
        let (_, g2) = model.gradients(&img, 2, Modality::Vis, 0.0).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn full_model_gradients() {
        let cfg = ModelConfig {
            image_size: 4,
            channels: 1,
            patch_size: 4,
            dim: 4,
            depth: 2,
            ffn_ratio: 2,
            reflections: Some(3),
            hgfe_dims: vec![2, 2, 1],
            num_classes: 3,
        };
        let g = Hypergraph::default_knowledge().restrict(3, 3).unwrap();
        let model = NferFormer::init(cfg, g, 5).unwrap();
        let img = Image::from_fn(1, 4, 4, |_, y, x| ((y * 4 + x) * 7 % 16) as f64 / 16.0);
        let report = check_model_gradients(&model, &img, 1, Modality::Nir, 0.3, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn tensor_names_are_unique() {
        let mut model = toy();
        let names: Vec<String> = model.params.tensors().into_iter().map(|t| t.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(model.params.tensors_mut().len(), names.len());
    }
}
