//! Self-attention orthogonal decomposition encoder.
//!
//! Each block computes a single attention map `A = softmax(Q Kᵀ / √d)` and
//! splits the values into a modality-specific half `V_S` and a
//! modality-invariant half `V_I`. The halves are projected onto the first and
//! last `d/2` rows of a Householder-parameterized orthogonal matrix `W`:
//!
//! ```text
//! O_S = A · V_S · W[..d/2]      O_I = A · V_I · W[d/2..]
//! ```
//!
//! Because the two row blocks of `W` are mutually orthogonal, every row of
//! `O_S` is orthogonal to every row of `O_I` (`O_S O_Iᵀ = 0`) for all inputs
//! and all parameter values. `O_S + O_I = A V W`, which is what the residual
//! path carries forward.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Image;
use crate::error::{bail_arg, Result};
use crate::householder::{split_rows, HouseholderStack};
use crate::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use crate::numerics::{binary_cross_entropy, dot, sigmoid, softmax_rows, Mat, Real};

/// Row of the `[class]` token in a [`TokenSequence`].
pub const CLASS_TOKEN: usize = 0;
/// Row of the `[spectrum]` token in a [`TokenSequence`].
pub const SPECTRUM_TOKEN: usize = 1;
/// Rows before the first patch token.
pub const SPECIAL_TOKENS: usize = 2;

/// Token feature map `Z` (`N × d`), `[class]` and `[spectrum]` first.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub z: Mat,
}

impl TokenSequence {
    pub fn new(z: Mat) -> Result<Self> {
        if z.rows() <= SPECIAL_TOKENS {
            bail_arg!("token sequence needs at least one patch token, got {} rows", z.rows());
        }
        if z.cols() % 2 != 0 {
            bail_arg!("token width must be even, got {}", z.cols());
        }
        Ok(Self { z })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn class_token(&self) -> &[f64] {
        self.z.row(CLASS_TOKEN)
    }

    pub fn spectrum_token(&self) -> &[f64] {
        self.z.row(SPECTRUM_TOKEN)
    }
}

/// Patch projection plus learnable `[class]`/`[spectrum]` tokens and
/// positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub patch: Linear,
    pub class_token: Mat,
    pub spectrum_token: Mat,
    pub position: Mat,
    pub channels: usize,
    pub patch_size: usize,
}

impl EmbeddingParams {
    pub fn init(channels: usize, patch_size: usize, num_patches: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut normal = |rows, cols| Mat::from_fn(rows, cols, |_, _| 0.02 * rng.sample::<f64, _>(StandardNormal));
        let class_token = normal(1, dim);
        let spectrum_token = normal(1, dim);
        let position = normal(num_patches + SPECIAL_TOKENS, dim);
        Self {
            patch: Linear::xavier(channels * patch_size * patch_size, dim, rng),
            class_token,
            spectrum_token,
            position,
            channels,
            patch_size,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dim = self.dim();
        Self {
            patch: Linear::zeros(self.patch.input_dim(), dim),
            class_token: Mat::zeros(1, dim),
            spectrum_token: Mat::zeros(1, dim),
            position: Mat::zeros(self.position.rows(), dim),
            channels: self.channels,
            patch_size: self.patch_size,
        }
    }

    pub fn dim(&self) -> usize {
        self.patch.output_dim()
    }

    pub fn num_tokens(&self) -> usize {
        self.position.rows()
    }
}

/// Flattens non-overlapping `patch × patch` tiles in raster order; each tile
/// is laid out channel-major, then row, then column.
pub fn extract_patches(image: &Image, patch: usize) -> Result<Mat> {
    if patch == 0 || image.height() % patch != 0 || image.width() % patch != 0 {
        bail_arg!("image {}x{} is not divisible into {patch}x{patch} patches", image.height(), image.width());
    }
    let (gh, gw) = (image.height() / patch, image.width() / patch);
    let mut out = Mat::zeros(gh * gw, image.channels() * patch * patch);
    for py in 0..gh {
        for px in 0..gw {
            let row = out.row_mut(py * gw + px);
            let mut k = 0;
            for c in 0..image.channels() {
                for y in 0..patch {
                    for x in 0..patch {
                        row[k] = image.get(c, py * patch + y, px * patch + x);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Maps an image to the token sequence `[class; spectrum; patches · P + b] + pos`.
pub fn embed(image: &Image, params: &EmbeddingParams) -> Result<TokenSequence> {
    if image.channels() != params.channels {
        bail_arg!("image has {} channels, embedding expects {}", image.channels(), params.channels);
    }
    let patches = extract_patches(image, params.patch_size)?;
    if patches.rows() + SPECIAL_TOKENS != params.num_tokens() {
        bail_arg!(
            "image yields {} patches but the positional table holds {} tokens",
            patches.rows(),
            params.num_tokens()
        );
    }
    let projected = params.patch.forward(&patches);
    let mut z = Mat::zeros(params.num_tokens(), params.dim());
    z.row_mut(CLASS_TOKEN).copy_from_slice(params.class_token.data());
    z.row_mut(SPECTRUM_TOKEN).copy_from_slice(params.spectrum_token.data());
    for p in 0..projected.rows() {
        z.row_mut(p + SPECIAL_TOKENS).copy_from_slice(projected.row(p));
    }
    z.add_assign(&params.position);
    TokenSequence::new(z)
}

pub(crate) fn embed_backward(patches: &Mat, params: &EmbeddingParams, grad_z: &Mat, grads: &mut EmbeddingParams) {
    grads.position.add_assign(grad_z);
    for (g, &d) in grads.class_token.data_mut().iter_mut().zip(grad_z.row(CLASS_TOKEN)) {
        *g += d;
    }
    for (g, &d) in grads.spectrum_token.data_mut().iter_mut().zip(grad_z.row(SPECTRUM_TOKEN)) {
        *g += d;
    }
    let grad_patches = grad_z.row_slice(SPECIAL_TOKENS, grad_z.rows());
    params.patch.backward(patches, &grad_patches, &mut grads.patch);
}

/// Query/key/value maps and the orthogonal output basis of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T = f64> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub householder: HouseholderStack<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn init(dim: usize, reflections: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            query: Linear::xavier(dim, dim, rng),
            key: Linear::xavier(dim, dim, rng),
            value: Linear::xavier(dim, dim, rng),
            householder: HouseholderStack::random(dim, reflections, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn cast<U: Real>(&self) -> AttentionParams<U> {
        AttentionParams {
            query: self.query.cast(),
            key: self.key.cast(),
            value: self.value.cast(),
            householder: self.householder.cast(),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dim();
        for (name, l) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            if l.input_dim() != d || l.output_dim() != d || l.bias.cols() != d {
                bail_arg!("{name} map must be {d}x{d}");
            }
        }
        if self.householder.dim() != d {
            bail_arg!("householder dimension {} does not match model width {d}", self.householder.dim());
        }
        Ok(())
    }
}

/// Result of [`dual_head_attention`].
#[derive(Debug, Clone)]
pub struct DualHeadOutput<T = f64> {
    /// Modality-specific output `O_S`.
    pub specific: Mat<T>,
    /// Modality-invariant output `O_I`.
    pub invariant: Mat<T>,
    /// Attention map `softmax(Q Kᵀ / √d)`.
    pub attention: Mat<T>,
}

impl<T: Real> DualHeadOutput<T> {
    /// `‖O_S O_Iᵀ‖_max`.
    pub fn orthogonality_residual(&self) -> T {
        self.specific.matmul_nt(&self.invariant).max_abs()
    }

    /// `O_S + O_I`.
    pub fn combined(&self) -> Mat<T> {
        self.specific.add(&self.invariant)
    }
}

/// Dual-head attention with orthogonal value projection.
pub fn dual_head_attention<T: Real>(z: &Mat<T>, params: &AttentionParams<T>) -> Result<DualHeadOutput<T>> {
    let basis = params.householder.materialize();
    Ok(attention_with_basis(z, params, &basis)?.0)
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache<T = f64> {
    input: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v_specific: Mat<T>,
    v_invariant: Mat<T>,
    p_specific: Mat<T>,
    p_invariant: Mat<T>,
}

pub(crate) fn attention_with_basis<T: Real>(
    z: &Mat<T>,
    params: &AttentionParams<T>,
    basis: &Mat<T>,
) -> Result<(DualHeadOutput<T>, AttentionCache<T>)> {
    params.check_shapes()?;
    let d = params.dim();
    if z.cols() != d {
        bail_arg!("token width {} does not match attention width {d}", z.cols());
    }
    if d % 2 != 0 {
        bail_arg!("attention width must be even, got {d}");
    }
    if basis.shape() != (d, d) {
        bail_arg!("orthogonal basis must be {d}x{d}");
    }
    let q = params.query.forward(z);
    let k = params.key.forward(z);
    let v = params.value.forward(z);
    let scale = T::one() / T::lit(d as f64).sqrt();
    let attention = softmax_rows(&q.matmul_nt(&k).scale(scale));

    let (top, bottom) = split_rows(basis)?;
    let v_specific = v.col_slice(0, d / 2);
    let v_invariant = v.col_slice(d / 2, d);
    let p_specific = v_specific.matmul(&top);
    let p_invariant = v_invariant.matmul(&bottom);
    let out = DualHeadOutput {
        specific: attention.matmul(&p_specific),
        invariant: attention.matmul(&p_invariant),
        attention,
    };
    let cache = AttentionCache { input: z.clone(), q, k, v_specific, v_invariant, p_specific, p_invariant };
    Ok((out, cache))
}

/// Backward pass of [`attention_with_basis`]. Returns `dL/dZ` and accumulates
/// into `grads` (q/k/v maps) and `grad_basis` (`dL/dW`).
pub(crate) fn attention_backward(
    params: &AttentionParams,
    basis: &Mat,
    out: &DualHeadOutput,
    cache: &AttentionCache,
    grad_specific: &Mat,
    grad_invariant: &Mat,
    grads: &mut AttentionParams,
    grad_basis: &mut Mat,
) -> Mat {
    let d = params.dim();
    let h = d / 2;
    let a = &out.attention;

    let mut grad_a = grad_specific.matmul_nt(&cache.p_specific);
    grad_a.add_assign(&grad_invariant.matmul_nt(&cache.p_invariant));
    let grad_p_specific = a.matmul_tn(grad_specific);
    let grad_p_invariant = a.matmul_tn(grad_invariant);

    let (top, bottom) = split_rows(basis).expect("even basis");
    let grad_v_specific = grad_p_specific.matmul_nt(&top);
    let grad_v_invariant = grad_p_invariant.matmul_nt(&bottom);
    let grad_top = cache.v_specific.matmul_tn(&grad_p_specific);
    let grad_bottom = cache.v_invariant.matmul_tn(&grad_p_invariant);
    for r in 0..h {
        for (g, &x) in grad_basis.row_mut(r).iter_mut().zip(grad_top.row(r)) {
            *g += x;
        }
        for (g, &x) in grad_basis.row_mut(r + h).iter_mut().zip(grad_bottom.row(r)) {
            *g += x;
        }
    }
    let grad_v = Mat::from_fn(a.rows(), d, |r, c| {
        if c < h {
            grad_v_specific[(r, c)]
        } else {
            grad_v_invariant[(r, c - h)]
        }
    });

    // softmax backward, then the 1/√d scale
    let scale = 1.0 / (d as f64).sqrt();
    let mut grad_scores = Mat::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let inner = dot(grad_a.row(r), a.row(r));
        for c in 0..a.cols() {
            grad_scores[(r, c)] = a[(r, c)] * (grad_a[(r, c)] - inner) * scale;
        }
    }
    let grad_q = grad_scores.matmul(&cache.k);
    let grad_k = grad_scores.matmul_tn(&cache.q);

    let mut grad_z = params.query.backward(&cache.input, &grad_q, &mut grads.query);
    grad_z.add_assign(&params.key.backward(&cache.input, &grad_k, &mut grads.key));
    grad_z.add_assign(&params.value.backward(&cache.input, &grad_v, &mut grads.value));
    grad_z
}

/// Parameters of one pre-normalization encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct SaodBlockParams {
    pub attention: AttentionParams,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl SaodBlockParams {
    pub fn init(dim: usize, ffn_dim: usize, reflections: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            attention: AttentionParams::init(dim, reflections, rng)?,
            norm1: LayerNorm::new(dim),
            norm2: LayerNorm::new(dim),
            ffn_in: Linear::xavier(dim, ffn_dim, rng),
            ffn_out: Linear::xavier(ffn_dim, dim, rng),
        })
    }

    /// Gradient container with the same shapes. The Householder slot holds
    /// `dL/dv` per reflection.
    pub fn zeros_like(&self) -> Self {
        let d = self.attention.dim();
        let ffn = self.ffn_in.output_dim();
        Self {
            attention: AttentionParams {
                query: Linear::zeros(d, d),
                key: Linear::zeros(d, d),
                value: Linear::zeros(d, d),
                householder: HouseholderStack::gradient_slot(self.attention.householder.len(), d),
            },
            norm1: LayerNorm::zeros(d),
            norm2: LayerNorm::zeros(d),
            ffn_in: Linear::zeros(d, ffn),
            ffn_out: Linear::zeros(ffn, d),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub z: Mat,
    pub specific: Mat,
    pub invariant: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    norm1: LayerNormCache,
    attention_out: DualHeadOutput,
    attention: AttentionCache,
    norm2: LayerNormCache,
    norm2_out: Mat,
    hidden_pre: Mat,
    hidden: Mat,
}

/// `Z' = Z + O_S + O_I` over `LN₁(Z)`, then `Z_out = Z' + FFN(LN₂(Z'))`.
pub fn encoder_block(z: &Mat, params: &SaodBlockParams) -> Result<BlockOutput> {
    let basis = params.attention.householder.materialize();
    Ok(encoder_block_cached(z, params, &basis)?.0)
}

pub(crate) fn encoder_block_cached(z: &Mat, params: &SaodBlockParams, basis: &Mat) -> Result<(BlockOutput, BlockCache)> {
    let (normed, norm1) = params.norm1.forward_cached(z);
    let (attention_out, attention) = attention_with_basis(&normed, &params.attention, basis)?;
    let mut mid = z.add(&attention_out.specific);
    mid.add_assign(&attention_out.invariant);

    let (norm2_out, norm2) = params.norm2.forward_cached(&mid);
    let hidden_pre = params.ffn_in.forward(&norm2_out);
    let hidden = hidden_pre.map(gelu);
    let mut z_out = params.ffn_out.forward(&hidden);
    z_out.add_assign(&mid);

    let output = BlockOutput {
        z: z_out,
        specific: attention_out.specific.clone(),
        invariant: attention_out.invariant.clone(),
    };
    Ok((output, BlockCache { norm1, attention_out, attention, norm2, norm2_out, hidden_pre, hidden }))
}

/// Backward pass through one block. `grad_specific`/`grad_invariant` carry
/// gradients from heads that read the block's `O_S`/`O_I` directly.
pub(crate) fn encoder_block_backward(
    params: &SaodBlockParams,
    basis: &Mat,
    cache: &BlockCache,
    grad_out: &Mat,
    grad_specific: Option<&Mat>,
    grad_invariant: Option<&Mat>,
    grads: &mut SaodBlockParams,
    grad_basis: &mut Mat,
) -> Mat {
    // FFN branch
    let grad_hidden = params.ffn_out.backward(&cache.hidden, grad_out, &mut grads.ffn_out);
    let mut grad_hidden_pre = grad_hidden;
    for (g, &x) in grad_hidden_pre.data_mut().iter_mut().zip(cache.hidden_pre.data()) {
        *g *= gelu_grad(x);
    }
    let grad_norm2_out = params.ffn_in.backward(&cache.norm2_out, &grad_hidden_pre, &mut grads.ffn_in);
    let mut grad_mid = grad_out.clone();
    grad_mid.add_assign(&params.norm2.backward(&cache.norm2, &grad_norm2_out, &mut grads.norm2));

    // attention branch
    let mut grad_s = grad_mid.clone();
    let mut grad_i = grad_mid.clone();
    if let Some(g) = grad_specific {
        grad_s.add_assign(g);
    }
    if let Some(g) = grad_invariant {
        grad_i.add_assign(g);
    }
    let grad_normed = attention_backward(
        &params.attention,
        basis,
        &cache.attention_out,
        &cache.attention,
        &grad_s,
        &grad_i,
        &mut grads.attention,
        grad_basis,
    );
    let mut grad_z = grad_mid;
    grad_z.add_assign(&params.norm1.backward(&cache.norm1, &grad_normed, &mut grads.norm1));
    grad_z
}

/// Linear + sigmoid head over the `[spectrum]` token representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumHead {
    pub weight: Mat,
    pub bias: Mat,
}

impl SpectrumHead {
    pub fn zeros(dim: usize) -> Self {
        Self { weight: Mat::zeros(1, dim), bias: Mat::zeros(1, 1) }
    }

    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (1.0 / dim as f64).sqrt();
        Self { weight: Mat::from_fn(1, dim, |_, _| rng.gen_range(-limit..limit)), bias: Mat::zeros(1, 1) }
    }

    /// `sigmoid(w · row + b)`.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(dot(self.weight.data(), row) + self.bias.data()[0])
    }
}

/// Spectrum score read from the `[spectrum]` row of `O_S`.
pub fn spectrum_head(specific: &Mat, head: &SpectrumHead) -> Result<f64> {
    if specific.rows() <= SPECTRUM_TOKEN || specific.cols() != head.weight.cols() {
        bail_arg!("spectrum head expects at least 2 rows of width {}", head.weight.cols());
    }
    Ok(head.score_row(specific.row(SPECTRUM_TOKEN)))
}

/// Binary cross-entropy of the spectrum score against the modality label.
pub fn spectrum_loss(score: f64, modality: crate::data::Modality) -> f64 {
    binary_cross_entropy(score, modality.label())
}
