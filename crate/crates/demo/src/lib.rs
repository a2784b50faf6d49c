//! WebAssembly bindings for `www/index.html`. Matrices cross the boundary
//! as row-major `Float64Array`s with their shape exposed separately.

use nfer_core::harness::schedule::{one_cycle, ScheduleConfig};
use nfer_core::hypergraph::{hgnn_conv_with, Hypergraph};
use nfer_core::saod::{dual_head_attention, AttentionParams};
use nfer_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_error(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// One random dual-head attention evaluation.
#[wasm_bindgen]
pub struct Decomposition {
    tokens: usize,
    dim: usize,
    specific: Vec<f64>,
    invariant: Vec<f64>,
    attention: Vec<f64>,
    residual: f64,
    completeness: f64,
}

#[wasm_bindgen]
impl Decomposition {
    /// Draws parameters and `tokens` Gaussian tokens of width `dim` from `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, tokens: usize, dim: usize) -> Result<Decomposition, JsError> {
        if tokens == 0 || tokens > 128 || dim == 0 || dim > 128 {
            return Err(JsError::new("tokens and width must be between 1 and 128"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttentionParams::init(dim, dim, &mut rng).map_err(js_error)?;
        let z = Mat::from_fn(tokens, dim, |_, _| rng.gen_range(-1.0..1.0) * 1.7);
        let out = dual_head_attention(&z, &params).map_err(js_error)?;
        let v = params.value.forward(&z);
        let full = out.attention.matmul(&v).matmul(&params.householder.materialize());
        Ok(Self {
            tokens,
            dim,
            residual: out.orthogonality_residual(),
            completeness: out.combined().sub(&full).max_abs(),
            specific: out.specific.into_data(),
            invariant: out.invariant.into_data(),
            attention: out.attention.into_data(),
        })
    }

    #[wasm_bindgen(getter)]
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    #[wasm_bindgen(getter)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `O_S`, tokens × dim.
    pub fn specific(&self) -> Vec<f64> {
        self.specific.clone()
    }

    /// `O_I`, tokens × dim.
    pub fn invariant(&self) -> Vec<f64> {
        self.invariant.clone()
    }

    /// Attention map, tokens × tokens.
    pub fn attention(&self) -> Vec<f64> {
        self.attention.clone()
    }

    /// `O_S O_Iᵀ`, tokens × tokens.
    pub fn cross(&self) -> Vec<f64> {
        let s = Mat::new(self.tokens, self.dim, self.specific.clone()).expect("stored shape");
        let i = Mat::new(self.tokens, self.dim, self.invariant.clone()).expect("stored shape");
        s.matmul_nt(&i).into_data()
    }

    /// `‖O_S O_Iᵀ‖_max`.
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `‖O_S + O_I − A V W‖_max`.
    #[wasm_bindgen(getter)]
    pub fn completeness(&self) -> f64 {
        self.completeness
    }
}

/// Learning rate at every step of a one-cycle run.
#[wasm_bindgen]
pub fn lr_curve(total_steps: usize, peak: f64, warmup_fraction: f64) -> Result<Vec<f64>, JsError> {
    let cfg = ScheduleConfig { warmup_fraction, ..ScheduleConfig::default() };
    cfg.validate().map_err(js_error)?;
    if total_steps == 0 || !(peak > 0.0) {
        return Err(JsError::new("need at least one step and a positive peak"));
    }
    Ok((0..total_steps).map(|s| one_cycle(s, total_steps, peak, &cfg)).collect())
}

/// The built-in AU hypergraph and its propagation operator.
#[wasm_bindgen]
pub struct KnowledgeGraph {
    graph: Hypergraph,
    propagation: Mat,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen]
impl KnowledgeGraph {
    #[wasm_bindgen(constructor)]
    pub fn new() -> KnowledgeGraph {
        let graph = Hypergraph::default_knowledge();
        let propagation = graph.propagation_matrix();
        Self { graph, propagation }
    }

    pub fn vertex_names(&self) -> Vec<String> {
        self.graph.vertex_names().to_vec()
    }

    pub fn edge_names(&self) -> Vec<String> {
        self.graph.edge_names().to_vec()
    }

    /// Incidence matrix, vertices × edges.
    pub fn incidence(&self) -> Vec<f64> {
        self.graph.incidence().data().to_vec()
    }

    /// Propagation matrix, vertices × vertices.
    pub fn propagation(&self) -> Vec<f64> {
        self.propagation.data().to_vec()
    }

    /// Per-vertex response of `steps` identity-weight convolutions to a
    /// unit signal on the vertices listed in `active`.
    pub fn propagate(&self, active: &[usize], steps: usize) -> Result<Vec<f64>, JsError> {
        let n = self.graph.num_vertices();
        if let Some(bad) = active.iter().find(|&&v| v >= n) {
            return Err(JsError::new(&format!("vertex {bad} out of range")));
        }
        let mut e = Mat::from_fn(n, 1, |r, _| f64::from(u8::from(active.contains(&r))));
        let theta = Mat::identity(1);
        for _ in 0..steps {
            e = hgnn_conv_with(&self.propagation, &e, &theta, true).map_err(js_error)?;
        }
        Ok(e.into_data())
    }

    /// Vertices of hyperedge `edge`.
    pub fn members(&self, edge: usize) -> Vec<usize> {
        (0..self.graph.num_vertices()).filter(|&v| edge < self.graph.num_edges() && self.graph.contains(v, edge)).collect()
    }
}
