//! AU–expression knowledge hypergraph and HGNN convolution.
//!
//! Vertices are action units, hyperedges are expression classes. Incidence
//! files are plain text, one line per vertex:
//!
//! ```text
//! # comment
//! edges = happiness, sadness, surprise
//! AU1  = sadness, surprise      # member list form
//! AU6  = [1 0 0]                # matrix-row form, one 0/1 per edge
//! ```
//!
//! The `edges` line must come first. Names are matched case-insensitively.
//! Every vertex and every edge needs degree at least one, since the
//! normalization `D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2}` is undefined otherwise.

use std::path::Path;

use crate::error::{bail_arg, Error, Result};
use crate::numerics::Mat;

/// The incidence table shipped with the crate.
pub const DEFAULT_INCIDENCE: &str = include_str!("../assets/au_hypergraph.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    incidence: Mat,
    vertex_names: Vec<String>,
    edge_names: Vec<String>,
}

/// Diagonals of the vertex and hyperedge degree matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreePair {
    pub vertex: Vec<f64>,
    pub edge: Vec<f64>,
}

impl Hypergraph {
    /// Builds and validates a hypergraph from a dense 0/1 incidence matrix.
    pub fn new(incidence: Mat, vertex_names: Vec<String>, edge_names: Vec<String>) -> Result<Self> {
        if incidence.rows() != vertex_names.len() || incidence.cols() != edge_names.len() {
            bail_arg!(
                "incidence is {}x{} but {} vertex and {} edge names were given",
                incidence.rows(),
                incidence.cols(),
                vertex_names.len(),
                edge_names.len()
            );
        }
        if incidence.rows() == 0 || incidence.cols() == 0 {
            return Err(Error::Validation("hypergraph needs at least one vertex and one edge".into()));
        }
        if let Some(x) = incidence.data().iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::Parse(format!("non-binary incidence entry {x}")));
        }
        let g = Self { incidence, vertex_names, edge_names };
        let deg = g.degrees();
        if let Some(i) = deg.vertex.iter().position(|&d| d == 0.0) {
            return Err(Error::Validation(format!("vertex {} belongs to no hyperedge", g.vertex_names[i])));
        }
        if let Some(j) = deg.edge.iter().position(|&d| d == 0.0) {
            return Err(Error::Validation(format!("hyperedge {} contains no vertex", g.edge_names[j])));
        }
        Ok(g)
    }

    /// Parses the text incidence format described in the module docs.
    pub fn parse(document: &str) -> Result<Self> {
        let mut edges: Option<Vec<String>> = None;
        let mut vertex_names: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, raw) in document.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `name = ...`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key.eq_ignore_ascii_case("edges") {
                if edges.is_some() {
                    return Err(Error::Parse(format!("line {}: duplicate edges line", lineno + 1)));
                }
                let names = split_list(value);
                if let Some(dup) = first_duplicate(&names) {
                    return Err(Error::Parse(format!("duplicate edge name {dup}")));
                }
                edges = Some(names);
                continue;
            }
            let edges = edges
                .as_ref()
                .ok_or_else(|| Error::Parse(format!("line {}: vertex listed before the edges line", lineno + 1)))?;
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty vertex name", lineno + 1)));
            }
            if vertex_names.iter().any(|v| v.eq_ignore_ascii_case(key)) {
                return Err(Error::Parse(format!("duplicate vertex name {key}")));
            }
            let row = if let Some(inner) = value.strip_prefix('[') {
                let inner = inner
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse(format!("line {}: unterminated matrix row", lineno + 1)))?;
                let entries: Vec<f64> = inner
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| match t {
                        "0" => Ok(0.0),
                        "1" => Ok(1.0),
                        other => Err(Error::Parse(format!("line {}: non-binary entry {other:?}", lineno + 1))),
                    })
                    .collect::<Result<_>>()?;
                if entries.len() != edges.len() {
                    return Err(Error::Parse(format!(
                        "line {}: row has {} entries, expected {}",
                        lineno + 1,
                        entries.len(),
                        edges.len()
                    )));
                }
                entries
            } else {
                let mut row = vec![0.0; edges.len()];
                for member in split_list(value) {
                    let j = edges
                        .iter()
                        .position(|e| e.eq_ignore_ascii_case(&member))
                        .ok_or_else(|| Error::Parse(format!("line {}: unknown edge {member:?}", lineno + 1)))?;
                    row[j] = 1.0;
                }
                row
            };
            vertex_names.push(key.to_string());
            rows.push(row);
        }
        let edges = edges.ok_or_else(|| Error::Parse("missing edges line".into()))?;
        let incidence = Mat::from_fn(rows.len(), edges.len(), |r, c| rows[r][c]);
        Self::new(incidence, vertex_names, edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped AU table.
    pub fn default_knowledge() -> Self {
        Self::parse(DEFAULT_INCIDENCE).expect("shipped hypergraph is valid")
    }

    /// Keeps the first `num_edges` hyperedges and `num_vertices` vertices.
    /// For each kept edge in order, its first vertex is taken; the remaining
    /// slots are filled in document order. Kept vertices stay in document
    /// order.
    pub fn restrict(&self, num_vertices: usize, num_edges: usize) -> Result<Self> {
        if num_edges == 0 || num_edges > self.num_edges() {
            bail_arg!("cannot keep {num_edges} of {} hyperedges", self.num_edges());
        }
        let touches = |v: usize| (0..num_edges).any(|e| self.incidence[(v, e)] == 1.0);
        let mut chosen = vec![false; self.num_vertices()];
        for e in 0..num_edges {
            if let Some(v) = (0..self.num_vertices()).find(|&v| self.incidence[(v, e)] == 1.0) {
                chosen[v] = true;
            }
        }
        let covering = chosen.iter().filter(|&&c| c).count();
        if covering > num_vertices {
            bail_arg!("{num_edges} hyperedges need at least {covering} vertices, {num_vertices} requested");
        }
        let mut extra = num_vertices - covering;
        for v in 0..self.num_vertices() {
            if extra > 0 && !chosen[v] && touches(v) {
                chosen[v] = true;
                extra -= 1;
            }
        }
        if extra > 0 {
            bail_arg!("only {} vertices touch the first {num_edges} hyperedges, {num_vertices} requested", num_vertices - extra);
        }
        let kept: Vec<usize> = (0..self.num_vertices()).filter(|&v| chosen[v]).collect();
        let incidence = Mat::from_fn(kept.len(), num_edges, |r, c| self.incidence[(kept[r], c)]);
        Self::new(
            incidence,
            kept.iter().map(|&v| self.vertex_names[v].clone()).collect(),
            self.edge_names[..num_edges].to_vec(),
        )
    }

    pub fn incidence(&self) -> &Mat {
        &self.incidence
    }

    pub fn vertex_names(&self) -> &[String] {
        &self.vertex_names
    }

    pub fn edge_names(&self) -> &[String] {
        &self.edge_names
    }

    pub fn num_vertices(&self) -> usize {
        self.incidence.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.incidence.cols()
    }

    /// Whether vertex `v` belongs to hyperedge `e`.
    pub fn contains(&self, v: usize, e: usize) -> bool {
        self.incidence[(v, e)] == 1.0
    }

    pub fn degrees(&self) -> DegreePair {
        DegreePair { vertex: self.incidence.transpose().col_sums(), edge: self.incidence.col_sums() }
    }

    /// `D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2}`. Symmetric by construction.
    pub fn propagation_matrix(&self) -> Mat {
        let deg = self.degrees();
        let n = self.num_vertices();
        let h = &self.incidence;
        Mat::from_fn(n, n, |i, j| {
            let mut acc = 0.0;
            for e in 0..self.num_edges() {
                acc += h[(i, e)] * h[(j, e)] / deg.edge[e];
            }
            acc / (deg.vertex[i] * deg.vertex[j]).sqrt()
        })
    }

    /// Serializes back to the member-list text form.
    pub fn to_document(&self) -> String {
        let mut out = format!("edges = {}\n", self.edge_names.join(", "));
        for v in 0..self.num_vertices() {
            let members: Vec<&str> = (0..self.num_edges())
                .filter(|&e| self.contains(v, e))
                .map(|e| self.edge_names[e].as_str())
                .collect();
            out.push_str(&format!("{} = {}\n", self.vertex_names[v], members.join(", ")));
        }
        out
    }
}

fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn first_duplicate(names: &[String]) -> Option<&str> {
    names
        .iter()
        .enumerate()
        .find(|(i, n)| names[..*i].iter().any(|m| m.eq_ignore_ascii_case(n)))
        .map(|(_, n)| n.as_str())
}

/// One HGNN layer, `ReLU(P · E · Θ)`; the ReLU is omitted when `final_layer`
/// so the following sigmoid sees signed values.
pub fn hgnn_conv(features: &Mat, graph: &Hypergraph, theta: &Mat, final_layer: bool) -> Result<Mat> {
    hgnn_conv_with(&graph.propagation_matrix(), features, theta, final_layer)
}

/// [`hgnn_conv`] with a precomputed propagation matrix.
pub fn hgnn_conv_with(propagation: &Mat, features: &Mat, theta: &Mat, final_layer: bool) -> Result<Mat> {
    if features.rows() != propagation.rows() {
        bail_arg!("{} vertex rows given for a {}-vertex hypergraph", features.rows(), propagation.rows());
    }
    if features.cols() != theta.rows() {
        bail_arg!("feature width {} does not match Θ with {} rows", features.cols(), theta.rows());
    }
    let out = propagation.matmul(&features.matmul(theta));
    Ok(if final_layer { out } else { out.map(|x| x.max(0.0)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(rows: &[&[f64]]) -> Hypergraph {
        let h = Mat::from_rows(rows);
        let (nv, ne) = h.shape();
        Hypergraph::new(h, (0..nv).map(|i| format!("v{i}")).collect(), (0..ne).map(|j| format!("e{j}")).collect())
            .unwrap()
    }

    #[test]
    fn parses_member_and_matrix_forms() {
        let g = Hypergraph::parse("edges = joy\nAU1 = joy\nAU2 = [1]\n").unwrap();
        assert_eq!(g.incidence(), &Mat::from_rows(&[[1.0], [1.0]]));
        let g = Hypergraph::parse("edges = a, b, c\nx = A\ny = b\nz = [0 0 1]").unwrap();
        assert_eq!(g.incidence(), &Mat::identity(3));
        assert_eq!(g.vertex_names(), &["x", "y", "z"]);
    }

    #[test]
    fn rejects_bad_documents() {
        let empty_edge = Hypergraph::parse("edges = a, b\nx = a\n").unwrap_err();
        assert!(matches!(empty_edge, Error::Validation(ref m) if m.contains('b')), "{empty_edge}");
        assert!(matches!(Hypergraph::parse("edges = a\nx =\n"), Err(Error::Validation(_))));
        assert!(matches!(Hypergraph::parse("edges = a, b\nx = [1 2]\n"), Err(Error::Parse(_))));
        assert!(matches!(Hypergraph::parse("edges = a\nx = a\nX = a\n"), Err(Error::Parse(_))));
        assert!(matches!(Hypergraph::parse("x = a\n"), Err(Error::Parse(_))));
        assert!(matches!(Hypergraph::parse("edges = a\nx = q\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn shipped_table_round_trips() {
        let g = Hypergraph::default_knowledge();
        assert_eq!(g.num_edges(), 6);
        assert_eq!(g.num_vertices(), 13);
        assert_eq!(Hypergraph::parse(&g.to_document()).unwrap(), g);
        let fear = g.edge_names().iter().position(|e| e == "fear").unwrap();
        assert_eq!(g.degrees().edge[fear], 7.0);
    }

    #[test]
    fn restrict_keeps_valid_prefix() {
        let g = Hypergraph::default_knowledge();
        let twelve = g.restrict(12, 6).unwrap();
        assert_eq!(twelve.num_vertices(), 12);
        assert!(!twelve.vertex_names().contains(&"AU26".to_string()));
        let three = g.restrict(3, 3).unwrap();
        assert_eq!(three.edge_names(), &["happiness", "sadness", "surprise"]);
        assert_eq!(three.vertex_names(), &["AU1", "AU2", "AU6"]);
        assert!(g.restrict(1, 3).is_err());
        assert!(g.restrict(14, 6).is_err());
    }

    #[test]
    fn degree_examples() {
        let d = graph(&[&[1.0], &[1.0]]).degrees();
        assert_eq!((d.vertex, d.edge), (vec![1.0, 1.0], vec![2.0]));
        let d = graph(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).degrees();
        assert_eq!((d.vertex, d.edge), (vec![1.0; 3], vec![1.0; 3]));
        let d = graph(&[&[1.0, 1.0], &[1.0, 0.0]]).degrees();
        assert_eq!((d.vertex, d.edge), (vec![2.0, 1.0], vec![2.0, 1.0]));
    }

    #[test]
    fn propagation_examples() {
        let g = graph(&[&[1.0], &[1.0]]);
        assert_eq!(g.propagation_matrix(), Mat::from_rows(&[[0.5, 0.5], [0.5, 0.5]]));
        let ones = Mat::from_rows(&[[1.0], [1.0]]);
        assert!(g.propagation_matrix().matmul(&ones).sub(&ones).max_abs() <= 1e-10);
        let id = graph(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(id.propagation_matrix(), Mat::identity(2));
    }

    #[test]
    fn conv_examples() {
        let g = graph(&[&[1.0], &[1.0]]);
        let out = hgnn_conv(&Mat::from_rows(&[[1.0], [0.0]]), &g, &Mat::from_rows(&[[1.0]]), false).unwrap();
        assert_eq!(out, Mat::from_rows(&[[0.5], [0.5]]));
        let id = graph(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let e = Mat::from_rows(&[[0.3, 2.0], [1.5, 0.0]]);
        assert_eq!(hgnn_conv(&e, &id, &Mat::identity(2), false).unwrap(), e);
        let neg = Mat::from_rows(&[[-1.0, 2.0], [0.5, -3.0]]);
        assert!(hgnn_conv(&neg, &id, &Mat::identity(2), false).unwrap().data().iter().all(|&x| x >= 0.0));
        assert!(hgnn_conv(&neg, &id, &Mat::identity(2), true).unwrap().data().iter().any(|&x| x < 0.0));
        assert!(hgnn_conv(&Mat::zeros(3, 2), &id, &Mat::identity(2), false).is_err());
        assert!(hgnn_conv(&e, &id, &Mat::identity(3), false).is_err());
    }
}
