//! Two-modality synthetic faces whose class structure follows the AU
//! incidence of a knowledge hypergraph.
//!
//! A sample is `clip01(base + Σ AU blobs of its class + modality signature
//! + subject offset + noise)`. NIR collapses channels, attenuates by
//! [`NIR_GAIN`] and adds a horizontal band pattern. VIS adds a per-channel
//! color cast. In confound mode the band phase of training NIR samples
//! follows the class with probability ρ; on held-out subjects and
//! otherwise the phase is uniform over the `M` classes.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::subject_kfold;
use super::{Dataset, Image, Modality, Sample};
use crate::error::{bail_arg, Result};
use crate::hypergraph::Hypergraph;

pub const NIR_GAIN: f64 = 0.85;
const BASE_LEVEL: f64 = 0.2;
const AU_AMPLITUDE: f64 = 0.45;
const VIS_CAST: [f64; 3] = [0.6, 0.3, -0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub num_vertices: usize,
    pub subjects: usize,
    /// Samples per (subject, class, modality) cell.
    pub samples_per_cell: usize,
    pub noise: f64,
    pub modality_strength: f64,
    pub subject_strength: f64,
    /// `Some(ρ)` enables confound mode with strength ρ.
    pub confound: Option<f64>,
    /// Folds used to choose the held-out subjects in confound mode.
    pub folds: usize,
    pub seed: u64,
    /// Incidence file replacing the built-in AU table.
    pub hypergraph: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            num_classes: 6,
            num_vertices: 12,
            subjects: 20,
            samples_per_cell: 5,
            noise: 0.08,
            modality_strength: 0.25,
            subject_strength: 0.05,
            confound: None,
            folds: 5,
            seed: 0,
            hypergraph: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 {
            bail_arg!("image size must be at least 4, got {}", self.image_size);
        }
        if self.channels != 1 && self.channels != 3 {
            bail_arg!("channels must be 1 or 3, got {}", self.channels);
        }
        if self.num_classes < 2 || self.num_vertices == 0 || self.subjects == 0 || self.samples_per_cell == 0 {
            bail_arg!("need at least 2 classes and one vertex, subject and sample per cell");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("modality strength", self.modality_strength),
            ("subject strength", self.subject_strength),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail_arg!("{name} must be a finite non-negative number, got {v}");
            }
        }
        if let Some(rho) = self.confound {
            if !(0.0..=1.0).contains(&rho) {
                bail_arg!("confound strength must lie in [0, 1], got {rho}");
            }
            if self.subjects < self.folds {
                bail_arg!("{} subjects cannot fill {} folds", self.subjects, self.folds);
            }
        }
        Ok(())
    }

    pub fn hypergraph(&self) -> Result<Hypergraph> {
        let full = match &self.hypergraph {
            Some(path) => Hypergraph::load(path)?,
            None => Hypergraph::default_knowledge(),
        };
        full.restrict(self.num_vertices, self.num_classes)
    }

    pub fn num_samples(&self) -> usize {
        self.subjects * self.num_classes * 2 * self.samples_per_cell
    }
}

/// Fixed (per seed) ingredients shared by every sample.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    graph: Hypergraph,
    /// One `size × size` blob per AU.
    au_patterns: Vec<Vec<f64>>,
    /// Per subject: brightness, horizontal and vertical gradient weights.
    subject_fields: Vec<[f64; 3]>,
    holdout: Option<super::FoldSplit>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let graph = config.hypergraph()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.image_size as f64;
        let width = n / 8.0;
        let au_patterns = (0..config.num_vertices)
            .map(|_| {
                let cy = rng.gen_range(0.15..0.85) * n;
                let cx = rng.gen_range(0.15..0.85) * n;
                grid(config.image_size, |y, x| {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    AU_AMPLITUDE * (-r2 / (2.0 * width * width)).exp()
                })
            })
            .collect();
        let subject_fields = (0..config.subjects).map(|_| std::array::from_fn(|_| normal(&mut rng))).collect();
        let holdout = match config.confound {
            Some(_) => {
                let ids: Vec<u32> = (0..config.subjects).map(subject_id).collect();
                Some(subject_kfold(&ids, config.folds, config.seed)?)
            }
            None => None,
        };
        Ok(Self { config, graph, au_patterns, subject_fields, holdout })
    }

    pub fn hypergraph(&self) -> &Hypergraph {
        &self.graph
    }

    /// Whether `subject` belongs to the held-out fold of confound mode.
    pub fn is_holdout(&self, subject: u32) -> bool {
        self.holdout.as_ref().is_some_and(|h| h.fold_of(subject) == Some(0))
    }

    /// Noise-free, subject-free image of `class` in `modality` whose NIR
    /// band pattern has phase index `phase`.
    pub fn template(&self, class: usize, modality: Modality, phase: usize) -> Image {
        let size = self.config.image_size;
        let mut face = vec![BASE_LEVEL; size * size];
        for (v, pattern) in self.au_patterns.iter().enumerate() {
            if self.graph.contains(v, class) {
                face.iter_mut().zip(pattern).for_each(|(f, p)| *f += p);
            }
        }
        let c = self.config.channels;
        let s = self.config.modality_strength;
        match modality {
            Modality::Nir => {
                let m = self.config.num_classes as f64;
                let period = size as f64 / 2.0;
                let shift = std::f64::consts::TAU * phase as f64 / m;
                Image::from_fn(c, size, size, |_, y, x| {
                    let band = 0.5 * (1.0 + (std::f64::consts::TAU * y as f64 / period + shift).cos());
                    NIR_GAIN * face[y * size + x] + s * band
                })
            }
            Modality::Vis => {
                let cast: &[f64] = if c == 3 { &VIS_CAST } else { &VIS_CAST[..1] };
                Image::from_fn(c, size, size, |ch, y, x| face[y * size + x] + s * cast[ch])
            }
        }
    }

    /// Sample `index` in generation order: subject, class, modality, repeat.
    pub fn sample(&self, index: usize) -> Sample {
        let cfg = &self.config;
        let spc = cfg.samples_per_cell;
        let m = cfg.num_classes;
        let subject = index / (m * 2 * spc);
        let class = index / (2 * spc) % m;
        let modality = Modality::ALL[index / spc % 2];

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64 + 1);
        let id = subject_id(subject);
        let follow_class = match cfg.confound {
            Some(rho) if !self.is_holdout(id) => rng.gen_bool(rho),
            _ => false,
        };
        let phase = if follow_class { class } else { rng.gen_range(0..m) };
        let mut pixels = self.template(class, modality, phase);

        let [b, gx, gy] = self.subject_fields[subject];
        let size = cfg.image_size;
        let scale = 1.0 / size as f64;
        for ch in 0..pixels.channels() {
            for y in 0..size {
                for x in 0..size {
                    let offset = cfg.subject_strength * (b + gx * (x as f64 * scale - 0.5) + gy * (y as f64 * scale - 0.5));
                    let v = pixels.get(ch, y, x) + offset + cfg.noise * normal(&mut rng);
                    pixels.set(ch, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        Sample { pixels, modality, expression: class, subject_id: id, path: None }
    }

    pub fn generate(&self) -> Dataset {
        let samples = (0..self.config.num_samples()).into_par_iter().map(|i| self.sample(i)).collect();
        let class_names = self.graph.edge_names().to_vec();
        Dataset { samples, class_names, holdout: self.holdout.clone() }
    }
}

/// Subject ids start at 1.
fn subject_id(index: usize) -> u32 {
    index as u32 + 1
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn grid(size: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..size * size).map(|i| f(i / size, i % size)).collect()
}

/// Builds the dataset described by `config`. Output depends only on the
/// config, not on thread scheduling.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Dataset> {
    Ok(Generator::new(config.clone())?.generate())
}
