//! Samples, datasets and everything that produces or partitions them.

mod loader;
mod preprocess;
mod split;
mod synthetic;

pub use loader::{load_image_dir, parse_sample_path, write_image_dir};
pub use preprocess::{center_crop, preprocess, random_crop, resize_bilinear, PreprocessConfig};
pub use split::{split_subject_kfold, FoldSplit};
pub use synthetic::{generate_synthetic, Generator, GeneratorConfig};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Error, Result};

/// The six basic expressions, in label order.
pub const DEFAULT_CLASSES: [&str; 6] = ["happiness", "sadness", "surprise", "fear", "anger", "disgust"];

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Imaging spectrum. Labels: NIR = 0, VIS = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Nir,
    Vis,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Nir, Modality::Vis];

    pub fn label(self) -> u8 {
        match self {
            Modality::Nir => 0,
            Modality::Vis => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Nir => "NIR",
            Modality::Vis => "VIS",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NIR" => Ok(Modality::Nir),
            "VIS" => Ok(Modality::Vis),
            other => Err(Error::Parse(format!("unknown modality {other:?}"))),
        }
    }
}

/// Channel-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            bail_arg!("image dimensions must be positive");
        }
        if pixels.len() != channels * height * width {
            bail_arg!("pixel buffer length {} does not match {channels}x{height}x{width}", pixels.len());
        }
        Ok(Self { channels, height, width, pixels })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, pixels: vec![value; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, pixels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Image,
    pub modality: Modality,
    pub expression: usize,
    pub subject_id: u32,
    /// Source file for loaded samples.
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Fold reserved for testing when the generator ran in confound mode.
    pub holdout: Option<FoldSplit>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Self {
        Self { samples, class_names, holdout: None }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Indices of samples whose subject is (or is not) in `fold`.
    pub fn fold_indices(&self, split: &FoldSplit, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if split.fold_of(s.subject_id) == Some(fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    /// Writes `index,path,modality,class,subject,fold` per sample.
    pub fn write_manifest(&self, out: &mut impl Write, split: Option<&FoldSplit>) -> Result<()> {
        writeln!(out, "index,path,modality,class,subject,fold")?;
        for (i, s) in self.samples.iter().enumerate() {
            let fold = split.and_then(|f| f.fold_of(s.subject_id)).map(|f| f.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{i},{},{},{},{},{fold}",
                s.path.as_deref().unwrap_or(""),
                s.modality,
                self.class_names[s.expression],
                s.subject_id
            )?;
        }
        Ok(())
    }
}
