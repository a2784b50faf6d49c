use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Image, Sample};
use crate::error::{bail_arg, Result};

/// Images are resized to `target + margin` square, then cropped to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target: usize,
    pub margin: usize,
}

impl PreprocessConfig {
    pub fn resized(&self) -> usize {
        self.target + self.margin
    }
}

/// Corner-aligned bilinear resize: output pixel `i` samples the source at
/// `i · (in − 1) / (out − 1)`, so the four corners map onto the source
/// corners exactly. A length-1 output axis samples the source center.
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        bail_arg!("cannot resize to {height}x{width}");
    }
    let (ih, iw) = (image.height(), image.width());
    if (ih, iw) == (height, width) {
        return Ok(image.clone());
    }
    let ys: Vec<(usize, usize, f64)> = (0..height).map(|i| source_coord(i, height, ih)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..width).map(|i| source_coord(i, width, iw)).collect();
    Ok(Image::from_fn(image.channels(), height, width, |c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = image.get(c, y0, x0) * (1.0 - fx) + image.get(c, y0, x1) * fx;
        let bot = image.get(c, y1, x0) * (1.0 - fx) + image.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}

fn source_coord(i: usize, out: usize, input: usize) -> (usize, usize, f64) {
    let t = if out == 1 { (input - 1) as f64 / 2.0 } else { i as f64 * (input - 1) as f64 / (out - 1) as f64 };
    let lo = (t.floor() as usize).min(input - 1);
    let hi = (lo + 1).min(input - 1);
    (lo, hi, t - lo as f64)
}

fn crop(image: &Image, top: usize, left: usize, size: usize) -> Image {
    Image::from_fn(image.channels(), size, size, |c, y, x| image.get(c, top + y, left + x))
}

/// Crop of side `size` whose offset is drawn uniformly.
pub fn random_crop(image: &Image, size: usize, rng: &mut impl Rng) -> Result<Image> {
    check_crop(image, size)?;
    let top = rng.gen_range(0..=image.height() - size);
    let left = rng.gen_range(0..=image.width() - size);
    Ok(crop(image, top, left, size))
}

/// Crop of side `size` with the offset rounded down toward the top-left.
pub fn center_crop(image: &Image, size: usize) -> Result<Image> {
    check_crop(image, size)?;
    Ok(crop(image, (image.height() - size) / 2, (image.width() - size) / 2, size))
}

fn check_crop(image: &Image, size: usize) -> Result<()> {
    if size == 0 || size > image.height() || size > image.width() {
        bail_arg!("crop {size} does not fit a {}x{} image", image.height(), image.width());
    }
    Ok(())
}

/// Resize then crop. Labels and subject are carried over unchanged.
pub fn preprocess(sample: &Sample, config: PreprocessConfig, train: bool, seed: u64) -> Result<Sample> {
    let side = config.resized();
    let mut resized = resize_bilinear(&sample.pixels, side, side)?;
    // interpolation weights can overshoot the unit interval by one ulp
    resized.pixels_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let pixels = if train {
        random_crop(&resized, config.target, &mut ChaCha8Rng::seed_from_u64(seed))?
    } else {
        center_crop(&resized, config.target)?
    };
    Ok(Sample { pixels, ..sample.clone() })
}
