use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Image, Modality, Sample};
use crate::error::{bail_arg, Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "bmp", "pgm"];

/// Parses `<modality>/<expression>/<subject>_<idx>.<ext>` relative to the
/// dataset root into `(modality, class index, subject id)`. Modality and
/// expression match case-insensitively.
pub fn parse_sample_path(relative: &Path, class_names: &[String]) -> Result<(Modality, usize, u32)> {
    let parts: Vec<&str> = relative.iter().filter_map(|p| p.to_str()).collect();
    let [modality, expression, file] = parts[..] else {
        return Err(Error::Parse(format!("{} is not <modality>/<expression>/<file>", relative.display())));
    };
    let modality: Modality = modality.parse()?;
    let class = class_names
        .iter()
        .position(|c| c.eq_ignore_ascii_case(expression))
        .ok_or_else(|| Error::Parse(format!("unknown expression folder {expression:?}")))?;
    let (stem, ext) = file.rsplit_once('.').ok_or_else(|| Error::Parse(format!("{file:?} has no extension")))?;
    if !EXTENSIONS.iter().any(|e| e.eq_ignore_ascii_case(ext)) {
        return Err(Error::Parse(format!("unsupported extension {ext:?}")));
    }
    let subject = stem
        .split_once('_')
        .filter(|(_, idx)| !idx.is_empty())
        .and_then(|(s, _)| s.parse::<u32>().ok())
        .ok_or_else(|| Error::Parse(format!("{file:?} is not <subject>_<idx>")))?;
    Ok((modality, class, subject))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn read_image(path: &Path, channels: usize) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match channels {
        1 => img.to_luma8().into_raw(),
        3 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            (0..3).flat_map(|c| raw.iter().skip(c).step_by(3).copied().collect::<Vec<_>>()).collect()
        }
        _ => unreachable!("channel count checked by caller"),
    };
    Image::new(channels, h, w, pixels.into_iter().map(|p| f64::from(p) / 255.0).collect())
}

/// Loads every image under `root` in sorted path order. Images are
/// converted to `channels` (1 = luma, 3 = RGB). Files whose path does not
/// parse are skipped with a warning.
pub fn load_image_dir(root: &Path, class_names: &[String], channels: usize) -> Result<Dataset> {
    if channels != 1 && channels != 3 {
        bail_arg!("channels must be 1 or 3, got {channels}");
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for modality_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for class_dir in sorted_entries(&modality_dir)?.into_iter().filter(|p| p.is_dir()) {
            for file in sorted_entries(&class_dir)?.into_iter().filter(|p| p.is_file()) {
                let relative = file.strip_prefix(root).expect("walked from root");
                match parse_sample_path(relative, class_names) {
                    Ok((modality, expression, subject_id)) => samples.push(Sample {
                        pixels: read_image(&file, channels)?,
                        modality,
                        expression,
                        subject_id,
                        path: Some(relative.display().to_string()),
                    }),
                    Err(e) => {
                        skipped += 1;
                        log::warn!("skipping {}: {e}", file.display());
                    }
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Empty(root.display().to_string()));
    }
    log::info!("loaded {} samples from {} ({skipped} skipped)", samples.len(), root.display());
    Ok(Dataset::new(samples, class_names.to_vec()))
}

/// Writes `dataset` as 8-bit PNGs in the layout [`load_image_dir`] reads
/// and records each file's relative path in its sample.
pub fn write_image_dir(dataset: &mut Dataset, root: &Path) -> Result<()> {
    let mut counters = std::collections::HashMap::new();
    for s in &mut dataset.samples {
        let class = &dataset.class_names[s.expression];
        let idx = counters.entry((s.subject_id, s.expression, s.modality)).or_insert(0usize);
        let relative = PathBuf::from(s.modality.to_string()).join(class).join(format!("{}_{idx}.png", s.subject_id));
        *idx += 1;
        let path = root.join(&relative);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        let img = &s.pixels;
        let (h, w) = (img.height(), img.width());
        let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let result = match img.channels() {
            1 => image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([quantize(img.get(0, y as usize, x as usize))])).save(&path),
            3 => image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb(std::array::from_fn(|c| quantize(img.get(c, y as usize, x as usize))))
            })
            .save(&path),
            c => bail_arg!("cannot write {c}-channel images"),
        };
        result.map_err(|source| Error::Image { path: path.clone(), source })?;
        s.path = Some(relative.display().to_string());
    }
    Ok(())
}
