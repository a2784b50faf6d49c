use nfer_core::data::{Generator, GeneratorConfig, Image, Modality, Sample};

fn distance(a: &Image, b: &Image) -> f64 {
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest<T: Copy>(x: &Image, candidates: &[(T, Image)]) -> T {
    candidates.iter().min_by(|a, b| distance(x, &a.1).total_cmp(&distance(x, &b.1))).unwrap().0
}

fn all(generator: &Generator) -> Vec<Sample> {
    generator.generate().samples
}

#[test]
fn residuals_after_removing_the_template_are_centered_noise() {
    let sigma = 0.05;
    let cfg = GeneratorConfig { noise: sigma, subject_strength: 0.0, modality_strength: 0.0, subjects: 6, seed: 11, ..GeneratorConfig::default() };
    let generator = Generator::new(cfg).unwrap();
    let mut residuals = Vec::new();
    for s in all(&generator) {
        let t = generator.template(s.expression, s.modality, 0);
        for (x, m) in s.pixels.pixels().iter().zip(t.pixels()) {
            // far from the clip bounds
            if *m > 5.0 * sigma && *m < 1.0 - 5.0 * sigma {
                residuals.push(x - m);
            }
        }
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean} over {n} residuals");
    assert!((var.sqrt() - sigma).abs() <= 0.02 * sigma, "std {} vs {sigma}", var.sqrt());
}

#[test]
fn nearest_template_recovers_the_class() {
    let cfg = GeneratorConfig { noise: 0.05, subject_strength: 0.0, subjects: 4, seed: 5, ..GeneratorConfig::default() };
    let generator = Generator::new(cfg.clone()).unwrap();
    let samples = all(&generator);
    let mut correct = 0;
    for s in &samples {
        let candidates: Vec<(usize, Image)> = (0..cfg.num_classes).map(|c| (c, generator.template(c, s.modality, 0))).collect();
        correct += usize::from(nearest(&s.pixels, &candidates) == s.expression);
    }
    assert!(correct as f64 >= 0.99 * samples.len() as f64, "{correct}/{}", samples.len());
}

#[test]
fn confound_ties_band_phase_to_class_outside_the_holdout() {
    let cfg = GeneratorConfig { noise: 0.02, subject_strength: 0.0, confound: Some(1.0), subjects: 10, seed: 3, ..GeneratorConfig::default() };
    let generator = Generator::new(cfg.clone()).unwrap();
    let (mut train_hits, mut train_n, mut holdout_hits, mut holdout_n) = (0, 0, 0, 0);
    for s in all(&generator).iter().filter(|s| s.modality == Modality::Nir) {
        let candidates: Vec<(usize, Image)> =
            (0..cfg.num_classes).map(|phase| (phase, generator.template(s.expression, Modality::Nir, phase))).collect();
        let hit = usize::from(nearest(&s.pixels, &candidates) == s.expression);
        if generator.is_holdout(s.subject_id) {
            holdout_hits += hit;
            holdout_n += 1;
        } else {
            train_hits += hit;
            train_n += 1;
        }
    }
    assert!(holdout_n > 0 && train_n > 0);
    assert_eq!(train_hits, train_n);
    assert!((holdout_hits as f64) < 0.5 * holdout_n as f64, "{holdout_hits}/{holdout_n}");
}

#[test]
fn generation_is_seeded() {
    let cfg = GeneratorConfig { subjects: 3, seed: 8, ..GeneratorConfig::default() };
    let a = Generator::new(cfg.clone()).unwrap().generate();
    let b = Generator::new(cfg.clone()).unwrap().generate();
    let c = Generator::new(GeneratorConfig { seed: 9, ..cfg }).unwrap().generate();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
}
