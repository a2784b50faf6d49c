use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use super::metrics::{mean_std, MetricsReport};
use super::optim::{adamw_step, AdamWState};
use super::schedule::one_cycle;
use crate::data::{preprocess, Dataset, Modality, PreprocessConfig, Sample};
use crate::error::{Error, Result};
use crate::model::{loss_parts, NferFormer, PartialGradients};

/// Samples per parallel work unit. Gradients are summed inside a chunk in
/// sample order and across chunks in chunk order, so the result does not
/// depend on the thread count.
const CHUNK: usize = 8;

const DOMAIN_SHUFFLE: u64 = 1;
const DOMAIN_CROP: u64 = 2;

fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last step in the epoch.
    pub learning_rate: f64,
    pub loss: f64,
    pub classification_loss: f64,
    pub spectrum_loss: f64,
    pub train_accuracy: f64,
    /// Max `‖O_S O_Iᵀ‖` over blocks on a probe sample, double precision.
    pub orthogonality_residual: f64,
    /// Same probe in single precision.
    pub orthogonality_residual_f32: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

#[derive(Default)]
struct ChunkStats {
    loss: f64,
    classification: f64,
    spectrum: f64,
    correct: usize,
}

fn preprocess_config(cfg: &TrainConfig) -> PreprocessConfig {
    PreprocessConfig { target: cfg.model.image_size, margin: cfg.margin }
}

/// Trains a fresh model on `train` (indices into `dataset`). `on_epoch`
/// sees each log record as soon as the epoch finishes.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    train: &[usize],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let mut model = NferFormer::init(cfg.model.clone(), cfg.data.hypergraph()?, cfg.seed)?;
    let mut optimizer = AdamWState::new(&model.params);
    let pre = preprocess_config(cfg);
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order = train.to_vec();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.copy_from_slice(train);
        order.shuffle(&mut substream(cfg.seed, DOMAIN_SHUFFLE, epoch as u64));
        let mut totals = ChunkStats::default();
        let mut lr = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let prep = model.prepare();
            let results: Vec<(PartialGradients, ChunkStats)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc: Option<PartialGradients> = None;
                    let mut stats = ChunkStats::default();
                    for &i in chunk {
                        let crop_seed = substream(cfg.seed, DOMAIN_CROP, ((epoch as u64) << 32) | i as u64).next_u64();
                        let sample = preprocess(&dataset.samples[i], pre, true, crop_seed)?;
                        let (out, cache) = model.forward_prepared(&prep, &sample.pixels)?;
                        let parts = loss_parts(&out, sample.expression, sample.modality, cfg.lambda)?;
                        if !parts.total.is_finite() {
                            return Err(Error::NonFinite(format!(
                                "loss at epoch {epoch}, batch {b}, sample {i} ({parts:?})"
                            )));
                        }
                        let g = model.backward_prepared(&prep, &out, &cache, sample.expression, sample.modality, cfg.lambda)?;
                        match acc.as_mut() {
                            Some(a) => a.accumulate(&g),
                            None => acc = Some(g),
                        }
                        stats.loss += parts.total;
                        stats.classification += parts.classification;
                        stats.spectrum += parts.spectrum;
                        stats.correct += usize::from(out.prediction() == sample.expression);
                    }
                    Ok((acc.expect("chunks are non-empty"), stats))
                })
                .collect::<Result<_>>()?;

            let mut results = results.into_iter();
            let (mut grads, first) = results.next().expect("batch is non-empty");
            let mut stats = vec![first];
            for (g, s) in results {
                grads.accumulate(&g);
                stats.push(s);
            }
            for s in stats {
                totals.loss += s.loss;
                totals.classification += s.classification;
                totals.spectrum += s.spectrum;
                totals.correct += s.correct;
            }
            let inv = 1.0 / batch.len() as f64;
            grads.params.scale_in_place(inv);
            grads.bases.iter_mut().for_each(|w| *w = w.scale(inv));
            let grads = model.finish_gradients(&prep, grads);
            lr = one_cycle(epoch * batches_per_epoch + b, total_steps, cfg.learning_rate, &cfg.schedule);
            adamw_step(&mut model.params, &grads, &mut optimizer, lr, &cfg.optimizer)?;
        }

        let probe = preprocess(&dataset.samples[train[0]], pre, false, 0)?;
        let (orthogonality_residual, orthogonality_residual_f32) = model.orthogonality_residuals(&probe.pixels)?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: totals.loss / n,
            classification_loss: totals.classification / n,
            spectrum_loss: totals.spectrum / n,
            train_accuracy: totals.correct as f64 / n,
            orthogonality_residual,
            orthogonality_residual_f32,
        };
        log::info!(
            "epoch {:>3} loss {:.4} (cls {:.4}, spec {:.4}) acc {:.3} lr {:.2e} orth {:.1e}",
            record.epoch,
            record.loss,
            record.classification_loss,
            record.spectrum_loss,
            record.train_accuracy,
            record.learning_rate,
            record.orthogonality_residual
        );
        on_epoch(&record);
        log.push(record);
    }

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        model,
        optimizer,
        rng: RngState { seed: cfg.seed, epochs_completed: cfg.epochs as u64 },
    };
    Ok(TrainOutcome { checkpoint, log })
}

/// Indices in `subset` whose modality passes `filter`.
pub fn filter_modality(dataset: &Dataset, subset: &[usize], filter: Option<Modality>) -> Vec<usize> {
    subset.iter().copied().filter(|&i| filter.is_none_or(|m| dataset.samples[i].modality == m)).collect()
}

/// Center-cropped predictions for `indices`.
pub fn predict(model: &NferFormer, dataset: &Dataset, indices: &[usize], margin: usize) -> Result<Vec<usize>> {
    let pre = PreprocessConfig { target: model.config.image_size, margin };
    let prep = model.prepare();
    indices
        .par_iter()
        .map(|&i| {
            let s = preprocess(&dataset.samples[i], pre, false, 0)?;
            Ok(model.forward_prepared(&prep, &s.pixels)?.0.prediction())
        })
        .collect()
}

/// Metrics on the samples of `subset` matching `filter` (the reference
/// protocol scores the NIR part only).
pub fn evaluate(
    model: &NferFormer,
    dataset: &Dataset,
    subset: &[usize],
    filter: Option<Modality>,
    margin: usize,
) -> Result<MetricsReport> {
    let indices = filter_modality(dataset, subset, filter);
    if indices.is_empty() {
        let what = filter.map(|m| format!("{m} samples in the evaluation split")).unwrap_or_else(|| "evaluation split".into());
        return Err(Error::Empty(what));
    }
    let predictions = predict(model, dataset, &indices, margin)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.samples[i].expression).collect();
    MetricsReport::from_predictions(&labels, &predictions, model.config.num_classes)
}

/// Result of a single train-then-evaluate run on the configured holdout.
#[derive(Debug, Clone)]
pub struct HoldoutRun {
    pub outcome: TrainOutcome,
    pub test_indices: Vec<usize>,
    pub metrics: MetricsReport,
}

pub fn train_and_evaluate(cfg: &TrainConfig, dataset: &Dataset, on_epoch: impl FnMut(&EpochRecord)) -> Result<HoldoutRun> {
    let (split, fold) = cfg.holdout(dataset)?;
    let (train_idx, test_idx) = dataset.fold_indices(&split, fold);
    let outcome = train(cfg, dataset, &train_idx, on_epoch)?;
    let metrics = evaluate(&outcome.checkpoint.model, dataset, &test_idx, Some(Modality::Nir), cfg.margin)?;
    Ok(HoldoutRun { outcome, test_indices: test_idx, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_subjects: Vec<u32>,
    pub final_loss: f64,
    pub metrics: MetricsReport,
}

/// Per-fold NIR metrics with mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub accuracy: (f64, f64),
    pub macro_f1: (f64, f64),
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldReport>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.metrics.macro_f1).collect();
        Self { accuracy: mean_std(&acc), macro_f1: mean_std(&f1), folds }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<6} {:>9} {:>9} {:>10}  test subjects\n", "fold", "accuracy", "macro-F1", "final loss");
        for f in &self.folds {
            s += &format!(
                "{:<6} {:>9.4} {:>9.4} {:>10.4}  {:?}\n",
                f.fold, f.metrics.accuracy, f.metrics.macro_f1, f.final_loss, f.test_subjects
            );
        }
        s += &format!(
            "mean   {:>9.4} {:>9.4}\nstd    {:>9.4} {:>9.4}\n",
            self.accuracy.0, self.macro_f1.0, self.accuracy.1, self.macro_f1.1
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,accuracy,macro_f1,final_loss,count\n");
        for f in &self.folds {
            s += &format!("{},{},{},{},{}\n", f.fold, f.metrics.accuracy, f.metrics.macro_f1, f.final_loss, f.metrics.count);
        }
        s += &format!("mean,{},{},,\nstd,{},{},,\n", self.accuracy.0, self.macro_f1.0, self.accuracy.1, self.macro_f1.1);
        s
    }
}

/// Trains fold `fold` of a `cfg.folds`-way subject split from scratch.
pub fn run_fold(cfg: &TrainConfig, dataset: &Dataset, split: &crate::data::FoldSplit, fold: usize) -> Result<FoldReport> {
    let (train_idx, test_idx) = dataset.fold_indices(split, fold);
    let outcome = train(cfg, dataset, &train_idx, |_| {})?;
    let metrics = evaluate(&outcome.checkpoint.model, dataset, &test_idx, Some(Modality::Nir), cfg.margin)?;
    Ok(FoldReport {
        fold,
        test_subjects: split.subjects_in(fold),
        final_loss: outcome.log.last().map_or(f64::NAN, |r| r.loss),
        metrics,
    })
}

/// Subject-independent k-fold cross-validation.
pub fn run_cv(cfg: &TrainConfig, dataset: &Dataset) -> Result<CvReport> {
    let split = crate::data::split_subject_kfold(dataset, cfg.folds, cfg.seed)?;
    let folds = (0..cfg.folds)
        .map(|fold| {
            log::info!("fold {}/{}", fold + 1, cfg.folds);
            run_fold(cfg, dataset, &split, fold)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::from_folds(folds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub metrics: MetricsReport,
}

/// NIR holdout metrics for each `λ`, all other settings fixed.
pub fn lambda_sweep(cfg: &TrainConfig, dataset: &Dataset, lambdas: &[f64]) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            log::info!("λ = {lambda}");
            let run = train_and_evaluate(&TrainConfig { lambda, ..cfg.clone() }, dataset, |_| {})?;
            Ok(SweepPoint { lambda, metrics: run.metrics })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("lambda,accuracy,macro_f1,count\n");
    for p in points {
        s += &format!("{},{},{},{}\n", p.lambda, p.metrics.accuracy, p.metrics.macro_f1, p.metrics.count);
    }
    s
}

/// Which embedding [`export_features`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Normalized `[class]` row of the final `O_I` (width `d`).
    ClassToken,
    /// HGFE aggregate (width `d⁽⁰⁾`).
    Aggregate,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e_cls" | "cls" => Ok(FeatureKind::ClassToken),
            "e_agg" | "agg" => Ok(FeatureKind::Aggregate),
            other => Err(Error::Parse(format!("unknown feature kind {other:?} (expected e_cls or e_agg)"))),
        }
    }
}

/// CSV with header `index,modality,class,subject,f0,…` and one row per
/// sample in `indices`.
pub fn export_features(
    model: &NferFormer,
    dataset: &Dataset,
    indices: &[usize],
    which: FeatureKind,
    margin: usize,
) -> Result<String> {
    let pre = PreprocessConfig { target: model.config.image_size, margin };
    let prep = model.prepare();
    let rows: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|&i| {
            let s: Sample = preprocess(&dataset.samples[i], pre, false, 0)?;
            let out = model.forward_prepared(&prep, &s.pixels)?.0;
            Ok(match which {
                FeatureKind::ClassToken => out.e_cls,
                FeatureKind::Aggregate => out.e_agg,
            })
        })
        .collect::<Result<_>>()?;
    let width = match which {
        FeatureKind::ClassToken => model.config.dim,
        FeatureKind::Aggregate => model.config.hgfe_dims[0],
    };
    let mut csv = String::from("index,modality,class,subject");
    for k in 0..width {
        csv += &format!(",f{k}");
    }
    csv.push('\n');
    for (&i, row) in indices.iter().zip(rows) {
        let s = &dataset.samples[i];
        csv += &format!("{i},{},{},{}", s.modality, dataset.class_names[s.expression], s.subject_id);
        for v in row {
            csv += &format!(",{v}");
        }
        csv.push('\n');
    }
    Ok(csv)
}
