//! Pretraining, fine-tuning, evaluation and the Adam optimizer.
//!
//! All randomness is drawn from streams derived from `TrainConfig::seed`:
//! epoch `e` shuffles with `[ORDER, e]` and sample `i` draws its mask with
//! `[MASK, e, i]`. Per-sample gradients are computed (possibly in parallel)
//! and then summed in batch order, so results do not depend on the number of
//! worker threads.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autonet::{self, Block, Dims, Gradient, ModelParams, Objective};
use crate::cube::{self, HyperCube, LabelMap, Patch};
use crate::error::{Error, Result};
use crate::masking::{self, Strategy};
use crate::rng::{self, tag};

/// Feature widths of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub width: usize,
    pub hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            width: 16,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub ratio: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub model: ModelShape,
    /// Worker threads for per-sample gradients; 1 runs inline, 0 uses the
    /// global rayon pool.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mrs,
            ratio: 0.25,
            epochs_pretrain: 150,
            epochs_finetune: 60,
            batch_size: 16,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 1,
            freeze_encoder: false,
            train_fraction: 0.02,
            test_fraction: 0.5,
            model: ModelShape::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Ratio(format!("R = {} is outside (0, 1)", self.ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        if !frac_ok(self.train_fraction)
            || !frac_ok(self.test_fraction)
            || self.train_fraction + self.test_fraction > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "split fractions train={} test={} must lie in (0, 1) and sum to <= 1",
                self.train_fraction, self.test_fraction
            )));
        }
        if self.model.width == 0 || self.model.hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Model dimensions for patches of `bands × patch × patch` and `classes`.
    pub fn dims(&self, bands: usize, patch: usize, classes: usize) -> Dims {
        Dims {
            bands,
            patch,
            width: self.model.width,
            hidden: self.model.hidden,
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradient,
    state: &mut OptimizerState,
    hyper: AdamHyper,
) -> Result<()> {
    let n = params.values().len();
    if grads.values.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(Error::Shape(format!(
            "adam: {n} parameters, {} gradients, {} moments",
            grads.values.len(),
            state.first.len()
        )));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            block: params.layout().block_of(i).map(Block::name).unwrap_or("?"),
            message: format!("non-finite gradient at index {i}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamHyper {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = hyper;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(&grads.values)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Losses, accuracies and the configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: TrainConfig,
    pub pretrain_loss: Vec<f64>,
    pub finetune_loss: Vec<f64>,
    /// Accuracy per class (`None` when the class is absent from the test set).
    pub per_class: Vec<Option<f64>>,
    pub oa: Option<f64>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            pretrain_loss: Vec::new(),
            finetune_loss: Vec::new(),
            per_class: Vec::new(),
            oa: None,
            wall_seconds: 0.0,
        }
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        self.config == other.config
            && self.pretrain_loss == other.pretrain_loss
            && self.finetune_loss == other.finetune_loss
            && self.per_class == other.per_class
            && self.oa == other.oa
    }

    pub fn final_pretrain_loss(&self) -> Option<f64> {
        self.pretrain_loss.last().copied()
    }

    /// Long-format `phase,epoch,metric,value` rows.
    ///
    /// Wall-clock time is left out so reruns produce identical files.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("phase,epoch,metric,value\n");
        for (e, l) in self.pretrain_loss.iter().enumerate() {
            let _ = writeln!(out, "pretrain,{e},loss,{l}");
        }
        for (e, l) in self.finetune_loss.iter().enumerate() {
            let _ = writeln!(out, "finetune,{e},loss,{l}");
        }
        if let Some(oa) = self.oa {
            let _ = writeln!(out, "evaluate,,oa,{oa}");
        }
        out
    }

    /// `class,accuracy` rows; absent classes are `NA`.
    pub fn perclass_csv(&self) -> String {
        let mut out = String::from("class,accuracy\n");
        for (k, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "{},{a}", k + 1);
                }
                None => {
                    let _ = writeln!(out, "{},NA", k + 1);
                }
            }
        }
        out
    }
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Sums per-sample results in index order and averages over the batch.
fn reduce_batch(layout_len: usize, parts: Vec<(f64, Gradient)>) -> (Vec<f64>, Gradient) {
    let count = parts.len() as f64;
    let mut total = Gradient {
        values: vec![0.0; layout_len],
    };
    let mut losses = Vec::with_capacity(parts.len());
    for (loss, g) in parts {
        losses.push(loss);
        for (t, v) in total.values.iter_mut().zip(&g.values) {
            *t += v;
        }
    }
    total.values.iter_mut().for_each(|v| *v /= count);
    (losses, total)
}

fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::ORDER, epoch as u64]));
    order
}

/// Self-supervised masked reconstruction training starting from `params`.
///
/// Each epoch visits the patches in a seeded shuffled order; every sample gets
/// a fresh mask plan under `config.strategy`. The report holds the mean
/// masked-region loss per epoch.
pub fn pretrain(
    config: &TrainConfig,
    params: ModelParams,
    patches: &[Patch],
) -> Result<(ModelParams, RunReport)> {
    config.validate()?;
    if patches.is_empty() {
        return Err(Error::Data("pretraining needs at least one patch".into()));
    }
    let started = Instant::now();
    let mut report = RunReport::new(config.clone());
    let mut params = params;
    let mut state = OptimizerState::new(params.values().len());
    let hyper = AdamHyper::from(config);
    let len = params.values().len();

    run_in_pool(config.workers, || -> Result<()> {
        for epoch in 0..config.epochs_pretrain {
            let order = epoch_order(config.seed, epoch, patches.len());
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let sample = |&i: &usize| -> Result<(f64, Gradient)> {
                    let patch = &patches[i];
                    let mut r = rng::stream(config.seed, &[tag::MASK, epoch as u64, i as u64]);
                    let plan = masking::draw_plan(config.strategy, patch, config.ratio, &mut r)?;
                    autonet::backward(&params, patch, Objective::Reconstruction(&plan))
                };
                let parts: Vec<(f64, Gradient)> = if config.workers == 1 {
                    batch.iter().map(sample).collect::<Result<_>>()?
                } else {
                    batch.par_iter().map(sample).collect::<Result<_>>()?
                };
                let (losses, grad) = reduce_batch(len, parts);
                let batch_loss: f64 = losses.iter().sum();
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        last_good: epoch.checked_sub(1),
                    });
                }
                epoch_loss += batch_loss;
                adam_step(&mut params, &grad, &mut state, hyper)?;
            }
            report.pretrain_loss.push(epoch_loss / patches.len() as f64);
        }
        Ok(())
    })??;

    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Supervised cross-entropy training on unmasked patches.
///
/// The encoder is updated as well unless `config.freeze_encoder` is set, in
/// which case its blocks are left bit-identical.
pub fn finetune(
    config: &TrainConfig,
    pretrained: ModelParams,
    patches: &[Patch],
    labels: &[u16],
) -> Result<(ModelParams, RunReport)> {
    config.validate()?;
    if patches.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} patches but {} labels",
            patches.len(),
            labels.len()
        )));
    }
    if patches.is_empty() {
        return Err(Error::Data("fine-tuning needs at least one labeled patch".into()));
    }
    let classes = pretrained.dims().classes;
    if classes < 2 {
        return Err(Error::Data("fine-tuning needs at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l as usize > classes) {
        return Err(Error::Data(format!("label {bad} outside 1..={classes}")));
    }
    let started = Instant::now();
    let mut report = RunReport::new(config.clone());
    let mut params = pretrained;
    let mut state = OptimizerState::new(params.values().len());
    let hyper = AdamHyper::from(config);
    let len = params.values().len();
    let frozen: Vec<std::ops::Range<usize>> = if config.freeze_encoder {
        Block::ENCODER.iter().map(|&b| params.layout().range(b)).collect()
    } else {
        Vec::new()
    };

    run_in_pool(config.workers, || -> Result<()> {
        for epoch in 0..config.epochs_finetune {
            // Offset keeps fine-tuning orders distinct from pretraining ones.
            let order = epoch_order(config.seed ^ 0x5EED_F17E, epoch, patches.len());
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let sample = |&i: &usize| {
                    autonet::backward(&params, &patches[i], Objective::Classification(labels[i]))
                };
                let parts: Vec<(f64, Gradient)> = if config.workers == 1 {
                    batch.iter().map(sample).collect::<Result<_>>()?
                } else {
                    batch.par_iter().map(sample).collect::<Result<_>>()?
                };
                let (losses, mut grad) = reduce_batch(len, parts);
                let batch_loss: f64 = losses.iter().sum();
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        last_good: epoch.checked_sub(1),
                    });
                }
                epoch_loss += batch_loss;
                let saved: Vec<Vec<f64>> = frozen
                    .iter()
                    .map(|r| {
                        grad.values[r.clone()].iter_mut().for_each(|g| *g = 0.0);
                        params.values()[r.clone()].to_vec()
                    })
                    .collect();
                adam_step(&mut params, &grad, &mut state, hyper)?;
                for (r, values) in frozen.iter().zip(saved) {
                    params.values_mut()[r.clone()].copy_from_slice(&values);
                }
            }
            report.finetune_loss.push(epoch_loss / patches.len() as f64);
        }
        Ok(())
    })??;

    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub oa: f64,
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Per-class and overall accuracy of already computed predictions.
pub fn score(predictions: &[u16], labels: &[u16], classes: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape("predictions and labels differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut correct = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l == 0 || l as usize > classes {
            return Err(Error::Data(format!("label {l} outside 1..={classes}")));
        }
        counts[l as usize - 1] += 1;
        if p == l {
            correct[l as usize - 1] += 1;
        }
    }
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let oa = correct.iter().sum::<usize>() as f64 / labels.len() as f64;
    Ok(Evaluation {
        oa,
        per_class,
        counts,
    })
}

/// Overall and per-class accuracy of `params` on labeled patches.
pub fn evaluate_oa(params: &ModelParams, patches: &[Patch], labels: &[u16]) -> Result<Evaluation> {
    if patches.len() != labels.len() {
        return Err(Error::Shape("patches and labels differ in length".into()));
    }
    let predictions = patches
        .iter()
        .map(|p| autonet::predict(params, p))
        .collect::<Result<Vec<_>>>()?;
    score(&predictions, labels, params.dims().classes)
}

/// Pixel indices (row-major) used by one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSplit {
    /// Labeled pixels for fine-tuning.
    pub train: Vec<usize>,
    /// Labeled pixels held out for evaluation.
    pub test: Vec<usize>,
    /// Unlabeled pool for pretraining: every usable pixel not in `test`.
    pub pool: Vec<usize>,
}

/// Seeded per-class split of labeled pixels whose `patch × patch` window fits.
///
/// Each class contributes `⌊train_fraction·n⌋` (at least one) training pixels
/// and `⌊test_fraction·n⌋` test pixels.
pub fn split_pixels(
    cube: &HyperCube,
    labels: &LabelMap,
    patch: usize,
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<PixelSplit> {
    if labels.height() != cube.height() || labels.width() != cube.width() {
        return Err(Error::Shape(format!(
            "label map {}x{} does not match cube {}x{}",
            labels.height(),
            labels.width(),
            cube.height(),
            cube.width()
        )));
    }
    let w = cube.width();
    let usable: Vec<usize> = (0..cube.pixels())
        .filter(|&p| cube.window_fits(p / w, p % w, patch))
        .collect();
    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 1..=labels.classes() as u16 {
        let mut members: Vec<usize> = usable
            .iter()
            .copied()
            .filter(|&p| labels.labels()[p] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((train_fraction * n as f64).floor() as usize).max(1).min(n);
        let n_test = ((test_fraction * n as f64).floor() as usize).min(n - n_train);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..n_train + n_test]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let pool = usable
        .into_iter()
        .filter(|p| test.binary_search(p).is_err())
        .collect();
    Ok(PixelSplit { train, test, pool })
}

/// Seeded subset of at most `limit` pixels (all of them when `limit` is 0).
pub fn subsample(pixels: &[usize], limit: usize, seed: u64) -> Vec<usize> {
    if limit == 0 || limit >= pixels.len() {
        return pixels.to_vec();
    }
    let mut picked: Vec<usize> = pixels.to_vec();
    picked.shuffle(&mut rng::stream(seed, &[tag::POOL]));
    picked.truncate(limit);
    picked.sort_unstable();
    picked
}

pub fn patches_at(cube: &HyperCube, pixels: &[usize], size: usize) -> Result<Vec<Patch>> {
    let w = cube.width();
    pixels
        .iter()
        .map(|&p| cube::extract_patch(cube, (p / w, p % w), size))
        .collect()
}

pub fn labels_at(labels: &LabelMap, pixels: &[usize]) -> Vec<u16> {
    pixels.iter().map(|&p| labels.labels()[p]).collect()
}
