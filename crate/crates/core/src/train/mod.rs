//! Training the denoise network.
//!
//! Every epoch each training image is augmented, then noised afresh from a
//! stream keyed by `(seed, image index, epoch)`; the network is fitted so that
//! the field sampled at each noised point undoes the displacement.

mod adam;
mod augment;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use augment::{apply_augment, augment, AugmentConfig, AugmentDraw};
pub use loss::offset_loss;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::annot::{ImageGrid, Point, PointSet};
use crate::error::{Error, Result};
use crate::field::Sampling;
use crate::nn::{forward_on_tape, image_tensor, predict_field, ModelConfig, ModelParams, Tape};
use crate::noise::{make_noised, Alpha, BoundMode, SamplingBounds};
use crate::rng::{substream, Purpose};

/// Everything that shapes a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub augment: AugmentConfig,
    pub alpha: Alpha,
    pub bound_mode: BoundMode,
    pub model: ModelConfig,
    /// Fraction of the dataset (taken from the end) kept out of training and
    /// used for the per-epoch restoration error.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            augment: AugmentConfig::default(),
            alpha: Alpha::new(0.4, false).unwrap(),
            bound_mode: BoundMode::Perspective,
            model: ModelConfig::default(),
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        let stride = self.model.min_input();
        if self.augment.crop_size % stride != 0 {
            return Err(Error::Config(format!(
                "crop size {} must be divisible by {stride} for a {}-stage model",
                self.augment.crop_size,
                self.model.stages()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        let opt = &self.optimizer;
        if !(opt.learning_rate > 0.0 && opt.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Number of samples held out from a dataset of `n`.
    pub fn holdout_len(&self, n: usize) -> usize {
        if n < 2 {
            return 0;
        }
        let k = num_traits::Float::round(n as f64 * self.holdout_fraction) as usize;
        k.min(n - 1)
    }
}

/// An image with its (possibly imperfect) point annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageGrid,
    pub points: PointSet,
}

/// Parameters, optimizer moments and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub optimizer: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(
            &config.model,
            &mut substream(config.seed, Purpose::Init, &[]),
        )?;
        let optimizer = AdamState::new(&params);
        Ok(Self {
            params,
            optimizer,
            epoch: 0,
        })
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

/// A training example reduced to what one optimizer step needs: an image and
/// the noised coordinates with their regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub image: ImageGrid,
    /// Where the field is sampled (the noised annotations).
    pub coords: Vec<Point>,
    /// Expected field values: the negated effective displacement.
    pub targets: Vec<(f64, f64)>,
}

impl PreparedSample {
    /// Noises `points` within bounds recomputed on their own geometry.
    /// Returns `None` for sets with fewer than two points, which carry no
    /// usable noise scale.
    pub fn noise<R: rand::Rng + ?Sized>(
        image: ImageGrid,
        points: &PointSet,
        mode: BoundMode,
        alpha: Alpha,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        if points.len() < 2 {
            return Ok(None);
        }
        let bounds = SamplingBounds::compute(points, mode, alpha)?;
        let noised = make_noised(points, &bounds, rng)?;
        let targets = noised
            .effective_offsets(points)
            .into_iter()
            .map(|(dx, dy)| (-dx, -dy))
            .collect();
        Ok(Some(Self {
            image,
            coords: noised.points,
            targets,
        }))
    }

    /// Loss of the all-zero prediction, `mean ||target||^2`.
    pub fn zero_prediction_loss(&self) -> f64 {
        let total: f64 = self.targets.iter().map(|t| t.0 * t.0 + t.1 * t.1).sum();
        total / self.targets.len() as f64
    }
}

/// Loss and gradients of one prepared sample.
pub fn sample_gradient(
    model: &ModelConfig,
    params: &ModelParams<f32>,
    sample: &PreparedSample,
) -> Result<(f64, ModelParams<f32>)> {
    let mut tape = Tape::<f32>::new();
    let nodes = forward_on_tape(model, params, &mut tape, image_tensor(&sample.image))?;
    let coords: Vec<[f32; 2]> = sample
        .coords
        .iter()
        .map(|p| [p.x as f32, p.y as f32])
        .collect();
    let targets: Vec<[f32; 2]> = sample
        .targets
        .iter()
        .map(|t| [t.0 as f32, t.1 as f32])
        .collect();
    let loss = tape.point_loss(nodes.field, &coords, &targets)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut grads = tape.backward(loss)?;
    let mut out = params.zeros_like();
    for (slot, id) in out.params.iter_mut().zip(&nodes.params) {
        if let Some(g) = grads.take(*id) {
            slot.data = g.into_data();
        }
    }
    Ok((value, out))
}

#[cfg(feature = "parallel")]
fn gradients(
    model: &ModelConfig,
    params: &ModelParams<f32>,
    batch: &[PreparedSample],
) -> Result<Vec<(f64, ModelParams<f32>)>> {
    use rayon::prelude::*;
    batch
        .par_iter()
        .map(|s| sample_gradient(model, params, s))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn gradients(
    model: &ModelConfig,
    params: &ModelParams<f32>,
    batch: &[PreparedSample],
) -> Result<Vec<(f64, ModelParams<f32>)>> {
    batch
        .iter()
        .map(|s| sample_gradient(model, params, s))
        .collect()
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Batch loss before the update (mean of per-image losses).
    pub loss: f64,
    pub outcome: StepOutcome,
}

/// One optimizer step on the mean loss of `batch`. Gradients are summed in
/// batch order, so the result does not depend on how they were computed.
pub fn train_step(
    state: &mut TrainState,
    config: &TrainConfig,
    batch: &[PreparedSample],
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Usage("train_step needs a non-empty batch".into()));
    }
    let per_sample = gradients(&config.model, &state.params, batch)?;
    let scale = 1.0 / batch.len() as f32;
    let mut total = state.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        for (acc, p) in total.params.iter_mut().zip(&g.params) {
            for (a, &v) in acc.data.iter_mut().zip(&p.data) {
                *a += v * scale;
            }
        }
    }
    let outcome = adam_step(
        &mut state.params,
        &mut state.optimizer,
        &total,
        &config.optimizer,
    );
    Ok(StepReport {
        loss: loss / batch.len() as f64,
        outcome,
    })
}

/// Summary of one pass over the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Zero-based index of the epoch just finished.
    pub epoch: u64,
    /// Mean of the step losses; `None` when no batch had usable points.
    pub mean_loss: Option<f64>,
    pub step_losses: Vec<f64>,
    pub skipped_steps: usize,
    /// Mean distance between noised-then-restored held-out annotations and
    /// their un-noised positions.
    pub holdout_restore_err_px: Option<f64>,
}

/// Prepares the training example for dataset entry `index` in `epoch`:
/// augmentation first, then noise bounded on the augmented geometry.
pub fn prepare_sample(
    sample: &Sample,
    index: usize,
    epoch: u64,
    config: &TrainConfig,
) -> Result<Option<PreparedSample>> {
    let key = [index as u64, epoch];
    let (image, points) = augment(
        &sample.image,
        &sample.points,
        &mut substream(config.seed, Purpose::Augment, &key),
        &config.augment,
    )?;
    PreparedSample::noise(
        image,
        &points,
        config.bound_mode,
        config.alpha,
        &mut substream(config.seed, Purpose::Noise, &key),
    )
}

/// Runs one epoch over the training split of `dataset`.
pub fn train_epoch(
    dataset: &[Sample],
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    let epoch = state.epoch;
    let n_train = dataset.len() - config.holdout_len(dataset.len());
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut substream(config.seed, Purpose::Shuffle, &[epoch]));

    let mut step_losses = Vec::new();
    let mut skipped_steps = 0;
    for chunk in order.chunks(config.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &i in chunk {
            if let Some(p) = prepare_sample(&dataset[i], i, epoch, config)? {
                batch.push(p);
            }
        }
        if batch.is_empty() {
            continue;
        }
        let report = train_step(state, config, &batch)?;
        match report.outcome {
            StepOutcome::Applied => step_losses.push(report.loss),
            StepOutcome::SkippedNonFinite => skipped_steps += 1,
        }
    }
    state.epoch += 1;

    let mean_loss = (!step_losses.is_empty())
        .then(|| step_losses.iter().sum::<f64>() / step_losses.len() as f64);
    let holdout_restore_err_px = holdout_error(&dataset[n_train..], n_train, state, config)?;
    Ok(EpochMetrics {
        epoch,
        mean_loss,
        step_losses,
        skipped_steps,
        holdout_restore_err_px,
    })
}

/// Noises each held-out annotation set with a fixed stream, restores the
/// noised points with the current model, and averages the distance back to
/// the un-noised annotations.
pub fn holdout_error(
    holdout: &[Sample],
    first_index: usize,
    state: &TrainState,
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    let min = config.model.min_input();
    for (k, sample) in holdout.iter().enumerate() {
        if sample.image.width() < min || sample.image.height() < min {
            continue;
        }
        let mut rng = substream(config.seed, Purpose::Holdout, &[(first_index + k) as u64]);
        let Some(prepared) = PreparedSample::noise(
            sample.image.clone(),
            &sample.points,
            config.bound_mode,
            config.alpha,
            &mut rng,
        )?
        else {
            continue;
        };
        let field = predict_field(&config.model, &state.params, &sample.image)?;
        for (p, orig) in prepared.coords.iter().zip(sample.points.points()) {
            let (ox, oy) = field.sample(p.x, p.y, Sampling::Bilinear)?;
            total += Point::new(p.x + ox, p.y + oy).distance(*orig);
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}
