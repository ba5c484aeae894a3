//! Train, refine and evaluate, independent of where the data lives.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nae_core::eval::{point_errors, MatchMode, RestorationMetrics};
use nae_core::nn::predict_field;
use nae_core::train::{train_epoch, EpochMetrics, Sample, TrainConfig, TrainState};
use nae_core::{restore, ImageGrid, PointSet, Sampling, VectorField};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::Checkpoint;

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub epochs: Vec<EpochMetrics>,
    /// Training stopped early because the loss or parameters went
    /// non-finite.
    pub diverged: bool,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.model.clone(),
            params: self.state.params.clone(),
        }
    }
}

/// Runs `config.epochs` epochs, calling `on_epoch` after each. Zero epochs
/// yields the freshly initialised model.
pub fn train(
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    for _ in 0..config.epochs {
        let m = train_epoch(samples, &mut state, config)?;
        on_epoch(&m)?;
        let bad_loss = m.step_losses.iter().any(|l| !l.is_finite());
        let stalled = m.step_losses.is_empty() && m.skipped_steps > 0;
        epochs.push(m);
        if bad_loss || stalled || !state.params.all_finite() {
            log::warn!("training diverged in epoch {}", state.epoch - 1);
            diverged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        state,
        epochs,
        diverged,
    })
}

/// Per-epoch training curve written as CSV, one row per completed epoch.
/// The file is recreated when opened so reruns produce identical output.
pub struct MetricsCsv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsCsv {
    pub const HEADER: &'static str = "epoch,mean_loss,holdout_restore_err_px";

    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut csv = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        csv.line(Self::HEADER)?;
        Ok(csv)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        self.line(&format!(
            "{},{},{}",
            m.epoch,
            opt(m.mean_loss),
            opt(m.holdout_restore_err_px)
        ))
    }
}

pub fn predict(ckpt: &Checkpoint, image: &ImageGrid) -> Result<VectorField> {
    Ok(predict_field(&ckpt.config, &ckpt.params, image)?)
}

/// Moves every annotation by the predicted field sampled at its own
/// position.
pub fn refine(
    ckpt: &Checkpoint,
    image: &ImageGrid,
    points: &PointSet,
    sampling: Sampling,
) -> Result<PointSet> {
    if (image.width(), image.height()) != (points.width(), points.height()) {
        return Err(Error::Core(nae_core::Error::Shape(format!(
            "annotations are for a {}x{} image, image is {}x{}",
            points.width(),
            points.height(),
            image.width(),
            image.height()
        ))));
    }
    Ok(restore(points, &predict(ckpt, image)?, sampling)?)
}

/// Refines a whole dataset; scenes are independent and run in parallel.
pub fn refine_all(
    ckpt: &Checkpoint,
    samples: &[Sample],
    sampling: Sampling,
) -> Result<Vec<PointSet>> {
    samples
        .par_iter()
        .map(|s| refine(ckpt, &s.image, &s.points, sampling))
        .collect()
}

/// Pools per-point errors over all scenes.
pub fn evaluate(
    annotations: &[PointSet],
    refined: &[PointSet],
    truth: &[PointSet],
    mode: MatchMode,
) -> Result<RestorationMetrics> {
    if annotations.len() != truth.len() || refined.len() != truth.len() {
        return Err(Error::Usage(format!(
            "need one annotation, refined and truth set per scene, got {}, {} and {}",
            annotations.len(),
            refined.len(),
            truth.len()
        )));
    }
    let mut before = Vec::new();
    let mut after = Vec::new();
    for ((a, r), t) in annotations.iter().zip(refined).zip(truth) {
        before.extend(point_errors(a.points(), t.points(), mode)?);
        after.extend(point_errors(r.points(), t.points(), mode)?);
    }
    if before.len() != after.len() {
        return Err(Error::Core(nae_core::Error::Shape(
            "refined sets matched a different number of points than the originals".into(),
        )));
    }
    Ok(RestorationMetrics::from_errors(&before, &after, mode)?)
}
