//! Robustness curves over annotation jitter and the sampling-range
//! ablation, each run end to end on freshly generated data.
//!
//! Every run of a sweep uses the same scene seed and training seed, so only
//! the swept quantity differs between rows.

use nae_core::eval::MatchMode;
use nae_core::noise::{Alpha, MAX_DISJOINT_ALPHA};
use nae_core::synth::{JitterSpec, SceneSpec};
use nae_core::train::{Sample, TrainConfig};
use nae_core::{PointSet, Sampling};

use crate::dataset::{self, SyntheticScene};
use crate::error::Result;
use crate::pipeline;
use crate::report::{ReportRow, OVERLAP};

pub const DEFAULT_BETAS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const DEFAULT_ALPHAS: [f64; 4] = [0.3, 0.4, 0.5, 0.6];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub scenes: usize,
    pub spec: SceneSpec,
    /// Seed for scene generation and jitter.
    pub data_seed: u64,
    /// Training settings; `alpha` is replaced in the alpha ablation.
    pub train: TrainConfig,
    pub sampling: Sampling,
    pub match_mode: MatchMode,
}

/// Generates, trains, refines and scores one configuration.
pub fn run_point(cfg: &SweepConfig, beta: f64, train: &TrainConfig) -> Result<ReportRow> {
    let scenes = dataset::generate(cfg.scenes, &cfg.spec, &JitterSpec { beta }, cfg.data_seed)?;
    score(&scenes, beta, train, cfg)
}

fn score(
    scenes: &[SyntheticScene],
    beta: f64,
    train: &TrainConfig,
    cfg: &SweepConfig,
) -> Result<ReportRow> {
    let samples: Vec<Sample> = scenes
        .iter()
        .map(|s| Sample {
            image: s.image.clone(),
            points: s.annotations.clone(),
        })
        .collect();
    let annotations: Vec<PointSet> = scenes.iter().map(|s| s.annotations.clone()).collect();
    let truth: Vec<PointSet> = scenes.iter().map(|s| s.truth.clone()).collect();
    let alpha = Some(train.alpha.get());

    let outcome = pipeline::train(&samples, train, |m| {
        log::info!(
            "beta {beta} alpha {} epoch {}: loss {:?}, holdout error {:?}",
            train.alpha.get(),
            m.epoch,
            m.mean_loss,
            m.holdout_restore_err_px
        );
        Ok(())
    })?;
    let mut row = if outcome.diverged {
        // Score the untouched annotations so the row still reports the
        // starting error.
        let base = pipeline::evaluate(&annotations, &annotations, &truth, cfg.match_mode)?;
        log::warn!("beta {beta}: training diverged, row flagged");
        ReportRow::diverged(Some(beta), alpha, base.mean_err_before, base.n_points)
    } else {
        let ckpt = outcome.checkpoint(train);
        let refined = pipeline::refine_all(&ckpt, &samples, cfg.sampling)?;
        let m = pipeline::evaluate(&annotations, &refined, &truth, cfg.match_mode)?;
        ReportRow::from_metrics(Some(beta), alpha, &m)
    };
    if train.alpha.get() > MAX_DISJOINT_ALPHA {
        row.add_flag(OVERLAP);
    }
    Ok(row)
}

/// One row per jitter level, all trained with `cfg.train`.
pub fn robustness(cfg: &SweepConfig, betas: &[f64]) -> Result<Vec<ReportRow>> {
    if betas.is_empty() {
        return Err(crate::Error::Usage("the jitter list is empty".into()));
    }
    betas
        .iter()
        .map(|&b| run_point(cfg, b, &cfg.train))
        .collect()
}

/// One row per sampling-range factor on a single dataset. All factors are
/// validated before any training starts, so a factor above 0.5 without
/// `allow_overlap` fails fast.
pub fn alpha_ablation(
    cfg: &SweepConfig,
    beta: f64,
    alphas: &[f64],
    allow_overlap: bool,
) -> Result<Vec<ReportRow>> {
    if alphas.is_empty() {
        return Err(crate::Error::Usage("the alpha list is empty".into()));
    }
    let alphas = alphas
        .iter()
        .map(|&a| Alpha::new(a, allow_overlap))
        .collect::<Result<Vec<_>, _>>()?;
    let scenes = dataset::generate(cfg.scenes, &cfg.spec, &JitterSpec { beta }, cfg.data_seed)?;
    alphas
        .into_iter()
        .map(|alpha| {
            let train = TrainConfig {
                alpha,
                ..cfg.train.clone()
            };
            score(&scenes, beta, &train, cfg)
        })
        .collect()
}
