//! Annotation quality against ground truth.

use alloc::vec;
use alloc::vec::Vec;

use crate::annot::{squared_distance, Point};
use crate::error::{Error, Result};

/// How annotations are paired with truth points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// Annotation `i` belongs to truth point `i`.
    #[default]
    Indexed,
    /// Each annotation, in order, takes the closest truth point not yet taken.
    NnMatch,
}

impl MatchMode {
    pub fn tag(self) -> &'static str {
        match self {
            MatchMode::Indexed => "indexed",
            MatchMode::NnMatch => "nn_match",
        }
    }
}

/// Euclidean error of every matched annotation.
///
/// In [`MatchMode::NnMatch`] with unequal sizes only `min(N, M)` annotations
/// are matched.
pub fn point_errors(annotations: &[Point], truth: &[Point], mode: MatchMode) -> Result<Vec<f64>> {
    match mode {
        MatchMode::Indexed => {
            if annotations.len() != truth.len() {
                return Err(Error::Shape(alloc::format!(
                    "indexed matching needs equal sizes, got {} annotations and {} truth points",
                    annotations.len(),
                    truth.len()
                )));
            }
            Ok(annotations
                .iter()
                .zip(truth)
                .map(|(a, t)| a.distance(*t))
                .collect())
        }
        MatchMode::NnMatch => {
            let mut taken = vec![false; truth.len()];
            let mut out = Vec::with_capacity(annotations.len().min(truth.len()));
            for a in annotations {
                let best = truth
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !taken[*j])
                    .map(|(j, t)| (j, squared_distance(*a, *t)))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                let Some((j, d2)) = best else { break };
                taken[j] = true;
                out.push(num_traits::Float::sqrt(d2));
            }
            Ok(out)
        }
    }
}

/// Linear-interpolation quantile of ascending `sorted`, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = num_traits::Float::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * t)
}

/// Error before and after refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestorationMetrics {
    pub mean_err_before: f64,
    pub mean_err_after: f64,
    /// `1 - after / before`; undefined when the initial error is zero.
    pub improvement_ratio: Option<f64>,
    /// Median of the refined errors.
    pub p50: f64,
    /// 90th percentile of the refined errors.
    pub p90: f64,
    pub n_points: usize,
    pub method: MatchMode,
}

impl RestorationMetrics {
    pub fn from_errors(before: &[f64], after: &[f64], method: MatchMode) -> Result<Self> {
        if before.len() != after.len() || before.is_empty() {
            return Err(Error::Shape(alloc::format!(
                "need matching non-empty error lists, got {} and {}",
                before.len(),
                after.len()
            )));
        }
        let n = before.len() as f64;
        let mean_err_before = before.iter().sum::<f64>() / n;
        let mean_err_after = after.iter().sum::<f64>() / n;
        let mut sorted = after.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean_err_before,
            mean_err_after,
            improvement_ratio: improvement_ratio(mean_err_before, mean_err_after),
            p50: quantile(&sorted, 0.5).unwrap(),
            p90: quantile(&sorted, 0.9).unwrap(),
            n_points: before.len(),
            method,
        })
    }
}

pub fn improvement_ratio(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| 1.0 - after / before)
}
