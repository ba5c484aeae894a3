//! Bounded random perturbation of point annotations.
//!
//! Each point `i` receives an offset with a uniformly random direction and a
//! magnitude drawn uniformly from `[0, r_i]`, where
//! `r_i = alpha * min(d_i, l_row(i))`. The per-row cap `l` either follows
//! the perspective-aware sliding-window rule ([`row_cap_perspective`]) or is
//! the median nearest-neighbour distance of the image ([`row_cap_constant`]).

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_traits::Float;
use rand::Rng;

use crate::annot::{Point, PointSet};
use crate::error::{Error, Result};

/// Largest alpha that keeps sampling discs of neighbouring points disjoint.
pub const MAX_DISJOINT_ALPHA: f64 = 0.5;
/// Hard ceiling for alpha even with the overlap override.
pub const MAX_OVERRIDE_ALPHA: f64 = 1.0;

/// The sampling-area factor, validated against the disjointness limit.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    /// Accepts `(0, 0.5]`, or `(0, 1]` when `allow_overlap` is set.
    pub fn new(value: f64, allow_overlap: bool) -> Result<Self> {
        let ceiling = if allow_overlap {
            MAX_OVERRIDE_ALPHA
        } else {
            MAX_DISJOINT_ALPHA
        };
        if !(value > 0.0 && value <= ceiling) {
            let hint = if value > MAX_DISJOINT_ALPHA && value <= MAX_OVERRIDE_ALPHA {
                " (values above 0.5 overlap neighbouring sampling regions and need the overlap override)"
            } else {
                ""
            };
            return Err(Error::Config(alloc::format!(
                "alpha must lie in (0, {ceiling}], got {value}{hint}"
            )));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// How the per-row radius cap is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BoundMode {
    /// Sliding-window maxima that never increase towards the top of the image.
    #[default]
    Perspective,
    /// Every row capped by the median nearest-neighbour distance.
    Constant,
}

/// Sliding-window half height for an image with `height` rows.
pub fn window_size(height: usize) -> usize {
    (height / 50).max(1)
}

/// A point's row coordinate paired with its radius value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowRadius {
    pub y: f64,
    pub radius: f64,
}

fn check_radii(entries: &[RowRadius]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if let Some(i) = entries
        .iter()
        .position(|e| !e.y.is_finite() || !e.radius.is_finite() || e.radius < 0.0)
    {
        return Err(Error::Config(alloc::format!(
            "entry {i} has a non-finite row or an invalid radius"
        )));
    }
    Ok(())
}

/// Per-row upper bound on the sampling radius for perspective imagery.
///
/// Walking from the bottom row to the top, row `i` takes the largest radius
/// among points with `i - w < y <= i + w` (`w` from [`window_size`]), falls
/// back to the row below when the window is empty, and is never allowed to
/// exceed the row below. The row below the image is seeded with the largest
/// radius overall.
pub fn row_cap_perspective(entries: &[RowRadius], height: usize) -> Result<Vec<f64>> {
    check_radii(entries)?;
    if height == 0 {
        return Err(Error::Shape("image height must be positive".into()));
    }
    let w = window_size(height) as i64;
    let h = height as i64;
    let seed = entries
        .iter()
        .map(|e| e.radius)
        .fold(f64::NEG_INFINITY, f64::max);

    // A point at row coordinate y belongs to rows ceil(y)-w ..= ceil(y)+w-1,
    // i.e. exactly 2w consecutive rows. Bucket points by the first of them.
    let span = 2 * w;
    let lowest_start = 1 - span;
    let mut start_max = vec![f64::NEG_INFINITY; (h - lowest_start) as usize];
    for e in entries {
        let start = Float::ceil(e.y) as i64 - w;
        if start < lowest_start || start > h - 1 {
            continue;
        }
        let slot = &mut start_max[(start - lowest_start) as usize];
        *slot = slot.max(e.radius);
    }

    // Row i sees buckets lowest_start + i ..= i, i.e. slots i ..= i + span - 1.
    let mut window_max = vec![f64::NEG_INFINITY; height];
    let mut deque: VecDeque<usize> = VecDeque::new();
    for (slot, &value) in start_max.iter().enumerate() {
        while deque.back().is_some_and(|&b| start_max[b] <= value) {
            deque.pop_back();
        }
        deque.push_back(slot);
        let first_row = slot as i64 - (span - 1);
        if first_row >= 0 {
            while deque.front().is_some_and(|&f| (f as i64) < first_row) {
                deque.pop_front();
            }
            window_max[first_row as usize] = start_max[*deque.front().unwrap()];
        }
    }

    let mut caps = vec![0.0; height];
    let mut below = seed;
    for i in (0..height).rev() {
        let candidate = if window_max[i] == f64::NEG_INFINITY {
            below
        } else {
            window_max[i]
        };
        caps[i] = candidate.min(below);
        below = caps[i];
    }
    Ok(caps)
}

/// Median of `values` (mean of the two central order statistics for even
/// counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Per-row cap for imagery without perspective: the median radius everywhere.
pub fn row_cap_constant(radii: &[f64], height: usize) -> Result<Vec<f64>> {
    let m = median(radii).ok_or(Error::EmptyPointSet)?;
    Ok(vec![m; height])
}

/// `r_i = alpha * min(d_i, cap[floor(y_i)])`.
pub fn radii(points: &PointSet, row_cap: &[f64], alpha: Alpha) -> Result<Vec<f64>> {
    if row_cap.len() != points.height() {
        return Err(Error::Shape(alloc::format!(
            "row cap has {} rows but the image has {}",
            row_cap.len(),
            points.height()
        )));
    }
    let d = points.nn_dist().ok_or(Error::TooFewPoints {
        required: 2,
        actual: points.len(),
    })?;
    Ok(points
        .points()
        .iter()
        .zip(d)
        .map(|(p, &di)| alpha.get() * di.min(row_cap[p.row(points.height())]))
        .collect())
}

/// Per-image noise bounds: the row cap and one radius per point.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingBounds {
    pub alpha: Alpha,
    pub row_cap: Vec<f64>,
    pub radius: Vec<f64>,
}

impl SamplingBounds {
    /// Computes bounds for `points`. Sets with fewer than two points have no
    /// nearest-neighbour distance and are never perturbed: every radius and
    /// every row cap is zero.
    pub fn compute(points: &PointSet, mode: BoundMode, alpha: Alpha) -> Result<Self> {
        let height = points.height();
        let Some(d) = points.nn_dist() else {
            return Ok(Self {
                alpha,
                row_cap: vec![0.0; height],
                radius: vec![0.0; points.len()],
            });
        };
        let row_cap = match mode {
            BoundMode::Perspective => {
                let entries: Vec<RowRadius> = points
                    .points()
                    .iter()
                    .zip(d)
                    .map(|(p, &radius)| RowRadius { y: p.y, radius })
                    .collect();
                row_cap_perspective(&entries, height)?
            }
            BoundMode::Constant => row_cap_constant(d, height)?,
        };
        let radius = radii(points, &row_cap, alpha)?;
        Ok(Self {
            alpha,
            row_cap,
            radius,
        })
    }
}

/// One applied noise offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetSample {
    /// Angle in radians, `[0, 2pi)`.
    pub direction: f64,
    pub magnitude: f64,
    pub dx: f64,
    pub dy: f64,
}

impl OffsetSample {
    pub const ZERO: Self = Self {
        direction: 0.0,
        magnitude: 0.0,
        dx: 0.0,
        dy: 0.0,
    };

    pub fn compose(direction: f64, magnitude: f64) -> Self {
        let (sin, cos) = Float::sin_cos(direction);
        Self {
            direction,
            magnitude,
            dx: magnitude * cos,
            dy: magnitude * sin,
        }
    }
}

/// Draws a direction uniformly from `[0, 2pi)` and a magnitude uniformly from
/// `[0, radius]`.
pub fn sample_offset<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> OffsetSample {
    let direction = rng.random_range(0.0..TAU);
    let magnitude = if radius > 0.0 {
        rng.random_range(0.0..=radius)
    } else {
        0.0
    };
    OffsetSample::compose(direction, magnitude)
}

/// Noised copy of a point set, index-aligned with its source.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedPointSet {
    pub points: Vec<Point>,
    /// The sampled offsets, before any clamping.
    pub offsets: Vec<OffsetSample>,
    pub clamped: Vec<bool>,
}

impl NoisedPointSet {
    /// Displacement actually applied after clamping, `noised - original`.
    pub fn effective_offsets(&self, original: &PointSet) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .zip(original.points())
            .map(|(n, o)| (n.x - o.x, n.y - o.y))
            .collect()
    }
}

/// Shifts every point by an independent offset bounded by its radius; shifted
/// points are clamped to `[0, W-1] x [0, H-1]`.
pub fn make_noised<R: Rng + ?Sized>(
    points: &PointSet,
    bounds: &SamplingBounds,
    rng: &mut R,
) -> Result<NoisedPointSet> {
    if bounds.radius.len() != points.len() {
        return Err(Error::Shape(alloc::format!(
            "{} radii for {} points",
            bounds.radius.len(),
            points.len()
        )));
    }
    let max_x = (points.width() - 1) as f64;
    let max_y = (points.height() - 1) as f64;
    let n = points.len();
    let mut out = NoisedPointSet {
        points: Vec::with_capacity(n),
        offsets: Vec::with_capacity(n),
        clamped: Vec::with_capacity(n),
    };
    for (p, &r) in points.points().iter().zip(&bounds.radius) {
        let o = sample_offset(rng, r);
        let raw = Point::new(p.x + o.dx, p.y + o.dy);
        let moved = Point::new(raw.x.clamp(0.0, max_x), raw.y.clamp(0.0, max_y));
        out.clamped.push(moved != raw);
        out.points.push(moved);
        out.offsets.push(o);
    }
    Ok(out)
}
