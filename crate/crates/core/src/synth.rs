//! Synthetic counting scenes with exactly known object centres, plus the
//! fixed-magnitude annotation jitter used to emulate careless labelling.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::annot::{ImageGrid, Point, PointSet};
use crate::error::{Error, Result};

/// Rejection-sampling budget per object.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Layout {
    #[default]
    Uniform,
    /// Objects shrink linearly towards the top of the image, to `top_scale`
    /// times their base size at `y = 0`, and pack proportionally denser.
    Perspective { top_scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Render {
    /// Isotropic Gaussian with sigma = radius / 2 and unit peak.
    #[default]
    Gaussian,
    /// Solid disc of the object radius.
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range the object count is drawn from.
    pub count: (usize, usize),
    /// Object radius at full scale, in pixels.
    pub radius: f64,
    pub render: Render,
    pub layout: Layout,
    /// Minimum distance between centres at full scale.
    pub min_separation: f64,
    /// Standard deviation of additive background noise.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            count: (8, 14),
            radius: 3.0,
            render: Render::Gaussian,
            layout: Layout::Uniform,
            min_separation: 10.0,
            noise_sigma: 0.05,
        }
    }
}

impl SceneSpec {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.width == 0 || self.height == 0 {
            return bad(alloc::format!(
                "scene size must be positive, got {}x{}",
                self.width,
                self.height
            ));
        }
        if self.count.0 > self.count.1 {
            return bad(alloc::format!("count range {:?} is empty", self.count));
        }
        if !(self.min_separation > 0.0) {
            return bad(alloc::format!(
                "min separation must be positive, got {}",
                self.min_separation
            ));
        }
        if !(self.radius > 0.0) {
            return bad(alloc::format!(
                "object radius must be positive, got {}",
                self.radius
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(alloc::format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if let Layout::Perspective { top_scale } = self.layout {
            if !(top_scale > 0.0 && top_scale <= 1.0) {
                return bad(alloc::format!(
                    "top scale must lie in (0, 1], got {top_scale}"
                ));
            }
        }
        Ok(())
    }

    /// Size factor at row coordinate `y`: 1 everywhere for uniform layouts,
    /// linear from `top_scale` at the top row to 1 at the bottom row.
    pub fn scale_at(&self, y: f64) -> f64 {
        match self.layout {
            Layout::Uniform => 1.0,
            Layout::Perspective { top_scale } => {
                if self.height < 2 {
                    return 1.0;
                }
                let t = (y / (self.height - 1) as f64).clamp(0.0, 1.0);
                top_scale + (1.0 - top_scale) * t
            }
        }
    }
}

/// A rendered scene and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: ImageGrid,
    pub centers: PointSet,
    /// Rendered radius of each object.
    pub radii: Vec<f64>,
}

pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let count = rng.random_range(spec.count.0..=spec.count.1);
    let (w, h) = (spec.width, spec.height);
    let top_scale = match spec.layout {
        Layout::Uniform => 1.0,
        Layout::Perspective { top_scale } => top_scale,
    };
    let mut centers: Vec<Point> = Vec::with_capacity(count);
    for placed in 0..count {
        let mut found = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x = rng.random_range(0.0..=(w - 1) as f64);
            let y = rng.random_range(0.0..=(h - 1) as f64);
            let s = spec.scale_at(y);
            // Density proportional to 1 / scale^2: thin out candidates where
            // objects are large.
            let keep = (top_scale / s).powi(2);
            if keep < 1.0 && rng.random::<f64>() >= keep {
                continue;
            }
            let cand = Point::new(x, y);
            let clear = centers.iter().all(|c| {
                let sep = spec.min_separation * (s + spec.scale_at(c.y)) / 2.0;
                c.distance(cand) >= sep
            });
            if clear {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(c) => centers.push(c),
            None => {
                return Err(Error::PackingInfeasible {
                    placed,
                    requested: count,
                })
            }
        }
    }
    let radii: Vec<f64> = centers
        .iter()
        .map(|c| spec.radius * spec.scale_at(c.y))
        .collect();

    let mut pixels = vec![0.0f64; w * h];
    for (c, &r) in centers.iter().zip(&radii) {
        let reach = match spec.render {
            Render::Gaussian => 1.5 * r,
            Render::Disc => r,
        };
        let x0 = Float::floor(c.x - reach).max(0.0) as usize;
        let x1 = (Float::ceil(c.x + reach) as usize).min(w - 1);
        let y0 = Float::floor(c.y - reach).max(0.0) as usize;
        let y1 = (Float::ceil(c.y + reach) as usize).min(h - 1);
        let sigma2 = 2.0 * (r / 2.0) * (r / 2.0);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let d2 = (px as f64 - c.x).powi(2) + (py as f64 - c.y).powi(2);
                let v = match spec.render {
                    Render::Gaussian => Float::exp(-d2 / sigma2),
                    Render::Disc => {
                        if d2 <= r * r {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                let slot = &mut pixels[py * w + px];
                *slot = slot.max(v);
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for v in &mut pixels {
            *v += noise.sample(rng);
        }
    }
    let image = ImageGrid::new(
        w,
        h,
        pixels
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0) as f32)
            .collect(),
    )?;
    Ok(Scene {
        image,
        centers: PointSet::new(w, h, centers)?,
        radii,
    })
}

/// Annotation error model: every annotation is displaced by exactly
/// `beta * d_i` in a uniformly random direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterSpec {
    pub beta: f64,
}

/// The jittered annotations with the raw (pre-clamp) displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct Jittered {
    pub points: PointSet,
    pub displacement: Vec<(f64, f64)>,
    pub clamped: Vec<bool>,
}

pub fn jitter_annotations<R: Rng + ?Sized>(
    centers: &PointSet,
    spec: &JitterSpec,
    rng: &mut R,
) -> Result<Jittered> {
    if !(spec.beta >= 0.0 && spec.beta.is_finite()) {
        return Err(Error::Config(alloc::format!(
            "jitter factor must be a non-negative number, got {}",
            spec.beta
        )));
    }
    let d = centers.nn_dist().ok_or(Error::TooFewPoints {
        required: 2,
        actual: centers.len(),
    })?;
    let max_x = (centers.width() - 1) as f64;
    let max_y = (centers.height() - 1) as f64;
    let n = centers.len();
    let mut points = Vec::with_capacity(n);
    let mut displacement = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for (c, &di) in centers.points().iter().zip(d) {
        let theta = rng.random_range(0.0..TAU);
        let m = spec.beta * di;
        let (sin, cos) = Float::sin_cos(theta);
        let (dx, dy) = (m * cos, m * sin);
        let raw = Point::new(c.x + dx, c.y + dy);
        let p = Point::new(raw.x.clamp(0.0, max_x), raw.y.clamp(0.0, max_y));
        clamped.push(p != raw);
        points.push(p);
        displacement.push((dx, dy));
    }
    Ok(Jittered {
        points: PointSet::new(centers.width(), centers.height(), points)?,
        displacement,
        clamped,
    })
}
