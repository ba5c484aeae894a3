//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use nae_core::nn::{forward_on_tape, image_tensor, ModelConfig, ModelParams, Scalar, Tape};
use nae_core::noise::{window_size, RowRadius};
use nae_core::rng::{substream, Purpose};
use nae_core::{ImageGrid, Point};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// O(N^2) nearest-neighbour distances, `None` below two points.
pub fn brute_nn(points: &[Point]) -> Option<Vec<f64>> {
    if points.len() < 2 {
        return None;
    }
    Some(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let best = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y))
                    .fold(f64::INFINITY, f64::min);
                best.sqrt()
            })
            .collect(),
    )
}

/// Row caps computed row by row: scan every point for the window
/// `(i - w, i + w]`, fall back to the row below when nothing is inside, and
/// never exceed the row below. The virtual row `H` holds the overall
/// maximum.
pub fn row_cap_reference(entries: &[RowRadius], height: usize) -> Vec<f64> {
    let w = window_size(height) as f64;
    let mut caps = vec![0.0; height + 1];
    caps[height] = entries
        .iter()
        .map(|e| e.radius)
        .fold(f64::NEG_INFINITY, f64::max);
    for i in (0..height).rev() {
        let row = i as f64;
        let window = entries
            .iter()
            .filter(|e| e.y > row - w && e.y <= row + w)
            .map(|e| e.radius)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
        caps[i] = match window {
            None => caps[i + 1],
            Some(m) => m.min(caps[i + 1]),
        };
    }
    caps.truncate(height);
    caps
}

/// Pearson statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Critical value above which uniformity is rejected at `significance`.
pub fn chi_square_critical(bins: usize, significance: f64) -> f64 {
    ChiSquared::new((bins - 1) as f64)
        .unwrap()
        .inverse_cdf(1.0 - significance)
}

/// Smallest total cost over all one-to-one assignments of `a` to `b`
/// (equal sizes, N <= 8).
pub fn optimal_assignment_cost(a: &[Point], b: &[Point]) -> f64 {
    fn go(a: &[Point], b: &[Point], used: &mut Vec<bool>, i: usize) -> f64 {
        if i == a.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(a[i].distance(b[j]) + go(a, b, used, i + 1));
                used[j] = false;
            }
        }
        best
    }
    go(a, b, &mut vec![false; b.len()], 0)
}

pub fn random_image(w: usize, h: usize, seed: u64) -> ImageGrid {
    let mut rng = substream(seed, Purpose::Scene, &[99]);
    ImageGrid::new(
        w,
        h,
        (0..w * h).map(|_| rng.random_range(0.0f32..1.0)).collect(),
    )
    .unwrap()
}

/// The small network used for gradient checks.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        widths: vec![4, 4],
        kernel: 3,
        skip: true,
    }
}

/// Parameters with a non-zero head so every layer receives gradient.
pub fn gradcheck_params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut params =
        ModelParams::<f64>::init(config, &mut substream(seed, Purpose::Init, &[])).unwrap();
    let mut rng = substream(seed, Purpose::Init, &[1]);
    for p in &mut params.params {
        if p.name.starts_with("head") || p.name.ends_with("bias") {
            for v in &mut p.data {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    params
}

pub struct LossProblem {
    pub image: ImageGrid,
    pub coords: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

impl LossProblem {
    pub fn random(size: usize, n: usize, seed: u64) -> Self {
        let mut rng = substream(seed, Purpose::Noise, &[]);
        let hi = (size - 1) as f64;
        Self {
            image: random_image(size, size, seed),
            coords: (0..n)
                .map(|_| [rng.random_range(0.0..hi), rng.random_range(0.0..hi)])
                .collect(),
            targets: (0..n)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect(),
        }
    }

    fn cast<T: Scalar>(v: &[[f64; 2]]) -> Vec<[T; 2]> {
        v.iter()
            .map(|p| [T::from_f64(p[0]), T::from_f64(p[1])])
            .collect()
    }

    pub fn loss<T: Scalar>(&self, config: &ModelConfig, params: &ModelParams<T>) -> f64 {
        let mut tape = Tape::<T>::new();
        let nodes = forward_on_tape(config, params, &mut tape, image_tensor(&self.image)).unwrap();
        let loss = tape
            .point_loss(
                nodes.field,
                &Self::cast(&self.coords),
                &Self::cast(&self.targets),
            )
            .unwrap();
        tape.value(loss).data()[0].as_f64()
    }

    pub fn gradient<T: Scalar>(
        &self,
        config: &ModelConfig,
        params: &ModelParams<T>,
    ) -> Vec<Vec<f64>> {
        let mut tape = Tape::<T>::new();
        let nodes = forward_on_tape(config, params, &mut tape, image_tensor(&self.image)).unwrap();
        let loss = tape
            .point_loss(
                nodes.field,
                &Self::cast(&self.coords),
                &Self::cast(&self.targets),
            )
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        nodes
            .params
            .iter()
            .zip(&params.params)
            .map(|(id, p)| match grads.get(*id) {
                Some(g) => g.data().iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}

/// Relative error of each parameter tensor's analytic gradient against
/// central differences of the f64 loss at `params`:
/// `||a - n|| / max(||a||, ||n||)` in the Euclidean norm. Entry-wise ratios
/// are not used because entries with near-zero gradient are dominated by
/// round-off in the difference quotient.
pub fn finite_difference_errors(
    problem: &LossProblem,
    config: &ModelConfig,
    params: &ModelParams<f64>,
    analytic: &[Vec<f64>],
    step: f64,
) -> Vec<(String, f64)> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (k, p) in params.params.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for (i, &a) in analytic[k].iter().enumerate() {
            let orig = p.data[i];
            probe.params[k].data[i] = orig + step;
            let up = problem.loss(config, &probe);
            probe.params[k].data[i] = orig - step;
            let down = problem.loss(config, &probe);
            probe.params[k].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt());
        let rel = if scale == 0.0 {
            0.0
        } else {
            diff.sqrt() / scale
        };
        out.push((p.name.clone(), rel));
    }
    out
}
