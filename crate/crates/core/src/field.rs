//! Dense two-channel denoise field and annotation restoration.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::annot::{Point, PointSet};
use crate::error::{Error, Result};

/// Per-pixel `(dx, dy)` offsets in pixels, each channel row-major, with the
/// spatial size of the image it was predicted from.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

/// How a field is looked up between grid positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

/// The four grid cells and weights used to interpolate at `(x, y)`.
///
/// Coordinates are clamped to `[0, W-1] x [0, H-1]` first. Integer
/// coordinates put all weight on a single cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taps<T> {
    pub index: [usize; 4],
    pub weight: [T; 4],
}

impl<T: Float> Taps<T> {
    pub fn bilinear(width: usize, height: usize, x: T, y: T) -> Self {
        let zero = T::zero();
        let one = T::one();
        let x = x.max(zero).min(T::from(width - 1).unwrap());
        let y = y.max(zero).min(T::from(height - 1).unwrap());
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0.to_usize().unwrap();
        let y0 = y0.to_usize().unwrap();
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        Self {
            index: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            weight: [
                (one - fx) * (one - fy),
                fx * (one - fy),
                (one - fx) * fy,
                fx * fy,
            ],
        }
    }

    pub fn nearest(width: usize, height: usize, x: T, y: T) -> Self {
        let zero = T::zero();
        let x = x.max(zero).min(T::from(width - 1).unwrap()).round();
        let y = y.max(zero).min(T::from(height - 1).unwrap()).round();
        let i = y.to_usize().unwrap() * width + x.to_usize().unwrap();
        Self {
            index: [i; 4],
            weight: [T::one(), zero, zero, zero],
        }
    }

    pub fn apply(&self, values: &[T]) -> T {
        self.index
            .iter()
            .zip(&self.weight)
            .fold(T::zero(), |acc, (&i, &w)| acc + w * values[i])
    }
}

impl VectorField {
    pub fn new(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(alloc::format!(
                "field must be at least 1x1, got {width}x{height}"
            )));
        }
        let n = width * height;
        if dx.len() != n || dy.len() != n {
            return Err(Error::Shape(alloc::format!(
                "{width}x{height} field needs {n} values per channel, got {} and {}",
                dx.len(),
                dy.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, vec![0.0; n], vec![0.0; n])
    }

    /// A field with the same offset everywhere.
    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, vec![dx; n], vec![dy; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    pub fn dx_mut(&mut self) -> &mut [f32] {
        &mut self.dx
    }

    pub fn dy_mut(&mut self) -> &mut [f32] {
        &mut self.dy
    }

    /// Interpolated offset at `(x, y)`; coordinates outside the grid are
    /// clamped to its border first.
    pub fn sample(&self, x: f64, y: f64, mode: Sampling) -> Result<(f64, f64)> {
        if x.is_nan() || y.is_nan() {
            return Err(Error::NonFinite { index: 0 });
        }
        let taps = match mode {
            Sampling::Bilinear => Taps::<f64>::bilinear(self.width, self.height, x, y),
            Sampling::Nearest => Taps::<f64>::nearest(self.width, self.height, x, y),
        };
        let mut ox = 0.0;
        let mut oy = 0.0;
        for (&i, &w) in taps.index.iter().zip(&taps.weight) {
            ox += w * self.dx[i] as f64;
            oy += w * self.dy[i] as f64;
        }
        Ok((ox, oy))
    }

    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.sample(x, y, Sampling::Bilinear)
    }
}

/// Moves every annotation by the field offset sampled at its own position.
///
/// Results are clamped into the image and nearest-neighbour distances are
/// recomputed on the refined set.
pub fn restore(points: &PointSet, field: &VectorField, mode: Sampling) -> Result<PointSet> {
    if field.width() != points.width() || field.height() != points.height() {
        return Err(Error::Shape(alloc::format!(
            "field is {}x{} but annotations belong to a {}x{} image",
            field.width(),
            field.height(),
            points.width(),
            points.height()
        )));
    }
    let max_x = PointSet::max_inside(points.width());
    let max_y = PointSet::max_inside(points.height());
    let mut out = Vec::with_capacity(points.len());
    for (index, p) in points.points().iter().enumerate() {
        let (ox, oy) = field
            .sample(p.x, p.y, mode)
            .map_err(|_| Error::NonFinite { index })?;
        out.push(Point::new(
            (p.x + ox).clamp(0.0, max_x),
            (p.y + oy).clamp(0.0, max_y),
        ));
    }
    PointSet::new(points.width(), points.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(width: usize, height: usize) -> VectorField {
        let dx: Vec<f32> = (0..width * height).map(|i| i as f32).collect();
        let dy: Vec<f32> = dx.iter().map(|v| -2.0 * v).collect();
        VectorField::new(width, height, dx, dy).unwrap()
    }

    #[test]
    fn integer_coordinates_hit_grid_values() {
        let f = ramp(8, 8);
        assert_eq!(f.bilinear_sample(3.0, 5.0).unwrap(), (43.0, -86.0));
    }

    #[test]
    fn midpoint_averages_four_cells() {
        let f = VectorField::new(2, 2, vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).unwrap();
        assert_eq!(f.bilinear_sample(0.5, 0.5).unwrap().0, 1.5);
    }

    #[test]
    fn border_clamp() {
        let f = ramp(6, 5);
        assert_eq!(f.bilinear_sample(-4.0, 2.0), f.bilinear_sample(0.0, 2.0));
        assert_eq!(f.bilinear_sample(100.0, 2.5), f.bilinear_sample(5.0, 2.5));
        assert!(f.bilinear_sample(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn nearest_mode_rounds() {
        let f = ramp(4, 4);
        assert_eq!(f.sample(1.4, 2.6, Sampling::Nearest).unwrap().0, 13.0);
    }

    #[test]
    fn shape_checks() {
        assert!(VectorField::new(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(VectorField::zeros(0, 2).is_err());
        let pts = PointSet::new(4, 4, vec![Point::new(1.0, 1.0)]).unwrap();
        let f = VectorField::zeros(5, 4).unwrap();
        assert!(matches!(
            restore(&pts, &f, Sampling::Bilinear),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_field_is_identity_even_at_the_far_edge() {
        let pts = PointSet::new(
            10,
            10,
            vec![
                Point::new(9.75, 0.0),
                Point::new(2.5, 9.999),
                Point::new(4.0, 4.0),
            ],
        )
        .unwrap();
        let f = VectorField::zeros(10, 10).unwrap();
        assert_eq!(restore(&pts, &f, Sampling::Bilinear).unwrap(), pts);
    }

    #[test]
    fn constant_field_translates() {
        let pts = PointSet::new(10, 10, vec![Point::new(1.0, 1.0), Point::new(8.5, 3.0)]).unwrap();
        let f = VectorField::constant(10, 10, 2.0, 0.0).unwrap();
        let out = restore(&pts, &f, Sampling::Bilinear).unwrap();
        assert_eq!(out.points()[0], Point::new(3.0, 1.0));
        assert_eq!(out.points()[1].x, 10f64.next_down());
        assert_eq!(out.nn_dist().unwrap().len(), 2);
    }
}
