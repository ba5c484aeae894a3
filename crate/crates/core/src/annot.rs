//! Images, point annotations and nearest-neighbour distances.
//!
//! Coordinates are continuous: `x` is the column, `y` the row, origin at the
//! top-left corner, and integer coordinates land on pixel centres.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// A single-channel image with intensities in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(alloc::format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(alloc::format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(alloc::format!(
                "pixel {bad} has intensity {} outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear lookup with clamp-to-edge borders.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }
}

/// A sub-pixel 2D location.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        squared_distance(self, other).sqrt()
    }

    /// Row index used by the per-row caps: `floor(y)` clamped to `[0, height)`.
    pub fn row(self, height: usize) -> usize {
        let r = Float::floor(self.y);
        if r <= 0.0 {
            0
        } else {
            (r as usize).min(height - 1)
        }
    }
}

#[inline]
pub(crate) fn squared_distance(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

/// Point annotations anchored to a `width x height` image together with the
/// distance from each point to its nearest neighbour.
///
/// Distances are undefined (and [`PointSet::nn_dist`] returns `None`) for sets
/// with fewer than two points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    width: usize,
    height: usize,
    points: Vec<Point>,
    nn_dist: Option<Vec<f64>>,
}

impl PointSet {
    /// Validates that every point is finite and inside `[0,W) x [0,H)`, then
    /// computes nearest-neighbour distances.
    pub fn new(width: usize, height: usize, points: Vec<Point>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(alloc::format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        for (index, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if p.x < 0.0 || p.y < 0.0 || p.x >= width as f64 || p.y >= height as f64 {
                return Err(Error::OutOfBounds {
                    index,
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
        }
        let nn_dist = nearest_distances(&points);
        Ok(Self {
            width,
            height,
            points,
            nn_dist,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nn_dist(&self) -> Option<&[f64]> {
        self.nn_dist.as_deref()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Largest coordinate still inside the half-open image extent.
    pub(crate) fn max_inside(extent: usize) -> f64 {
        (extent as f64).next_down()
    }
}

/// Distance from every point to its nearest other point, or `None` when fewer
/// than two points are given. Coincident points get distance zero.
///
/// Uses a uniform bucket grid; the minimum is taken over exact squared
/// distances before the square root, so results are identical to an
/// exhaustive pairwise scan.
pub fn nearest_distances(points: &[Point]) -> Option<Vec<f64>> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let extent = (max_x - min_x).max(max_y - min_y);
    if extent <= 0.0 {
        return Some(vec![0.0; n]);
    }
    // Roughly two points per cell.
    let cells_per_axis = Float::ceil(Float::sqrt(n as f64 / 2.0)).max(1.0);
    let cell = extent / cells_per_axis;
    let nx = ((max_x - min_x) / cell) as usize + 1;
    let ny = ((max_y - min_y) / cell) as usize + 1;
    let cell_of = |p: &Point| -> (usize, usize) {
        let cx = (((p.x - min_x) / cell) as usize).min(nx - 1);
        let cy = (((p.y - min_y) / cell) as usize).min(ny - 1);
        (cx, cy)
    };

    // Counting sort of point indices by cell.
    let mut start = vec![0usize; nx * ny + 1];
    let mut cell_ids = Vec::with_capacity(n);
    for p in points {
        let (cx, cy) = cell_of(p);
        let id = cy * nx + cx;
        cell_ids.push(id);
        start[id + 1] += 1;
    }
    for i in 0..nx * ny {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; n];
    for (i, &id) in cell_ids.iter().enumerate() {
        order[fill[id]] = i;
        fill[id] += 1;
    }

    let max_ring = nx.max(ny);
    let mut out = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            let x_lo = cx as isize - ring as isize;
            let x_hi = (cx + ring) as isize;
            let y_lo = cy as isize - ring as isize;
            let y_hi = (cy + ring) as isize;
            for gy in y_lo.max(0)..=y_hi.min(ny as isize - 1) {
                let on_edge_row = gy == y_lo || gy == y_hi;
                let step = if on_edge_row { 1 } else { (x_hi - x_lo).max(1) };
                let mut gx = x_lo;
                while gx <= x_hi {
                    if gx >= 0 && gx < nx as isize {
                        let id = gy as usize * nx + gx as usize;
                        for &j in &order[start[id]..start[id + 1]] {
                            if j != i {
                                best = best.min(squared_distance(*p, points[j]));
                            }
                        }
                    }
                    gx += step;
                }
            }
            // Unvisited points sit at least `ring` cells away; one cell of
            // slack absorbs rounding in the cell assignment.
            if ring >= 1 {
                let reach = (ring - 1) as f64 * cell;
                if best <= reach * reach {
                    break;
                }
            }
        }
        out.push(best.sqrt());
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[(f64, f64)]) -> Vec<Point> {
        raw.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn nearest_distances_small_cases() {
        let d = nearest_distances(&pts(&[(0.0, 0.0), (3.0, 4.0), (10.0, 0.0)])).unwrap();
        assert_eq!(d[0], 5.0);
        assert_eq!(d[1], 5.0);
        assert!((d[2] - 8.062_257_748_298_55).abs() < 1e-12);

        let d = nearest_distances(&pts(&[(0.0, 0.0), (0.0, 2.0)])).unwrap();
        assert_eq!(d, vec![2.0, 2.0]);

        let d = nearest_distances(&pts(&[(1.0, 1.0), (1.0, 1.0), (5.0, 5.0)])).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 5.656_854_249_492_38).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_two_points_is_undefined() {
        assert!(nearest_distances(&[]).is_none());
        assert!(nearest_distances(&pts(&[(1.0, 1.0)])).is_none());
        let set = PointSet::new(4, 4, pts(&[(1.0, 1.0)])).unwrap();
        assert!(set.nn_dist().is_none());
    }

    #[test]
    fn all_coincident_points() {
        let d = nearest_distances(&pts(&[(2.0, 2.0); 5])).unwrap();
        assert_eq!(d, vec![0.0; 5]);
    }

    #[test]
    fn point_set_rejects_out_of_bounds_and_nan() {
        let err = PointSet::new(64, 64, pts(&[(70.0, 3.0)])).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 0, .. }));
        let err = PointSet::new(64, 64, pts(&[(1.0, 1.0), (f64::NAN, 3.0)])).unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 1 });
        assert!(PointSet::new(64, 64, pts(&[(63.999, 0.0)])).is_ok());
        assert!(PointSet::new(64, 64, pts(&[(64.0, 0.0)])).is_err());
    }

    #[test]
    fn row_index_is_floor_clamped() {
        assert_eq!(Point::new(0.0, 3.7).row(10), 3);
        assert_eq!(Point::new(0.0, 9.99).row(10), 9);
        assert_eq!(Point::new(0.0, 12.0).row(10), 9);
        assert_eq!(Point::new(0.0, -0.5).row(10), 0);
    }

    #[test]
    fn image_validation_and_sampling() {
        assert!(ImageGrid::new(0, 3, vec![]).is_err());
        assert!(ImageGrid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageGrid::new(1, 1, vec![1.5]).is_err());
        let img = ImageGrid::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(img.sample(1.0, 0.0), 1.0);
        assert!((img.sample(0.5, 0.5) - 0.4375).abs() < 1e-7);
        assert_eq!(img.sample(-3.0, 9.0), 0.5);
    }
}
