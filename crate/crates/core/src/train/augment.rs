use alloc::vec::Vec;

use rand::Rng;

use crate::annot::{ImageGrid, Point, PointSet};
use crate::error::{Error, Result};

/// Random scaling, horizontal flipping and square cropping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_size: 128,
            scale_range: (0.7, 1.3),
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "scale range must satisfy 0 < min <= max, got [{lo}, {hi}]"
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(alloc::format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub flip: bool,
    /// Top-left corner of the crop in the scaled (and flipped) image.
    pub crop_x: usize,
    pub crop_y: usize,
}

/// Size of `extent` pixels after scaling, never below the crop.
fn scaled_extent(extent: usize, scale: f64, crop: usize) -> usize {
    (num_traits::Float::round(extent as f64 * scale) as usize).max(crop)
}

impl AugmentDraw {
    /// Samples a draw for an image of `width x height`.
    ///
    /// Scales below `crop / min(W, H)` are lifted to it so the crop always
    /// fits inside the scaled image.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        width: usize,
        height: usize,
        config: &AugmentConfig,
    ) -> Self {
        let crop = config.crop_size;
        let floor = crop as f64 / width.min(height) as f64;
        let lo = config.scale_range.0.max(floor);
        let hi = config.scale_range.1.max(lo);
        let scale = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let flip = rng.random_bool(config.flip_prob);
        let sw = scaled_extent(width, scale, crop);
        let sh = scaled_extent(height, scale, crop);
        let crop_x = rng.random_range(0..=sw - crop);
        let crop_y = rng.random_range(0..=sh - crop);
        Self {
            scale,
            flip,
            crop_x,
            crop_y,
        }
    }
}

/// Applies `draw`: the image is resampled bilinearly, points are scaled by
/// the same factor, mirrored with `x -> W' - 1 - x` when flipping, and only
/// points inside the crop survive (re-based to the crop origin).
/// Nearest-neighbour distances are recomputed on the survivors.
pub fn apply_augment(
    image: &ImageGrid,
    points: &PointSet,
    draw: &AugmentDraw,
    crop: usize,
) -> Result<(ImageGrid, PointSet)> {
    let sw = scaled_extent(image.width(), draw.scale, crop);
    let sh = scaled_extent(image.height(), draw.scale, crop);
    if draw.crop_x + crop > sw || draw.crop_y + crop > sh {
        return Err(Error::Config(alloc::format!(
            "crop at ({}, {}) of size {crop} exceeds the {sw}x{sh} scaled image",
            draw.crop_x,
            draw.crop_y
        )));
    }
    let mut pixels = Vec::with_capacity(crop * crop);
    for r in 0..crop {
        let sy = (draw.crop_y + r) as f64 / draw.scale;
        for c in 0..crop {
            let mut cx = (draw.crop_x + c) as f64;
            if draw.flip {
                cx = (sw - 1) as f64 - cx;
            }
            pixels.push(image.sample(cx / draw.scale, sy).clamp(0.0, 1.0));
        }
    }
    let out_image = ImageGrid::new(crop, crop, pixels)?;

    let (x0, y0) = (draw.crop_x as f64, draw.crop_y as f64);
    let size = crop as f64;
    let kept = points
        .points()
        .iter()
        .filter_map(|p| {
            let mut x = p.x * draw.scale;
            let y = p.y * draw.scale;
            if draw.flip {
                x = (sw - 1) as f64 - x;
            }
            let (x, y) = (x - x0, y - y0);
            (x >= 0.0 && x < size && y >= 0.0 && y < size).then_some(Point::new(x, y))
        })
        .collect();
    let out_points = PointSet::new(crop, crop, kept)?;
    Ok((out_image, out_points))
}

/// Samples a draw and applies it.
pub fn augment<R: Rng + ?Sized>(
    image: &ImageGrid,
    points: &PointSet,
    rng: &mut R,
    config: &AugmentConfig,
) -> Result<(ImageGrid, PointSet)> {
    let draw = AugmentDraw::sample(rng, image.width(), image.height(), config);
    apply_augment(image, points, &draw, config.crop_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use alloc::vec;

    fn gradient_image(w: usize, h: usize) -> ImageGrid {
        let px = (0..w * h)
            .map(|i| ((i % w) as f32 / w as f32 + (i / w) as f32 / h as f32) / 2.0)
            .collect();
        ImageGrid::new(w, h, px).unwrap()
    }

    #[test]
    fn identity_draw_keeps_everything() {
        let img = gradient_image(16, 16);
        let pts =
            PointSet::new(16, 16, vec![Point::new(2.5, 3.0), Point::new(10.0, 12.25)]).unwrap();
        let draw = AugmentDraw {
            scale: 1.0,
            flip: false,
            crop_x: 0,
            crop_y: 0,
        };
        let (i2, p2) = apply_augment(&img, &pts, &draw, 16).unwrap();
        assert_eq!(i2, img);
        assert_eq!(p2, pts);
    }

    #[test]
    fn flip_reflects_columns() {
        let img = gradient_image(10, 10);
        let pts = PointSet::new(10, 10, vec![Point::new(2.0, 1.0), Point::new(6.0, 4.0)]).unwrap();
        let draw = AugmentDraw {
            scale: 1.0,
            flip: true,
            crop_x: 0,
            crop_y: 0,
        };
        let (i2, p2) = apply_augment(&img, &pts, &draw, 10).unwrap();
        assert_eq!(p2.points()[0], Point::new(7.0, 1.0));
        assert_eq!(i2.get(7, 1), img.get(2, 1));
    }

    #[test]
    fn scaling_doubles_coordinates_and_distances() {
        let img = gradient_image(8, 8);
        let pts = PointSet::new(8, 8, vec![Point::new(3.0, 4.0), Point::new(1.0, 1.0)]).unwrap();
        let draw = AugmentDraw {
            scale: 2.0,
            flip: false,
            crop_x: 0,
            crop_y: 0,
        };
        let (_, p2) = apply_augment(&img, &pts, &draw, 16).unwrap();
        assert_eq!(p2.points()[0], Point::new(6.0, 8.0));
        let before = pts.nn_dist().unwrap()[0];
        assert!((p2.nn_dist().unwrap()[0] - 2.0 * before).abs() < 1e-12);
    }

    #[test]
    fn crop_drops_and_rebases() {
        let img = gradient_image(20, 20);
        let pts = PointSet::new(
            20,
            20,
            vec![
                Point::new(2.0, 2.0),
                Point::new(12.0, 15.0),
                Point::new(19.0, 9.0),
            ],
        )
        .unwrap();
        let draw = AugmentDraw {
            scale: 1.0,
            flip: false,
            crop_x: 8,
            crop_y: 8,
        };
        let (i2, p2) = apply_augment(&img, &pts, &draw, 8).unwrap();
        assert_eq!(p2.points(), &[Point::new(4.0, 7.0)]);
        assert!(p2.nn_dist().is_none());
        assert_eq!(i2.get(0, 0), img.get(8, 8));
    }

    #[test]
    fn sampled_draws_always_fit() {
        let cfg = AugmentConfig {
            crop_size: 48,
            ..AugmentConfig::default()
        };
        let img = gradient_image(64, 50);
        let pts = PointSet::new(64, 50, vec![Point::new(30.0, 20.0)]).unwrap();
        let mut rng = substream(2, Purpose::Augment, &[]);
        for _ in 0..200 {
            let draw = AugmentDraw::sample(&mut rng, 64, 50, &cfg);
            assert!(draw.scale >= 48.0 / 50.0);
            apply_augment(&img, &pts, &draw, 48).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AugmentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.scale_range = (1.2, 0.8);
        assert!(cfg.validate().is_err());
        cfg.scale_range = (0.0, 1.0);
        assert!(cfg.validate().is_err());
    }
}
