//! Soft rectangular blend masks and the masked convex blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    /// `(row, col)` of the core rectangle center, as fractions of `(H, W)`.
    pub mask_center: (f64, f64),
    /// `(h, w)` half extents of the core rectangle, as fractions of `(H, W)`.
    pub mask_half_extent: (f64, f64),
    /// Width in pixels of the linear falloff band outside the core rectangle.
    pub feather_radius: f64,
    pub blend_ratio: f64,
    pub seed: u64,
}

impl BlendSpec {
    pub fn validate(&self) -> Result<()> {
        let (hh, hw) = self.mask_half_extent;
        let finite = [self.mask_center.0, self.mask_center.1, hh, hw, self.feather_radius]
            .iter()
            .all(|v| v.is_finite());
        if !finite || hh < 0.0 || hw < 0.0 || self.feather_radius < 0.0 {
            return Err(Error::invalid(format!("invalid blend mask geometry {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.blend_ratio) {
            return Err(Error::invalid(format!(
                "blend ratio {} outside [0, 1]",
                self.blend_ratio
            )));
        }
        Ok(())
    }
}

/// An `H×W` mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl BlendMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Mask equal to 1 on the core rectangle, 0 at Euclidean distance `>= feather_radius`
/// outside it, and linear in between. Pixel `(i, j)` is sampled at its center `(i + ½, j + ½)`.
pub fn make_blend_mask(height: usize, width: usize, spec: &BlendSpec) -> Result<BlendMask> {
    spec.validate()?;
    let (h, w) = (height as f64, width as f64);
    let (cy, cx) = (spec.mask_center.0 * h, spec.mask_center.1 * w);
    let (hy, hx) = (spec.mask_half_extent.0 * h, spec.mask_half_extent.1 * w);
    let mut values = Vec::with_capacity(height * width);
    for i in 0..height {
        let dy = ((i as f64 + 0.5 - cy).abs() - hy).max(0.0);
        for j in 0..width {
            let dx = ((j as f64 + 0.5 - cx).abs() - hx).max(0.0);
            let v = if dy == 0.0 && dx == 0.0 {
                1.0
            } else if spec.feather_radius == 0.0 {
                0.0
            } else {
                (1.0 - (dy * dy + dx * dx).sqrt() / spec.feather_radius).max(0.0)
            };
            values.push(v);
        }
    }
    BlendMask::new(height, width, values)
}

/// `S = (1 − r·M) ⊙ base + (r·M) ⊙ transformed`, per pixel and channel.
pub fn blend_images(
    base: &ImageTensor,
    transformed: &ImageTensor,
    mask: &BlendMask,
    blend_ratio: f64,
) -> Result<ImageTensor> {
    if !base.same_shape(transformed)
        || mask.height != base.height()
        || mask.width != base.width()
    {
        return Err(Error::Shape(format!(
            "base {}x{}, transformed {}x{}, mask {}x{}",
            base.height(),
            base.width(),
            transformed.height(),
            transformed.width(),
            mask.height,
            mask.width
        )));
    }
    if !(0.0..=1.0).contains(&blend_ratio) {
        return Err(Error::invalid(format!("blend ratio {blend_ratio} outside [0, 1]")));
    }
    let data = base
        .data()
        .iter()
        .zip(transformed.data())
        .enumerate()
        .map(|(i, (&b, &t))| {
            let a = blend_ratio * mask.values[i / CHANNELS];
            ((1.0 - a) * f64::from(b) + a * f64::from(t)).clamp(0.0, 1.0) as f32
        })
        .collect();
    ImageTensor::new(base.height(), base.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(center: (f64, f64), half: (f64, f64), feather: f64) -> BlendSpec {
        BlendSpec {
            mask_center: center,
            mask_half_extent: half,
            feather_radius: feather,
            blend_ratio: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn zero_feather_is_binary() {
        let m = make_blend_mask(20, 20, &spec((0.5, 0.5), (0.2, 0.3), 0.0)).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.values().contains(&0.0) && m.values().contains(&1.0));
    }

    #[test]
    fn full_extent_is_all_ones() {
        let m = make_blend_mask(16, 12, &spec((0.5, 0.5), (0.5, 0.5), 0.0)).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn feathered_mask_matches_nearest_point_oracle() {
        let (h, w) = (16usize, 16usize);
        let m = make_blend_mask(h, w, &spec((0.5, 0.5), (0.25, 0.25), 2.0)).unwrap();
        // Core rectangle is rows/cols [4, 12] in continuous coordinates.
        for i in 0..h {
            for j in 0..w {
                let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
                let (ny, nx) = (y.clamp(4.0, 12.0), x.clamp(4.0, 12.0));
                let d = ((y - ny).powi(2) + (x - nx).powi(2)).sqrt();
                let expected = if d == 0.0 { 1.0 } else { (1.0 - d / 2.0).max(0.0) };
                assert_eq!(m.get(i, j), expected, "pixel ({i}, {j})");
            }
        }
        // Monotone non-increasing moving outward along the center row.
        let row: Vec<f64> = (8..16).map(|j| m.get(8, j)).collect();
        assert!(row.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn blend_examples() {
        let base = ImageTensor::filled(8, 8, 0.2).unwrap();
        let t = ImageTensor::filled(8, 8, 0.8).unwrap();
        let ones = BlendMask::filled(8, 8, 1.0).unwrap();
        let out = blend_images(&base, &t, &ones, 0.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
        assert_eq!(blend_images(&base, &t, &ones, 0.0).unwrap(), base);
        let zeros = BlendMask::filled(8, 8, 0.0).unwrap();
        assert_eq!(blend_images(&base, &t, &zeros, 0.7).unwrap(), base);
    }

    #[test]
    fn blend_errors() {
        let base = ImageTensor::filled(8, 8, 0.2).unwrap();
        let other = ImageTensor::filled(8, 9, 0.2).unwrap();
        let mask = BlendMask::filled(8, 8, 1.0).unwrap();
        assert!(matches!(blend_images(&base, &other, &mask, 0.5), Err(Error::Shape(_))));
        assert!(blend_images(&base, &base, &mask, 1.5).is_err());
        assert!(make_blend_mask(8, 8, &spec((0.5, 0.5), (-0.1, 0.1), 0.0)).is_err());
    }
}
