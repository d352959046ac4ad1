//! Photometric and geometric transforms applied to the source image before self-blending.
//!
//! All three transforms compose in a fixed order: scale, rotate, then color. Scale and
//! rotation are folded into a single inverse-mapped bilinear resample about the image
//! center, so the output is resampled once onto the original grid with edge clamping.

use serde::{Deserialize, Serialize};

use crate::image::{ImageTensor, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Scale,
    Rotate,
    ColorAdjust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub scale_factor: f64,
    /// Degrees, counter-clockwise as displayed (rows grow downward).
    pub rotation: f64,
    pub brightness_delta: f64,
    pub contrast_factor: f64,
    pub seed: u64,
}

impl TransformSpec {
    pub const IDENTITY: TransformSpec = TransformSpec {
        scale_factor: 1.0,
        rotation: 0.0,
        brightness_delta: 0.0,
        contrast_factor: 1.0,
        seed: 0,
    };

    /// The transforms that actually change the image, in application order.
    pub fn active_kinds(&self) -> Vec<TransformKind> {
        let mut kinds = Vec::new();
        if self.scale_factor != 1.0 {
            kinds.push(TransformKind::Scale);
        }
        if self.rotation != 0.0 {
            kinds.push(TransformKind::Rotate);
        }
        if self.brightness_delta != 0.0 || self.contrast_factor != 1.0 {
            kinds.push(TransformKind::ColorAdjust);
        }
        kinds
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Bilinear sample at fractional `(y, x)` with coordinates clamped to the image.
#[inline]
fn sample_bilinear(img: &ImageTensor, y: f64, x: f64, ch: usize) -> f64 {
    let ymax = (img.height() - 1) as f64;
    let xmax = (img.width() - 1) as f64;
    let y = y.clamp(0.0, ymax);
    let x = x.clamp(0.0, xmax);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = f64::from(img.get(y0, x0, ch)) * (1.0 - fx) + f64::from(img.get(y0, x1, ch)) * fx;
    let bottom = f64::from(img.get(y1, x0, ch)) * (1.0 - fx) + f64::from(img.get(y1, x1, ch)) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn resample(img: &ImageTensor, scale: f64, rotation_deg: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            // Inverse of p' = center + s·R(θ)(p − center).
            let sx = cx + (cos * dx - sin * dy) / scale;
            let sy = cy + (sin * dx + cos * dy) / scale;
            for ch in 0..CHANNELS {
                data.push(sample_bilinear(img, sy, sx, ch).clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageTensor::new(h, w, data).expect("resample preserves shape and range")
}

fn adjust_color(img: &ImageTensor, brightness: f64, contrast: f64) -> ImageTensor {
    let data = img
        .data()
        .iter()
        .map(|&v| ((f64::from(v) - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0) as f32)
        .collect();
    ImageTensor::new(img.height(), img.width(), data).expect("color adjust preserves shape")
}

/// Applies scale, rotation and color adjustment in that order. Output has the input's
/// dimensions and values clamped to `[0, 1]`; identity parameters return the input unchanged.
pub fn apply_transform(img: &ImageTensor, spec: &TransformSpec) -> ImageTensor {
    let geometric = spec.scale_factor != 1.0 || spec.rotation != 0.0;
    let photometric = spec.brightness_delta != 0.0 || spec.contrast_factor != 1.0;
    let mut out = if geometric {
        resample(img, spec.scale_factor, spec.rotation)
    } else {
        img.clone()
    };
    if photometric {
        out = adjust_color(&out, spec.brightness_delta, spec.contrast_factor);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |r, c, ch| {
            ((r * 3 + c * c + ch * 11) % 17) as f32 / 16.0
        })
        .unwrap()
    }

    /// Rotation-only oracle written as a direct per-pixel inverse map with its own
    /// interpolation code.
    fn rotate_oracle(img: &ImageTensor, deg: f64) -> Vec<f64> {
        let (h, w) = (img.height() as i64, img.width() as i64);
        let theta = deg * std::f64::consts::PI / 180.0;
        let (cy, cx) = ((h - 1) as f64 * 0.5, (w - 1) as f64 * 0.5);
        let px = |y: i64, x: i64, ch: usize| -> f64 {
            let y = y.clamp(0, h - 1) as usize;
            let x = x.clamp(0, w - 1) as usize;
            f64::from(img.get(y, x, ch))
        };
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let (u, v) = (c as f64 - cx, r as f64 - cy);
                let xs = (cx + theta.cos() * u - theta.sin() * v).clamp(0.0, (w - 1) as f64);
                let ys = (cy + theta.sin() * u + theta.cos() * v).clamp(0.0, (h - 1) as f64);
                let (xf, yf) = (xs.floor(), ys.floor());
                let (ax, ay) = (xs - xf, ys - yf);
                let (xi, yi) = (xf as i64, yf as i64);
                for ch in 0..3 {
                    let v = (1.0 - ay) * ((1.0 - ax) * px(yi, xi, ch) + ax * px(yi, xi + 1, ch))
                        + ay * ((1.0 - ax) * px(yi + 1, xi, ch) + ax * px(yi + 1, xi + 1, ch));
                    out.push(v);
                }
            }
        }
        out
    }

    #[test]
    fn identity_is_exact() {
        let img = pattern(12, 10);
        assert_eq!(apply_transform(&img, &TransformSpec::IDENTITY), img);
        assert!(TransformSpec::IDENTITY.active_kinds().is_empty());
    }

    #[test]
    fn brightness_clamps() {
        let img = ImageTensor::filled(8, 8, 0.95).unwrap();
        let spec = TransformSpec {
            brightness_delta: 0.1,
            ..TransformSpec::IDENTITY
        };
        let out = apply_transform(&img, &spec);
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rotation_matches_oracle() {
        let img = pattern(16, 20);
        let spec = TransformSpec {
            rotation: 10.0,
            ..TransformSpec::IDENTITY
        };
        let out = apply_transform(&img, &spec);
        assert_ne!(out, img);
        let oracle = rotate_oracle(&img, 10.0);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(spec.active_kinds(), [TransformKind::Rotate]);
    }

    #[test]
    fn scale_keeps_center_and_shape() {
        let img = pattern(9, 9);
        let out = apply_transform(
            &img,
            &TransformSpec {
                scale_factor: 1.1,
                ..TransformSpec::IDENTITY
            },
        );
        assert!(out.same_shape(&img));
        // The center pixel maps onto itself for odd sizes.
        for ch in 0..3 {
            assert!((out.get(4, 4, ch) - img.get(4, 4, ch)).abs() < 1e-6);
        }
    }
}
