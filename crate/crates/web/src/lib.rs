//! Browser bindings for three interactive views: a self-blend preview, SAM versus SGD
//! trajectories on a 2-D quadratic, and a per-group fairness report for a threshold.
//!
//! The plain Rust functions hold the logic and are tested natively; the `#[wasm_bindgen]`
//! wrappers only convert errors.

use fairforge::data::Label;
use fairforge::eval::{build_report, PredictionRow, PredictionSet};
use fairforge::loss::{sigmoid, LossBreakdown};
use fairforge::nn::ParamVector;
use fairforge::rng::rng_from_seed;
use fairforge::sam::{sam_step, Objective, OptimizerState, SamConfig};
use fairforge::synth::{apply_transform, blend_images, make_blend_mask, BlendSpec, TransformSpec};
use fairforge::toy::{render_face, Artifact};
use fairforge::{DemographicGroup, ImageTensor};
use wasm_bindgen::prelude::*;

pub const PREVIEW_SIZE: usize = 96;

/// Parameters of one self-blend; mask centre and extent are fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendParams {
    pub face_seed: u64,
    pub group: usize,
    pub scale: f64,
    pub rotation_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub center: (f64, f64),
    pub half_extent: (f64, f64),
    pub feather_px: f64,
    pub blend_ratio: f64,
}

fn rgba(img: &ImageTensor) -> Vec<u8> {
    img.to_rgb8()
        .chunks(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

/// Four RGBA panels side by side: source, transformed copy, mask, blended fake.
pub fn blend_panels(p: &BlendParams) -> Result<Vec<u8>, String> {
    let group = DemographicGroup::from_index(p.group).ok_or("group index must be 0..8")?;
    let source = render_face(PREVIEW_SIZE, group, Artifact::NONE, 0.01, p.face_seed).map_err(|e| e.to_string())?;
    let tspec = TransformSpec {
        scale_factor: p.scale,
        rotation: p.rotation_deg,
        brightness_delta: p.brightness,
        contrast_factor: p.contrast,
        seed: 0,
    };
    let bspec = BlendSpec {
        mask_center: p.center,
        mask_half_extent: p.half_extent,
        feather_radius: p.feather_px,
        blend_ratio: p.blend_ratio,
        seed: 0,
    };
    let transformed = apply_transform(&source, &tspec);
    let mask = make_blend_mask(PREVIEW_SIZE, PREVIEW_SIZE, &bspec).map_err(|e| e.to_string())?;
    let fake = blend_images(&source, &transformed, &mask, p.blend_ratio).map_err(|e| e.to_string())?;
    let mask_img = ImageTensor::from_fn(PREVIEW_SIZE, PREVIEW_SIZE, |r, c, _| mask.get(r, c) as f32)
        .map_err(|e| e.to_string())?;
    let panels = [rgba(&source), rgba(&transformed), rgba(&mask_img), rgba(&fake)];
    let row = PREVIEW_SIZE * 4;
    let mut out = Vec::with_capacity(panels.len() * PREVIEW_SIZE * row);
    for r in 0..PREVIEW_SIZE {
        for panel in &panels {
            out.extend_from_slice(&panel[r * row..(r + 1) * row]);
        }
    }
    Ok(out)
}

/// `L(w) = ½ (a·x² + b·y²) + c·x·y`.
struct Quadratic2 {
    a: f64,
    b: f64,
    c: f64,
}

impl Objective<f64> for Quadratic2 {
    fn evaluate(&mut self, params: &ParamVector<f64>) -> fairforge::Result<(LossBreakdown, ParamVector<f64>)> {
        let w = params.flatten();
        let (x, y) = (w[0], w[1]);
        let loss = 0.5 * (self.a * x * x + self.b * y * y) + self.c * x * y;
        let grad = params.unflatten(&[self.a * x + self.c * y, self.b * y + self.c * x])?;
        Ok((LossBreakdown::compose(loss, 0.0, 0.0, 0.0), grad))
    }
}

/// Interleaved `[x0, y0, x1, y1, …]` for `steps` optimizer steps from `start`.
pub fn quadratic_trajectory(
    curvature: (f64, f64, f64),
    start: (f64, f64),
    rho: f64,
    lr: f64,
    momentum: f64,
    steps: usize,
) -> Result<Vec<f64>, String> {
    let config = SamConfig {
        rho,
        lr,
        momentum,
        weight_decay: 0.0,
        ..SamConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let mut objective = Quadratic2 {
        a: curvature.0,
        b: curvature.1,
        c: curvature.2,
    };
    let mut w = ParamVector::from_vec("w", vec![start.0, start.1]);
    let mut state = OptimizerState::new(&w);
    let mut path = vec![start.0, start.1];
    for _ in 0..steps {
        if sam_step(&mut w, &mut objective, &config, &mut state).is_err() {
            break;
        }
        let v = w.flatten();
        if !v.iter().all(|x| x.abs() < 1e6) {
            break;
        }
        path.extend_from_slice(&v);
    }
    Ok(path)
}

/// Synthetic scores for `per_group` samples in each group; `skew` shrinks the separation of
/// the last groups so that disparities appear.
pub fn demo_predictions(per_group: usize, skew: f64, seed: u64) -> PredictionSet {
    use rand::Rng as _;
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(per_group * DemographicGroup::COUNT);
    for (k, group) in DemographicGroup::ALL.iter().enumerate() {
        let separation = 3.0 - skew * k as f64 / (DemographicGroup::COUNT - 1) as f64;
        for i in 0..per_group {
            let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
            let centre = if label == Label::Fake { separation / 2.0 } else { -separation / 2.0 };
            let logit = centre + rng.gen_range(-2.0..2.0);
            rows.push(PredictionRow::new(format!("{}-{i}", group.code()), sigmoid(logit), label, *group));
        }
    }
    PredictionSet::new(rows).expect("ids are unique and scores are probabilities")
}

/// Report JSON for the demo predictions at `threshold`.
pub fn fairness_report_json(per_group: usize, skew: f64, seed: u64, threshold: f64) -> Result<String, String> {
    let preds = demo_predictions(per_group, skew, seed);
    build_report(&preds, "demo", threshold)
        .map(|r| r.to_json())
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn blend_preview(
    face_seed: u32,
    group: u32,
    scale: f64,
    rotation_deg: f64,
    brightness: f64,
    contrast: f64,
    center_x: f64,
    center_y: f64,
    half_extent: f64,
    feather_px: f64,
    blend_ratio: f64,
) -> Result<Vec<u8>, JsError> {
    blend_panels(&BlendParams {
        face_seed: u64::from(face_seed),
        group: group as usize,
        scale,
        rotation_deg,
        brightness,
        contrast,
        center: (center_y, center_x),
        half_extent: (half_extent, half_extent),
        feather_px,
        blend_ratio,
    })
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn preview_size() -> usize {
    PREVIEW_SIZE
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn optimizer_path(
    a: f64,
    b: f64,
    c: f64,
    x0: f64,
    y0: f64,
    rho: f64,
    lr: f64,
    momentum: f64,
    steps: u32,
) -> Result<Vec<f64>, JsError> {
    quadratic_trajectory((a, b, c), (x0, y0), rho, lr, momentum, steps as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fairness_report(per_group: u32, skew: f64, seed: u32, threshold: f64) -> Result<String, JsError> {
    fairness_report_json(per_group as usize, skew, u64::from(seed), threshold).map_err(|e| JsError::new(&e))
}
