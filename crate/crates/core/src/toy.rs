//! Procedural face-like images for tests, examples and the browser demo.
//!
//! Each image is a jittered oval "face" on a gradient background. Race sets the face tone,
//! gender sets the hair shape, so the demographic head has a real cue to learn. A fake
//! carries a fine modulation inside the face: a checkerboard for most groups, and
//! optionally a weaker row-stripe pattern for one group, whose forgeries are then both
//! rarer in the data and harder to see.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, DemographicGroup, Gender, Label, Race, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{build_report, predict, DEFAULT_THRESHOLD};
use crate::image::{ImageTensor, MemoryImageStore};
use crate::nn::{ConvBlock, ModelSpec, Network, DEM_CLASSES};
use crate::rng::{derive_seed, rng_from_seed, sample_seed};
use crate::sam::{fit, EpochLog, SamConfig};
use crate::synth::{image_path_for, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub size: usize,
    /// Train-split samples per group, half real and half fake.
    pub train_per_group: usize,
    /// Test-split samples per group, half real and half fake.
    pub test_per_group: usize,
    /// Artifact amplitude of fakes.
    pub artifact_strength: f64,
    /// Group index whose fakes use `subtle_pattern` at `subtle_strength`.
    pub subtle_group: Option<usize>,
    pub subtle_strength: f64,
    pub subtle_pattern: ArtifactPattern,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 64,
            train_per_group: 200,
            test_per_group: 100,
            artifact_strength: 0.12,
            subtle_group: Some(5),
            subtle_strength: 0.03,
            subtle_pattern: ArtifactPattern::Stripes,
            noise: 0.06,
        }
    }
}

impl ToyConfig {
    pub fn artifact_for(&self, group: DemographicGroup) -> Artifact {
        if self.subtle_group == Some(group.index()) {
            Artifact::new(self.subtle_pattern, self.subtle_strength)
        } else {
            Artifact::new(ArtifactPattern::Checkerboard, self.artifact_strength)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactPattern {
    /// `±a` alternating per pixel.
    Checkerboard,
    /// `±a` alternating per row.
    Stripes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Artifact {
    pub pattern: ArtifactPattern,
    pub strength: f64,
}

impl Artifact {
    pub const NONE: Artifact = Artifact {
        pattern: ArtifactPattern::Checkerboard,
        strength: 0.0,
    };

    pub fn new(pattern: ArtifactPattern, strength: f64) -> Self {
        Self { pattern, strength }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        let parity = match self.pattern {
            ArtifactPattern::Checkerboard => r + c,
            ArtifactPattern::Stripes => r,
        };
        if parity % 2 == 0 {
            self.strength
        } else {
            -self.strength
        }
    }
}

fn face_tone(race: Race) -> [f32; 3] {
    match race {
        Race::Black => [0.36, 0.24, 0.18],
        Race::White => [0.92, 0.76, 0.66],
        Race::Asian => [0.86, 0.72, 0.52],
        Race::Others => [0.66, 0.48, 0.36],
    }
}

/// Renders one face; [`Artifact::NONE`] gives a real face.
pub fn render_face(size: usize, group: DemographicGroup, artifact: Artifact, noise: f64, seed: u64) -> Result<ImageTensor> {
    if size < crate::image::MIN_SIDE {
        return Err(Error::invalid(format!("toy image size {size} is below 8")));
    }
    let mut rng = rng_from_seed(seed);
    let s = size as f64;
    let cy = s * rng.gen_range(0.46..0.54);
    let cx = s * rng.gen_range(0.46..0.54);
    let ry = s * rng.gen_range(0.30..0.36);
    let rx = s * rng.gen_range(0.22..0.28);
    let tone_jitter = rng.gen_range(-0.05f32..0.05);
    let tone = face_tone(group.race).map(|v| v + tone_jitter);
    let bg = [rng.gen_range(0.2f32..0.5), rng.gen_range(0.3f32..0.6), rng.gen_range(0.4f32..0.7)];
    let hair = [0.12f32, 0.08, 0.06].map(|v| v + rng.gen_range(0.0f32..0.1));
    let eye_dy = ry * 0.25;
    let eye_dx = rx * 0.4;
    let eye_r = s * 0.035;
    let long_hair = group.gender == Gender::Female;

    ImageTensor::from_fn(size, size, |r, c, ch| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
        let in_face = dy * dy + dx * dx <= 1.0;
        let hair_band = if long_hair {
            (dy * dy + (dx / 1.35).powi(2) <= 1.25) && !in_face && dy > -1.1
        } else {
            ((dy + 0.35) * (dy + 0.35) + dx * dx <= 1.0) && dy < -0.55
        };
        let mut v = if hair_band {
            hair[ch]
        } else if in_face {
            let eye = [(cy - eye_dy, cx - eye_dx), (cy - eye_dy, cx + eye_dx)]
                .iter()
                .any(|&(ey, ex)| (y - ey).powi(2) + (x - ex).powi(2) <= eye_r * eye_r);
            let mouth = (y - (cy + ry * 0.45)).abs() < s * 0.02 && (x - cx).abs() < rx * 0.35;
            if eye || mouth {
                0.1
            } else {
                tone[ch]
            }
        } else {
            bg[ch] * (0.8 + 0.4 * (y / s) as f32)
        };
        if in_face && artifact.strength != 0.0 {
            v += artifact.at(r, c) as f32;
        }
        v + rng.gen_range(-noise..=noise) as f32
    })
}

fn group_block(
    cfg: &ToyConfig,
    group: DemographicGroup,
    split: Split,
    count: usize,
    seed: u64,
    records: &mut Vec<SampleRecord>,
    images: &mut MemoryImageStore,
) -> Result<()> {
    for i in 0..count {
        let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
        let id = format!("toy-{}-{}-{i:04}", group.code(), split.token());
        let artifact = if label == Label::Fake { cfg.artifact_for(group) } else { Artifact::NONE };
        let img = render_face(cfg.size, group, artifact, cfg.noise, sample_seed(seed, &id))?;
        let mut rec = SampleRecord::real(id.clone(), image_path_for(&id), group, split);
        rec.label = label;
        images.insert(id, img);
        records.push(rec);
    }
    Ok(())
}

/// Labelled train/test dataset with real and fake faces in every group.
pub fn toy_dataset(cfg: &ToyConfig, seed: u64) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut images = MemoryImageStore::new();
    for group in DemographicGroup::ALL {
        group_block(cfg, group, Split::Train, cfg.train_per_group, seed, &mut records, &mut images)?;
        group_block(cfg, group, Split::Test, cfg.test_per_group, seed, &mut records, &mut images)?;
    }
    Ok(Dataset {
        manifest: DatasetManifest::new(records, "toy")?,
        images,
    })
}

/// Real faces only, `counts[k]` for group `k`; every fourth sample of a group is in the test split.
pub fn toy_real_faces(counts: [usize; DemographicGroup::COUNT], size: usize, seed: u64) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut images = MemoryImageStore::new();
    for (group, &n) in DemographicGroup::ALL.iter().zip(&counts) {
        for i in 0..n {
            let split = if i % 4 == 3 { Split::Test } else { Split::Train };
            let id = format!("face-{}-{i:04}", group.code());
            let img = render_face(size, *group, Artifact::NONE, 0.03, derive_seed(sample_seed(seed, &id), 0))?;
            records.push(SampleRecord::real(id.clone(), image_path_for(&id), *group, split));
            images.insert(id, img);
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest::new(records, "faces")?,
        images,
    })
}

/// Toy detection run used to compare training with and without the variance penalty.
#[derive(Debug, Clone)]
pub struct PenaltyExperiment {
    pub toy: ToyConfig,
    pub data_seed: u64,
    pub model: ModelSpec,
    /// `lambda` and `seed` are overridden per run.
    pub train: SamConfig,
}

impl Default for PenaltyExperiment {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            model: ModelSpec {
                input_size: (toy.size, toy.size),
                conv_blocks: vec![ConvBlock::new(8, 4, true), ConvBlock::new(16, 1, true)],
                embedding_dim: 16,
                head_real: vec![16, 1],
                head_dem: vec![8, DEM_CLASSES],
            },
            toy,
            data_seed: 2024,
            train: SamConfig {
                lr: 0.01,
                weight_decay: 1e-4,
                epochs: 20,
                batch_size: 16,
                ..SamConfig::default()
            },
        }
    }
}

/// Test-split outcome of one [`PenaltyExperiment`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutcome {
    pub lambda: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub max_disparity: f64,
    pub group_accuracy: [Option<f64>; DemographicGroup::COUNT],
}

impl PenaltyExperiment {
    pub fn dataset(&self) -> Result<Dataset> {
        toy_dataset(&self.toy, self.data_seed)
    }

    /// Trains from `init_params(seed)` on `data` and scores its test split.
    pub fn run(
        &self,
        data: &Dataset,
        lambda: f64,
        seed: u64,
        on_epoch: impl FnMut(&EpochLog) -> Result<()>,
    ) -> Result<PenaltyOutcome> {
        let net = Network::new(self.model.clone())?;
        let cfg = SamConfig {
            lambda,
            seed,
            ..self.train.clone()
        };
        let mut on_epoch = on_epoch;
        let mut params = net.init_params::<f32>(seed);
        fit(&net, &mut params, &data.manifest, &data.images, &cfg, |log, _| on_epoch(log))?;
        let preds = predict(&net, &params, &data.manifest, &data.images)?;
        let report = build_report(&preds, data.manifest.source_name(), DEFAULT_THRESHOLD)?;
        let mut group_accuracy = [None; DemographicGroup::COUNT];
        for (slot, m) in group_accuracy.iter_mut().zip(&report.per_group) {
            *slot = m.accuracy;
        }
        Ok(PenaltyOutcome {
            lambda,
            seed,
            accuracy: report.overall.accuracy.unwrap_or(f64::NAN),
            max_disparity: report.max_disparity_accuracy,
            group_accuracy,
        })
    }
}
