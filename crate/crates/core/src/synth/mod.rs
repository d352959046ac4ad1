//! Self-blended fake synthesis and demographic balancing.
//!
//! A self-blended fake is a real face blended with a transformed copy of itself under a
//! soft rectangular mask, which leaves local blend-boundary artifacts while keeping the
//! identity and demographic attributes of the source. Balancing generates enough of
//! these per intersection group that every group ends up with the same number of
//! records and at least as many fakes as reals.

mod blend;
mod transform;

use std::collections::HashSet;
use std::path::{Component, Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use self::blend::{blend_images, make_blend_mask, BlendMask, BlendSpec};
pub use self::transform::{apply_transform, TransformKind, TransformSpec};
use crate::data::{DatasetManifest, DemographicGroup, Label, Provenance, SampleRecord};
use crate::error::{Error, Result};
use crate::image::{ImageStore, ImageTensor, MemoryImageStore};
use crate::rng::{derive_seed, rng_from_seed, sample_seed, Rng};

/// Sampling ranges for the transform and blend parameters, as inclusive `[lo, hi]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scale_range: (f64, f64),
    pub rotation_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub mask_center_range: (f64, f64),
    pub mask_half_extent_range: (f64, f64),
    pub feather_range: (f64, f64),
    pub blend_ratio_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.9, 1.1),
            rotation_range: (-10.0, 10.0),
            brightness_range: (-0.1, 0.1),
            contrast_range: (0.8, 1.2),
            mask_center_range: (0.2, 0.8),
            mask_half_extent_range: (0.1, 0.4),
            feather_range: (1.0, 6.0),
            blend_ratio_range: (0.3, 1.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("scale_range", self.scale_range, 1e-6, f64::INFINITY),
            ("rotation_range", self.rotation_range, -180.0, 180.0),
            ("brightness_range", self.brightness_range, -1.0, 1.0),
            ("contrast_range", self.contrast_range, 0.0, f64::INFINITY),
            ("mask_center_range", self.mask_center_range, 0.0, 1.0),
            ("mask_half_extent_range", self.mask_half_extent_range, 0.0, 1.0),
            ("feather_range", self.feather_range, 0.0, f64::INFINITY),
            ("blend_ratio_range", self.blend_ratio_range, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min && hi <= max) {
                return Err(Error::invalid(format!(
                    "synthesis.{name} = [{lo}, {hi}] must satisfy {min} <= lo <= hi <= {max}"
                )));
            }
        }
        Ok(())
    }

    /// Draws a transform and a blend spec, in that order, from one `seed`.
    pub fn sample_specs(&self, seed: u64) -> (TransformSpec, BlendSpec) {
        let mut rng = rng_from_seed(seed);
        let transform = TransformSpec {
            scale_factor: uniform(&mut rng, self.scale_range),
            rotation: uniform(&mut rng, self.rotation_range),
            brightness_delta: uniform(&mut rng, self.brightness_range),
            contrast_factor: uniform(&mut rng, self.contrast_range),
            seed,
        };
        let blend = BlendSpec {
            mask_center: (
                uniform(&mut rng, self.mask_center_range),
                uniform(&mut rng, self.mask_center_range),
            ),
            mask_half_extent: (
                uniform(&mut rng, self.mask_half_extent_range),
                uniform(&mut rng, self.mask_half_extent_range),
            ),
            feather_radius: uniform(&mut rng, self.feather_range),
            blend_ratio: uniform(&mut rng, self.blend_ratio_range),
            seed,
        };
        (transform, blend)
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Id of the fake synthesized from `source_id` with `seed`.
pub fn synthetic_id(source_id: &str, seed: u64) -> String {
    format!("{source_id}#sbi{seed:016x}")
}

/// Relative image path used for `id` inside a written dataset.
pub fn image_path_for(id: &str) -> PathBuf {
    let name: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    PathBuf::from("images").join(format!("{name}.png"))
}

/// Runs one self-blend: transform, mask, blend, all drawn from `seed`.
pub fn blend_with_seed(img: &ImageTensor, config: &SynthConfig, seed: u64) -> Result<ImageTensor> {
    let (tspec, bspec) = config.sample_specs(seed);
    let transformed = apply_transform(img, &tspec);
    let mask = make_blend_mask(img.height(), img.width(), &bspec)?;
    blend_images(img, &transformed, &mask, bspec.blend_ratio)
}

/// Synthesizes a fake from a real sample. The new record keeps the source's group and
/// split, is labeled fake with synthetic provenance, and gets id `{source}#sbi{seed:016x}`.
pub fn generate_self_blended(
    sample: &SampleRecord,
    img: &ImageTensor,
    seed: u64,
    config: &SynthConfig,
) -> Result<(SampleRecord, ImageTensor)> {
    if sample.label != Label::Real {
        return Err(Error::AlreadyFake(sample.id.clone()));
    }
    let image = blend_with_seed(img, config, seed)?;
    let id = synthetic_id(&sample.id, seed);
    let record = SampleRecord {
        image_path: image_path_for(&id),
        id,
        label: Label::Fake,
        group: sample.group,
        provenance: Provenance::Synthetic,
        split: sample.split,
    };
    Ok((record, image))
}

/// A manifest together with in-memory images for every record.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: MemoryImageStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BalanceTarget {
    #[default]
    MaxGroup,
    ExplicitCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BalancePolicy {
    pub target: BalanceTarget,
    /// Per-group real-count target; only read when `target` is `explicit_count`.
    pub explicit_count: Option<usize>,
}

fn rehome(record: &SampleRecord) -> SampleRecord {
    SampleRecord {
        image_path: image_path_for(&record.id),
        ..record.clone()
    }
}

/// Seed of the `copy`-th fake derived from `source_id`.
pub fn fake_seed(seed: u64, source_id: &str, copy: u64) -> u64 {
    derive_seed(sample_seed(seed, source_id), copy)
}

/// Balances a real-only manifest across the eight groups.
///
/// With `N` the target (largest group real count, or the explicit count), every group keeps
/// all of its reals and receives `2N − n_k` synthetic fakes: one per real, then further fakes
/// from re-seeded blends of its reals taken round-robin. Output lists the reals in input
/// order followed by the fakes group by group; image paths are rewritten to
/// `images/<id>.png`.
pub fn balance_dataset(
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
    policy: &BalancePolicy,
    config: &SynthConfig,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    if let Some(r) = manifest.records().iter().find(|r| r.label != Label::Real) {
        return Err(Error::invalid(format!(
            "balancing expects real samples only, `{}` is fake",
            r.id
        )));
    }
    let mut reals: [Vec<&SampleRecord>; DemographicGroup::COUNT] = Default::default();
    for r in manifest.records() {
        reals[r.group.index()].push(r);
    }
    if let Some(g) = DemographicGroup::ALL
        .into_iter()
        .find(|g| reals[g.index()].is_empty())
    {
        return Err(Error::EmptyGroup(g.code()));
    }
    let largest = reals.iter().map(Vec::len).max().unwrap_or(0);
    let target = match policy.target {
        BalanceTarget::MaxGroup => largest,
        BalanceTarget::ExplicitCount => {
            let n = policy
                .explicit_count
                .ok_or_else(|| Error::invalid("balance.explicit_count is required"))?;
            if n < largest {
                return Err(Error::invalid(format!(
                    "balance.explicit_count {n} is below the largest group count {largest}"
                )));
            }
            n
        }
    };

    let mut store = MemoryImageStore::new();
    let mut records = Vec::with_capacity(DemographicGroup::COUNT * 2 * target);
    for r in manifest.records() {
        store.insert(r.id.clone(), images.load(r)?);
        records.push(rehome(r));
    }
    for group_reals in &reals {
        let n = group_reals.len();
        for j in 0..(2 * target - n) {
            let src = group_reals[j % n];
            let img = store.get(&src.id).expect("real image loaded above").clone();
            let (rec, fake) =
                generate_self_blended(src, &img, fake_seed(seed, &src.id, (j / n) as u64), config)?;
            store.insert(rec.id.clone(), fake);
            records.push(rec);
        }
    }
    let manifest = DatasetManifest::new(records, manifest.source_name())?;
    Ok(Dataset {
        manifest,
        images: store,
    })
}

/// Pairs every real sample with one self-blended fake; existing fakes are carried over.
pub fn synthesize_pairs(
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
    config: &SynthConfig,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    let mut store = MemoryImageStore::new();
    let mut records = Vec::with_capacity(manifest.len() * 2);
    for r in manifest.records() {
        let img = images.load(r)?;
        records.push(rehome(r));
        if r.label == Label::Real {
            let (rec, fake) = generate_self_blended(r, &img, fake_seed(seed, &r.id, 0), config)?;
            store.insert(rec.id.clone(), fake);
            records.push(rec);
        }
        store.insert(r.id.clone(), img);
    }
    let manifest = DatasetManifest::new(records, manifest.source_name())?;
    Ok(Dataset {
        manifest,
        images: store,
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes every record's image as PNG at `out_dir/<image_path>` and the manifest at
/// `out_dir/manifest.jsonl`. Image paths must be relative and stay inside `out_dir`.
pub fn write_dataset(
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
    out_dir: &Path,
) -> Result<PathBuf> {
    let mut seen = HashSet::new();
    for r in manifest.records() {
        let safe = r
            .image_path
            .components()
            .all(|c| matches!(c, Component::Normal(_)));
        if !safe {
            return Err(Error::invalid(format!(
                "image path {} of `{}` must be relative without `..`",
                r.image_path.display(),
                r.id
            )));
        }
        if !seen.insert(&r.image_path) {
            return Err(Error::invalid(format!(
                "image path {} is used by more than one record",
                r.image_path.display()
            )));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    for r in manifest.records() {
        let path = out_dir.join(&r.image_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        images.load(r)?.save_png(&path)?;
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}
