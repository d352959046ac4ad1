//! Fairness-aware deepfake detection toolkit.
//!
//! Modules, in pipeline order:
//!
//! - [`data`]: demographically annotated sample manifests (JSONL) and RGB image tensors.
//! - [`synth`]: self-blended fake generation and demographic/class balancing.
//! - [`nn`]: a small two-headed convolutional model with exact reverse-mode gradients.
//! - [`loss`]: detection BCE, demographic cross-entropy and the group-accuracy variance penalty.
//! - [`sam`]: sharpness-aware minimization over SGD with momentum, plus the training loop.
//! - [`eval`]: per-group accuracy, TPR, AUC, max disparity and the JSON fairness report.
//!
//! [`toy`] builds small procedural datasets used by tests, examples and the browser demo.

pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod nn;
pub mod rng;
pub mod sam;
pub mod synth;
pub mod toy;

pub use crate::data::{
    DatasetManifest, DemographicGroup, Gender, GroupPartition, Label, Provenance, Race,
    SampleRecord, Split,
};
pub use crate::error::{Error, Result};
pub use crate::image::{ImageStore, ImageTensor, MemoryImageStore};
