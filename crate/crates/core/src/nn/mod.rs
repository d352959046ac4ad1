//! Small multi-task network: shared convolutional backbone, real/fake and demographic heads.

pub mod checkpoint;
mod gradcheck;
mod model;
mod params;

pub use self::gradcheck::{finite_diff_grad_check, sample_coords};
pub use self::model::{
    Batch, ConvBlock, ForwardCache, ForwardResult, LogitGrads, ModelSpec, Network, DEM_CLASSES,
};
pub use self::params::{ParamTensor, ParamVector, Real};
