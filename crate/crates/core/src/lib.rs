//! Multi-slice clustering (MSC) of 3rd-order tensors.
//!
//! Each mode of a tensor is clustered independently from the dominant
//! eigenpairs of its slice covariances. [`cluster`] holds the sequential
//! pipeline, [`parallel`] the SPMD version that splits the processes into
//! one group per mode, and [`synth`] / [`eval`] / [`bench`] the synthetic
//! data, quality metrics and experiment drivers.

pub mod bench;
pub mod cluster;
pub mod comm;
pub mod error;
pub mod eval;
pub mod parallel;
pub mod spectral;
pub mod synth;
pub mod tensor;

pub use cluster::{msc, msc_mode, ClusterSet, ModeReport, ModeResult, MscConfig, MscReport, MscResult};
pub use error::{MscError, Result};
pub use spectral::{EigenPair, SpectralSettings};
pub use synth::{generate, GroundTruth, Synthetic};
pub use tensor::{Mode, SliceMatrix, Tensor3};
