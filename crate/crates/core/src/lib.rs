//! Allocation-only core of the windvis visual-anemometry pipeline.
//!
//! Everything here is pure computation over in-memory values:
//!
//! ```text
//! flagsim (wind series + clip rendering) -> features (pooled stats, temporal mean removal)
//!     -> lstm (many-to-one regressor) -> train (balance, split, SGD momentum, early stop)
//!     -> eval (RMSE, binned reports) <- physics (measurable range, sigma_u band)
//! ```
//!
//! File formats, manifests on disk and the command line live in the `windvis`
//! companion crate.

#![no_std]
#![warn(clippy::all)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod features;
pub mod flagsim;
pub mod lstm;
pub mod physics;
pub mod rng;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use features::{ExtractorKind, ExtractorSpec, Stat, Variant};
pub use flagsim::{FlagRenderSpec, PhysicalSetup, WindSeries};
pub use lstm::{LstmConfig, LstmNetwork};
pub use rng::Rng;
pub use train::TrainConfig;
pub use types::{ClipTensor, DatasetManifest, FeatureSequence, ManifestRecord, Sample, SourceTag};
