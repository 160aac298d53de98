//! Part-configuration discovery and weakly supervised detector training.
//!
//! The pipeline: match patches across positively labeled images, select a
//! diverse set of representative clusters by constrained max-coverage,
//! mine frequently co-occurring cluster pairs into part configurations,
//! derive foreground estimates and hard negatives from those configurations,
//! and train a linear detector with negative (and optionally latent positive)
//! mining. A deterministic synthetic generator and brute-force oracles
//! support end-to-end verification.

pub mod configs;
pub mod cover;
pub mod detector;
pub mod error;
pub mod features;
pub mod geom;
pub mod hardneg;
pub mod io;
pub mod oracles;
pub mod synth;

pub use error::{Error, Result};
pub use features::{Dataset, FeatureVector, ImageId, ImageInfo, ImageLabel, PatchId, PatchRecord};
pub use geom::BBox;
