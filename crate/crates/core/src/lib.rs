//! Few-shot attribute regression from distances to semantic hyperplanes in a
//! generator's latent space.
//!
//! The crate ships a small differentiable generator with known ground-truth
//! attributes ([`synthetic`]) and the full pipeline around it: hyperplane
//! fitting ([`boundary`]), optimization-based inversion ([`inversion`]),
//! unsupervised per-layer importance ([`importance`]), distance calibration
//! ([`calibration`]), feature-space baselines ([`baselines`]) and the
//! experiment protocols ([`evaluation`]).

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod boundary;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod importance;
pub mod inversion;
pub mod io;
pub mod latent;
mod linalg;
pub mod seed;
pub mod synthetic;

pub use boundary::{Hyperplane, SvmConfig};
pub use calibration::{
    Calibrator, LinearCalibrator, PolynomialCalibrator, Regularization, Selection,
};
pub use error::{Error, Result};
pub use importance::{ImportanceConfig, LayerScores};
pub use inversion::{InitMode, InversionConfig, InversionResult};
pub use latent::{ExtendedLatent, ImageVector, LatentCode};
pub use synthetic::{AttributeDef, Generator, Record, SyntheticSpec};
