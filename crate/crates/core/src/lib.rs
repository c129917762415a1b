//! Bayesian joint mediation analysis with matrix-valued mediators.
//!
//! Observed `p x q` matrices are reduced to `p0 x q0` latent features by a
//! probabilistic multilinear PCA; the features mediate the effect of a
//! treatment on a binary (probit) outcome. All parameters are estimated
//! jointly by Gibbs sampling, with a Varimax step fixing the rotation of the
//! loadings so that per-element mediation quantities can be mapped back onto
//! the original matrix.

pub mod diagnostics;
pub mod dist;
pub mod effects;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod mediation;
pub mod model;
pub mod rotation;
pub mod seed;
pub mod simharness;
pub mod twostep;

pub use error::{Error, Result};
pub use linalg::{Dims, Mat, MatrixDataset, StiefelFrame, Vector};
pub use model::{LatentState, ModelParams, MuMode, Priors, Scenario};
