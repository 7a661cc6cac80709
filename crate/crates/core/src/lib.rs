//! Sparse linear inverse solvers built around HyperLISTA: an unrolled
//! shrinkage-thresholding iteration with heavy-ball momentum, instance-adaptive
//! layer parameters driven by three scalar hyperparameters, and a
//! conjugate-gradient finish on the estimated support.
//!
//! The crate is organised bottom-up:
//!
//! - [`problems`]: synthetic dictionaries and sparse instances, dataset files.
//! - [`dictionary`]: the symmetric analytic weight `W = (GᵀG)A` and coherence.
//! - [`thresholding`]: soft thresholding and support-selection thresholding.
//! - [`solvers`]: ISTA, fixed-schedule ALISTA(-MM), HyperLISTA and the CG stage.
//! - [`hypersearch`]: coarse-to-fine grid search over `(c1, c2, c3)`.
//! - [`eval`]: NMSE metrics and the experiment suites.

// Parameter checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod error;
pub mod eval;
pub mod hypersearch;
pub mod linalg;
pub mod problems;
pub mod solvers;
pub mod thresholding;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use problems::{GenConfig, Instance, NonzeroMode, ProblemSetup};
pub use solvers::{CgSwitchConfig, CgTrigger, HyperParams, LayerParams, RecoveryTrace};
