//! Gaussian factor models for panels of daily stock log returns, in the
//! classic dense form and in a sector-constrained form where each stock
//! loads only on its own sector factor plus a block of market factors.
//!
//! The crate covers the whole workflow: reading price and sector files,
//! building log-return panels, fitting by EM, generating synthetic data
//! from a known model, and reporting how interpretable the fitted factors
//! are (thresholded components, sector breakdown, sign coherence).

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod run;
pub mod synth;

pub use em::{fit, FitConfig, FitTrace, InitStrategy};
pub use error::{Error, Result};
pub use model::{
    apply_mask, build_mask, FactorModel, LoadingMask, Membership, PosteriorMoments, ReturnsPanel,
    Sector, SectorMap,
};
