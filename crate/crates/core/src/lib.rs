//! Degenerate Langevin diffusions: potentials, rescaling, deterministic
//! descent from infinity, Monte Carlo ensembles, Fokker–Planck densities
//! and total-variation profiles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod density;
pub mod error;
pub mod flow;
pub mod numerics;
pub mod potential;
pub mod rng;
pub mod sde;

pub use error::{Error, ErrorClass, Result};
pub use flow::{FlowPath, FlowScheme, ScalarField};
pub use potential::{HypothesisReport, Potential, ScalingPair};
pub use sde::{DriftField, DriftKind, PathEnsemble, SdeConfig, SdeScheme};
pub use density::{DensityGrid, FpConfig, GridSpec};
pub use analysis::{Channel, MixingReport, TvProfile, Verdict};
