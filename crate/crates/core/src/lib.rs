//! Inference-time search over the sampling noise of diffusion models, on
//! analytic Gaussian-mixture score fields.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature.
//!
//! - [`scorefield`]: exact scores, densities, posteriors, and x-predictions.
//! - [`sampler`]: sigma schedules, Heun/Euler ODE and reverse-SDE solvers,
//!   forward noising, and the NFE ledger.
//! - [`verifier`]: point-wise verifiers, the rank ensemble, and the greedy
//!   Fréchet oracle.
//! - [`search`]: random, zero-order, first-order, and path search.
//! - [`metrics`]: Fréchet distance, IS analog, k-NN precision/recall.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod error;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scorefield;
pub mod search;
pub mod verifier;

pub use error::{Error, Result};
pub use metrics::{EvalReport, GaussianStats};
pub use sampler::{Charge, LedgerSnapshot, NfeLedger, SamplerSettings, SigmaSchedule, Trajectory};
pub use scorefield::{ConditionedField, CountingField, MixtureModel, ScoreField};
pub use search::{
    Audit, AuditEntry, FirstOrderConfig, PathsConfig, Search, SearchBudget, SearchResult, SearchStatus,
    ZeroOrderConfig,
};
pub use verifier::{
    Candidate, ClassConfidence, Ensemble, Judge, Likelihood, RankMatrix, RunningGaussianStats, SelfSupervised,
    Verifier, VerifierScore,
};
