//! Deterministic federated-learning simulation for drug–target style
//! two-entity regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`] loads or synthesises `(drug, protein, label)` records and
//!   produces the fixed train/test split every experiment shares.
//! * [`partition`] assigns records to clients (IID, entity-exclusive,
//!   Gaussian ring mixing, quantity skew, data-addition plans).
//! * [`learner`] holds the surrogate regressors, their analytic gradients and
//!   plain mini-batch SGD.
//! * [`federation`] runs FedAvg rounds over a partition.
//! * [`ensemble`] trains the bagging baseline on the same partition.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the benchmark uses.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod federation;
pub mod learner;
pub mod partition;
pub mod rng;
pub mod scalar;

pub use dataset::{Dataset, Example, InteractionRecord, SplitPair};
pub use error::{Error, Result};
pub use partition::{AdditionPlan, EntityDim, MixingConfig, Partition, Provenance};
pub use scalar::Scalar;

/// Parameter vector in double precision.
pub type Params = learner::ParameterVector<f64>;
/// Parameter vector in single precision.
pub type ParamsF32 = learner::ParameterVector<f32>;
/// Client update in double precision.
pub type Update = federation::ClientUpdate<f64>;
/// FedAvg outcome in double precision.
pub type FedOutcome = federation::FedResult<f64>;
/// Bagging ensemble in double precision.
pub type Ensemble = ensemble::EnsembleModel<f64>;
