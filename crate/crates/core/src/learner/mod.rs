//! Two-entity regressors, their gradients and plain SGD.

pub mod checkpoint;
mod model;
mod params;
mod sgd;

pub use model::{
    gradient, init_model, layer_norm, predict, predict_all, ModelConfig, ModelKind, LN_EPS,
};
pub use params::{ParameterVector, TensorSpec};
pub use sgd::{evaluate_mse, sgd_train, TrainConfig};
