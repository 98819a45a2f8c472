//! Continuous-time sequential recommendation with state-space layers.
//!
//! A time-aware diagonal SSM, discretized by the irregular gaps between
//! interactions, is stacked with an input-selective SSM. The crate covers
//! ingestion, the numerical kernels, both layers, the model, training and
//! leave-one-out evaluation.

pub mod audit;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod kernels;
pub mod model;
pub mod params;
pub mod selective;
pub mod time_aware;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Ablation, Model, ModelConfig, ModelParams, Mode};
pub use params::ParamSet;
