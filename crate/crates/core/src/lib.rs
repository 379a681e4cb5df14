//! Interpretable time-frequency forecasting with Kolmogorov-Arnold
//! networks whose edges are second-order Taylor expansions.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the CLI and checkpoints use.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod interpretability;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod taylorkan;
pub mod tf_synergy;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Model = model::ForecastModel<f64>;
pub type KanLayer = taylorkan::TaylorKanLayer<f64>;
pub type KanNetwork = taylorkan::KanNetwork<f64>;
pub type TimeFrequency = tf_synergy::TfSynergy<f64>;
