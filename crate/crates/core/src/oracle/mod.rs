//! Linear minimization oracles over the achievable confusion set: the
//! plug-in rule over a trained class-probability estimator, a weighted
//! logistic regression alternative, and empirical confusion estimation.

mod lmo;
mod model;

pub use lmo::{
    default_loss_direction, empirical_confusion, group_plugin_lmo, plugin_lmo,
    DeterministicClassifier, Lmo, LmoResult, PluginLmo, WlrLmo,
};
pub use model::{train_cpe, CpeConfig, EtaModel, EtaTable, LinearSoftmax};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sample is empty")]
    EmptySample,
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("group index {0} out of range for {1} groups")]
    GroupOutOfRange(usize, usize),
    #[error("loss has no usable per-class weights")]
    DegenerateLoss,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}
