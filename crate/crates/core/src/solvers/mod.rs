//! Iterative solvers that minimize confusion-matrix metrics through a linear
//! minimization oracle: Frank-Wolfe, gradient descent-ascent, the ellipsoid
//! method and bisection, plus their constrained counterparts.

mod constrained;
mod ellipsoid_geom;
mod unconstrained;

pub use constrained::{
    con_bisection, con_ellipsoid, con_gda, split_fw, ConBisectionConfig, ConEllipsoidConfig,
    ConGdaConfig, GammaRule, SplitFwConfig,
};
pub use ellipsoid_geom::{jle, jle_volume_ratio, EllipsoidState};
pub use unconstrained::{
    bisection, ellipsoid, frank_wolfe, gda, BisectionConfig, EllipsoidConfig, FwConfig, GdaConfig,
};

use crate::data::Dataset;
use crate::inner::InnerError;
use crate::metrics::{ConfusionLayout, ConfusionVector, MetricError};
use crate::oracle::{DeterministicClassifier, OracleError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("metric smoothness class is incompatible with this solver: {0}")]
    MetricMismatch(String),
    #[error("cut direction is zero")]
    ZeroCutDirection,
    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Inner(#[from] InnerError),
}

pub(crate) fn check_smoothness(
    metric: &crate::metrics::Metric,
    allowed: &[crate::metrics::Smoothness],
    solver: &str,
    allow_mismatch: bool,
) -> Result<(), SolverError> {
    if allow_mismatch || allowed.contains(&metric.smoothness()) {
        Ok(())
    } else {
        Err(SolverError::MetricMismatch(format!(
            "{solver} expects one of {allowed:?}, metric is {:?}",
            metric.smoothness()
        )))
    }
}

/// Groups iterates with bit-identical confusion estimates so hull solves run
/// over the (much smaller) set of distinct confusions. Returns the unique
/// confusions and, per original iterate, its index into them.
pub(crate) fn dedupe_confusions(
    confusions: &[crate::metrics::ConfusionVector],
) -> (Vec<crate::metrics::ConfusionVector>, Vec<usize>) {
    use std::collections::HashMap;
    let mut unique: Vec<crate::metrics::ConfusionVector> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut assignment = Vec::with_capacity(confusions.len());
    for c in confusions {
        let key: Vec<u64> = c.entries().iter().map(|v| v.to_bits()).collect();
        let idx = *index.entry(key).or_insert_with(|| {
            unique.push(c.clone());
            unique.len() - 1
        });
        assignment.push(idx);
    }
    (unique, assignment)
}

pub(crate) fn at_iter(e: SolverError, t: usize) -> SolverError {
    match e {
        SolverError::ZeroCutDirection => SolverError::NumericalFailure {
            iteration: t,
            message: "zero cut direction".into(),
        },
        SolverError::NumericalFailure { message, .. } => {
            SolverError::NumericalFailure { iteration: t, message }
        }
        other => other,
    }
}

/// Convex mixture of deterministic classifiers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    pub members: Vec<DeterministicClassifier>,
    pub weights: Vec<f64>,
}

impl RandomizedClassifier {
    pub fn degenerate(h: DeterministicClassifier) -> Self {
        RandomizedClassifier {
            members: vec![h],
            weights: vec![1.0],
        }
    }

    /// Drops members with weight at most `floor` and renormalizes.
    pub fn pruned(self, floor: f64) -> Self {
        let mut members = Vec::new();
        let mut weights = Vec::new();
        for (h, w) in self.members.into_iter().zip(self.weights) {
            if w > floor {
                members.push(h);
                weights.push(w);
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            for w in weights.iter_mut() {
                *w /= sum;
            }
        }
        RandomizedClassifier { members, weights }
    }

    /// Validates the mixture weights.
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.members.len() != self.weights.len() {
            return Err(SolverError::NumericalFailure {
                iteration: 0,
                message: "member/weight length mismatch".into(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < -1e-12) {
            return Err(SolverError::NumericalFailure {
                iteration: 0,
                message: format!("weights sum to {sum}"),
            });
        }
        Ok(())
    }

    /// Empirical confusion of the mixture on a sample: the weight-combination
    /// of the member empirical confusions (confusions are linear in the
    /// mixture).
    pub fn confusion(
        &self,
        sample: &Dataset,
        layout: &ConfusionLayout,
    ) -> Result<ConfusionVector, OracleError> {
        let member_confusions: Vec<ConfusionVector> = self
            .members
            .par_iter()
            .map(|h| crate::oracle::empirical_confusion(h, sample, layout))
            .collect::<Result<_, _>>()?;
        let mut entries = vec![0.0; layout.dim()];
        for (w, c) in self.weights.iter().zip(&member_confusions) {
            for (e, v) in entries.iter_mut().zip(c.entries()) {
                *e += w * v;
            }
        }
        Ok(ConfusionVector::new(layout.clone(), entries)?)
    }
}

/// One per-iteration record of a solver run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Cumulative LMO calls up to and including this iteration.
    pub lmo_calls: usize,
    /// Metric value of the running mixture's confusion estimate.
    pub objective: f64,
    /// Max expanded-constraint value at the running estimate (0 when
    /// unconstrained).
    pub max_violation: f64,
    /// `||lambda||_2` where the solver maintains dual variables.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_norm: Option<f64>,
    /// `||mu||_1` for constrained dual solvers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_norm: Option<f64>,
    /// Relative ellipsoid log-volume `0.5 * ln det A`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_volume: Option<f64>,
    /// Bisection bracket `(alpha, beta)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
    /// Per-constraint values at the running estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<f64>>,
}

/// Per-iteration records of a solver run; `lmo_calls` is nondecreasing.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    pub fn push(&mut self, row: TraceRow) {
        debug_assert!(self
            .rows
            .last()
            .map(|r| row.lmo_calls >= r.lmo_calls)
            .unwrap_or(true));
        self.rows.push(row);
    }

    pub fn total_lmo_calls(&self) -> usize {
        self.rows.last().map(|r| r.lmo_calls).unwrap_or(0)
    }
}

/// Result of a solver run.
#[derive(Clone, Debug)]
pub struct SolverOutput {
    pub classifier: RandomizedClassifier,
    pub trace: SolverTrace,
    /// The solver's final estimate of the returned classifier's confusion.
    pub final_confusion: ConfusionVector,
    /// Diagnostics such as strict-feasibility warnings.
    pub warnings: Vec<String>,
}
