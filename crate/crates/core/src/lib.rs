//! Learning multiclass classifiers for general confusion-matrix metrics and
//! constraints.
//!
//! The library optimizes arbitrary (convex, ratio-of-linear, or linear)
//! functions of a classifier's confusion matrix, optionally subject to
//! confusion-matrix constraints such as coverage bands, precision floors and
//! group-fairness criteria. All solvers search the convex set of achievable
//! confusion matrices through a plug-in linear minimization oracle built on a
//! class-probability estimator, and return randomized mixtures of
//! cost-sensitive classifiers.
//!
//! Modules:
//! - [`metrics`]: confusion vectors, layouts, metrics and constraints;
//! - [`oracle`]: class-probability models and linear minimization oracles;
//! - [`inner`]: projections and fixed-budget inner convex solves;
//! - [`solvers`]: Frank-Wolfe, GDA, ellipsoid and bisection, with
//!   constrained counterparts;
//! - [`data`]: synthetic distributions, CSV ingestion and splitting.

pub mod data;
pub mod inner;
pub mod metrics;
pub mod oracle;
pub mod solvers;
