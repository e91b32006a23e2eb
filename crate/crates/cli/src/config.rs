//! JSON experiment configuration: data source, metric, constraints, solver
//! and LMO selection, seeds and trial counts.

use confopt_core::data::SyntheticSpec;
use confopt_core::metrics::{ConstraintKind, MetricKind, Smoothness};
use confopt_core::oracle::CpeConfig;
use confopt_core::solvers::{
    BisectionConfig, ConBisectionConfig, ConEllipsoidConfig, ConGdaConfig, EllipsoidConfig,
    FwConfig, GdaConfig, SplitFwConfig,
};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_split_fraction")]
        split_fraction: f64,
        #[serde(default)]
        n_classes: Option<usize>,
    },
}

fn default_n_train() -> usize {
    10_000
}

fn default_n_test() -> usize {
    100_000
}

fn default_split_fraction() -> f64 {
    2.0 / 3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

/// Coverage targets may reference the empirical class priors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoverageTarget {
    /// The literal string "priors".
    Priors(String),
    Explicit(Vec<f64>),
}

impl Default for CoverageTarget {
    fn default() -> Self {
        CoverageTarget::Priors("priors".into())
    }
}

/// Constraint selection; mirrors the core constraint kinds with the coverage
/// target allowed to reference the class priors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    ClassPrecision {
        class: usize,
        tau: f64,
    },
    CoverageBand {
        #[serde(default)]
        target: CoverageTarget,
        #[serde(default = "default_coverage_slack")]
        slack: f64,
    },
    QuantificationKld {
        #[serde(default = "default_coverage_slack")]
        slack: f64,
    },
    DemographicParity {
        #[serde(default = "default_fairness_slack")]
        slack: f64,
    },
    EqualOpportunity {
        #[serde(default = "default_fairness_slack")]
        slack: f64,
    },
    EqualizedOdds {
        #[serde(default = "default_fairness_slack")]
        slack: f64,
    },
    LinearCustom {
        coeffs: Vec<f64>,
        bound: f64,
    },
}

fn default_coverage_slack() -> f64 {
    0.01
}

fn default_fairness_slack() -> f64 {
    0.05
}

impl ConstraintSpec {
    pub fn resolve(&self, priors: &[f64]) -> Result<ConstraintKind, String> {
        Ok(match self {
            ConstraintSpec::ClassPrecision { class, tau } => ConstraintKind::ClassPrecision {
                class: *class,
                tau: *tau,
            },
            ConstraintSpec::CoverageBand { target, slack } => {
                let target = match target {
                    CoverageTarget::Priors(s) if s == "priors" => priors.to_vec(),
                    CoverageTarget::Priors(s) => {
                        return Err(format!("unknown coverage target '{s}'"))
                    }
                    CoverageTarget::Explicit(v) => v.clone(),
                };
                ConstraintKind::CoverageBand {
                    target,
                    slack: *slack,
                }
            }
            ConstraintSpec::QuantificationKld { slack } => {
                ConstraintKind::QuantificationKld { slack: *slack }
            }
            ConstraintSpec::DemographicParity { slack } => {
                ConstraintKind::DemographicParity { slack: *slack }
            }
            ConstraintSpec::EqualOpportunity { slack } => {
                ConstraintKind::EqualOpportunity { slack: *slack }
            }
            ConstraintSpec::EqualizedOdds { slack } => {
                ConstraintKind::EqualizedOdds { slack: *slack }
            }
            ConstraintSpec::LinearCustom { coeffs, bound } => ConstraintKind::LinearCustom {
                coeffs: coeffs.clone(),
                bound: *bound,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SolverConfig {
    Fw {
        #[serde(flatten, default)]
        cfg: FwConfig,
    },
    Gda {
        #[serde(flatten, default)]
        cfg: GdaConfig,
    },
    Ellipsoid {
        #[serde(flatten, default)]
        cfg: EllipsoidConfig,
    },
    Bisection {
        #[serde(flatten, default)]
        cfg: BisectionConfig,
    },
    SplitFw {
        #[serde(flatten, default)]
        cfg: SplitFwConfig,
    },
    ConGda {
        #[serde(flatten, default)]
        cfg: ConGdaConfig,
    },
    ConEllipsoid {
        #[serde(flatten, default)]
        cfg: ConEllipsoidConfig,
    },
    ConBisection {
        #[serde(flatten, default)]
        cfg: ConBisectionConfig,
    },
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Fw { .. } => "fw",
            SolverConfig::Gda { .. } => "gda",
            SolverConfig::Ellipsoid { .. } => "ellipsoid",
            SolverConfig::Bisection { .. } => "bisection",
            SolverConfig::SplitFw { .. } => "split_fw",
            SolverConfig::ConGda { .. } => "con_gda",
            SolverConfig::ConEllipsoid { .. } => "con_ellipsoid",
            SolverConfig::ConBisection { .. } => "con_bisection",
        }
    }

    pub fn is_constrained(&self) -> bool {
        matches!(
            self,
            SolverConfig::SplitFw { .. }
                | SolverConfig::ConGda { .. }
                | SolverConfig::ConEllipsoid { .. }
                | SolverConfig::ConBisection { .. }
        )
    }

    pub fn set_allow_mismatch(&mut self, allow: bool) {
        match self {
            SolverConfig::Fw { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::Gda { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::Ellipsoid { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::Bisection { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::SplitFw { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::ConGda { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::ConEllipsoid { cfg } => cfg.allow_mismatch = allow,
            SolverConfig::ConBisection { cfg } => cfg.allow_mismatch = allow,
        }
    }

    pub fn allow_mismatch(&self) -> bool {
        match self {
            SolverConfig::Fw { cfg } => cfg.allow_mismatch,
            SolverConfig::Gda { cfg } => cfg.allow_mismatch,
            SolverConfig::Ellipsoid { cfg } => cfg.allow_mismatch,
            SolverConfig::Bisection { cfg } => cfg.allow_mismatch,
            SolverConfig::SplitFw { cfg } => cfg.allow_mismatch,
            SolverConfig::ConGda { cfg } => cfg.allow_mismatch,
            SolverConfig::ConEllipsoid { cfg } => cfg.allow_mismatch,
            SolverConfig::ConBisection { cfg } => cfg.allow_mismatch,
        }
    }

    /// Smoothness classes this solver accepts.
    pub fn accepted_smoothness(&self) -> &'static [Smoothness] {
        match self {
            SolverConfig::Fw { .. } | SolverConfig::SplitFw { .. } => {
                &[Smoothness::SmoothConvex, Smoothness::Linear]
            }
            SolverConfig::Gda { .. }
            | SolverConfig::Ellipsoid { .. }
            | SolverConfig::ConGda { .. }
            | SolverConfig::ConEllipsoid { .. } => &[
                Smoothness::SmoothConvex,
                Smoothness::NonsmoothConvex,
                Smoothness::Linear,
            ],
            SolverConfig::Bisection { .. } | SolverConfig::ConBisection { .. } => {
                &[Smoothness::RatioOfLinear]
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LmoConfig {
    Plugin {
        #[serde(default)]
        cpe: CpeConfig,
        /// Train the probability model on one half of the sample and
        /// estimate confusions on the other half.
        #[serde(default)]
        split_sample: bool,
    },
    /// Weighted logistic regression retrained per call; non-diagonal losses
    /// fall back to the plug-in over `cpe`.
    Wlr {
        #[serde(default)]
        trainer: CpeConfig,
        #[serde(default)]
        cpe: CpeConfig,
    },
    /// Plug-in over the closed-form probabilities of the synthetic source.
    ExactEta,
}

impl Default for LmoConfig {
    fn default() -> Self {
        LmoConfig::Plugin {
            cpe: CpeConfig::default(),
            split_sample: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutChoice {
    /// Normalized diagonal for recall-style metrics without constraints;
    /// raw (group-stacked) probabilities otherwise.
    #[default]
    Auto,
    Full,
    DiagonalNormalized,
    GroupStacked,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub metric: MetricSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub lmo: LmoConfig,
    #[serde(default)]
    pub layout: LayoutChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
}

fn default_trials() -> usize {
    1
}

impl ExperimentConfig {
    /// Static validation; layout/constraint compatibility is re-checked at
    /// runtime when the data shapes are known.
    pub fn validate(&self) -> Result<(), String> {
        if self.n_trials == 0 {
            return Err("n_trials must be at least 1".into());
        }
        match &self.data {
            DataConfig::Synthetic { n_train, n_test, .. } => {
                if *n_train == 0 || *n_test == 0 {
                    return Err("data.n_train and data.n_test must be positive".into());
                }
            }
            DataConfig::Csv { split_fraction, .. } => {
                if !(0.0..1.0).contains(split_fraction) {
                    return Err("data.split_fraction must lie in (0, 1)".into());
                }
            }
        }
        if matches!(self.lmo, LmoConfig::ExactEta)
            && !matches!(self.data, DataConfig::Synthetic { .. })
        {
            return Err("lmo.exact_eta requires a synthetic data source".into());
        }
        let metric = confopt_core::metrics::Metric::new(self.metric.kind.clone());
        if !self.solver.allow_mismatch()
            && !self
                .solver
                .accepted_smoothness()
                .contains(&metric.smoothness())
        {
            return Err(format!(
                "solver '{}' does not accept a {:?} metric (pass --allow-mismatch to override)",
                self.solver.name(),
                metric.smoothness()
            ));
        }
        if self.constraints.is_empty() && self.solver.is_constrained() {
            return Err(format!(
                "solver '{}' expects at least one constraint",
                self.solver.name()
            ));
        }
        if !self.constraints.is_empty() && !self.solver.is_constrained() {
            return Err(format!(
                "solver '{}' ignores constraints; use a constrained solver",
                self.solver.name()
            ));
        }
        Ok(())
    }
}

/// Configuration of the `oracle` subcommand: brute-force reference values on
/// synthetic distributions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dist: SyntheticSpec,
    pub metric: MetricSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    /// Free weights range over `[0, w_max]` with this step.
    pub w_max: f64,
    pub step: f64,
    /// Optional coarse first-pass step; the fine `step` lattice is then only
    /// evaluated around the coarse optimum.
    #[serde(default)]
    pub coarse_step: Option<f64>,
    /// Coarser step for the two-classifier pair search of constrained
    /// problems; defaults to `step`.
    #[serde(default)]
    pub pair_step: Option<f64>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_mix_steps")]
    pub mix_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mc() -> usize {
    1_000_000
}

fn default_mix_steps() -> usize {
    20
}
