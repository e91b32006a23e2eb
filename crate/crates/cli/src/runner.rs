//! Experiment execution: data preparation, CPE training, solver dispatch,
//! test evaluation, and trace/summary emission.

use crate::config::{
    DataConfig, ExperimentConfig, LayoutChoice, LmoConfig, OracleConfig, SolverConfig,
};
use anyhow::Context;
use confopt_bruteforce::{
    constrained_grid_optimum, grid_bayes_mc, grid_bayes_mc_refined, mc_confusion_cache,
    GridOptimum, GridSpec, McEvaluator,
};
use confopt_core::data::{load_csv, sample_synthetic, split, CsvSchema, Dataset, SyntheticSpec};
use confopt_core::metrics::{
    expand_constraints, ConfusionLayout, ConstraintKind, Metric, MetricKind, ScalarConstraint,
};
use confopt_core::oracle::{train_cpe, EtaModel, Lmo, PluginLmo, WlrLmo};
use confopt_core::solvers::{
    bisection, con_bisection, con_ellipsoid, con_gda, ellipsoid, frank_wolfe, gda, split_fw,
    RandomizedClassifier, SolverOutput, SolverTrace,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Error category, mapped to the process exit code.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Config(e.to_string())
}

fn numeric_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numerical(e.to_string())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub test_objective: f64,
    pub max_violation: f64,
    pub violations: Vec<ConstraintValue>,
    pub lmo_calls: usize,
    pub warnings: Vec<String>,
    /// Wall time of the trial; excluded from byte-level reproducibility
    /// comparisons.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintValue {
    pub label: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_objective: f64,
    pub std_objective: f64,
    pub mean_max_violation: f64,
    pub std_max_violation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialSummary>,
    pub aggregate: Aggregate,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train/test data of one trial.
fn trial_data(config: &DataConfig, trial_seed: u64) -> Result<(Dataset, Dataset), RunError> {
    match config {
        DataConfig::Synthetic {
            spec,
            n_train,
            n_test,
        } => {
            let train = sample_synthetic(spec, *n_train, trial_seed);
            // decorrelate the test draw from the train draw
            let test = sample_synthetic(spec, *n_test, trial_seed ^ 0x5DEE_CE66_D1CE_CAFE);
            Ok((train, test))
        }
        DataConfig::Csv {
            path,
            split_fraction,
            n_classes,
        } => {
            let data = load_csv(
                path,
                &CsvSchema {
                    n_classes: *n_classes,
                },
            )
            .map_err(config_err)?;
            Ok(split(&data, *split_fraction, trial_seed))
        }
    }
}

fn resolve_layout(
    choice: LayoutChoice,
    metric_kind: &MetricKind,
    has_constraints: bool,
    n_classes: usize,
    n_groups: usize,
    priors: &[f64],
    group_masses: &[f64],
) -> Result<ConfusionLayout, RunError> {
    let diag_friendly = matches!(
        metric_kind,
        MetricKind::ZeroOne
            | MetricKind::Balanced
            | MetricKind::HMean
            | MetricKind::GMean
            | MetricKind::QMean
            | MetricKind::MinMax
    );
    let choice = match choice {
        LayoutChoice::Auto => {
            if diag_friendly && !has_constraints && n_groups == 1 {
                LayoutChoice::DiagonalNormalized
            } else if n_groups > 1 {
                LayoutChoice::GroupStacked
            } else {
                LayoutChoice::Full
            }
        }
        other => other,
    };
    Ok(match choice {
        LayoutChoice::Full => {
            if n_groups > 1 {
                return Err(RunError::Config(
                    "full layout requires single-group data; use group_stacked".into(),
                ));
            }
            ConfusionLayout::full(n_classes)
        }
        LayoutChoice::GroupStacked => ConfusionLayout::group_stacked(n_classes, n_groups),
        LayoutChoice::DiagonalNormalized => {
            if priors.iter().any(|&p| p <= 0.0) || group_masses.iter().any(|&m| m <= 0.0) {
                return Err(RunError::Config(
                    "normalized-diagonal layout needs every class (and group) present".into(),
                ));
            }
            if n_groups == 1 {
                ConfusionLayout::diagonal_normalized(n_classes, priors)
            } else {
                ConfusionLayout::diagonal_normalized_grouped(n_classes, n_groups, group_masses)
            }
        }
        LayoutChoice::Auto => unreachable!(),
    })
}

struct TrialOutcome {
    summary: TrialSummary,
    trace: SolverTrace,
    classifier: RandomizedClassifier,
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialOutcome, RunError> {
    let started = Instant::now();
    let trial_seed = config.seed.wrapping_add(trial as u64);
    let (train, test) = trial_data(&config.data, trial_seed)?;
    let priors = train.priors();
    let group_masses = train.group_masses();
    if priors.iter().any(|&p| p <= 0.0) {
        return Err(RunError::Config(format!(
            "training draw for trial {trial} is missing a class; increase n_train"
        )));
    }
    let layout = resolve_layout(
        config.layout,
        &config.metric.kind,
        !config.constraints.is_empty(),
        train.n_classes(),
        train.n_groups(),
        &priors,
        &group_masses,
    )?;
    let metric = match config.metric.lipschitz {
        Some(l) => Metric::with_lipschitz(config.metric.kind.clone(), l),
        None => Metric::new(config.metric.kind.clone()),
    };
    let kinds: Vec<ConstraintKind> = config
        .constraints
        .iter()
        .map(|c| c.resolve(&priors))
        .collect::<Result<_, _>>()
        .map_err(RunError::Config)?;
    let constraints: Vec<ScalarConstraint> =
        expand_constraints(&kinds, &layout, &priors, Some(&group_masses)).map_err(config_err)?;

    // assemble the LMO
    let lmo: Box<dyn Lmo> = match &config.lmo {
        LmoConfig::Plugin { cpe, split_sample } => {
            let (fit_on, estimate_on) = if *split_sample {
                let (a, b) = split(&train, 0.5, trial_seed ^ 0xA5A5_5A5A);
                (a, b)
            } else {
                (train.clone(), train.clone())
            };
            let model = train_cpe(&fit_on, cpe).map_err(numeric_err)?;
            Box::new(
                PluginLmo::new(EtaModel::Linear(model), estimate_on, layout.clone())
                    .map_err(config_err)?,
            )
        }
        LmoConfig::Wlr { trainer, cpe } => {
            let model = train_cpe(&train, cpe).map_err(numeric_err)?;
            Box::new(
                WlrLmo::new(
                    train.clone(),
                    layout.clone(),
                    *trainer,
                    EtaModel::Linear(model),
                )
                .map_err(config_err)?,
            )
        }
        LmoConfig::ExactEta => {
            let spec = match &config.data {
                DataConfig::Synthetic { spec, .. } => spec.clone(),
                _ => unreachable!("validated"),
            };
            Box::new(
                PluginLmo::new(EtaModel::synthetic(spec), train.clone(), layout.clone())
                    .map_err(config_err)?,
            )
        }
    };

    let output: SolverOutput = dispatch_solver(&config.solver, &metric, &priors, &constraints, lmo.as_ref())
        .map_err(numeric_err)?;

    // evaluate the returned classifier on held-out data in the solver layout
    let test_conf = output
        .classifier
        .confusion(&test, &layout)
        .map_err(numeric_err)?;
    let test_objective = metric.eval(&test_conf, &priors).map_err(numeric_err)?;
    let violations: Vec<ConstraintValue> = constraints
        .iter()
        .map(|s| ConstraintValue {
            label: s.label.clone(),
            value: s.eval(&test_conf),
        })
        .collect();
    let max_violation = violations
        .iter()
        .map(|v| v.value)
        .fold(0.0f64, f64::max);

    Ok(TrialOutcome {
        summary: TrialSummary {
            trial,
            seed: trial_seed,
            test_objective,
            max_violation,
            violations,
            lmo_calls: output.trace.total_lmo_calls(),
            warnings: output.warnings.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        trace: output.trace,
        classifier: output.classifier,
    })
}

fn dispatch_solver(
    solver: &SolverConfig,
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    lmo: &dyn Lmo,
) -> Result<SolverOutput, confopt_core::solvers::SolverError> {
    match solver {
        SolverConfig::Fw { cfg } => frank_wolfe(metric, priors, lmo, cfg),
        SolverConfig::Gda { cfg } => gda(metric, priors, lmo, cfg),
        SolverConfig::Ellipsoid { cfg } => ellipsoid(metric, priors, lmo, cfg),
        SolverConfig::Bisection { cfg } => bisection(metric, priors, lmo, cfg),
        SolverConfig::SplitFw { cfg } => split_fw(metric, priors, constraints, lmo, cfg),
        SolverConfig::ConGda { cfg } => con_gda(metric, priors, constraints, lmo, cfg),
        SolverConfig::ConEllipsoid { cfg } => {
            con_ellipsoid(metric, priors, constraints, lmo, None, cfg)
        }
        SolverConfig::ConBisection { cfg } => {
            con_bisection(metric, priors, constraints, lmo, None, cfg)
        }
    }
}

pub fn write_trace_csv(trace: &SolverTrace, path: &Path) -> Result<(), RunError> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| RunError::Config(e.to_string()))?,
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        out,
        "iter,lmo_calls,objective,max_violation,dual_norm,log_volume"
    )
    .map_err(config_err)?;
    for row in &trace.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.iter,
            row.lmo_calls,
            row.objective,
            row.max_violation,
            fmt_opt(row.dual_norm),
            fmt_opt(row.log_volume)
        )
        .map_err(config_err)?;
    }
    Ok(())
}

/// Executes `config.n_trials` seeded trials (in parallel) and writes
/// `summary.json`, per-trial `trace_<i>.csv` and `classifier_<i>.json` under
/// `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary, RunError> {
    config.validate().map_err(RunError::Config)?;
    std::fs::create_dir_all(out_dir).map_err(config_err)?;
    let outcomes: Vec<TrialOutcome> = (0..config.n_trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial))
        .collect::<Result<_, _>>()?;
    let objectives: Vec<f64> = outcomes.iter().map(|o| o.summary.test_objective).collect();
    let violations: Vec<f64> = outcomes.iter().map(|o| o.summary.max_violation).collect();
    let (mean_objective, std_objective) = mean_std(&objectives);
    let (mean_max_violation, std_max_violation) = mean_std(&violations);
    for outcome in &outcomes {
        write_trace_csv(
            &outcome.trace,
            &out_dir.join(format!("trace_{}.csv", outcome.summary.trial)),
        )?;
        let classifier_json = serde_json::to_string(&outcome.classifier).map_err(config_err)?;
        std::fs::write(
            out_dir.join(format!("classifier_{}.json", outcome.summary.trial)),
            classifier_json,
        )
        .map_err(config_err)?;
    }
    let summary = Summary {
        config: config.clone(),
        trials: outcomes.into_iter().map(|o| o.summary).collect(),
        aggregate: Aggregate {
            mean_objective,
            std_objective,
            mean_max_violation,
            std_max_violation,
        },
    };
    let json = serde_json::to_string_pretty(&summary).map_err(config_err)?;
    std::fs::write(out_dir.join("summary.json"), json).map_err(config_err)?;
    Ok(summary)
}

/// Fixture written by the `oracle` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleFixture {
    pub config: OracleConfig,
    pub priors: Vec<f64>,
    pub value: f64,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairInfo>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairInfo {
    pub weights_b: Vec<f64>,
    pub mix: f64,
}

/// Runs the brute-force grid search for the optimal (feasible) classifier of
/// a synthetic distribution and writes a reusable fixture.
pub fn run_bayes_oracle(config: &OracleConfig, out_path: &Path) -> Result<OracleFixture, RunError> {
    let spec: &SyntheticSpec = &config.dist;
    if spec.n_classes() > 3 {
        return Err(RunError::Config(
            "grid oracles support at most 3 classes".into(),
        ));
    }
    let metric = Metric::new(config.metric.kind.clone());
    let layout = ConfusionLayout::full(spec.n_classes());
    let priors = spec.priors();
    let evaluator = McEvaluator::new(spec, config.mc_samples, config.seed);
    let fixture = if config.constraints.is_empty() {
        let best: GridOptimum = match config.coarse_step {
            Some(coarse) => grid_bayes_mc_refined(
                &metric,
                &evaluator,
                &layout,
                config.w_max,
                coarse,
                config.step,
                &priors,
            ),
            None => grid_bayes_mc(
                &metric,
                &evaluator,
                &layout,
                &GridSpec {
                    w_max: config.w_max,
                    step: config.step,
                },
                &priors,
            ),
        }
        .map_err(numeric_err)?;
        OracleFixture {
            config: config.clone(),
            priors,
            value: best.value,
            weights: best.weights,
            pair: None,
        }
    } else {
        let kinds: Vec<ConstraintKind> = config
            .constraints
            .iter()
            .map(|c| c.resolve(&priors))
            .collect::<Result<_, _>>()
            .map_err(RunError::Config)?;
        let constraints =
            expand_constraints(&kinds, &layout, &priors, None).map_err(config_err)?;
        let pair_spec = GridSpec {
            w_max: config.w_max,
            step: config.pair_step.unwrap_or(config.step),
        };
        let (grid, cache) = mc_confusion_cache(&evaluator, &pair_spec);
        let best = constrained_grid_optimum(
            &metric,
            &constraints,
            &cache,
            &grid,
            &layout,
            &priors,
            config.mix_steps,
            1e-6,
        )
        .map_err(numeric_err)?;
        OracleFixture {
            config: config.clone(),
            priors,
            value: best.value,
            weights: best.weights_a,
            pair: Some(PairInfo {
                weights_b: best.weights_b,
                mix: best.mix,
            }),
        }
    };
    if let Some(dir) = out_path.parent() {
        std::fs::create_dir_all(dir).map_err(config_err)?;
    }
    let json = serde_json::to_string_pretty(&fixture).map_err(config_err)?;
    std::fs::write(out_path, json).map_err(config_err)?;
    Ok(fixture)
}

/// Re-evaluates a saved classifier on the config's test split.
pub fn eval_classifier(
    config: &ExperimentConfig,
    classifier_path: &Path,
) -> Result<TrialSummary, RunError> {
    let started = Instant::now();
    let raw = std::fs::read_to_string(classifier_path)
        .with_context(|| format!("reading {}", classifier_path.display()))
        .map_err(config_err)?;
    let classifier: RandomizedClassifier = serde_json::from_str(&raw).map_err(config_err)?;
    classifier
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let trial_seed = config.seed;
    let (train, test) = trial_data(&config.data, trial_seed)?;
    let priors = train.priors();
    let group_masses = train.group_masses();
    let layout = resolve_layout(
        config.layout,
        &config.metric.kind,
        !config.constraints.is_empty(),
        train.n_classes(),
        train.n_groups(),
        &priors,
        &group_masses,
    )?;
    let metric = Metric::new(config.metric.kind.clone());
    let kinds: Vec<ConstraintKind> = config
        .constraints
        .iter()
        .map(|c| c.resolve(&priors))
        .collect::<Result<_, _>>()
        .map_err(RunError::Config)?;
    let constraints =
        expand_constraints(&kinds, &layout, &priors, Some(&group_masses)).map_err(config_err)?;
    let conf = classifier.confusion(&test, &layout).map_err(numeric_err)?;
    let test_objective = metric.eval(&conf, &priors).map_err(numeric_err)?;
    let violations: Vec<ConstraintValue> = constraints
        .iter()
        .map(|s| ConstraintValue {
            label: s.label.clone(),
            value: s.eval(&conf),
        })
        .collect();
    let max_violation = violations.iter().map(|v| v.value).fold(0.0f64, f64::max);
    Ok(TrialSummary {
        trial: 0,
        seed: trial_seed,
        test_objective,
        max_violation,
        violations,
        lmo_calls: 0,
        warnings: Vec::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

