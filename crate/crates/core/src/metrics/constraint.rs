//! Constraint functions over confusion vectors.
//!
//! Each [`ConstraintKind`] expands into a finite list of scalar functions
//! `phi_k`; a confusion vector is feasible iff every `phi_k(C) <= 0`.
//! Absolute-value and max constraints are expanded into separate one-sided
//! constraints.

use super::{dot, ConfusionLayout, ConfusionVector, MetricError, Representation, ENTRY_FLOOR};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Precision of `class` at least `tau`: `1 - C_ii / sum_j C_ji - tau <= 0`.
    ClassPrecision { class: usize, tau: f64 },
    /// `|sum_j C_ji - target_i| <= slack` for every class `i` (2n one-sided
    /// constraints).
    CoverageBand { target: Vec<f64>, slack: f64 },
    /// KL divergence from the class priors to the prediction coverage at most
    /// `slack`.
    QuantificationKld { slack: f64 },
    /// Per-group per-class coverage within `slack` of the population coverage.
    DemographicParity { slack: f64 },
    /// Per-group true-positive rate within `slack` of the population rate
    /// (binary labels).
    EqualOpportunity { slack: f64 },
    /// Per-group confusion rates within `slack` of the population rates.
    EqualizedOdds { slack: f64 },
    /// `<coeffs, C> <= bound`.
    LinearCustom { coeffs: Vec<f64>, bound: f64 },
}

/// One expanded scalar constraint `phi(C) <= 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarConstraint {
    pub label: String,
    form: Form,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Form {
    /// `offset + <coeffs, c>`
    Linear { coeffs: Vec<f64>, offset: f64 },
    /// `offset - <num, c> / <den, c>`
    Ratio {
        num: Vec<f64>,
        den: Vec<f64>,
        offset: f64,
    },
    /// `sum_i priors_i * ln(priors_i / <cols_i, c>) - slack`
    Kld {
        priors: Vec<f64>,
        cols: Vec<Vec<f64>>,
        slack: f64,
    },
}

impl ScalarConstraint {
    pub fn linear(label: impl Into<String>, coeffs: Vec<f64>, offset: f64) -> Self {
        ScalarConstraint {
            label: label.into(),
            form: Form::Linear { coeffs, offset },
        }
    }

    pub fn eval(&self, c: &ConfusionVector) -> f64 {
        self.eval_entries(c.entries())
    }

    /// Evaluation on a raw entry slice in the layout the constraint was
    /// expanded for (used by solvers on slack variables).
    pub fn eval_entries(&self, x: &[f64]) -> f64 {
        match &self.form {
            Form::Linear { coeffs, offset } => offset + dot(coeffs, x),
            Form::Ratio { num, den, offset } => {
                let d = dot(den, x).max(ENTRY_FLOOR);
                offset - dot(num, x) / d
            }
            Form::Kld {
                priors,
                cols,
                slack,
            } => {
                let mut s = 0.0;
                for (p, col) in priors.iter().zip(cols) {
                    if *p <= 0.0 {
                        continue;
                    }
                    let q = dot(col, x).max(ENTRY_FLOOR);
                    s += p * (p / q).ln();
                }
                s - slack
            }
        }
    }

    /// (Sub)gradient with respect to the layout entries.
    pub fn grad(&self, c: &ConfusionVector) -> Vec<f64> {
        self.grad_entries(c.entries())
    }

    pub fn grad_entries(&self, x: &[f64]) -> Vec<f64> {
        match &self.form {
            Form::Linear { coeffs, .. } => coeffs.clone(),
            Form::Ratio { num, den, .. } => {
                let nv = dot(num, x);
                let dv = dot(den, x).max(ENTRY_FLOOR);
                // d/dx [ -N/D ] = (N D' - N' D) / D^2
                num.iter()
                    .zip(den)
                    .map(|(&a, &b)| (nv * b - a * dv) / (dv * dv))
                    .collect()
            }
            Form::Kld { priors, cols, .. } => {
                let mut g = vec![0.0; x.len()];
                for (p, col) in priors.iter().zip(cols) {
                    if *p <= 0.0 {
                        continue;
                    }
                    let q = dot(col, x).max(ENTRY_FLOOR);
                    for (gi, &ci) in g.iter_mut().zip(col) {
                        *gi -= p / q * ci;
                    }
                }
                g
            }
        }
    }
}

/// Indicator coefficients for the aggregate column sum of class `j`.
fn column_coeffs(layout: &ConfusionLayout) -> Vec<Vec<f64>> {
    let n = layout.n_classes();
    (0..n)
        .map(|j| {
            let mut v = vec![0.0; layout.dim()];
            for a in 0..layout.n_groups() {
                for i in 0..n {
                    v[layout.raw_index(a, i, j)] = 1.0;
                }
            }
            v
        })
        .collect()
}

fn require_raw_layout(layout: &ConfusionLayout, what: &str) -> Result<(), MetricError> {
    match layout.representation() {
        Representation::Full | Representation::GroupStacked => Ok(()),
        _ => Err(MetricError::LayoutMismatch(format!(
            "{what} needs raw confusion entries"
        ))),
    }
}

fn require_groups(
    layout: &ConfusionLayout,
    group_masses: Option<&[f64]>,
    what: &str,
) -> Result<Vec<f64>, MetricError> {
    require_raw_layout(layout, what)?;
    let m = layout.n_groups();
    let n = layout.n_classes();
    let masses = group_masses.ok_or_else(|| {
        MetricError::LayoutMismatch(format!("{what} needs group masses mu[a][i]"))
    })?;
    if masses.len() != m * n {
        return Err(MetricError::LayoutMismatch(format!(
            "group masses have length {}, expected {}",
            masses.len(),
            m * n
        )));
    }
    Ok(masses.to_vec())
}

/// Expands a constraint into its one-sided scalar components for `layout`.
pub fn expand_constraint(
    kind: &ConstraintKind,
    layout: &ConfusionLayout,
    priors: &[f64],
    group_masses: Option<&[f64]>,
) -> Result<Vec<ScalarConstraint>, MetricError> {
    let n = layout.n_classes();
    let m = layout.n_groups();
    match kind {
        ConstraintKind::LinearCustom { coeffs, bound } => {
            if coeffs.len() != layout.dim() {
                return Err(MetricError::LayoutMismatch(
                    "custom constraint coefficients length != layout dimension".into(),
                ));
            }
            Ok(vec![ScalarConstraint::linear(
                "linear",
                coeffs.clone(),
                -bound,
            )])
        }
        ConstraintKind::ClassPrecision { class, tau } => {
            require_raw_layout(layout, "class precision")?;
            if *class >= n {
                return Err(MetricError::LayoutMismatch(format!(
                    "precision class {class} out of range"
                )));
            }
            let mut num = vec![0.0; layout.dim()];
            for a in 0..m {
                num[layout.raw_index(a, *class, *class)] = 1.0;
            }
            let den = column_coeffs(layout)[*class].clone();
            Ok(vec![ScalarConstraint {
                label: format!("precision[{class}]"),
                form: Form::Ratio {
                    num,
                    den,
                    offset: 1.0 - tau,
                },
            }])
        }
        ConstraintKind::CoverageBand { target, slack } => {
            require_raw_layout(layout, "coverage")?;
            if target.len() != n {
                return Err(MetricError::LayoutMismatch(
                    "coverage target length != number of classes".into(),
                ));
            }
            let cols = column_coeffs(layout);
            let mut out = Vec::with_capacity(2 * n);
            for i in 0..n {
                out.push(ScalarConstraint::linear(
                    format!("coverage[{i}]+"),
                    cols[i].clone(),
                    -target[i] - slack,
                ));
                out.push(ScalarConstraint::linear(
                    format!("coverage[{i}]-"),
                    cols[i].iter().map(|&v| -v).collect(),
                    target[i] - slack,
                ));
            }
            Ok(out)
        }
        ConstraintKind::QuantificationKld { slack } => {
            require_raw_layout(layout, "quantification")?;
            if priors.len() != n {
                return Err(MetricError::LayoutMismatch(
                    "quantification needs class priors".into(),
                ));
            }
            Ok(vec![ScalarConstraint {
                label: "kld".into(),
                form: Form::Kld {
                    priors: priors.to_vec(),
                    cols: column_coeffs(layout),
                    slack: *slack,
                },
            }])
        }
        ConstraintKind::DemographicParity { slack } => {
            let masses = require_groups(layout, group_masses, "demographic parity")?;
            let mut out = Vec::with_capacity(2 * m * n);
            for a in 0..m {
                let mu_a: f64 = masses[a * n..(a + 1) * n].iter().sum();
                if mu_a <= 0.0 {
                    return Err(MetricError::LayoutMismatch(format!(
                        "group {a} has zero mass"
                    )));
                }
                for i in 0..n {
                    // (1/mu_a) sum_j C^a_{ji} - sum_{b,j} C^b_{ji}
                    let mut coeffs = vec![0.0; layout.dim()];
                    for b in 0..m {
                        for j in 0..n {
                            coeffs[layout.raw_index(b, j, i)] -= 1.0;
                        }
                    }
                    for j in 0..n {
                        coeffs[layout.raw_index(a, j, i)] += 1.0 / mu_a;
                    }
                    out.push(ScalarConstraint::linear(
                        format!("dp[{a},{i}]+"),
                        coeffs.clone(),
                        -slack,
                    ));
                    out.push(ScalarConstraint::linear(
                        format!("dp[{a},{i}]-"),
                        coeffs.iter().map(|&v| -v).collect(),
                        -slack,
                    ));
                }
            }
            Ok(out)
        }
        ConstraintKind::EqualOpportunity { slack } => {
            let masses = require_groups(layout, group_masses, "equal opportunity")?;
            if n != 2 {
                return Err(MetricError::LayoutMismatch(
                    "equal opportunity is defined for binary labels".into(),
                ));
            }
            let pi1: f64 = (0..m).map(|a| masses[a * n + 1]).sum();
            let mut out = Vec::with_capacity(2 * m);
            for a in 0..m {
                let mu_a1 = masses[a * n + 1];
                if mu_a1 <= 0.0 {
                    return Err(MetricError::LayoutMismatch(format!(
                        "group {a} has no positive examples"
                    )));
                }
                // C^a_{11} / mu_{a,1} - C_{11} / pi_1
                let mut coeffs = vec![0.0; layout.dim()];
                for b in 0..m {
                    coeffs[layout.raw_index(b, 1, 1)] -= 1.0 / pi1.max(ENTRY_FLOOR);
                }
                coeffs[layout.raw_index(a, 1, 1)] += 1.0 / mu_a1;
                out.push(ScalarConstraint::linear(
                    format!("eopp[{a}]+"),
                    coeffs.clone(),
                    -slack,
                ));
                out.push(ScalarConstraint::linear(
                    format!("eopp[{a}]-"),
                    coeffs.iter().map(|&v| -v).collect(),
                    -slack,
                ));
            }
            Ok(out)
        }
        ConstraintKind::EqualizedOdds { slack } => {
            let masses = require_groups(layout, group_masses, "equalized odds")?;
            let mut priors_agg = vec![0.0; n];
            for a in 0..m {
                for i in 0..n {
                    priors_agg[i] += masses[a * n + i];
                }
            }
            let mut out = Vec::with_capacity(2 * m * n * n);
            for a in 0..m {
                for i in 0..n {
                    let mu_ai = masses[a * n + i];
                    if mu_ai <= 0.0 {
                        return Err(MetricError::LayoutMismatch(format!(
                            "group {a} has no class-{i} examples"
                        )));
                    }
                    for j in 0..n {
                        // C^a_{ij} / mu_{a,i} - C_{ij} / pi_i
                        let mut coeffs = vec![0.0; layout.dim()];
                        for b in 0..m {
                            coeffs[layout.raw_index(b, i, j)] -=
                                1.0 / priors_agg[i].max(ENTRY_FLOOR);
                        }
                        coeffs[layout.raw_index(a, i, j)] += 1.0 / mu_ai;
                        out.push(ScalarConstraint::linear(
                            format!("eodds[{a},{i},{j}]+"),
                            coeffs.clone(),
                            -slack,
                        ));
                        out.push(ScalarConstraint::linear(
                            format!("eodds[{a},{i},{j}]-"),
                            coeffs.iter().map(|&v| -v).collect(),
                            -slack,
                        ));
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Expands a list of constraint kinds in order.
pub fn expand_constraints(
    kinds: &[ConstraintKind],
    layout: &ConfusionLayout,
    priors: &[f64],
    group_masses: Option<&[f64]>,
) -> Result<Vec<ScalarConstraint>, MetricError> {
    let mut out = Vec::new();
    for k in kinds {
        out.extend(expand_constraint(k, layout, priors, group_masses)?);
    }
    Ok(out)
}

/// Evaluates every expanded component; the input is feasible iff all
/// components are `<= 0`.
pub fn evaluate_constraints(
    kinds: &[ConstraintKind],
    c: &ConfusionVector,
    priors: &[f64],
    group_masses: Option<&[f64]>,
) -> Result<Vec<f64>, MetricError> {
    let expanded = expand_constraints(kinds, c.layout(), priors, group_masses)?;
    Ok(expanded.iter().map(|s| s.eval(c)).collect())
}

/// Largest component of [`evaluate_constraints`]; `<= 0` means feasible.
pub fn max_violation(scalars: &[ScalarConstraint], c: &ConfusionVector) -> f64 {
    scalars
        .iter()
        .map(|s| s.eval(c))
        .fold(f64::NEG_INFINITY, f64::max)
}
