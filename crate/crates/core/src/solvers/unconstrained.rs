//! Solvers for unconstrained metric minimization over the achievable
//! confusion set, all driven by a linear minimization oracle.

use super::ellipsoid_geom::{jle, EllipsoidState};
use super::{
    at_iter, check_smoothness, RandomizedClassifier, SolverError, SolverOutput, SolverTrace,
    TraceRow,
};
use crate::inner::{
    minimize_over_hull, minimize_xi, project_ball, project_domain, BallNorm, DescentConfig,
};
use crate::metrics::{dot, norm2, norm_inf, ConfusionVector, Metric, Smoothness};
use crate::oracle::{default_loss_direction, Lmo};

/// Normalizes by the given norm, substituting the 0-1 loss direction when the
/// vector vanishes.
fn normalized_or_default(v: &[f64], norm: fn(&[f64]) -> f64, fallback: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= 1e-15 || !n.is_finite() {
        fallback.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FwConfig {
    pub iterations: usize,
    pub allow_mismatch: bool,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            iterations: 5000,
            allow_mismatch: false,
        }
    }
}

/// Frank-Wolfe for smooth convex metrics: linearize at the averaged confusion
/// iterate, call the LMO on the normalized gradient, and move with step
/// `2/(t+1)`.
pub fn frank_wolfe(
    metric: &Metric,
    priors: &[f64],
    lmo: &dyn Lmo,
    cfg: &FwConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[Smoothness::SmoothConvex, Smoothness::Linear],
        "frank_wolfe",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let fallback = default_loss_direction(&layout);
    let init = lmo.minimize(&fallback)?;
    let mut lmo_calls = 1usize;
    let mut confusion = init.confusion_estimate.entries().to_vec();
    let mut members = Vec::with_capacity(cfg.iterations);
    let mut weights: Vec<f64> = Vec::with_capacity(cfg.iterations);
    let mut trace = SolverTrace::default();
    for t in 1..=cfg.iterations {
        let c = ConfusionVector::new(layout.clone(), confusion.clone())?;
        let grad = metric.grad(&c, priors)?;
        let loss = normalized_or_default(&grad, norm_inf, &fallback);
        let step = lmo.minimize(&loss)?;
        lmo_calls += 1;
        let gamma = 2.0 / (t as f64 + 1.0);
        for w in weights.iter_mut() {
            *w *= 1.0 - gamma;
        }
        members.push(step.classifier);
        weights.push(gamma);
        for (ci, si) in confusion.iter_mut().zip(step.confusion_estimate.entries()) {
            *ci = (1.0 - gamma) * *ci + gamma * si;
        }
        let c_now = ConfusionVector::new(layout.clone(), confusion.clone())?;
        trace.push(TraceRow {
            iter: t,
            lmo_calls,
            objective: metric.eval(&c_now, priors)?,
            max_violation: 0.0,
            dual_norm: None,
            mu_norm: None,
            log_volume: None,
            bracket: None,
            violations: None,
        });
    }
    let classifier = RandomizedClassifier { members, weights };
    classifier.validate()?;
    Ok(SolverOutput {
        classifier,
        trace,
        final_confusion: ConfusionVector::new(layout, confusion)?,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GdaConfig {
    pub iterations: usize,
    /// Lipschitz constant of the metric; estimated when absent.
    pub lipschitz: Option<f64>,
    /// Dual-ball radius; defaults to `2 L`.
    pub lambda_radius: Option<f64>,
    /// Slack-descent step; defaults to `1 / (4 L sqrt(2 T))`.
    pub eta: Option<f64>,
    /// Dual-ascent step; defaults to `4 L / sqrt(2 T)`.
    pub eta_prime: Option<f64>,
    pub allow_mismatch: bool,
}

impl Default for GdaConfig {
    fn default() -> Self {
        GdaConfig {
            iterations: 5000,
            lipschitz: None,
            lambda_radius: None,
            eta: None,
            eta_prime: None,
            allow_mismatch: false,
        }
    }
}

/// Gradient descent-ascent on the Lagrangian
/// `psi(xi) + <lambda, C - xi>`: the LMO minimizes over achievable
/// confusions, slack variables descend, duals ascend inside an l2 ball.
/// Returns the uniform mixture of the per-iteration classifiers.
pub fn gda(
    metric: &Metric,
    priors: &[f64],
    lmo: &dyn Lmo,
    cfg: &GdaConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[
            Smoothness::SmoothConvex,
            Smoothness::NonsmoothConvex,
            Smoothness::Linear,
        ],
        "gda",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let d = layout.dim();
    let t_total = cfg.iterations;
    let lipschitz = cfg.lipschitz.unwrap_or_else(|| metric.lipschitz(&layout, priors));
    let radius = cfg.lambda_radius.unwrap_or(2.0 * lipschitz);
    let sqrt2t = (2.0 * t_total as f64).sqrt();
    let eta = cfg.eta.unwrap_or(1.0 / (4.0 * lipschitz * sqrt2t));
    let eta_prime = cfg.eta_prime.unwrap_or(4.0 * lipschitz / sqrt2t);
    let fallback = default_loss_direction(&layout);
    let domain = layout.slack_domain();

    let mut xi = vec![1.0 / d as f64; d];
    let mut lambda = vec![0.0; d];
    let mut members = Vec::with_capacity(t_total);
    let mut running_sum = vec![0.0; d];
    let mut trace = SolverTrace::default();
    for t in 0..t_total {
        let loss = normalized_or_default(&lambda, norm_inf, &fallback);
        let res = lmo.minimize(&loss)?;
        members.push(res.classifier);
        let c_entries = res.confusion_estimate.entries().to_vec();
        for (s, v) in running_sum.iter_mut().zip(&c_entries) {
            *s += v;
        }
        // descent on xi with the old lambda, then ascent on lambda with the
        // old xi
        let xi_c = ConfusionVector::new(layout.clone(), xi.clone())?;
        let mut grad_xi = metric.grad(&xi_c, priors)?;
        for (g, l) in grad_xi.iter_mut().zip(&lambda) {
            *g -= l;
        }
        let moved: Vec<f64> = xi
            .iter()
            .zip(&grad_xi)
            .map(|(x, g)| x - eta * g)
            .collect();
        let xi_next = project_domain(&moved, domain);
        let lifted: Vec<f64> = lambda
            .iter()
            .zip(&c_entries)
            .zip(&xi)
            .map(|((l, c), x)| l + eta_prime * (c - x))
            .collect();
        lambda = project_ball(&lifted, radius, BallNorm::L2);
        xi = xi_next;

        let avg: Vec<f64> = running_sum.iter().map(|s| s / (t + 1) as f64).collect();
        let avg_c = ConfusionVector::new(layout.clone(), avg)?;
        trace.push(TraceRow {
            iter: t + 1,
            lmo_calls: t + 1,
            objective: metric.eval(&avg_c, priors)?,
            max_violation: 0.0,
            dual_norm: Some(norm2(&lambda)),
            mu_norm: None,
            log_volume: None,
            bracket: None,
            violations: None,
        });
    }
    let weights = vec![1.0 / t_total as f64; t_total];
    let avg: Vec<f64> = running_sum
        .iter()
        .map(|s| s / t_total as f64)
        .collect();
    let classifier = RandomizedClassifier { members, weights };
    classifier.validate()?;
    Ok(SolverOutput {
        classifier,
        trace,
        final_confusion: ConfusionVector::new(layout, avg)?,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EllipsoidConfig {
    pub iterations: usize,
    /// Initial ellipsoid radius. Theory prescribes `2 L`; the experimental
    /// preset is 1000.
    pub radius: f64,
    pub xi_solve: DescentConfig,
    pub hull_solve: DescentConfig,
    pub allow_mismatch: bool,
}

impl Default for EllipsoidConfig {
    fn default() -> Self {
        EllipsoidConfig {
            iterations: 1000,
            radius: 1000.0,
            xi_solve: DescentConfig::default(),
            hull_solve: DescentConfig {
                budget: 2000,
                step: 0.5,
            },
            allow_mismatch: false,
        }
    }
}

/// Cutting-plane maximization of the Lagrange dual over the multipliers.
/// Out-of-ball centers are cut back without an LMO call; in-ball centers
/// query the LMO and the slack minimizer for a supergradient. The final
/// classifier reweighs the stored iterates by minimizing the metric over
/// their convex hull.
pub fn ellipsoid(
    metric: &Metric,
    priors: &[f64],
    lmo: &dyn Lmo,
    cfg: &EllipsoidConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[
            Smoothness::SmoothConvex,
            Smoothness::NonsmoothConvex,
            Smoothness::Linear,
        ],
        "ellipsoid",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let d = layout.dim();
    let domain = layout.slack_domain();
    let mut state = EllipsoidState::ball(d, cfg.radius);
    let mut members = Vec::new();
    let mut member_of_iter = Vec::with_capacity(cfg.iterations);
    let mut confusions: Vec<ConfusionVector> = Vec::with_capacity(cfg.iterations);
    let mut lmo_calls = 0usize;
    let mut trace = SolverTrace::default();
    let mut early_stop = None;
    for t in 0..cfg.iterations {
        if state.collapsed() {
            // pinned to far better accuracy than any downstream use
            break;
        }
        let center = state.center().to_vec();
        let next_state;
        if norm2(&center) > cfg.radius {
            // cut back toward the initial ball; no LMO call this iteration
            let w: Vec<f64> = center.iter().map(|c| -c).collect();
            next_state = jle(&state, &w).map_err(|e| at_iter(e, t))?;
            member_of_iter.push(0usize);
            confusions.push(confusions[0].clone());
        } else {
            let res = lmo.minimize(&center)?;
            lmo_calls += 1;
            let xi = minimize_xi(
                metric,
                priors,
                &layout,
                &center,
                &[],
                &[],
                domain,
                cfg.xi_solve,
            )?;
            let w: Vec<f64> = res
                .confusion_estimate
                .entries()
                .iter()
                .zip(&xi)
                .map(|(c, x)| c - x)
                .collect();
            members.push(res.classifier);
            member_of_iter.push(members.len() - 1);
            confusions.push(res.confusion_estimate);
            match jle(&state, &w) {
                Ok(s) => next_state = s,
                Err(SolverError::ZeroCutDirection) => {
                    // supergradient vanished: the dual is optimal here
                    early_stop = Some(t);
                    trace.push(row_for_ellipsoid(
                        t,
                        lmo_calls,
                        metric,
                        priors,
                        &confusions,
                        &state,
                    )?);
                    break;
                }
                Err(e) => return Err(at_iter(e, t)),
            }
        }
        state = next_state;
        trace.push(row_for_ellipsoid(
            t,
            lmo_calls,
            metric,
            priors,
            &confusions,
            &state,
        )?);
    }
    let _ = early_stop;
    // the plug-in produces few distinct confusions across cuts; solve the
    // hull problem over the unique ones and map weights back through the
    // first member realizing each
    let (unique, assign) = super::dedupe_confusions(&confusions);
    let hull = minimize_over_hull(metric, priors, &unique, &[], cfg.hull_solve)?;
    let mut rep_member = vec![usize::MAX; unique.len()];
    for (it, &u) in assign.iter().enumerate() {
        if rep_member[u] == usize::MAX {
            rep_member[u] = member_of_iter[it];
        }
    }
    let mut weights = vec![0.0; members.len()];
    for (u, &m) in rep_member.iter().enumerate() {
        weights[m] += hull.weights[u];
    }
    let mut final_entries = vec![0.0; d];
    for (a, c) in hull.weights.iter().zip(&unique) {
        for (f, e) in final_entries.iter_mut().zip(c.entries()) {
            *f += a * e;
        }
    }
    let classifier = RandomizedClassifier { members, weights }.pruned(0.0);
    classifier.validate()?;
    Ok(SolverOutput {
        classifier,
        trace,
        final_confusion: ConfusionVector::new(layout, final_entries)?,
        warnings: Vec::new(),
    })
}

fn row_for_ellipsoid(
    t: usize,
    lmo_calls: usize,
    metric: &Metric,
    priors: &[f64],
    confusions: &[ConfusionVector],
    state: &EllipsoidState,
) -> Result<TraceRow, SolverError> {
    // running uniform average of the stored iterates
    let layout = confusions[0].layout().clone();
    let d = layout.dim();
    let mut avg = vec![0.0; d];
    for c in confusions {
        for (a, e) in avg.iter_mut().zip(c.entries()) {
            *a += e;
        }
    }
    for a in avg.iter_mut() {
        *a /= confusions.len() as f64;
    }
    let c = ConfusionVector::new(layout, avg)?;
    Ok(TraceRow {
        iter: t + 1,
        lmo_calls,
        objective: metric.eval(&c, priors)?,
        max_violation: 0.0,
        dual_norm: Some(norm2(state.center())),
        mu_norm: None,
        log_volume: Some(state.log_volume()),
        bracket: None,
        violations: None,
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BisectionConfig {
    pub iterations: usize,
    pub allow_mismatch: bool,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig {
            iterations: 20,
            allow_mismatch: false,
        }
    }
}

/// Bisection for ratio-of-linear metrics `psi = <A,C> / <B,C>`: each
/// iteration tests the midpoint `gamma` by minimizing the linear loss
/// `A - gamma B` and halves the bracket. Returns a single deterministic
/// classifier.
pub fn bisection(
    metric: &Metric,
    _priors: &[f64],
    lmo: &dyn Lmo,
    cfg: &BisectionConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[Smoothness::RatioOfLinear],
        "bisection",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let (num, den) = metric.ratio_coeffs(&layout)?;
    let fallback = default_loss_direction(&layout);
    // arbitrary initial classifier: probe the numerator direction
    let init = lmo.minimize(&normalized_or_default(&num, norm2, &fallback))?;
    let mut lmo_calls = 1usize;
    let ratio_at = |c: &ConfusionVector| -> Result<f64, SolverError> {
        let dv = dot(&den, c.entries());
        if dv <= 0.0 {
            return Err(crate::metrics::MetricError::DegenerateDenominator(dv).into());
        }
        Ok(dot(&num, c.entries()) / dv)
    };
    let mut alpha = 0.0f64;
    let mut beta = 1.0f64;
    let mut current = init;
    let mut trace = SolverTrace::default();
    for t in 1..=cfg.iterations {
        let gamma = 0.5 * (alpha + beta);
        let dir: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a - gamma * b).collect();
        let loss = normalized_or_default(&dir, norm2, &fallback);
        let res = lmo.minimize(&loss)?;
        lmo_calls += 1;
        let value = ratio_at(&res.confusion_estimate)?;
        if value <= gamma {
            beta = gamma;
            current = res;
        } else {
            alpha = gamma;
        }
        trace.push(TraceRow {
            iter: t,
            lmo_calls,
            objective: ratio_at(&current.confusion_estimate)?,
            max_violation: 0.0,
            dual_norm: None,
            mu_norm: None,
            log_volume: None,
            bracket: Some((alpha, beta)),
            violations: None,
        });
    }
    Ok(SolverOutput {
        classifier: RandomizedClassifier::degenerate(current.classifier),
        trace,
        final_confusion: current.confusion_estimate,
        warnings: Vec::new(),
    })
}
