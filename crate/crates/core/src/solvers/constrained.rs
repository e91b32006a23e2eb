//! Solvers for metric minimization subject to confusion-matrix constraints
//! `phi_k(C) <= 0`, plus the pruning post-process wiring.

use super::ellipsoid_geom::{jle, EllipsoidState};
use super::{
    at_iter, check_smoothness, RandomizedClassifier, SolverError, SolverOutput, SolverTrace,
    TraceRow,
};
use crate::inner::{
    linear_min_over_feasible, minimize_over_hull, minimize_xi, project_ball, project_box01,
    project_feasible, prune_mixture, BallNorm, DescentConfig,
};
use crate::metrics::{
    dot, norm2, ConfusionVector, Metric, MetricKind, ScalarConstraint, Smoothness,
};
use crate::oracle::{default_loss_direction, DeterministicClassifier, Lmo};

fn max_phi(constraints: &[ScalarConstraint], entries: &[f64]) -> f64 {
    constraints
        .iter()
        .map(|s| s.eval_entries(entries))
        .fold(0.0f64, f64::max)
}

fn phi_values(constraints: &[ScalarConstraint], entries: &[f64]) -> Vec<f64> {
    constraints.iter().map(|s| s.eval_entries(entries)).collect()
}

/// Rough Lipschitz bound for the expanded constraints: max subgradient norm
/// at the uniform point.
fn constraints_lipschitz(constraints: &[ScalarConstraint], dim: usize) -> f64 {
    let x = vec![1.0 / dim as f64; dim];
    constraints
        .iter()
        .map(|s| norm2(&s.grad_entries(&x)))
        .fold(1e-12, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `2 / (t + 2)`.
    Open,
    /// Exact line search over a 101-point grid on `[0, 1]`.
    LineSearch,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitFwConfig {
    pub iterations: usize,
    /// Quadratic penalty weight of the augmented Lagrangian.
    pub zeta: f64,
    /// Dual step sizes applied over the first, middle, and final thirds.
    pub eta_schedule: (f64, f64, f64),
    pub gamma: GammaRule,
    pub inner_solve: DescentConfig,
    pub allow_mismatch: bool,
}

impl Default for SplitFwConfig {
    fn default() -> Self {
        SplitFwConfig {
            iterations: 10000,
            zeta: 10.0,
            eta_schedule: (0.5, 0.1, 0.001),
            gamma: GammaRule::Open,
            inner_solve: DescentConfig {
                budget: 300,
                step: 0.5,
            },
            allow_mismatch: false,
        }
    }
}

/// Split Frank-Wolfe over the intersection of the achievable set and the
/// feasible region: alternates a linear minimization over each set with a
/// dual update on the coupling `C = F`, and returns the iterate past `T/2`
/// with the smallest residual `||C^t - F^t||^2`.
pub fn split_fw(
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    lmo: &dyn Lmo,
    cfg: &SplitFwConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[Smoothness::SmoothConvex, Smoothness::Linear],
        "split_fw",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let d = layout.dim();
    let domain = layout.slack_domain();
    let fallback = default_loss_direction(&layout);
    let zeta = cfg.zeta;
    let t_total = cfg.iterations.max(2);

    let init = lmo.minimize(&fallback)?;
    let mut lmo_calls = 1usize;
    let mut c_cur = init.confusion_estimate.entries().to_vec();
    let (mut f_cur, _) = project_feasible(&c_cur, constraints, domain, 500);
    let mut lambda = vec![0.0; d];

    let mut members = vec![init.classifier];
    let mut gammas: Vec<f64> = Vec::with_capacity(t_total);
    let mut residuals: Vec<f64> = Vec::with_capacity(t_total);
    let mut c_history: Vec<Vec<f64>> = Vec::with_capacity(t_total);
    let mut trace = SolverTrace::default();

    let aug = |c: &[f64], f: &[f64], lambda: &[f64]| -> Result<f64, SolverError> {
        let cv = ConfusionVector::new(layout.clone(), c.to_vec())?;
        let fv = ConfusionVector::new(layout.clone(), f.to_vec())?;
        let mut v = metric.eval(&cv, priors)? + metric.eval(&fv, priors)?;
        let mut sq = 0.0;
        for ((ci, fi), li) in c.iter().zip(f).zip(lambda) {
            v += li * (ci - fi);
            sq += (ci - fi) * (ci - fi);
        }
        Ok(v + 0.5 * zeta * sq)
    };

    for t in 1..=t_total {
        let c_conf = ConfusionVector::new(layout.clone(), c_cur.clone())?;
        let f_conf = ConfusionVector::new(layout.clone(), f_cur.clone())?;
        // gradient of the augmented Lagrangian in C
        let mut a_dir = metric.grad(&c_conf, priors)?;
        for ((a, l), (c, f)) in a_dir
            .iter_mut()
            .zip(&lambda)
            .zip(c_cur.iter().zip(&f_cur))
        {
            *a += l + zeta * (c - f);
        }
        let a_norm = norm2(&a_dir);
        let loss = if a_norm <= 1e-15 {
            fallback.clone()
        } else {
            a_dir.iter().map(|v| v / a_norm).collect()
        };
        let step = lmo.minimize(&loss)?;
        lmo_calls += 1;
        // gradient in F
        let mut b_dir = metric.grad(&f_conf, priors)?;
        for ((b, l), (c, f)) in b_dir
            .iter_mut()
            .zip(&lambda)
            .zip(c_cur.iter().zip(&f_cur))
        {
            *b -= l + zeta * (c - f);
        }
        let (f_tilde, _) =
            linear_min_over_feasible(&b_dir, constraints, domain, cfg.inner_solve)?;
        let c_tilde = step.confusion_estimate.entries();
        let gamma = match cfg.gamma {
            GammaRule::Open => 2.0 / (t as f64 + 2.0),
            GammaRule::LineSearch => {
                let mut best = (f64::INFINITY, 0.0);
                for k in 0..=100 {
                    let g = k as f64 / 100.0;
                    let c_try: Vec<f64> = c_cur
                        .iter()
                        .zip(c_tilde)
                        .map(|(c, s)| (1.0 - g) * c + g * s)
                        .collect();
                    let f_try: Vec<f64> = f_cur
                        .iter()
                        .zip(&f_tilde)
                        .map(|(f, s)| (1.0 - g) * f + g * s)
                        .collect();
                    let v = aug(&c_try, &f_try, &lambda)?;
                    if v < best.0 {
                        best = (v, g);
                    }
                }
                best.1
            }
        };
        for (c, s) in c_cur.iter_mut().zip(c_tilde) {
            *c = (1.0 - gamma) * *c + gamma * s;
        }
        for (f, s) in f_cur.iter_mut().zip(&f_tilde) {
            *f = (1.0 - gamma) * *f + gamma * s;
        }
        let third = (t_total as f64 / 3.0).ceil() as usize;
        let eta = if t <= third {
            cfg.eta_schedule.0
        } else if t <= 2 * third {
            cfg.eta_schedule.1
        } else {
            cfg.eta_schedule.2
        };
        let mut residual = 0.0;
        for ((l, c), f) in lambda.iter_mut().zip(&c_cur).zip(&f_cur) {
            let r = c - f;
            *l += eta / t as f64 * r;
            residual += r * r;
        }
        members.push(step.classifier);
        gammas.push(gamma);
        residuals.push(residual);
        c_history.push(c_cur.clone());
        let c_now = ConfusionVector::new(layout.clone(), c_cur.clone())?;
        trace.push(TraceRow {
            iter: t,
            lmo_calls,
            objective: metric.eval(&c_now, priors)?,
            max_violation: max_phi(constraints, &c_cur),
            dual_norm: Some(norm2(&lambda)),
            mu_norm: None,
            log_volume: None,
            bracket: None,
            violations: Some(phi_values(constraints, &c_cur)),
        });
    }
    // pick the iterate past T/2 with the smallest coupling residual
    let start = t_total / 2; // iterates t = start+1 ..= T (1-based)
    let mut t_star = start + 1;
    let mut best = f64::INFINITY;
    for t in (start + 1)..=t_total {
        if residuals[t - 1] < best {
            best = residuals[t - 1];
            t_star = t;
        }
    }
    // mixture weights of h^{t*}: w_0 = prod_{u<=t*}(1-g_u),
    // w_s = g_s prod_{u=s+1..t*}(1-g_u)
    let mut weights = vec![0.0; members.len()];
    let mut tail = 1.0;
    for s in (1..=t_star).rev() {
        weights[s] = gammas[s - 1] * tail;
        tail *= 1.0 - gammas[s - 1];
    }
    weights[0] = tail;
    let classifier = RandomizedClassifier {
        members,
        weights,
    }
    .pruned(0.0);
    classifier.validate()?;
    Ok(SolverOutput {
        classifier,
        trace,
        final_confusion: ConfusionVector::new(layout, c_history[t_star - 1].clone())?,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConGdaConfig {
    pub iterations: usize,
    pub lipschitz: Option<f64>,
    /// Strict feasibility radius.
    pub r: f64,
    pub eta_xi: Option<f64>,
    pub eta_lambda: Option<f64>,
    pub eta_mu: Option<f64>,
    /// Re-weight the returned mixture by the linearized pruning program.
    pub prune: bool,
    pub prune_solve: DescentConfig,
    pub allow_mismatch: bool,
}

impl Default for ConGdaConfig {
    fn default() -> Self {
        ConGdaConfig {
            iterations: 10000,
            lipschitz: None,
            r: 0.05,
            eta_xi: None,
            eta_lambda: None,
            eta_mu: None,
            prune: true,
            prune_solve: DescentConfig {
                budget: 2000,
                step: 0.5,
            },
            allow_mismatch: false,
        }
    }
}

/// Constrained gradient descent-ascent on the Lagrangian
/// `psi(xi) + <lambda, C - xi> + <mu, phi(xi)>` with box-constrained slacks,
/// an l2 ball for `lambda` and an l1 ball on the nonnegative orthant for
/// `mu`. Returns the (optionally pruned) mixture of per-iteration
/// classifiers.
pub fn con_gda(
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    lmo: &dyn Lmo,
    cfg: &ConGdaConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[
            Smoothness::SmoothConvex,
            Smoothness::NonsmoothConvex,
            Smoothness::Linear,
        ],
        "con_gda",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let d = layout.dim();
    let k_count = constraints.len();
    let t_total = cfg.iterations;
    let fallback = default_loss_direction(&layout);

    let l_metric = cfg.lipschitz.unwrap_or_else(|| {
        metric
            .lipschitz(&layout, priors)
            .max(constraints_lipschitz(constraints, d))
    });
    let r = cfg.r;
    let l_bar = 4.0 * (1.0 + 1.0 / r) * l_metric + 2.0 / r;
    let sqrt2t = (2.0 * t_total as f64).sqrt();
    let eta_xi = cfg.eta_xi.unwrap_or(1.0 / (l_bar * sqrt2t));
    let eta_dual = l_bar / ((1.0 + 2.0 * (k_count as f64).sqrt()) * sqrt2t);
    let eta_lambda = cfg.eta_lambda.unwrap_or(eta_dual);
    let eta_mu = cfg.eta_mu.unwrap_or(eta_dual);
    let lambda_radius = 2.0 * l_metric * (1.0 + 1.0 / r);
    let mu_radius = 2.0 / r;

    let init = lmo.minimize(&fallback)?;
    let mut lmo_calls = 1usize;
    let mut xi = vec![1.0 / d as f64; d];
    // warm-start the equality duals at the saddle condition
    // grad psi(xi) - lambda = 0; for linear objectives the first LMO call
    // then probes the objective direction itself
    let xi0 = ConfusionVector::new(layout.clone(), xi.clone())?;
    let mut lambda = project_ball(&metric.grad(&xi0, priors)?, lambda_radius, BallNorm::L2);
    let mut mu = vec![0.0; k_count];
    let mut members = Vec::with_capacity(t_total);
    let mut member_confusions = Vec::with_capacity(t_total);
    let mut running_sum = vec![0.0; d];
    let mut trace = SolverTrace::default();
    let _ = init; // h^0 is not part of the averaged output

    for t in 1..=t_total {
        let lam_norm = norm2(&lambda);
        let loss = if lam_norm <= 1e-15 {
            fallback.clone()
        } else {
            lambda.iter().map(|v| v / lam_norm).collect()
        };
        let res = lmo.minimize(&loss)?;
        lmo_calls += 1;
        let c_entries = res.confusion_estimate.entries().to_vec();
        members.push(res.classifier);
        member_confusions.push(res.confusion_estimate);
        for (s, v) in running_sum.iter_mut().zip(&c_entries) {
            *s += v;
        }

        let xi_c = ConfusionVector::new(layout.clone(), xi.clone())?;
        let mut grad_xi = metric.grad(&xi_c, priors)?;
        for (g, l) in grad_xi.iter_mut().zip(&lambda) {
            *g -= l;
        }
        for (m, s) in mu.iter().zip(constraints) {
            if *m == 0.0 {
                continue;
            }
            for (g, sg) in grad_xi.iter_mut().zip(s.grad_entries(&xi)) {
                *g += m * sg;
            }
        }
        let moved: Vec<f64> = xi.iter().zip(&grad_xi).map(|(x, g)| x - eta_xi * g).collect();
        let xi_next = project_box01(&moved);

        let lifted: Vec<f64> = lambda
            .iter()
            .zip(&c_entries)
            .zip(&xi)
            .map(|((l, c), x)| l + eta_lambda * (c - x))
            .collect();
        let lambda_next = project_ball(&lifted, lambda_radius, BallNorm::L2);

        let phi_xi = phi_values(constraints, &xi);
        let mu_lifted: Vec<f64> = mu
            .iter()
            .zip(&phi_xi)
            .map(|(m, p)| m + eta_mu * p)
            .collect();
        let mu_next = if k_count > 0 {
            project_ball(&mu_lifted, mu_radius, BallNorm::L1NonNeg)
        } else {
            mu_lifted
        };

        xi = xi_next;
        lambda = lambda_next;
        mu = mu_next;

        let avg: Vec<f64> = running_sum.iter().map(|s| s / t as f64).collect();
        let avg_c = ConfusionVector::new(layout.clone(), avg.clone())?;
        trace.push(TraceRow {
            iter: t,
            lmo_calls,
            objective: metric.eval(&avg_c, priors)?,
            max_violation: max_phi(constraints, &avg),
            dual_norm: Some(norm2(&lambda)),
            mu_norm: Some(mu.iter().sum()),
            log_volume: None,
            bracket: None,
            violations: Some(phi_values(constraints, &avg)),
        });
    }

    let uniform = vec![1.0 / t_total as f64; t_total];
    let mut weights = uniform.clone();
    if cfg.prune && !constraints.is_empty() {
        let pruned = prune_mixture(
            metric,
            priors,
            constraints,
            &member_confusions,
            cfg.prune_solve,
        )?;
        let uniform_avg: Vec<f64> = running_sum
            .iter()
            .map(|s| s / t_total as f64)
            .collect();
        let uniform_viol = max_phi(constraints, &uniform_avg);
        if pruned.max_violation <= 1e-6 || pruned.max_violation < uniform_viol {
            weights = pruned.weights;
        }
    }
    let mut final_entries = vec![0.0; d];
    for (w, c) in weights.iter().zip(&member_confusions) {
        for (f, e) in final_entries.iter_mut().zip(c.entries()) {
            *f += w * e;
        }
    }
    let classifier = RandomizedClassifier { members, weights };
    classifier.validate()?;
    Ok(SolverOutput {
        classifier,
        trace,
        final_confusion: ConfusionVector::new(layout, final_entries)?,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConEllipsoidConfig {
    pub iterations: usize,
    pub radius: f64,
    /// Strict feasibility radius used to check the initial classifier.
    pub r: f64,
    pub xi_solve: DescentConfig,
    pub hull_solve: DescentConfig,
    pub allow_mismatch: bool,
}

impl Default for ConEllipsoidConfig {
    fn default() -> Self {
        ConEllipsoidConfig {
            iterations: 1000,
            radius: 1000.0,
            r: 0.05,
            xi_solve: DescentConfig::default(),
            hull_solve: DescentConfig {
                budget: 2000,
                step: 0.5,
            },
            allow_mismatch: false,
        }
    }
}

/// Constrained ellipsoid over the joint dual `[lambda, mu]` of dimension
/// `d + K`: out-of-ball and negative-`mu` centers are cut back without an
/// LMO call; otherwise the supergradient `[C - xi, phi(xi)]` cuts. The final
/// classifier solves the constrained hull problem over the stored iterates.
///
/// `initial` supplies a strictly feasible classifier and its confusion
/// estimate; when absent, the plug-in for the 0-1 loss is used and a warning
/// is emitted if it fails the empirical strict-feasibility check.
pub fn con_ellipsoid(
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    lmo: &dyn Lmo,
    initial: Option<(DeterministicClassifier, ConfusionVector)>,
    cfg: &ConEllipsoidConfig,
) -> Result<SolverOutput, SolverError> {
    check_smoothness(
        metric,
        &[
            Smoothness::SmoothConvex,
            Smoothness::NonsmoothConvex,
            Smoothness::Linear,
        ],
        "con_ellipsoid",
        cfg.allow_mismatch,
    )?;
    let layout = lmo.layout().clone();
    let d = layout.dim();
    let k_count = constraints.len();
    let dim = d + k_count;
    let mut warnings = Vec::new();

    let mut lmo_calls = 0usize;
    let (h0, c0) = match initial {
        Some(pair) => pair,
        None => {
            let res = lmo.minimize(&default_loss_direction(&layout))?;
            lmo_calls += 1;
            (res.classifier, res.confusion_estimate)
        }
    };
    let feas0 = max_phi(constraints, c0.entries());
    if feas0 > -cfg.r {
        warnings.push(format!(
            "strict feasibility unknown: initial classifier has max constraint value {feas0:.6} > -r = {:.6}",
            -cfg.r
        ));
    }

    let mut state = EllipsoidState::ball(dim, cfg.radius);
    let mut members = vec![h0];
    let mut member_of_iter: Vec<usize> = Vec::with_capacity(cfg.iterations);
    let mut confusions: Vec<ConfusionVector> = Vec::with_capacity(cfg.iterations);
    let mut trace = SolverTrace::default();

    for t in 0..cfg.iterations {
        if state.collapsed() {
            break;
        }
        let center = state.center().to_vec();
        let (lambda, mu) = center.split_at(d);
        let next_state;
        if norm2(&center) > cfg.radius {
            let w: Vec<f64> = center.iter().map(|c| -c).collect();
            next_state = jle(&state, &w).map_err(|e| at_iter(e, t))?;
            member_of_iter.push(0);
            confusions.push(c0.clone());
        } else if mu.iter().any(|&m| m < 0.0) {
            let mut w = vec![0.0; dim];
            for (wk, &mk) in w[d..].iter_mut().zip(mu) {
                *wk = (-mk).max(0.0);
            }
            next_state = jle(&state, &w).map_err(|e| at_iter(e, t))?;
            member_of_iter.push(0);
            confusions.push(c0.clone());
        } else {
            let res = lmo.minimize(lambda)?;
            lmo_calls += 1;
            let xi = minimize_xi(
                metric,
                priors,
                &layout,
                lambda,
                mu,
                constraints,
                layout.slack_domain(),
                cfg.xi_solve,
            )?;
            let mut w: Vec<f64> = res
                .confusion_estimate
                .entries()
                .iter()
                .zip(&xi)
                .map(|(c, x)| c - x)
                .collect();
            w.extend(phi_values(constraints, &xi));
            members.push(res.classifier);
            member_of_iter.push(members.len() - 1);
            confusions.push(res.confusion_estimate);
            match jle(&state, &w) {
                Ok(s) => next_state = s,
                Err(SolverError::ZeroCutDirection) => {
                    break;
                }
                Err(e) => return Err(at_iter(e, t)),
            }
        }
        state = next_state;
        // running uniform average over stored iterates
        let mut avg = vec![0.0; d];
        for c in &confusions {
            for (a, e) in avg.iter_mut().zip(c.entries()) {
                *a += e;
            }
        }
        for a in avg.iter_mut() {
            *a /= confusions.len() as f64;
        }
        let avg_c = ConfusionVector::new(layout.clone(), avg.clone())?;
        trace.push(TraceRow {
            iter: t + 1,
            lmo_calls,
            objective: metric.eval(&avg_c, priors)?,
            max_violation: max_phi(constraints, &avg),
            dual_norm: Some(norm2(&center[..d])),
            mu_norm: Some(center[d..].iter().map(|v| v.max(0.0)).sum()),
            log_volume: Some(state.log_volume()),
            bracket: None,
            violations: Some(phi_values(constraints, &avg)),
        });
    }

    let (unique, assign) = super::dedupe_confusions(&confusions);
    let hull = minimize_over_hull(metric, priors, &unique, constraints, cfg.hull_solve)?;
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
        warnings,
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConBisectionConfig {
    pub outer_iterations: usize,
    pub inner: ConGdaConfig,
    pub allow_mismatch: bool,
}

impl Default for ConBisectionConfig {
    fn default() -> Self {
        ConBisectionConfig {
            outer_iterations: 10,
            inner: ConGdaConfig {
                iterations: 1000,
                ..ConGdaConfig::default()
            },
            allow_mismatch: false,
        }
    }
}

/// Constrained bisection for ratio-of-linear metrics: each outer iteration
/// runs the constrained GDA on the linear objective `<A - gamma B, C>` and
/// brackets the optimal ratio. Note the branch orientation: the candidate is
/// adopted when its ratio is at least the midpoint.
pub fn con_bisection(
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    lmo: &dyn Lmo,
    initial: Option<(DeterministicClassifier, ConfusionVector)>,
    cfg: &ConBisectionConfig,
) -> Result<SolverOutput, SolverError> {
    if !cfg.allow_mismatch && metric.smoothness() != Smoothness::RatioOfLinear {
        return Err(SolverError::MetricMismatch(format!(
            "con_bisection expects a ratio-of-linear metric, got {:?}",
            metric.smoothness()
        )));
    }
    let layout = lmo.layout().clone();
    let (num, den) = metric.ratio_coeffs(&layout)?;
    let mut warnings = Vec::new();
    let mut lmo_calls = 0usize;

    let (h0, c0) = match initial {
        Some(pair) => pair,
        None => {
            let res = lmo.minimize(&default_loss_direction(&layout))?;
            lmo_calls += 1;
            (res.classifier, res.confusion_estimate)
        }
    };
    let feas0 = max_phi(constraints, c0.entries());
    if feas0 > 0.0 {
        warnings.push(format!(
            "initial classifier violates the constraints by {feas0:.6}"
        ));
    }

    let ratio_at = |entries: &[f64]| -> Result<f64, SolverError> {
        let dv = dot(&den, entries);
        if dv <= 0.0 {
            return Err(crate::metrics::MetricError::DegenerateDenominator(dv).into());
        }
        Ok(dot(&num, entries) / dv)
    };

    // inner runs inherit the theorem's Lipschitz constant
    // max{L, ||A||_2 + ||B||_2}
    let l_inner = cfg
        .inner
        .lipschitz
        .unwrap_or_else(|| {
            constraints_lipschitz(constraints, layout.dim()).max(norm2(&num) + norm2(&den))
        });

    let mut alpha = 0.0f64;
    let mut beta = 1.0f64;
    let mut current = RandomizedClassifier::degenerate(h0);
    let mut current_conf = c0;
    let mut trace = SolverTrace::default();
    for t in 1..=cfg.outer_iterations {
        let gamma = 0.5 * (alpha + beta);
        let coeffs: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a - gamma * b).collect();
        let inner_metric = Metric::new(MetricKind::LinearCustom { coeffs });
        let inner_cfg = ConGdaConfig {
            lipschitz: Some(l_inner),
            allow_mismatch: true,
            ..cfg.inner
        };
        let inner_out = con_gda(&inner_metric, priors, constraints, lmo, &inner_cfg)?;
        lmo_calls += inner_out.trace.total_lmo_calls();
        let value = ratio_at(inner_out.final_confusion.entries())?;
        if value >= gamma {
            alpha = gamma;
            current = inner_out.classifier;
            current_conf = inner_out.final_confusion;
        } else {
            beta = gamma;
        }
        trace.push(TraceRow {
            iter: t,
            lmo_calls,
            objective: ratio_at(current_conf.entries())?,
            max_violation: max_phi(constraints, current_conf.entries()),
            dual_norm: None,
            mu_norm: None,
            log_volume: None,
            bracket: Some((alpha, beta)),
            violations: Some(phi_values(constraints, current_conf.entries())),
        });
    }
    current.validate()?;
    Ok(SolverOutput {
        classifier: current,
        trace,
        final_confusion: current_conf,
        warnings,
    })
}
