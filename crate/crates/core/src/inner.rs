//! Shared convex subroutines: Euclidean projections onto the simplex and
//! norm balls, inner slack-variable minimizations, and convex minimization
//! over convex combinations of stored confusion iterates.
//!
//! All solves are plain projected subgradient descent with fixed budgets; the
//! constrained variants add an escalating quadratic penalty followed by a
//! Polyak-step feasibility polish.

use crate::metrics::{
    dot, norm2, ConfusionVector, Metric, MetricError, ScalarConstraint, SlackDomain,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InnerError {
    #[error("non-finite objective during inner solve")]
    NumericalFailure,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn uniform(d: usize) -> Self {
        SimplexPoint(vec![1.0 / d as f64; d])
    }
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
pub fn project_simplex(v: &[f64]) -> SimplexPoint {
    SimplexPoint(project_scaled_simplex(v, 1.0))
}

/// Projection onto `{x >= 0, sum x = total}`.
fn project_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (k + 1) as f64;
        if u > t {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallNorm {
    L2,
    /// Nonnegative orthant intersected with the l1 ball.
    L1NonNeg,
}

/// Euclidean projection onto a norm ball of the given radius.
pub fn project_ball(v: &[f64], radius: f64, norm: BallNorm) -> Vec<f64> {
    assert!(radius > 0.0);
    match norm {
        BallNorm::L2 => {
            let n = norm2(v);
            if n <= radius {
                v.to_vec()
            } else {
                v.iter().map(|&x| x * radius / n).collect()
            }
        }
        BallNorm::L1NonNeg => {
            let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
            if clipped.iter().sum::<f64>() <= radius {
                clipped
            } else {
                project_scaled_simplex(v, radius)
            }
        }
    }
}

pub fn project_box01(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.clamp(0.0, 1.0)).collect()
}

pub fn project_domain(v: &[f64], domain: SlackDomain) -> Vec<f64> {
    match domain {
        SlackDomain::Simplex => project_simplex(v).into_vec(),
        SlackDomain::Box01 => project_box01(v),
    }
}

fn domain_start(d: usize, domain: SlackDomain) -> Vec<f64> {
    match domain {
        SlackDomain::Simplex => vec![1.0 / d as f64; d],
        SlackDomain::Box01 => vec![0.5; d],
    }
}

/// Budget and base step size of an inner projected-subgradient solve; the
/// step at iteration `t` is `step / sqrt(t + 1)`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub budget: usize,
    pub step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            budget: 1000,
            step: 0.5,
        }
    }
}

/// Projected subgradient descent tracking the best iterate by objective.
fn projected_subgradient<F>(
    mut value_grad: F,
    x0: Vec<f64>,
    domain: SlackDomain,
    cfg: DescentConfig,
) -> Result<Vec<f64>, InnerError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), InnerError>,
{
    let mut x = x0;
    let (mut best_val, _) = value_grad(&x)?;
    let mut best = x.clone();
    for t in 0..cfg.budget {
        let (_, g) = value_grad(&x)?;
        let step = cfg.step / ((t + 1) as f64).sqrt();
        let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = project_domain(&moved, domain);
        let (val, _) = value_grad(&x)?;
        if !val.is_finite() {
            return Err(InnerError::NumericalFailure);
        }
        if val < best_val {
            best_val = val;
            best = x.clone();
        }
    }
    Ok(best)
}

/// Polyak-step subgradient descent on the total constraint violation
/// `sum_k max(phi_k, 0)`; converges to the feasible set when it is nonempty.
fn polyak_feasibility<P>(phi: P, mut x: Vec<f64>, domain: SlackDomain, budget: usize) -> Vec<f64>
where
    P: Fn(&[f64]) -> (f64, Vec<f64>),
{
    for _ in 0..budget {
        let (viol, g) = phi(&x);
        if viol <= 0.0 {
            break;
        }
        let gn2 = dot(&g, &g);
        if gn2 <= 1e-30 {
            break;
        }
        let step = viol / gn2;
        let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = project_domain(&moved, domain);
    }
    x
}

fn violation_and_subgrad(constraints: &[ScalarConstraint], x: &[f64]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut g = vec![0.0; x.len()];
    for s in constraints {
        let v = s.eval_entries(x);
        if v > 0.0 {
            total += v;
            for (gi, si) in g.iter_mut().zip(s.grad_entries(x)) {
                *gi += si;
            }
        }
    }
    (total, g)
}

/// Minimizes `psi(xi) - <lambda, xi> + sum_k mu_k phi_k(xi)` over the slack
/// domain of `layout` by projected subgradient descent. `mu` may be empty
/// for the unconstrained variant.
#[allow(clippy::too_many_arguments)]
pub fn minimize_xi(
    metric: &Metric,
    priors: &[f64],
    layout: &crate::metrics::ConfusionLayout,
    lambda: &[f64],
    mu: &[f64],
    constraints: &[ScalarConstraint],
    domain: SlackDomain,
    cfg: DescentConfig,
) -> Result<Vec<f64>, InnerError> {
    assert_eq!(mu.len(), constraints.len());
    let d = layout.dim();
    assert_eq!(lambda.len(), d);
    let value_grad = |x: &[f64]| -> Result<(f64, Vec<f64>), InnerError> {
        let c = ConfusionVector::new(layout.clone(), x.to_vec())?;
        let mut v = metric.eval(&c, priors)? - dot(lambda, x);
        let mut g = metric.grad(&c, priors)?;
        for (gi, li) in g.iter_mut().zip(lambda) {
            *gi -= li;
        }
        for (mk, s) in mu.iter().zip(constraints) {
            if *mk == 0.0 {
                continue;
            }
            v += mk * s.eval_entries(x);
            for (gi, si) in g.iter_mut().zip(s.grad_entries(x)) {
                *gi += mk * si;
            }
        }
        if !v.is_finite() {
            return Err(InnerError::NumericalFailure);
        }
        Ok((v, g))
    };
    let mut best = projected_subgradient(value_grad, domain_start(d, domain), domain, cfg)?;
    // simplex vertices join the candidate pool so linear objectives resolve
    // exactly; lower index wins ties
    if domain == SlackDomain::Simplex {
        let mut best_val = value_grad(&best)?.0;
        for i in 0..d {
            let mut vertex = vec![0.0; d];
            vertex[i] = 1.0;
            if let Ok((v, _)) = value_grad(&vertex) {
                if v < best_val {
                    best_val = v;
                    best = vertex;
                }
            }
        }
    }
    Ok(best)
}

/// Linear minimization over the feasible region `{x in domain : phi(x) <= 0}`
/// via escalating quadratic penalty plus a feasibility polish. Returns the
/// point and its residual violation.
pub fn linear_min_over_feasible(
    direction: &[f64],
    constraints: &[ScalarConstraint],
    domain: SlackDomain,
    cfg: DescentConfig,
) -> Result<(Vec<f64>, f64), InnerError> {
    let d = direction.len();
    if constraints.is_empty() {
        // exact: minimized at a vertex (simplex) or a box corner
        let x = match domain {
            SlackDomain::Simplex => {
                let mut best = 0usize;
                for (i, &v) in direction.iter().enumerate() {
                    if v < direction[best] {
                        best = i;
                    }
                }
                let mut x = vec![0.0; d];
                x[best] = 1.0;
                x
            }
            SlackDomain::Box01 => direction
                .iter()
                .map(|&v| if v < 0.0 { 1.0 } else { 0.0 })
                .collect(),
        };
        return Ok((x, f64::NEG_INFINITY));
    }
    let mut penalty = 1.0;
    let escalate_every = (cfg.budget / 10).max(1);
    let mut t_total = 0usize;
    let value_grad = |x: &[f64], penalty: f64| -> (f64, Vec<f64>) {
        let mut v = dot(direction, x);
        let mut g = direction.to_vec();
        for s in constraints {
            let phi = s.eval_entries(x);
            if phi > 0.0 {
                v += penalty * phi * phi;
                for (gi, si) in g.iter_mut().zip(s.grad_entries(x)) {
                    *gi += 2.0 * penalty * phi * si;
                }
            }
        }
        (v, g)
    };
    let mut x = domain_start(d, domain);
    let mut best = x.clone();
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    while t_total < cfg.budget {
        for t in 0..escalate_every {
            let (_, g) = value_grad(&x, penalty);
            let step = cfg.step / ((t_total + t + 1) as f64).sqrt();
            let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            x = project_domain(&moved, domain);
        }
        t_total += escalate_every;
        penalty *= 2.0;
        let viol = constraints
            .iter()
            .map(|s| s.eval_entries(&x).max(0.0))
            .fold(0.0f64, f64::max);
        let key = (viol.max(1e-9), dot(direction, &x));
        if key < best_key {
            best_key = key;
            best = x.clone();
        }
    }
    let polished = polyak_feasibility(
        |x| violation_and_subgrad(constraints, x),
        best,
        domain,
        200,
    );
    let viol = constraints
        .iter()
        .map(|s| s.eval_entries(&polished))
        .fold(f64::NEG_INFINITY, f64::max);
    if polished.iter().any(|v| !v.is_finite()) {
        return Err(InnerError::NumericalFailure);
    }
    Ok((polished, viol))
}

/// Moves `x` onto (or as close as possible to) the feasible region
/// `{x in domain : phi(x) <= 0}` by Polyak-step violation descent. Returns
/// the point and its max residual violation.
pub fn project_feasible(
    x: &[f64],
    constraints: &[ScalarConstraint],
    domain: SlackDomain,
    budget: usize,
) -> (Vec<f64>, f64) {
    let start = project_domain(x, domain);
    let out = polyak_feasibility(
        |x| violation_and_subgrad(constraints, x),
        start,
        domain,
        budget,
    );
    let viol = constraints
        .iter()
        .map(|s| s.eval_entries(&out))
        .fold(f64::NEG_INFINITY, f64::max);
    (out, viol)
}

/// Weights and residual violation returned by the hull solvers.
#[derive(Clone, Debug)]
pub struct HullWeights {
    pub weights: Vec<f64>,
    /// Max over expanded constraints at the returned combination;
    /// `-inf` when there are no constraints.
    pub max_violation: f64,
}

/// Minimizes `psi(sum_t alpha_t C_t)` over `alpha` in the simplex, optionally
/// subject to `phi(sum_t alpha_t C_t) <= 0` via an escalating quadratic
/// penalty (weight doubled every `budget / 10` steps).
pub fn minimize_over_hull(
    metric: &Metric,
    priors: &[f64],
    confusions: &[ConfusionVector],
    constraints: &[ScalarConstraint],
    cfg: DescentConfig,
) -> Result<HullWeights, InnerError> {
    assert!(!confusions.is_empty());
    let t_count = confusions.len();
    let layout = confusions[0].layout().clone();
    let d = layout.dim();
    let combine = |alpha: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; d];
        for (a, conf) in alpha.iter().zip(confusions) {
            if *a == 0.0 {
                continue;
            }
            for (ci, ei) in c.iter_mut().zip(conf.entries()) {
                *ci += a * ei;
            }
        }
        c
    };
    // chain rule: d f(C(alpha)) / d alpha_t = <grad f(C), C_t>
    let pullback = |g: &[f64]| -> Vec<f64> {
        confusions.iter().map(|c| dot(g, c.entries())).collect()
    };
    let escalate_every = (cfg.budget / 10).max(1);
    let mut penalty = if constraints.is_empty() { 0.0 } else { 10.0 };
    let mut alpha = vec![1.0 / t_count as f64; t_count];
    let mut best = alpha.clone();
    let assess = |alpha: &[f64]| -> Result<(f64, f64), InnerError> {
        let c = ConfusionVector::new(layout.clone(), combine(alpha))?;
        let obj = metric.eval(&c, priors)?;
        let viol = constraints
            .iter()
            .map(|s| s.eval(&c).max(0.0))
            .fold(0.0f64, f64::max);
        Ok((obj, viol))
    };
    let (obj0, viol0) = assess(&alpha)?;
    let mut best_key = (if viol0 > 1e-9 { viol0 } else { 0.0 }, obj0);
    let mut t_total = 0usize;
    while t_total < cfg.budget {
        for t in 0..escalate_every {
            let centries = combine(&alpha);
            let c = ConfusionVector::new(layout.clone(), centries.clone())?;
            let mut g_c = metric.grad(&c, priors)?;
            for s in constraints {
                let phi = s.eval_entries(&centries);
                if phi > 0.0 {
                    for (gi, si) in g_c.iter_mut().zip(s.grad_entries(&centries)) {
                        *gi += 2.0 * penalty * phi * si;
                    }
                }
            }
            let g_alpha = pullback(&g_c);
            let step = cfg.step / ((t_total + t + 1) as f64).sqrt();
            let moved: Vec<f64> = alpha
                .iter()
                .zip(&g_alpha)
                .map(|(ai, gi)| ai - step * gi)
                .collect();
            alpha = project_simplex(&moved).into_vec();
        }
        t_total += escalate_every;
        if !constraints.is_empty() {
            penalty *= 2.0;
        }
        let (obj, viol) = assess(&alpha)?;
        if !obj.is_finite() {
            return Err(InnerError::NumericalFailure);
        }
        let key = (if viol > 1e-9 { viol } else { 0.0 }, obj);
        if key < best_key {
            best_key = key;
            best = alpha.clone();
        }
    }
    // single-confusion candidates make the linear case exact and seed the
    // comparison with every stored iterate
    for t in 0..t_count {
        let mut vertex = vec![0.0; t_count];
        vertex[t] = 1.0;
        if let Ok((obj, viol)) = assess(&vertex) {
            let key = (if viol > 1e-9 { viol } else { 0.0 }, obj);
            if key < best_key {
                best_key = key;
                best = vertex;
            }
        }
    }
    let mut alpha = best;
    if !constraints.is_empty() {
        let phi_alpha = |a: &[f64]| -> (f64, Vec<f64>) {
            let centries = combine(a);
            let mut total = 0.0;
            let mut g_c = vec![0.0; d];
            for s in constraints {
                let v = s.eval_entries(&centries);
                if v > 0.0 {
                    total += v;
                    for (gi, si) in g_c.iter_mut().zip(s.grad_entries(&centries)) {
                        *gi += si;
                    }
                }
            }
            (total, pullback(&g_c))
        };
        alpha = polyak_feasibility(phi_alpha, alpha, SlackDomain::Simplex, 200);
    }
    let c = ConfusionVector::new(layout.clone(), combine(&alpha))?;
    let max_violation = constraints
        .iter()
        .map(|s| s.eval(&c))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HullWeights {
        weights: alpha,
        max_violation,
    })
}

/// Re-weights a mixture by the linearized program
/// `min sum_t alpha_t psi(C_t)` s.t. `sum_t alpha_t phi_k(C_t) <= 0`,
/// `alpha` in the simplex. The objective upper-bounds the true mixture
/// objective for convex metrics.
pub fn prune_mixture(
    metric: &Metric,
    priors: &[f64],
    constraints: &[ScalarConstraint],
    member_confusions: &[ConfusionVector],
    cfg: DescentConfig,
) -> Result<HullWeights, InnerError> {
    assert!(!member_confusions.is_empty());
    let t_count = member_confusions.len();
    let mut psi_vals = Vec::with_capacity(t_count);
    for c in member_confusions {
        psi_vals.push(metric.eval(c, priors)?);
    }
    // phi_matrix[k][t] = phi_k(C_t)
    let phi_matrix: Vec<Vec<f64>> = constraints
        .iter()
        .map(|s| member_confusions.iter().map(|c| s.eval(c)).collect())
        .collect();
    let eval_constraints = |alpha: &[f64]| -> Vec<f64> {
        phi_matrix.iter().map(|row| dot(row, alpha)).collect()
    };
    let escalate_every = (cfg.budget / 10).max(1);
    let mut penalty = if constraints.is_empty() { 0.0 } else { 10.0 };
    let mut alpha = vec![1.0 / t_count as f64; t_count];
    let mut best = alpha.clone();
    let start_viol = eval_constraints(&alpha)
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.max(0.0)));
    let mut best_key = (
        if start_viol > 1e-9 { start_viol } else { 0.0 },
        dot(&psi_vals, &alpha),
    );
    let mut t_total = 0usize;
    while t_total < cfg.budget {
        for t in 0..escalate_every {
            let mut g = psi_vals.clone();
            for row in &phi_matrix {
                let v = dot(row, &alpha);
                if v > 0.0 {
                    for (gi, ri) in g.iter_mut().zip(row) {
                        *gi += 2.0 * penalty * v * ri;
                    }
                }
            }
            let step = cfg.step / ((t_total + t + 1) as f64).sqrt();
            let moved: Vec<f64> = alpha.iter().zip(&g).map(|(ai, gi)| ai - step * gi).collect();
            alpha = project_simplex(&moved).into_vec();
        }
        t_total += escalate_every;
        if !constraints.is_empty() {
            penalty *= 2.0;
        }
        let viol = eval_constraints(&alpha)
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.max(0.0)));
        let key = (if viol > 1e-9 { viol } else { 0.0 }, dot(&psi_vals, &alpha));
        if key < best_key {
            best_key = key;
            best = alpha.clone();
        }
    }
    // member vertices as candidates: exact when a single member already
    // solves the linear program
    for t in 0..t_count {
        let viol = phi_matrix
            .iter()
            .map(|row| row[t].max(0.0))
            .fold(0.0f64, f64::max);
        let key = (if viol > 1e-9 { viol } else { 0.0 }, psi_vals[t]);
        if key < best_key {
            best_key = key;
            let mut vertex = vec![0.0; t_count];
            vertex[t] = 1.0;
            best = vertex;
        }
    }
    let mut alpha = best;
    if !constraints.is_empty() {
        let phi_alpha = |a: &[f64]| -> (f64, Vec<f64>) {
            let mut total = 0.0;
            let mut g = vec![0.0; a.len()];
            for row in &phi_matrix {
                let v = dot(row, a);
                if v > 0.0 {
                    total += v;
                    for (gi, ri) in g.iter_mut().zip(row) {
                        *gi += ri;
                    }
                }
            }
            (total, g)
        };
        alpha = polyak_feasibility(phi_alpha, alpha, SlackDomain::Simplex, 400);
    }
    let max_violation = eval_constraints(&alpha)
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok(HullWeights {
        weights: alpha,
        max_violation,
    })
}
