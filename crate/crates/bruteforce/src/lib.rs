//! Independent desk-scale oracles used for testing and acceptance: exact
//! linear minimization by enumeration on finite-support distributions,
//! grid-search optimal classifiers, and constrained optima over small
//! classifier families.
//!
//! Nothing in the production solver paths depends on this crate; it exists
//! so the solvers can be validated against answers computed by a different
//! route.

use confopt_core::data::{exact_eta, sample_synthetic, SyntheticSpec};
use confopt_core::metrics::{ConfusionLayout, ConfusionVector, Metric, ScalarConstraint};
use confopt_core::oracle::{
    DeterministicClassifier, EtaModel, EtaTable, Lmo, LmoResult, OracleError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BruteforceError {
    #[error("enumeration budget exceeded: {0} assignments")]
    BudgetExceeded(u128),
    #[error("no feasible grid point at this resolution")]
    InfeasibleAtGridResolution,
    #[error(transparent)]
    Metric(#[from] confopt_core::metrics::MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A distribution with finite support and exactly known conditional class
/// probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    /// Feature point, its marginal probability, its conditional class
    /// probabilities, and an optional group.
    pub support: Vec<SupportPoint>,
    pub n_classes: usize,
    pub n_groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub x: Vec<f64>,
    pub mass: f64,
    pub eta: Vec<f64>,
    pub group: usize,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<SupportPoint>, n_classes: usize) -> Self {
        assert!(!support.is_empty());
        let mass: f64 = support.iter().map(|p| p.mass).sum();
        assert!((mass - 1.0).abs() < 1e-9, "masses sum to {mass}");
        for p in &support {
            assert_eq!(p.eta.len(), n_classes);
            assert!((p.eta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let n_groups = support.iter().map(|p| p.group).max().unwrap() + 1;
        DiscreteDistribution {
            support,
            n_classes,
            n_groups,
        }
    }

    /// Grid discretization of a binary 1-d Gaussian mixture with means -1/2
    /// and +1/2, unit variances, and `P(Y=1) = prior1`.
    pub fn discretized_norm(prior1: f64, points: usize, lo: f64, hi: f64) -> Self {
        assert!(points >= 2);
        let mut support = Vec::with_capacity(points);
        let normal = |x: f64, mean: f64| (-0.5 * (x - mean) * (x - mean)).exp();
        let mut total = 0.0;
        for k in 0..points {
            let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let w0 = (1.0 - prior1) * normal(x, -0.5);
            let w1 = prior1 * normal(x, 0.5);
            let mass = w0 + w1;
            support.push(SupportPoint {
                x: vec![x],
                mass,
                eta: vec![w0 / (w0 + w1), w1 / (w0 + w1)],
                group: 0,
            });
            total += mass;
        }
        for p in support.iter_mut() {
            p.mass /= total;
        }
        DiscreteDistribution::new(support, 2)
    }

    /// Exact class priors.
    pub fn priors(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for pt in &self.support {
            for (pi, &e) in p.iter_mut().zip(&pt.eta) {
                *pi += pt.mass * e;
            }
        }
        p
    }

    /// Exact group-class masses `mu[a][i]`, flattened group-major.
    pub fn group_masses(&self) -> Vec<f64> {
        let n = self.n_classes;
        let mut m = vec![0.0; self.n_groups * n];
        for pt in &self.support {
            for (i, &e) in pt.eta.iter().enumerate() {
                m[pt.group * n + i] += pt.mass * e;
            }
        }
        m
    }

    /// Lookup model holding the exact conditional probabilities.
    pub fn eta_model(&self) -> EtaModel {
        EtaModel::Lookup(EtaTable::new(
            self.support.iter().map(|p| p.x.clone()).collect(),
            self.support.iter().map(|p| p.eta.clone()).collect(),
        ))
    }

    /// The support as an unweighted dataset (one row per point); note the
    /// masses are not represented, so empirical confusions on this dataset
    /// differ from population confusions.
    pub fn support_dataset(&self) -> confopt_core::data::Dataset {
        let features: Vec<Vec<f64>> = self.support.iter().map(|p| p.x.clone()).collect();
        // labels are irrelevant for plug-in construction; use argmax eta
        let labels: Vec<usize> = self
            .support
            .iter()
            .map(|p| {
                let mut best = 0;
                for (i, &e) in p.eta.iter().enumerate() {
                    if e >= p.eta[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let groups = if self.n_groups > 1 {
            Some(self.support.iter().map(|p| p.group).collect())
        } else {
            None
        };
        confopt_core::data::Dataset::new(features, labels, groups, self.n_classes).unwrap()
    }

    /// Exact population confusion of a label assignment over the support,
    /// as raw stacked entries: `C^a_ij = sum_x mass(x) eta_i(x)
    /// 1(assign(x) = j, group(x) = a)`.
    pub fn assignment_confusion_raw(&self, assignment: &[usize]) -> Vec<f64> {
        let n = self.n_classes;
        let mut raw = vec![0.0; self.n_groups * n * n];
        for (pt, &j) in self.support.iter().zip(assignment) {
            for (i, &e) in pt.eta.iter().enumerate() {
                raw[pt.group * n * n + i * n + j] += pt.mass * e;
            }
        }
        raw
    }

    /// Exact population confusion of a deterministic classifier.
    pub fn classifier_confusion_raw(
        &self,
        h: &DeterministicClassifier,
    ) -> Result<Vec<f64>, OracleError> {
        let assignment: Vec<usize> = self
            .support
            .iter()
            .map(|p| h.predict(&p.x, p.group))
            .collect::<Result<_, _>>()?;
        Ok(self.assignment_confusion_raw(&assignment))
    }

    /// Exact population confusion of a randomized classifier in `layout`.
    pub fn mixture_confusion(
        &self,
        h: &confopt_core::solvers::RandomizedClassifier,
        layout: &ConfusionLayout,
    ) -> Result<ConfusionVector, BruteforceError> {
        let mut raw = vec![0.0; layout.raw_dim()];
        for (member, &w) in h.members.iter().zip(&h.weights) {
            let member_raw = self.classifier_confusion_raw(member)?;
            for (r, v) in raw.iter_mut().zip(&member_raw) {
                *r += w * v;
            }
        }
        Ok(layout.apply(&raw)?)
    }
}

/// Result of [`enumerate_lmo`].
#[derive(Clone, Debug)]
pub struct EnumerateResult {
    /// Label per support point (lexicographically smallest among ties).
    pub assignment: Vec<usize>,
    /// Exact population confusion, raw stacked entries.
    pub confusion_raw: Vec<f64>,
    /// `<loss_raw, confusion_raw>` at the minimizer.
    pub value: f64,
}

/// Exact linear minimization over all `n^|support|` deterministic label
/// assignments. `loss_raw` is over the raw stacked entries. Ties resolve to
/// the lexicographically smallest assignment.
pub fn enumerate_lmo(
    loss_raw: &[f64],
    dist: &DiscreteDistribution,
) -> Result<EnumerateResult, BruteforceError> {
    let n = dist.n_classes;
    let points = dist.support.len();
    let total: u128 = (n as u128)
        .checked_pow(points as u32)
        .ok_or(BruteforceError::BudgetExceeded(u128::MAX))?;
    if total > 10_000_000 {
        return Err(BruteforceError::BudgetExceeded(total));
    }
    assert_eq!(loss_raw.len(), dist.n_groups * n * n);
    let mut assignment = vec![0usize; points];
    let mut best_assignment = assignment.clone();
    let mut best_value = f64::INFINITY;
    loop {
        let raw = dist.assignment_confusion_raw(&assignment);
        let value: f64 = raw.iter().zip(loss_raw).map(|(c, l)| c * l).sum();
        // strict improvement keeps the lexicographically smallest minimizer
        if value < best_value - 1e-15 {
            best_value = value;
            best_assignment = assignment.clone();
        }
        // odometer increment, most significant digit first so enumeration is
        // lexicographic
        let mut pos = points;
        loop {
            if pos == 0 {
                break;
            }
            assignment[pos - 1] += 1;
            if assignment[pos - 1] < n {
                break;
            }
            assignment[pos - 1] = 0;
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
    }
    let confusion_raw = dist.assignment_confusion_raw(&best_assignment);
    Ok(EnumerateResult {
        assignment: best_assignment,
        confusion_raw,
        value: best_value,
    })
}

/// Exact LMO backed by enumeration; an error-free oracle for solver tests.
pub struct EnumerateLmo {
    pub dist: DiscreteDistribution,
    pub layout: ConfusionLayout,
}

impl Lmo for EnumerateLmo {
    fn minimize(&self, loss: &[f64]) -> Result<LmoResult, OracleError> {
        let raw_loss = self.layout.expand_loss(loss)?;
        let res = enumerate_lmo(&raw_loss, &self.dist).map_err(|e| match e {
            BruteforceError::Oracle(o) => o,
            other => OracleError::InvalidData(other.to_string()),
        })?;
        let classifier = DeterministicClassifier::from_table(
            self.dist.support.iter().map(|p| p.x.clone()).collect(),
            res.assignment.clone(),
        );
        Ok(LmoResult {
            classifier,
            confusion_estimate: self.layout.apply(&res.confusion_raw)?,
            sample_size: self.dist.support.len(),
        })
    }

    fn layout(&self) -> &ConfusionLayout {
        &self.layout
    }
}

/// Plug-in LMO with the exact conditional probabilities and exact population
/// confusions: a `(0, 0, 0)`-approximate oracle on the distribution.
pub struct ExactPluginLmo {
    pub dist: DiscreteDistribution,
    pub layout: ConfusionLayout,
}

impl Lmo for ExactPluginLmo {
    fn minimize(&self, loss: &[f64]) -> Result<LmoResult, OracleError> {
        let raw_loss = self.layout.expand_loss(loss)?;
        let classifier = DeterministicClassifier::plug_in(
            raw_loss,
            self.dist.eta_model(),
            self.dist.n_classes,
            self.dist.n_groups,
        );
        let raw = self.dist.classifier_confusion_raw(&classifier)?;
        Ok(LmoResult {
            classifier,
            confusion_estimate: self.layout.apply(&raw)?,
            sample_size: self.dist.support.len(),
        })
    }

    fn layout(&self) -> &ConfusionLayout {
        &self.layout
    }
}

/// Weighted-argmax classifier family `h_w(x) = argmax*_i w_i eta_i(x)` with
/// the first weight normalized to 1.
fn weighted_argmax(eta: &[f64], weights: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (&e, &w)) in eta.iter().zip(weights).enumerate() {
        let v = w * e;
        if v >= best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Grid specification for the weighted-argmax searches.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    /// Upper end of each free weight range `[0, w_max]`.
    pub w_max: f64,
    /// Grid step.
    pub step: f64,
}

impl GridSpec {
    fn axis(&self) -> Vec<f64> {
        let count = (self.w_max / self.step).round() as usize;
        (0..=count).map(|k| k as f64 * self.step).collect()
    }
}

fn weight_grid(n_classes: usize, spec: &GridSpec) -> Vec<Vec<f64>> {
    let axis = self_axis(spec);
    match n_classes {
        2 => axis.iter().map(|&w| vec![1.0, w]).collect(),
        3 => {
            let mut out = Vec::with_capacity(axis.len() * axis.len());
            for &w2 in &axis {
                for &w3 in &axis {
                    out.push(vec![1.0, w2, w3]);
                }
            }
            out
        }
        _ => panic!("weighted-argmax grids support 2 or 3 classes"),
    }
}

fn self_axis(spec: &GridSpec) -> Vec<f64> {
    spec.axis()
}

/// Outcome of a grid search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridOptimum {
    pub weights: Vec<f64>,
    pub value: f64,
}

/// Exhaustive weighted-argmax search on a finite-support distribution with
/// exact confusions.
pub fn grid_bayes_discrete(
    metric: &Metric,
    dist: &DiscreteDistribution,
    layout: &ConfusionLayout,
    spec: &GridSpec,
) -> Result<GridOptimum, BruteforceError> {
    let priors = dist.priors();
    let grid = weight_grid(dist.n_classes, spec);
    let evaluated: Vec<(f64, &Vec<f64>)> = grid
        .par_iter()
        .map(|w| {
            let assignment: Vec<usize> = dist
                .support
                .iter()
                .map(|p| weighted_argmax(&p.eta, w))
                .collect();
            let raw = dist.assignment_confusion_raw(&assignment);
            let c = layout.apply(&raw).expect("layout fits distribution");
            let v = metric.eval(&c, &priors).unwrap_or(f64::INFINITY);
            (v, w)
        })
        .collect();
    let mut best = (f64::INFINITY, &grid[0]);
    for (v, w) in &evaluated {
        if *v < best.0 {
            best = (*v, w);
        }
    }
    Ok(GridOptimum {
        weights: (*best.1).clone(),
        value: best.0,
    })
}

/// Monte-Carlo confusion cache for a synthetic distribution: draws a seeded
/// sample once, stores the exact conditional probabilities per point, and
/// evaluates weighted-argmax confusions by eta-weighted tallies.
pub struct McEvaluator {
    pub spec: SyntheticSpec,
    etas: Vec<Vec<f64>>,
    n_classes: usize,
}

impl McEvaluator {
    pub fn new(spec: &SyntheticSpec, mc_samples: usize, seed: u64) -> Self {
        let data = sample_synthetic(spec, mc_samples, seed);
        let etas: Vec<Vec<f64>> = data
            .features
            .par_iter()
            .map(|x| exact_eta(spec, x))
            .collect();
        McEvaluator {
            spec: spec.clone(),
            etas,
            n_classes: spec.n_classes(),
        }
    }

    /// Exact-eta-weighted Monte-Carlo confusion of the weighted-argmax
    /// classifier, as raw `n^2` entries.
    pub fn confusion_raw(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.n_classes;
        let chunks: Vec<Vec<f64>> = self
            .etas
            .par_chunks(8192)
            .map(|chunk| {
                let mut raw = vec![0.0; n * n];
                for eta in chunk {
                    let j = weighted_argmax(eta, weights);
                    for (i, &e) in eta.iter().enumerate() {
                        raw[i * n + j] += e;
                    }
                }
                raw
            })
            .collect();
        let mut raw = vec![0.0; n * n];
        for chunk in chunks {
            for (r, v) in raw.iter_mut().zip(chunk) {
                *r += v;
            }
        }
        let total = self.etas.len() as f64;
        raw.iter_mut().for_each(|v| *v /= total);
        raw
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }
}

/// Weighted-argmax grid search on a synthetic distribution with seeded
/// Monte-Carlo confusions.
pub fn grid_bayes_mc(
    metric: &Metric,
    evaluator: &McEvaluator,
    layout: &ConfusionLayout,
    spec: &GridSpec,
    priors: &[f64],
) -> Result<GridOptimum, BruteforceError> {
    let grid = weight_grid(evaluator.n_classes, spec);
    let evaluated: Vec<f64> = grid
        .par_iter()
        .map(|w| {
            let raw = evaluator.confusion_raw(w);
            match layout.apply(&raw) {
                Ok(c) => metric.eval(&c, priors).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let mut best = (f64::INFINITY, 0usize);
    for (idx, &v) in evaluated.iter().enumerate() {
        if v < best.0 {
            best = (v, idx);
        }
    }
    Ok(GridOptimum {
        weights: grid[best.1].clone(),
        value: best.0,
    })
}

/// Two-stage variant of [`grid_bayes_mc`]: a coarse sweep over
/// `[0, w_max]^{n-1}` followed by a fine pass on the `target_step` lattice
/// restricted to a box around the coarse optimum. Equivalent to the full
/// fine sweep whenever the coarse pass localizes the optimum's basin.
pub fn grid_bayes_mc_refined(
    metric: &Metric,
    evaluator: &McEvaluator,
    layout: &ConfusionLayout,
    w_max: f64,
    coarse_step: f64,
    target_step: f64,
    priors: &[f64],
) -> Result<GridOptimum, BruteforceError> {
    let coarse = grid_bayes_mc(
        metric,
        evaluator,
        layout,
        &GridSpec {
            w_max,
            step: coarse_step,
        },
        priors,
    )?;
    let half_box = 2.0 * coarse_step;
    // fine candidates on the target lattice inside the box
    let axis_near = |center: f64| -> Vec<f64> {
        let lo = ((center - half_box).max(0.0) / target_step).round() as usize;
        let hi = ((center + half_box).min(w_max) / target_step).round() as usize;
        (lo..=hi).map(|k| k as f64 * target_step).collect()
    };
    let free: Vec<Vec<f64>> = coarse.weights[1..].iter().map(|&w| axis_near(w)).collect();
    let mut grid = Vec::new();
    match free.len() {
        1 => {
            for &w2 in &free[0] {
                grid.push(vec![1.0, w2]);
            }
        }
        2 => {
            for &w2 in &free[0] {
                for &w3 in &free[1] {
                    grid.push(vec![1.0, w2, w3]);
                }
            }
        }
        _ => unreachable!(),
    }
    let evaluated: Vec<f64> = grid
        .par_iter()
        .map(|w| {
            let raw = evaluator.confusion_raw(w);
            match layout.apply(&raw) {
                Ok(c) => metric.eval(&c, priors).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let mut best = (coarse.value, None);
    for (idx, &v) in evaluated.iter().enumerate() {
        if v < best.0 {
            best = (v, Some(idx));
        }
    }
    Ok(match best.1 {
        Some(idx) => GridOptimum {
            weights: grid[idx].clone(),
            value: best.0,
        },
        None => coarse,
    })
}

/// Constrained optimum over mixtures of two weighted-argmax classifiers:
/// grids both weight vectors and the mixing coefficient, and returns the
/// best feasible value (feasibility tolerance 1e-6).
pub struct ConstrainedGridResult {
    pub value: f64,
    pub weights_a: Vec<f64>,
    pub weights_b: Vec<f64>,
    pub mix: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn constrained_grid_optimum(
    metric: &Metric,
    constraints: &[ScalarConstraint],
    confusion_cache: &[Vec<f64>],
    grid: &[Vec<f64>],
    layout: &ConfusionLayout,
    priors: &[f64],
    mix_steps: usize,
    feasibility_tol: f64,
) -> Result<ConstrainedGridResult, BruteforceError> {
    assert_eq!(confusion_cache.len(), grid.len());
    let m = grid.len();
    let best = (0..m)
        .into_par_iter()
        .map(|ia| {
            let mut local: Option<(f64, usize, usize, f64)> = None;
            for ib in ia..m {
                for k in 0..=mix_steps {
                    let a = k as f64 / mix_steps as f64;
                    let raw: Vec<f64> = confusion_cache[ia]
                        .iter()
                        .zip(&confusion_cache[ib])
                        .map(|(x, y)| a * x + (1.0 - a) * y)
                        .collect();
                    let c = match layout.apply(&raw) {
                        Ok(c) => c,
                        Err(_) => continue,
                    };
                    let viol = constraints
                        .iter()
                        .map(|s| s.eval(&c))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if viol > feasibility_tol {
                        continue;
                    }
                    let v = match metric.eval(&c, priors) {
                        Ok(v) => v,
                        Err(_) => continue,
                    };
                    if local.map(|l| v < l.0).unwrap_or(true) {
                        local = Some((v, ia, ib, a));
                    }
                }
            }
            local
        })
        .reduce(
            || None,
            |x, y| match (x, y) {
                (None, r) => r,
                (l, None) => l,
                (Some(l), Some(r)) => Some(if l.0 <= r.0 { l } else { r }),
            },
        );
    match best {
        Some((value, ia, ib, mix)) => Ok(ConstrainedGridResult {
            value,
            weights_a: grid[ia].clone(),
            weights_b: grid[ib].clone(),
            mix,
        }),
        None => Err(BruteforceError::InfeasibleAtGridResolution),
    }
}

/// Builds the full weighted-argmax grid plus its Monte-Carlo confusion cache.
pub fn mc_confusion_cache(
    evaluator: &McEvaluator,
    spec: &GridSpec,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let grid = weight_grid(evaluator.n_classes, spec);
    let cache: Vec<Vec<f64>> = grid.par_iter().map(|w| evaluator.confusion_raw(w)).collect();
    (grid, cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use confopt_core::metrics::MetricKind;

    fn two_point() -> DiscreteDistribution {
        DiscreteDistribution::new(
            vec![
                SupportPoint {
                    x: vec![0.0],
                    mass: 0.5,
                    eta: vec![0.9, 0.1],
                    group: 0,
                },
                SupportPoint {
                    x: vec![1.0],
                    mass: 0.5,
                    eta: vec![0.2, 0.8],
                    group: 0,
                },
            ],
            2,
        )
    }

    #[test]
    fn enumerate_zero_one_loss() {
        let dist = two_point();
        let loss = vec![0.0, 1.0, 1.0, 0.0];
        let res = enumerate_lmo(&loss, &dist).unwrap();
        assert_eq!(res.assignment, vec![0, 1]);
        // value = 0.5*0.1 + 0.5*0.2 = 0.15
        assert_abs_diff_eq!(res.value, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn enumerate_zero_loss_is_zero_value() {
        let dist = two_point();
        let res = enumerate_lmo(&[0.0; 4], &dist).unwrap();
        assert_abs_diff_eq!(res.value, 0.0, epsilon = 1e-15);
        // lexicographically smallest assignment wins ties
        assert_eq!(res.assignment, vec![0, 0]);
    }

    #[test]
    fn single_point_support_is_label_argmin() {
        let dist = DiscreteDistribution::new(
            vec![SupportPoint {
                x: vec![0.0],
                mass: 1.0,
                eta: vec![0.3, 0.7],
                group: 0,
            }],
            2,
        );
        let loss = vec![0.0, 1.0, 1.0, 0.0];
        let res = enumerate_lmo(&loss, &dist).unwrap();
        assert_eq!(res.assignment, vec![1]);
    }

    #[test]
    fn budget_guard_trips() {
        let mut support = Vec::new();
        for k in 0..30 {
            support.push(SupportPoint {
                x: vec![k as f64],
                mass: 1.0 / 30.0,
                eta: vec![0.5, 0.5],
                group: 0,
            });
        }
        let dist = DiscreteDistribution::new(support, 2);
        assert!(matches!(
            enumerate_lmo(&[0.0; 4], &dist),
            Err(BruteforceError::BudgetExceeded(_))
        ));
    }

    #[test]
    fn grid_bayes_zero_one_matches_argmax() {
        let dist = two_point();
        let layout = ConfusionLayout::full(2);
        let metric = Metric::new(MetricKind::ZeroOne);
        let best = grid_bayes_discrete(
            &metric,
            &dist,
            &layout,
            &GridSpec {
                w_max: 5.0,
                step: 0.05,
            },
        )
        .unwrap();
        // Bayes 0-1 risk = 0.15 for this distribution
        assert_abs_diff_eq!(best.value, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn grid_refinement_does_not_worsen() {
        let dist = DiscreteDistribution::discretized_norm(0.2, 101, -4.0, 4.5);
        let priors = dist.priors();
        let layout = ConfusionLayout::diagonal_normalized(2, &priors);
        let metric = Metric::new(MetricKind::HMean);
        let coarse = grid_bayes_discrete(
            &metric,
            &dist,
            &layout,
            &GridSpec {
                w_max: 10.0,
                step: 0.1,
            },
        )
        .unwrap();
        let fine = grid_bayes_discrete(
            &metric,
            &dist,
            &layout,
            &GridSpec {
                w_max: 10.0,
                step: 0.05,
            },
        )
        .unwrap();
        assert!(fine.value <= coarse.value + 1e-12);
    }
}
