//! Class-probability models: a linear softmax model trained by full-batch
//! gradient descent, closed-form synthetic distributions, and finite-support
//! lookup tables.

use super::OracleError;
use crate::data::{exact_eta, Dataset, SyntheticSpec};
use serde::{Deserialize, Serialize};

/// Multinomial logistic regression weights: `n_classes` rows of
/// `n_features + 1` coefficients (bias last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    n_classes: usize,
    n_features: usize,
    /// Row-major `n_classes x (n_features + 1)`.
    weights: Vec<f64>,
}

impl LinearSoftmax {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        LinearSoftmax {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * (n_features + 1)],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.n_features + 1;
        (0..self.n_classes)
            .map(|k| {
                let row = &self.weights[k * stride..(k + 1) * stride];
                let mut s = row[self.n_features];
                for (w, xi) in row[..self.n_features].iter().zip(x) {
                    s += w * xi;
                }
                s
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Finite-support table of conditional class probabilities. Queries match a
/// stored key exactly when possible and otherwise fall back to the nearest
/// key in Euclidean distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaTable {
    keys: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

impl EtaTable {
    pub fn new(keys: Vec<Vec<f64>>, probs: Vec<Vec<f64>>) -> Self {
        assert_eq!(keys.len(), probs.len());
        assert!(!keys.is_empty());
        EtaTable { keys, probs }
    }

    fn lookup(&self, x: &[f64]) -> &[f64] {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, k) in self.keys.iter().enumerate() {
            let d2: f64 = k.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 == 0.0 {
                return &self.probs[i];
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        &self.probs[best]
    }
}

/// A conditional class-probability model `eta(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaModel {
    /// Trained multinomial logistic regression.
    Linear(LinearSoftmax),
    /// Closed-form probabilities of a synthetic distribution.
    Synthetic {
        spec: SyntheticSpec,
        n_classes: usize,
    },
    /// Finite-support lookup.
    Lookup(EtaTable),
}

impl EtaModel {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        let n_classes = spec.n_classes();
        EtaModel::Synthetic { spec, n_classes }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            EtaModel::Linear(m) => m.n_classes,
            EtaModel::Synthetic { n_classes, .. } => *n_classes,
            EtaModel::Lookup(t) => t.probs[0].len(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            EtaModel::Linear(m) => m.predict_proba(x),
            EtaModel::Synthetic { spec, .. } => exact_eta(spec, x),
            EtaModel::Lookup(t) => t.lookup(x).to_vec(),
        }
    }
}

/// Training configuration for [`train_cpe`] and the weighted logistic LMO.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CpeConfig {
    pub iterations: usize,
    /// Initial step size; halved whenever a step would increase the
    /// regularized objective.
    pub step: f64,
    pub l2: f64,
}

impl Default for CpeConfig {
    fn default() -> Self {
        CpeConfig {
            iterations: 2000,
            step: 0.1,
            l2: 1e-4,
        }
    }
}

/// Fits multinomial logistic regression by full-batch gradient descent on the
/// L2-regularized cross-entropy (bias unregularized). Deterministic given the
/// sample order: weights start at zero and there is no stochasticity.
pub fn train_cpe(sample: &Dataset, config: &CpeConfig) -> Result<LinearSoftmax, OracleError> {
    train_weighted(sample, &vec![1.0; sample.n_classes()], config)
}

/// Weighted variant: example `(x, y)` contributes `class_weights[y]` times
/// its cross-entropy term.
pub fn train_weighted(
    sample: &Dataset,
    class_weights: &[f64],
    config: &CpeConfig,
) -> Result<LinearSoftmax, OracleError> {
    let n = sample.n_classes();
    if sample.len() == 0 {
        return Err(OracleError::EmptySample);
    }
    if class_weights.len() != n {
        return Err(OracleError::InvalidData(
            "class weight length != number of classes".into(),
        ));
    }
    if sample
        .features
        .iter()
        .any(|row| row.iter().any(|v| !v.is_finite()))
    {
        return Err(OracleError::InvalidData("non-finite feature".into()));
    }
    let q = sample.q();
    let stride = q + 1;
    let inv_n = 1.0 / sample.len() as f64;
    let mut model = LinearSoftmax::zeros(n, q);

    let objective_grad = |m: &LinearSoftmax| -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; n * stride];
        let mut loss = 0.0;
        let mut p = vec![0.0; n];
        for (row, &y) in sample.features.iter().zip(&sample.labels) {
            let w = class_weights[y];
            if w == 0.0 {
                continue;
            }
            for (k, pk) in p.iter_mut().enumerate() {
                let wrow = &m.weights[k * stride..(k + 1) * stride];
                let mut s = wrow[q];
                for (wi, xi) in wrow[..q].iter().zip(row) {
                    s += wi * xi;
                }
                *pk = s;
            }
            let mx = p.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for pk in p.iter_mut() {
                *pk = (*pk - mx).exp();
                z += *pk;
            }
            for pk in p.iter_mut() {
                *pk /= z;
            }
            loss -= w * p[y].max(1e-300).ln();
            for k in 0..n {
                let err = w * (p[k] - if k == y { 1.0 } else { 0.0 });
                let g = &mut grad[k * stride..(k + 1) * stride];
                for (gi, xi) in g[..q].iter_mut().zip(row) {
                    *gi += err * xi;
                }
                g[q] += err;
            }
        }
        loss *= inv_n;
        for v in grad.iter_mut() {
            *v *= inv_n;
        }
        // l2 on everything but the bias column
        for k in 0..n {
            for j in 0..q {
                let w = m.weights[k * stride + j];
                loss += 0.5 * config.l2 * w * w;
                grad[k * stride + j] += config.l2 * w;
            }
        }
        (loss, grad)
    };

    let mut step = config.step;
    let (mut cur_loss, mut grad) = objective_grad(&model);
    for _ in 0..config.iterations {
        let mut improved = false;
        for _ in 0..30 {
            let mut trial = model.clone();
            for (w, g) in trial.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
            let (trial_loss, trial_grad) = objective_grad(&trial);
            if trial_loss <= cur_loss {
                model = trial;
                cur_loss = trial_loss;
                grad = trial_grad;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use approx::assert_abs_diff_eq;

    fn two_point_sample() -> Dataset {
        Dataset::new(
            vec![vec![-1.0], vec![1.0]],
            vec![0, 1],
            None,
            2,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_gives_uniform_probabilities() {
        let sample = two_point_sample();
        let model = train_cpe(
            &sample,
            &CpeConfig {
                iterations: 0,
                ..CpeConfig::default()
            },
        )
        .unwrap();
        let p = model.predict_proba(&[0.3]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_sample_is_balanced_at_origin() {
        let sample = two_point_sample();
        let model = train_cpe(&sample, &CpeConfig::default()).unwrap();
        let p = model.predict_proba(&[0.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn objective_is_monotone_under_backtracking() {
        // log the regularized objective every iteration by retraining with
        // increasing budgets; the curve must be non-increasing
        let features: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64) / 10.0 - 2.0, ((i * 7) % 11) as f64 / 11.0])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 3 == 0)).collect();
        let sample = Dataset::new(features, labels, None, 2).unwrap();
        let nll = |iters: usize| -> f64 {
            let m = train_cpe(
                &sample,
                &CpeConfig {
                    iterations: iters,
                    step: 0.1,
                    l2: 1e-4,
                },
            )
            .unwrap();
            let mut loss = 0.0;
            for (x, &y) in sample.features.iter().zip(&sample.labels) {
                loss -= m.predict_proba(x)[y].ln();
            }
            loss / sample.len() as f64
                + 0.5 * 1e-4
                    * m.weights
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % 3 != 2)
                        .map(|(_, w)| w * w)
                        .sum::<f64>()
        };
        let mut prev = f64::INFINITY;
        for iters in [0, 1, 2, 5, 10, 50, 200] {
            let cur = nll(iters);
            assert!(cur <= prev + 1e-12, "objective rose: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn single_example_converges_to_its_label() {
        let sample = Dataset::new(vec![vec![1.0, -0.5]], vec![1], None, 2).unwrap();
        let model = train_cpe(
            &sample,
            &CpeConfig {
                iterations: 5000,
                step: 0.5,
                l2: 0.0,
            },
        )
        .unwrap();
        let p = model.predict_proba(&[1.0, -0.5]);
        assert!(p[1] > 0.99, "p = {p:?}");
    }

    #[test]
    fn lookup_table_matches_exact_and_nearest() {
        let t = EtaTable::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        );
        let m = EtaModel::Lookup(t);
        assert_eq!(m.predict_proba(&[0.0, 0.0]), vec![0.9, 0.1]);
        assert_eq!(m.predict_proba(&[0.9, 1.1]), vec![0.2, 0.8]);
    }

    #[test]
    fn probabilities_lie_in_simplex() {
        let sample = two_point_sample();
        let model = train_cpe(&sample, &CpeConfig::default()).unwrap();
        for x in [-3.0, -0.5, 0.0, 2.0, 10.0] {
            let p = model.predict_proba(&[x]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
