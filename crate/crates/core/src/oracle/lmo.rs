//! The plug-in linear minimization oracle and its weighted-logistic
//! alternative.
//!
//! Given a loss vector over a confusion layout, the plug-in rule expands it
//! to an equivalent loss over the raw stacked entries (the transpose of the
//! layout map), builds the cost-sensitive classifier
//! `g(x) = argmin*_j sum_i eta_i(x) L[a(x), i, j]` with ties broken toward
//! the larger class index, and returns the empirical confusion of `g` on the
//! sample.

use super::model::{train_weighted, CpeConfig, EtaModel};
use super::OracleError;
use crate::data::Dataset;
use crate::metrics::{ConfusionLayout, ConfusionVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Decision rule of a deterministic classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Rule {
    /// Cost-sensitive plug-in over a probability model. `loss` is the raw
    /// stacked loss with per-group blocks of `n^2` entries; a single block is
    /// shared by every instance when `n_groups == 1`.
    CostSensitive {
        loss: Vec<f64>,
        model: EtaModel,
        n_classes: usize,
        n_groups: usize,
    },
    /// Fixed label assignment on a finite support, matched by exact feature
    /// equality (falls back to the nearest point).
    Table {
        support: Vec<Vec<f64>>,
        labels: Vec<usize>,
    },
}

/// A deterministic classifier: prediction is a pure function of the input
/// features (and group, for group-indexed losses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicClassifier {
    rule: Rule,
}

impl DeterministicClassifier {
    /// Plug-in classifier for a raw stacked loss (length `n_groups * n^2`).
    pub fn plug_in(loss: Vec<f64>, model: EtaModel, n_classes: usize, n_groups: usize) -> Self {
        assert_eq!(loss.len(), n_groups * n_classes * n_classes);
        DeterministicClassifier {
            rule: Rule::CostSensitive {
                loss,
                model,
                n_classes,
                n_groups,
            },
        }
    }

    /// Fixed assignment on a finite support.
    pub fn from_table(support: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        assert_eq!(support.len(), labels.len());
        DeterministicClassifier {
            rule: Rule::Table { support, labels },
        }
    }

    pub fn predict(&self, x: &[f64], group: usize) -> Result<usize, OracleError> {
        match &self.rule {
            Rule::CostSensitive {
                loss,
                model,
                n_classes,
                n_groups,
            } => {
                if group >= *n_groups {
                    return Err(OracleError::GroupOutOfRange(group, *n_groups));
                }
                let eta = model.predict_proba(x);
                Ok(argmin_cost(&eta, loss, *n_classes, group))
            }
            Rule::Table { support, labels } => {
                let mut best = 0usize;
                let mut best_d2 = f64::INFINITY;
                for (i, k) in support.iter().enumerate() {
                    let d2: f64 = k.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d2 == 0.0 {
                        return Ok(labels[i]);
                    }
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = i;
                    }
                }
                Ok(labels[best])
            }
        }
    }
}

/// `argmin*_j sum_i eta_i L[sigma(a, i, j)]` with `sigma(a, i, j) =
/// a*n^2 + i*n + j` (0-based group blocks of `n^2` entries) and ties broken
/// in favor of the larger class index.
#[inline]
fn argmin_cost(eta: &[f64], loss: &[f64], n: usize, group: usize) -> usize {
    let block = &loss[group * n * n..(group + 1) * n * n];
    let mut best_j = 0usize;
    let mut best_cost = f64::INFINITY;
    for j in 0..n {
        let mut cost = 0.0;
        for (i, &e) in eta.iter().enumerate() {
            cost += e * block[i * n + j];
        }
        if cost <= best_cost {
            best_cost = cost;
            best_j = j;
        }
    }
    best_j
}

/// Result of one LMO call: the minimizing classifier and its confusion
/// estimate on the supplied sample, in the oracle's layout.
#[derive(Clone, Debug)]
pub struct LmoResult {
    pub classifier: DeterministicClassifier,
    pub confusion_estimate: ConfusionVector,
    pub sample_size: usize,
}

/// A linear minimization oracle over the achievable confusion set: takes a
/// loss vector in the layout's entry space, returns an (approximately)
/// minimizing classifier and an estimate of its confusion.
pub trait Lmo: Sync {
    fn minimize(&self, loss: &[f64]) -> Result<LmoResult, OracleError>;
    fn layout(&self) -> &ConfusionLayout;
}

/// Empirical confusion of a deterministic classifier on a dataset, mapped
/// into `layout`. Entries are exact ratios of integer counts, so the result
/// is bit-reproducible for any sample order.
pub fn empirical_confusion(
    classifier: &DeterministicClassifier,
    sample: &Dataset,
    layout: &ConfusionLayout,
) -> Result<ConfusionVector, OracleError> {
    let n = layout.n_classes();
    let m = layout.n_groups();
    if sample.len() == 0 {
        return Err(OracleError::EmptySample);
    }
    let preds: Vec<usize> = if sample.len() >= 4096 {
        (0..sample.len())
            .into_par_iter()
            .map(|i| classifier.predict(&sample.features[i], sample.group_of(i)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        (0..sample.len())
            .map(|i| classifier.predict(&sample.features[i], sample.group_of(i)))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut counts = vec![0u64; m * n * n];
    for (i, (&y, &j)) in sample.labels.iter().zip(&preds).enumerate() {
        let a = sample.group_of(i);
        if a >= m {
            return Err(OracleError::GroupOutOfRange(a, m));
        }
        counts[a * n * n + y * n + j] += 1;
    }
    let total = sample.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(layout.apply(&raw)?)
}

/// Plug-in based LMO: constructs the cost-sensitive classifier for the given
/// loss over a fixed class-probability model, and estimates its confusion on
/// the held sample. The model's probabilities on the sample are computed once
/// at construction and reused across calls.
pub struct PluginLmo {
    model: EtaModel,
    sample: Dataset,
    layout: ConfusionLayout,
    /// Cached `eta(x)` per sample row.
    probs: Vec<Vec<f64>>,
}

impl PluginLmo {
    pub fn new(
        model: EtaModel,
        sample: Dataset,
        layout: ConfusionLayout,
    ) -> Result<Self, OracleError> {
        if sample.len() == 0 {
            return Err(OracleError::EmptySample);
        }
        if model.n_classes() != layout.n_classes() {
            return Err(OracleError::LayoutMismatch(format!(
                "model has {} classes, layout {}",
                model.n_classes(),
                layout.n_classes()
            )));
        }
        if sample.n_groups() < layout.n_groups() {
            return Err(OracleError::LayoutMismatch(
                "sample has fewer groups than the layout".into(),
            ));
        }
        let probs = sample
            .features
            .par_iter()
            .map(|x| model.predict_proba(x))
            .collect();
        Ok(PluginLmo {
            model,
            sample,
            layout,
            probs,
        })
    }

    pub fn sample(&self) -> &Dataset {
        &self.sample
    }

    pub fn model(&self) -> &EtaModel {
        &self.model
    }
}

impl Lmo for PluginLmo {
    fn minimize(&self, loss: &[f64]) -> Result<LmoResult, OracleError> {
        let n = self.layout.n_classes();
        let m = self.layout.n_groups();
        let full = self.layout.expand_loss(loss)?;
        // predictions from cached probabilities
        let preds: Vec<usize> = self
            .probs
            .par_iter()
            .enumerate()
            .map(|(i, eta)| argmin_cost(eta, &full, n, self.sample.group_of(i)))
            .collect();
        let mut counts = vec![0u64; m * n * n];
        for (i, (&y, &j)) in self.sample.labels.iter().zip(&preds).enumerate() {
            let a = self.sample.group_of(i);
            if a >= m {
                return Err(OracleError::GroupOutOfRange(a, m));
            }
            counts[a * n * n + y * n + j] += 1;
        }
        let total = self.sample.len() as f64;
        let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        let confusion = self.layout.apply(&raw)?;
        Ok(LmoResult {
            classifier: DeterministicClassifier::plug_in(full, self.model.clone(), n, m),
            confusion_estimate: confusion,
            sample_size: self.sample.len(),
        })
    }

    fn layout(&self) -> &ConfusionLayout {
        &self.layout
    }
}

/// One-shot plug-in LMO call for a single-group layout.
pub fn plugin_lmo(
    loss: &[f64],
    model: &EtaModel,
    sample: &Dataset,
    layout: &ConfusionLayout,
) -> Result<LmoResult, OracleError> {
    PluginLmo::new(model.clone(), sample.clone(), layout.clone())?.minimize(loss)
}

/// One-shot plug-in LMO call with a group-indexed loss (per-group blocks of
/// `n^2` entries). With a single group this is identical to [`plugin_lmo`].
pub fn group_plugin_lmo(
    loss: &[f64],
    model: &EtaModel,
    sample: &Dataset,
    layout: &ConfusionLayout,
) -> Result<LmoResult, OracleError> {
    plugin_lmo(loss, model, sample, layout)
}

/// Weighted-logistic-regression LMO: for a loss whose raw expansion is
/// diagonal, trains a fresh linear softmax model with per-class weights equal
/// to the magnitudes of the (negated) diagonal entries and returns the argmax
/// classifier. Losses that are not diagonal in the single-group full
/// expansion route to the plug-in rule over `fallback_model`.
pub struct WlrLmo {
    sample: Dataset,
    layout: ConfusionLayout,
    config: CpeConfig,
    fallback: PluginLmo,
}

impl WlrLmo {
    pub fn new(
        sample: Dataset,
        layout: ConfusionLayout,
        config: CpeConfig,
        fallback_model: EtaModel,
    ) -> Result<Self, OracleError> {
        if layout.n_groups() != 1 {
            return Err(OracleError::LayoutMismatch(
                "weighted logistic LMO supports single-group layouts".into(),
            ));
        }
        let fallback = PluginLmo::new(fallback_model, sample.clone(), layout.clone())?;
        Ok(WlrLmo {
            sample,
            layout,
            config,
            fallback,
        })
    }

    /// Extracts per-class weights when the expanded loss touches only the
    /// diagonal: minimizing `sum_i d_i C_ii` rewards class `i` accuracy with
    /// weight `max(-d_i, 0)`.
    fn diagonal_weights(&self, full: &[f64]) -> Option<Vec<f64>> {
        let n = self.layout.n_classes();
        let mut weights = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let v = full[i * n + j];
                if i == j {
                    weights[i] = (-v).max(0.0);
                } else if v.abs() > 1e-12 {
                    return None;
                }
            }
        }
        if weights.iter().all(|&w| w <= 0.0) {
            return None;
        }
        Some(weights)
    }
}

impl Lmo for WlrLmo {
    fn minimize(&self, loss: &[f64]) -> Result<LmoResult, OracleError> {
        let full = self.layout.expand_loss(loss)?;
        match self.diagonal_weights(&full) {
            Some(weights) => {
                let result = wlr_lmo(&weights, &self.sample, &self.config, &self.layout)?;
                Ok(result)
            }
            None => self.fallback.minimize(loss),
        }
    }

    fn layout(&self) -> &ConfusionLayout {
        &self.layout
    }
}

/// Trains weighted logistic regression for nonnegative per-class weights and
/// returns its argmax classifier with the empirical confusion on `sample`.
pub fn wlr_lmo(
    weights: &[f64],
    sample: &Dataset,
    config: &CpeConfig,
    layout: &ConfusionLayout,
) -> Result<LmoResult, OracleError> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(OracleError::InvalidData(
            "per-class weights must be nonnegative".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(OracleError::DegenerateLoss);
    }
    let model = train_weighted(sample, weights, config)?;
    let n = layout.n_classes();
    // argmax over eta equals the plug-in rule for the 0-1 loss
    let mut zero_one = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                zero_one[i * n + j] = 1.0;
            }
        }
    }
    let classifier =
        DeterministicClassifier::plug_in(zero_one, EtaModel::Linear(model), n, 1);
    let confusion = empirical_confusion(&classifier, sample, layout)?;
    Ok(LmoResult {
        classifier,
        confusion_estimate: confusion,
        sample_size: sample.len(),
    })
}

/// Fallback loss direction used when a gradient or dual vector vanishes:
/// the flattened 0-1 loss expressed in the layout's entry space.
pub fn default_loss_direction(layout: &ConfusionLayout) -> Vec<f64> {
    use crate::metrics::Representation;
    let n = layout.n_classes();
    match layout.representation() {
        Representation::Full | Representation::GroupStacked => {
            let mut v = vec![0.0; layout.dim()];
            for a in 0..layout.n_groups() {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            v[layout.raw_index(a, i, j)] = 1.0;
                        }
                    }
                }
            }
            v
        }
        Representation::DiagonalNormalized => {
            // 0-1 loss over recalls: 1 - sum_i mass_i r_i
            layout.masses().unwrap().iter().map(|&m| -m).collect()
        }
        Representation::GeneralizedLinear => vec![1.0; layout.dim()],
    }
}
