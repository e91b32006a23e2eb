//! Confusion-matrix representations, performance metrics and constraint
//! functions, with gradients and metric metadata.
//!
//! A classifier's quality is summarized by its confusion matrix
//! `C[i][j] = P(Y = i, h(X) = j)`, or by a group-stacked family of such
//! matrices. Metrics map a flattened confusion vector to a loss in `[0, 1]`
//! (lower is better); constraints are scalar functions that must be `<= 0`.

pub mod constraint;

pub use constraint::{evaluate_constraints, expand_constraints, ConstraintKind, ScalarConstraint};

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Floor applied to denominators (diagonal entries, row sums, ratio
/// denominators) before division.
pub const ENTRY_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("ratio denominator not positive: {0}")]
    DegenerateDenominator(f64),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// How the entries of a [`ConfusionVector`] relate to the raw joint
/// probabilities `C^a[i][j]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// All `n^2` joint probabilities of a single confusion matrix.
    Full,
    /// Normalized diagonal entries `C^a[i][i] / mu[a][i]`, one per
    /// (group, class); equals the per-class recalls.
    DiagonalNormalized,
    /// All `m * n^2` entries of the group-specific confusion matrices,
    /// group-major.
    GroupStacked,
    /// User-supplied linear functionals of the raw stacked entries.
    GeneralizedLinear,
}

/// Shape metadata for confusion vectors: class/group counts, the chosen
/// representation, and the linear maps that produce the entries from the raw
/// stacked probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionLayout {
    n_classes: usize,
    n_groups: usize,
    representation: Representation,
    /// For `GeneralizedLinear`: one coefficient vector of length
    /// `n_groups * n^2` per output entry.
    maps: Option<Vec<Vec<f64>>>,
    /// Class masses per group, `masses[a * n + i] = P(A = a, Y = i)`.
    /// Required by `DiagonalNormalized`.
    masses: Option<Vec<f64>>,
}

/// Domain in which the solvers' slack variables live for a given layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlackDomain {
    /// The probability simplex over the layout entries.
    Simplex,
    /// The unit box `[0, 1]^d` (normalized-diagonal and generalized layouts).
    Box01,
}

impl ConfusionLayout {
    pub fn full(n_classes: usize) -> Self {
        assert!(n_classes >= 1);
        ConfusionLayout {
            n_classes,
            n_groups: 1,
            representation: Representation::Full,
            maps: None,
            masses: None,
        }
    }

    pub fn group_stacked(n_classes: usize, n_groups: usize) -> Self {
        assert!(n_classes >= 1 && n_groups >= 1);
        ConfusionLayout {
            n_classes,
            n_groups,
            representation: Representation::GroupStacked,
            maps: None,
            masses: None,
        }
    }

    /// Normalized-diagonal layout for a single group; `priors` are the class
    /// priors `P(Y = i)`.
    pub fn diagonal_normalized(n_classes: usize, priors: &[f64]) -> Self {
        Self::diagonal_normalized_grouped(n_classes, 1, priors)
    }

    /// Normalized-diagonal layout over `n_groups` groups; `masses` holds
    /// `P(A = a, Y = i)` flattened group-major with length `n_groups * n`.
    pub fn diagonal_normalized_grouped(n_classes: usize, n_groups: usize, masses: &[f64]) -> Self {
        assert_eq!(masses.len(), n_groups * n_classes);
        assert!(masses.iter().all(|&m| m > 0.0));
        ConfusionLayout {
            n_classes,
            n_groups,
            representation: Representation::DiagonalNormalized,
            maps: None,
            masses: Some(masses.to_vec()),
        }
    }

    /// Layout whose entries are arbitrary linear functionals of the raw
    /// stacked probabilities. Each map must have length `n_groups * n^2`.
    pub fn generalized(n_classes: usize, n_groups: usize, maps: Vec<Vec<f64>>) -> Self {
        let raw = n_groups * n_classes * n_classes;
        assert!(!maps.is_empty());
        assert!(maps.iter().all(|m| m.len() == raw));
        ConfusionLayout {
            n_classes,
            n_groups,
            representation: Representation::GeneralizedLinear,
            maps: Some(maps),
            masses: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// Length of the raw stacked probability vector.
    pub fn raw_dim(&self) -> usize {
        self.n_groups * self.n_classes * self.n_classes
    }

    /// Length of a confusion vector in this layout.
    pub fn dim(&self) -> usize {
        match self.representation {
            Representation::Full | Representation::GroupStacked => self.raw_dim(),
            Representation::DiagonalNormalized => self.n_groups * self.n_classes,
            Representation::GeneralizedLinear => self.maps.as_ref().unwrap().len(),
        }
    }

    pub fn masses(&self) -> Option<&[f64]> {
        self.masses.as_deref()
    }

    /// Slack-variable domain used by the GDA/ellipsoid style solvers.
    pub fn slack_domain(&self) -> SlackDomain {
        match self.representation {
            Representation::Full | Representation::GroupStacked => SlackDomain::Simplex,
            Representation::DiagonalNormalized | Representation::GeneralizedLinear => {
                SlackDomain::Box01
            }
        }
    }

    /// Index of entry `(i, j)` of group `a` in the raw stacked vector.
    #[inline]
    pub fn raw_index(&self, group: usize, i: usize, j: usize) -> usize {
        let n = self.n_classes;
        group * n * n + i * n + j
    }

    /// Maps raw stacked probabilities into this layout's entry space.
    pub fn apply(&self, raw: &[f64]) -> Result<ConfusionVector, MetricError> {
        if raw.len() != self.raw_dim() {
            return Err(MetricError::LayoutMismatch(format!(
                "raw vector has length {}, layout expects {}",
                raw.len(),
                self.raw_dim()
            )));
        }
        let entries = match self.representation {
            Representation::Full | Representation::GroupStacked => raw.to_vec(),
            Representation::DiagonalNormalized => {
                let masses = self.masses.as_ref().unwrap();
                let n = self.n_classes;
                (0..self.n_groups * n)
                    .map(|k| {
                        let (a, i) = (k / n, k % n);
                        let r = raw[self.raw_index(a, i, i)] / masses[k];
                        r.clamp(0.0, 1.0)
                    })
                    .collect()
            }
            Representation::GeneralizedLinear => self
                .maps
                .as_ref()
                .unwrap()
                .iter()
                .map(|m| m.iter().zip(raw).map(|(a, b)| a * b).sum())
                .collect(),
        };
        Ok(ConfusionVector {
            layout: self.clone(),
            entries,
        })
    }

    /// Pulls a loss vector in this layout's entry space back to an equivalent
    /// loss over the raw stacked probabilities (the transpose of the linear
    /// map realized by [`apply`](Self::apply)).
    pub fn expand_loss(&self, loss: &[f64]) -> Result<Vec<f64>, MetricError> {
        if loss.len() != self.dim() {
            return Err(MetricError::LayoutMismatch(format!(
                "loss has length {}, layout dimension is {}",
                loss.len(),
                self.dim()
            )));
        }
        let mut full = vec![0.0; self.raw_dim()];
        match self.representation {
            Representation::Full | Representation::GroupStacked => full.copy_from_slice(loss),
            Representation::DiagonalNormalized => {
                let masses = self.masses.as_ref().unwrap();
                let n = self.n_classes;
                for k in 0..self.n_groups * n {
                    let (a, i) = (k / n, k % n);
                    full[self.raw_index(a, i, i)] = loss[k] / masses[k];
                }
            }
            Representation::GeneralizedLinear => {
                for (row, &l) in self.maps.as_ref().unwrap().iter().zip(loss) {
                    for (f, &r) in full.iter_mut().zip(row) {
                        *f += l * r;
                    }
                }
            }
        }
        Ok(full)
    }

    /// Aggregate class priors implied by the layout masses, if present.
    pub fn priors_from_masses(&self) -> Option<Vec<f64>> {
        let masses = self.masses.as_ref()?;
        let n = self.n_classes;
        let mut p = vec![0.0; n];
        for a in 0..self.n_groups {
            for i in 0..n {
                p[i] += masses[a * n + i];
            }
        }
        Some(p)
    }
}

/// A confusion matrix (or family of group-specific confusion matrices)
/// flattened into the entry space of a [`ConfusionLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionVector {
    layout: ConfusionLayout,
    entries: Vec<f64>,
}

impl ConfusionVector {
    pub fn new(layout: ConfusionLayout, entries: Vec<f64>) -> Result<Self, MetricError> {
        if entries.len() != layout.dim() {
            return Err(MetricError::LayoutMismatch(format!(
                "entries length {} != layout dimension {}",
                entries.len(),
                layout.dim()
            )));
        }
        Ok(ConfusionVector { layout, entries })
    }

    /// Full-layout vector from an `n x n` matrix given as rows.
    pub fn full_from_matrix(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n));
        let entries = rows.iter().flatten().copied().collect();
        ConfusionVector {
            layout: ConfusionLayout::full(n),
            entries,
        }
    }

    pub fn layout(&self) -> &ConfusionLayout {
        &self.layout
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    /// Checks the layout invariants, with `tol` slack on sums and signs.
    pub fn validate(&self, tol: f64) -> Result<(), MetricError> {
        if self.entries.iter().any(|e| !e.is_finite()) {
            return Err(MetricError::NonFinite("confusion entries"));
        }
        match self.layout.representation {
            Representation::Full | Representation::GroupStacked => {
                if self.entries.iter().any(|&e| e < -tol) {
                    return Err(MetricError::LayoutMismatch(
                        "negative probability entry".into(),
                    ));
                }
                let sum: f64 = self.entries.iter().sum();
                if (sum - 1.0).abs() > tol.max(1e-9) {
                    return Err(MetricError::LayoutMismatch(format!(
                        "entries sum to {sum}, expected 1"
                    )));
                }
            }
            Representation::DiagonalNormalized => {
                if self.entries.iter().any(|&e| e < -tol || e > 1.0 + tol) {
                    return Err(MetricError::LayoutMismatch(
                        "normalized entry outside [0, 1]".into(),
                    ));
                }
            }
            Representation::GeneralizedLinear => {}
        }
        Ok(())
    }

    /// Aggregate `n x n` confusion matrix (summed over groups), as a flat
    /// row-major vector. Only defined for raw-probability layouts.
    fn aggregate_full(&self) -> Result<Vec<f64>, MetricError> {
        let n = self.layout.n_classes;
        match self.layout.representation {
            Representation::Full => Ok(self.entries.clone()),
            Representation::GroupStacked => {
                let mut agg = vec![0.0; n * n];
                for a in 0..self.layout.n_groups {
                    for k in 0..n * n {
                        agg[k] += self.entries[a * n * n + k];
                    }
                }
                Ok(agg)
            }
            _ => Err(MetricError::LayoutMismatch(
                "metric needs raw confusion entries".into(),
            )),
        }
    }
}

/// Smoothness class of a metric, which determines the applicable solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    SmoothConvex,
    NonsmoothConvex,
    RatioOfLinear,
    Linear,
    /// Supported for evaluation only (macro-F1).
    NonConvex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ZeroOne,
    Balanced,
    HMean,
    GMean,
    QMean,
    MicroF1 { default_class: usize },
    MacroF1,
    MinMax,
    LinearCustom { coeffs: Vec<f64> },
    RatioOfLinear { num: Vec<f64>, den: Vec<f64> },
}

/// A performance metric over confusion vectors. Lower values are better and
/// every built-in metric maps valid inputs into `[0, 1]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Metric {
    kind: MetricKind,
    lipschitz_hint: Option<f64>,
    #[serde(skip)]
    lipschitz_cache: OnceLock<f64>,
}

impl Clone for Metric {
    fn clone(&self) -> Self {
        let cache = OnceLock::new();
        if let Some(&v) = self.lipschitz_cache.get() {
            let _ = cache.set(v);
        }
        Metric {
            kind: self.kind.clone(),
            lipschitz_hint: self.lipschitz_hint,
            lipschitz_cache: cache,
        }
    }
}

impl Metric {
    pub fn new(kind: MetricKind) -> Self {
        Metric {
            kind,
            lipschitz_hint: None,
            lipschitz_cache: OnceLock::new(),
        }
    }

    pub fn with_lipschitz(kind: MetricKind, hint: f64) -> Self {
        assert!(hint > 0.0);
        Metric {
            kind,
            lipschitz_hint: Some(hint),
            lipschitz_cache: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn smoothness(&self) -> Smoothness {
        match self.kind {
            MetricKind::ZeroOne | MetricKind::Balanced | MetricKind::LinearCustom { .. } => {
                Smoothness::Linear
            }
            MetricKind::HMean | MetricKind::GMean | MetricKind::QMean => Smoothness::SmoothConvex,
            MetricKind::MinMax => Smoothness::NonsmoothConvex,
            MetricKind::MicroF1 { .. } | MetricKind::RatioOfLinear { .. } => {
                Smoothness::RatioOfLinear
            }
            MetricKind::MacroF1 => Smoothness::NonConvex,
        }
    }

    /// Per-class recalls `r[i] = C[i][i] / sum_j C[i][j]` (or the layout
    /// entries themselves for normalized-diagonal layouts, aggregated over
    /// groups), with denominators floored at [`ENTRY_FLOOR`].
    fn recalls(&self, c: &ConfusionVector) -> Result<Vec<f64>, MetricError> {
        let layout = &c.layout;
        let n = layout.n_classes;
        match layout.representation {
            Representation::DiagonalNormalized => {
                let masses = layout.masses.as_ref().unwrap();
                if layout.n_groups == 1 {
                    return Ok(c.entries.clone());
                }
                let priors = layout.priors_from_masses().unwrap();
                let mut r = vec![0.0; n];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        r[i] += masses[a * n + i] * c.entries[a * n + i];
                    }
                }
                for i in 0..n {
                    r[i] /= priors[i].max(ENTRY_FLOOR);
                }
                Ok(r)
            }
            _ => {
                let agg = c.aggregate_full()?;
                Ok((0..n)
                    .map(|i| {
                        let row: f64 = agg[i * n..(i + 1) * n].iter().sum();
                        agg[i * n + i] / row.max(ENTRY_FLOOR)
                    })
                    .collect())
            }
        }
    }

    /// Evaluates the metric. `priors` are the class priors `P(Y = i)`,
    /// used by prior-weighted metrics.
    pub fn eval(&self, c: &ConfusionVector, priors: &[f64]) -> Result<f64, MetricError> {
        let v = match &self.kind {
            MetricKind::HMean => {
                let r = self.recalls(c)?;
                let s: f64 = r.iter().map(|&ri| 1.0 / ri.max(ENTRY_FLOOR)).sum();
                1.0 - r.len() as f64 / s
            }
            MetricKind::GMean => {
                let r = self.recalls(c)?;
                let n = r.len() as f64;
                let logp: f64 = r.iter().map(|&ri| ri.max(ENTRY_FLOOR).ln()).sum();
                1.0 - (logp / n).exp()
            }
            MetricKind::QMean => {
                let r = self.recalls(c)?;
                let n = r.len() as f64;
                let s: f64 = r.iter().map(|&ri| (1.0 - ri) * (1.0 - ri)).sum();
                (s / n).sqrt()
            }
            MetricKind::MinMax => {
                let r = self.recalls(c)?;
                r.iter().map(|&ri| 1.0 - ri).fold(f64::MIN, f64::max)
            }
            MetricKind::MacroF1 => {
                let agg = c.aggregate_full()?;
                let n = c.layout.n_classes;
                let mut s = 0.0;
                for i in 0..n {
                    let row: f64 = agg[i * n..(i + 1) * n].iter().sum();
                    let col: f64 = (0..n).map(|j| agg[j * n + i]).sum();
                    s += 2.0 * agg[i * n + i] / (row + col).max(ENTRY_FLOOR);
                }
                1.0 - s / n as f64
            }
            MetricKind::ZeroOne | MetricKind::Balanced | MetricKind::LinearCustom { .. } => {
                let (coeffs, offset) = self.linear_coeffs(&c.layout, priors)?;
                offset + dot(&coeffs, &c.entries)
            }
            MetricKind::MicroF1 { .. } | MetricKind::RatioOfLinear { .. } => {
                let (num, den) = self.ratio_coeffs(&c.layout)?;
                let d = dot(&den, &c.entries);
                if d <= 0.0 {
                    return Err(MetricError::DegenerateDenominator(d));
                }
                dot(&num, &c.entries) / d
            }
        };
        if !v.is_finite() {
            return Err(MetricError::NonFinite("metric value"));
        }
        Ok(v)
    }

    /// Gradient (or a subgradient for `MinMax`, averaging the active pieces
    /// on ties) with respect to the layout entries.
    pub fn grad(&self, c: &ConfusionVector, priors: &[f64]) -> Result<Vec<f64>, MetricError> {
        match &self.kind {
            MetricKind::ZeroOne | MetricKind::Balanced | MetricKind::LinearCustom { .. } => {
                Ok(self.linear_coeffs(&c.layout, priors)?.0)
            }
            MetricKind::MicroF1 { .. } | MetricKind::RatioOfLinear { .. } => {
                let (num, den) = self.ratio_coeffs(&c.layout)?;
                let nv = dot(&num, &c.entries);
                let dv = dot(&den, &c.entries);
                if dv <= 0.0 {
                    return Err(MetricError::DegenerateDenominator(dv));
                }
                Ok(num
                    .iter()
                    .zip(&den)
                    .map(|(&a, &b)| (a * dv - nv * b) / (dv * dv))
                    .collect())
            }
            MetricKind::MacroF1 => self.macro_f1_grad(c),
            _ => {
                let r = self.recalls(c)?;
                let df = self.recall_partials(&r);
                self.chain_through_recalls(c, &df)
            }
        }
    }

    /// d(metric)/d(recall_i) for the recall-based metrics.
    fn recall_partials(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len() as f64;
        match &self.kind {
            MetricKind::HMean => {
                let u: f64 = r.iter().map(|&ri| 1.0 / ri.max(ENTRY_FLOOR)).sum();
                r.iter()
                    .map(|&ri| {
                        let ri = ri.max(ENTRY_FLOOR);
                        -n / (u * u * ri * ri)
                    })
                    .collect()
            }
            MetricKind::GMean => {
                let logp: f64 = r.iter().map(|&ri| ri.max(ENTRY_FLOOR).ln()).sum();
                let gm = (logp / n).exp();
                r.iter()
                    .map(|&ri| -gm / (n * ri.max(ENTRY_FLOOR)))
                    .collect()
            }
            MetricKind::QMean => {
                let s: f64 = r.iter().map(|&ri| (1.0 - ri) * (1.0 - ri)).sum();
                let f = (s / n).sqrt().max(ENTRY_FLOOR);
                r.iter().map(|&ri| -(1.0 - ri) / (n * f)).collect()
            }
            MetricKind::MinMax => {
                let worst = r.iter().map(|&ri| 1.0 - ri).fold(f64::MIN, f64::max);
                let active: Vec<usize> = (0..r.len())
                    .filter(|&i| (1.0 - r[i]) >= worst - 1e-12)
                    .collect();
                let w = -1.0 / active.len() as f64;
                let mut df = vec![0.0; r.len()];
                for i in active {
                    df[i] = w;
                }
                df
            }
            _ => unreachable!("recall_partials only called for recall-based metrics"),
        }
    }

    /// Chain rule from d(metric)/d(recall) to the layout entries.
    fn chain_through_recalls(
        &self,
        c: &ConfusionVector,
        df: &[f64],
    ) -> Result<Vec<f64>, MetricError> {
        let layout = &c.layout;
        let n = layout.n_classes;
        match layout.representation {
            Representation::DiagonalNormalized => {
                if layout.n_groups == 1 {
                    return Ok(df.to_vec());
                }
                let masses = layout.masses.as_ref().unwrap();
                let priors = layout.priors_from_masses().unwrap();
                let mut g = vec![0.0; layout.dim()];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        g[a * n + i] = df[i] * masses[a * n + i] / priors[i].max(ENTRY_FLOOR);
                    }
                }
                Ok(g)
            }
            Representation::Full | Representation::GroupStacked => {
                let agg = c.aggregate_full()?;
                let mut block = vec![0.0; n * n];
                for i in 0..n {
                    let row: f64 = agg[i * n..(i + 1) * n].iter().sum();
                    let row = row.max(ENTRY_FLOOR);
                    let cii = agg[i * n + i];
                    for j in 0..n {
                        // d r_i / d C_ij = (delta_ij * row - C_ii) / row^2
                        let dr = (if i == j { row } else { 0.0 } - cii) / (row * row);
                        block[i * n + j] = df[i] * dr;
                    }
                }
                let mut g = Vec::with_capacity(layout.dim());
                for _ in 0..layout.n_groups {
                    g.extend_from_slice(&block);
                }
                Ok(g)
            }
            Representation::GeneralizedLinear => Err(MetricError::LayoutMismatch(
                "recall metrics are not defined on generalized layouts".into(),
            )),
        }
    }

    fn macro_f1_grad(&self, c: &ConfusionVector) -> Result<Vec<f64>, MetricError> {
        let layout = &c.layout;
        let n = layout.n_classes;
        let agg = c.aggregate_full()?;
        let nf = n as f64;
        let mut block = vec![0.0; n * n];
        for i in 0..n {
            let row: f64 = agg[i * n..(i + 1) * n].iter().sum();
            let col: f64 = (0..n).map(|j| agg[j * n + i]).sum();
            let den = (row + col).max(ENTRY_FLOOR);
            let cii = agg[i * n + i];
            // term_i = 2 C_ii / (row_i + col_i); psi = 1 - (1/n) sum term_i
            for j in 0..n {
                // d term_i / d C_ij (row contribution)
                let d_num = if i == j { 2.0 } else { 0.0 };
                block[i * n + j] += -(d_num * den - 2.0 * cii) / (den * den) / nf;
                // d term_j / d C_ij where C_ij is in column j of term_j
                if i != j {
                    let rowj: f64 = agg[j * n..(j + 1) * n].iter().sum();
                    let colj: f64 = (0..n).map(|k| agg[k * n + j]).sum();
                    let denj = (rowj + colj).max(ENTRY_FLOOR);
                    let cjj = agg[j * n + j];
                    block[i * n + j] += 2.0 * cjj / (denj * denj) / nf;
                }
            }
            // diagonal entry appears in both row_i and col_i
            let extra = 2.0 * cii / (den * den) / nf;
            block[i * n + i] += extra;
        }
        let mut g = Vec::with_capacity(layout.dim());
        for _ in 0..layout.n_groups {
            g.extend_from_slice(&block);
        }
        Ok(g)
    }

    /// Coefficients `(coeffs, offset)` such that the metric equals
    /// `offset + <coeffs, entries>` for linear metrics.
    pub fn linear_coeffs(
        &self,
        layout: &ConfusionLayout,
        priors: &[f64],
    ) -> Result<(Vec<f64>, f64), MetricError> {
        let n = layout.n_classes;
        match (&self.kind, layout.representation) {
            (MetricKind::LinearCustom { coeffs }, _) => {
                if coeffs.len() != layout.dim() {
                    return Err(MetricError::LayoutMismatch(format!(
                        "custom coefficients length {} != layout dimension {}",
                        coeffs.len(),
                        layout.dim()
                    )));
                }
                Ok((coeffs.clone(), 0.0))
            }
            (MetricKind::ZeroOne, Representation::DiagonalNormalized) => {
                let masses = layout.masses.as_ref().unwrap();
                Ok((masses.iter().map(|&m| -m).collect(), 1.0))
            }
            (MetricKind::Balanced, Representation::DiagonalNormalized) => {
                let masses = layout.masses.as_ref().unwrap();
                let priors_agg = layout.priors_from_masses().unwrap();
                let mut coeffs = vec![0.0; layout.dim()];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        coeffs[a * n + i] =
                            -masses[a * n + i] / (n as f64 * priors_agg[i].max(ENTRY_FLOOR));
                    }
                }
                Ok((coeffs, 1.0))
            }
            (MetricKind::ZeroOne, Representation::Full | Representation::GroupStacked) => {
                let mut coeffs = vec![0.0; layout.dim()];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                coeffs[layout.raw_index(a, i, j)] = 1.0;
                            }
                        }
                    }
                }
                Ok((coeffs, 0.0))
            }
            (MetricKind::Balanced, Representation::Full | Representation::GroupStacked) => {
                if priors.len() != n {
                    return Err(MetricError::LayoutMismatch(
                        "balanced metric needs class priors".into(),
                    ));
                }
                let mut coeffs = vec![0.0; layout.dim()];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                coeffs[layout.raw_index(a, i, j)] =
                                    1.0 / (n as f64 * priors[i].max(ENTRY_FLOOR));
                            }
                        }
                    }
                }
                Ok((coeffs, 0.0))
            }
            _ => Err(MetricError::LayoutMismatch(
                "metric is not linear on this layout".into(),
            )),
        }
    }

    /// Numerator/denominator coefficients of a ratio-of-linear metric over
    /// the layout entries.
    pub fn ratio_coeffs(
        &self,
        layout: &ConfusionLayout,
    ) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
        match &self.kind {
            MetricKind::RatioOfLinear { num, den } => {
                if num.len() != layout.dim() || den.len() != layout.dim() {
                    return Err(MetricError::LayoutMismatch(
                        "ratio coefficient length != layout dimension".into(),
                    ));
                }
                Ok((num.clone(), den.clone()))
            }
            MetricKind::MicroF1 { default_class } => {
                let n = layout.n_classes;
                let k = *default_class;
                if k >= n {
                    return Err(MetricError::LayoutMismatch(format!(
                        "default class {k} out of range for {n} classes"
                    )));
                }
                match layout.representation {
                    Representation::Full | Representation::GroupStacked => {}
                    _ => {
                        return Err(MetricError::LayoutMismatch(
                            "micro-F1 needs raw confusion entries".into(),
                        ))
                    }
                }
                // 1 - 2 sum_{i != k} C_ii / (2 - row_k - col_k); the constant 2
                // equals 2 * sum_ij C_ij on valid confusions.
                let mut den = vec![0.0; layout.dim()];
                let mut num = vec![0.0; layout.dim()];
                for a in 0..layout.n_groups {
                    for i in 0..n {
                        for j in 0..n {
                            let idx = layout.raw_index(a, i, j);
                            let mut d = 2.0;
                            if i == k {
                                d -= 1.0;
                            }
                            if j == k {
                                d -= 1.0;
                            }
                            den[idx] = d;
                            num[idx] = d - if i == j && i != k { 2.0 } else { 0.0 };
                        }
                    }
                }
                Ok((num, den))
            }
            _ => Err(MetricError::LayoutMismatch(
                "metric is not ratio-of-linear".into(),
            )),
        }
    }

    /// Lipschitz constant used by the solvers: the stored hint, the exact
    /// norm for linear metrics, or a seeded interior-sample estimate of the
    /// maximum gradient norm (cached per instance).
    pub fn lipschitz(&self, layout: &ConfusionLayout, priors: &[f64]) -> f64 {
        if let Some(h) = self.lipschitz_hint {
            return h;
        }
        *self.lipschitz_cache.get_or_init(|| {
            if let Ok((coeffs, _)) = self.linear_coeffs(layout, priors) {
                return norm2(&coeffs).max(1e-12);
            }
            self.estimate_lipschitz(layout, priors, 10_000, 0x5eed_cafe)
        })
    }

    /// Max gradient l2-norm over `samples` random interior points with a
    /// margin of 0.01 from the boundary.
    pub fn estimate_lipschitz(
        &self,
        layout: &ConfusionLayout,
        priors: &[f64],
        samples: usize,
        seed: u64,
    ) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = layout.dim();
        let mut best: f64 = 1e-12;
        for _ in 0..samples {
            let entries: Vec<f64> = match layout.slack_domain() {
                SlackDomain::Simplex => {
                    let mut e: Vec<f64> = (0..d)
                        .map(|_| -(rng.random::<f64>().max(1e-300)).ln())
                        .collect();
                    let s: f64 = e.iter().sum();
                    for v in e.iter_mut() {
                        *v = (*v / s).max(0.01);
                    }
                    let s2: f64 = e.iter().sum();
                    e.iter().map(|v| v / s2).collect()
                }
                SlackDomain::Box01 => (0..d).map(|_| rng.random_range(0.01..1.0)).collect(),
            };
            let c = ConfusionVector {
                layout: layout.clone(),
                entries,
            };
            if let Ok(g) = self.grad(&c, priors) {
                let nrm = norm2(&g);
                if nrm.is_finite() {
                    best = best.max(nrm);
                }
            }
        }
        best
    }
}

/// Evaluates `m` on `c`; bare-function form of [`Metric::eval`].
pub fn evaluate_metric(m: &Metric, c: &ConfusionVector, priors: &[f64]) -> Result<f64, MetricError> {
    m.eval(c, priors)
}

/// Gradient of `m` at `c`; bare-function form of [`Metric::grad`].
pub fn gradient_metric(
    m: &Metric,
    c: &ConfusionVector,
    priors: &[f64],
) -> Result<Vec<f64>, MetricError> {
    m.grad(c, priors)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn full(rows: &[&[f64]]) -> ConfusionVector {
        ConfusionVector::full_from_matrix(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn hmean_perfect_binary_is_zero() {
        let c = full(&[&[0.5, 0.0], &[0.0, 0.5]]);
        let m = Metric::new(MetricKind::HMean);
        assert_abs_diff_eq!(m.eval(&c, &[0.5, 0.5]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn qmean_half_recalls() {
        let c = full(&[&[0.25, 0.25], &[0.25, 0.25]]);
        let m = Metric::new(MetricKind::QMean);
        assert_abs_diff_eq!(m.eval(&c, &[0.5, 0.5]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn micro_f1_perfect_binary_is_zero() {
        let c = full(&[&[0.5, 0.0], &[0.0, 0.5]]);
        let m = Metric::new(MetricKind::MicroF1 { default_class: 0 });
        assert_abs_diff_eq!(m.eval(&c, &[0.5, 0.5]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn minmax_takes_worst_class_error() {
        let c = full(&[&[0.4, 0.1], &[0.2, 0.3]]);
        let m = Metric::new(MetricKind::MinMax);
        // class errors are 0.2 and 0.4
        assert_abs_diff_eq!(m.eval(&c, &[0.5, 0.5]).unwrap(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn linear_custom_gradient_is_constant() {
        let coeffs = vec![0.3, -0.2, 0.1, 0.5];
        let m = Metric::new(MetricKind::LinearCustom {
            coeffs: coeffs.clone(),
        });
        let c = full(&[&[0.1, 0.2], &[0.3, 0.4]]);
        assert_eq!(m.grad(&c, &[0.5, 0.5]).unwrap(), coeffs);
    }

    fn finite_diff(m: &Metric, c: &ConfusionVector, priors: &[f64], h: f64) -> Vec<f64> {
        let e = c.entries().to_vec();
        (0..e.len())
            .map(|k| {
                let mut lo = e.clone();
                let mut hi = e.clone();
                lo[k] -= h;
                hi[k] += h;
                let clo = ConfusionVector::new(c.layout().clone(), lo).unwrap();
                let chi = ConfusionVector::new(c.layout().clone(), hi).unwrap();
                (m.eval(&chi, priors).unwrap() - m.eval(&clo, priors).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn hmean_gradient_matches_finite_differences() {
        let c = full(&[&[0.5, 0.0], &[0.0, 0.5]]);
        let m = Metric::new(MetricKind::HMean);
        let g = m.grad(&c, &[0.5, 0.5]).unwrap();
        let fd = finite_diff(&m, &c, &[0.5, 0.5], 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn qmean_gradient_matches_finite_differences() {
        let c = full(&[&[0.25, 0.25], &[0.25, 0.25]]);
        let m = Metric::new(MetricKind::QMean);
        let g = m.grad(&c, &[0.5, 0.5]).unwrap();
        let fd = finite_diff(&m, &c, &[0.5, 0.5], 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn smooth_gradients_match_finite_differences_at_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let metrics = [
            Metric::new(MetricKind::HMean),
            Metric::new(MetricKind::GMean),
            Metric::new(MetricKind::QMean),
        ];
        for _ in 0..100 {
            // random interior point of the 3x3 simplex with margin
            let mut e: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = e.iter().sum();
            for v in e.iter_mut() {
                *v /= s;
            }
            let c = ConfusionVector::new(ConfusionLayout::full(3), e).unwrap();
            let priors = [1.0 / 3.0; 3];
            for m in &metrics {
                let g = m.grad(&c, &priors).unwrap();
                let fd = finite_diff(m, &c, &priors, 1e-6);
                for (a, b) in g.iter().zip(&fd) {
                    assert!(
                        (a - b).abs() <= 1e-5 * b.abs().max(1.0),
                        "{:?}: {a} vs {b}",
                        m.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn macro_f1_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = Metric::new(MetricKind::MacroF1);
        for _ in 0..20 {
            let mut e: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = e.iter().sum();
            for v in e.iter_mut() {
                *v /= s;
            }
            let c = ConfusionVector::new(ConfusionLayout::full(3), e).unwrap();
            let g = m.grad(&c, &[1.0 / 3.0; 3]).unwrap();
            let fd = finite_diff(&m, &c, &[1.0 / 3.0; 3], 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn minmax_subgradient_averages_ties() {
        // both classes have recall 0.5: subgradient averages the two pieces
        let priors = [0.5, 0.5];
        let layout = ConfusionLayout::diagonal_normalized(2, &priors);
        let c = ConfusionVector::new(layout, vec![0.5, 0.5]).unwrap();
        let m = Metric::new(MetricKind::MinMax);
        let g = m.grad(&c, &priors).unwrap();
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn builtin_metrics_stay_in_unit_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let metrics = [
            Metric::new(MetricKind::ZeroOne),
            Metric::new(MetricKind::Balanced),
            Metric::new(MetricKind::HMean),
            Metric::new(MetricKind::GMean),
            Metric::new(MetricKind::QMean),
            Metric::new(MetricKind::MinMax),
            Metric::new(MetricKind::MacroF1),
            Metric::new(MetricKind::MicroF1 { default_class: 0 }),
        ];
        for _ in 0..200 {
            let mut e: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let s: f64 = e.iter().sum();
            for v in e.iter_mut() {
                *v /= s;
            }
            let c = ConfusionVector::new(ConfusionLayout::full(3), e.clone()).unwrap();
            let mut priors = [0.0; 3];
            for i in 0..3 {
                priors[i] = e[i * 3..(i + 1) * 3].iter().sum();
            }
            for m in &metrics {
                // balanced needs strictly positive priors
                if priors.iter().any(|&p| p < 1e-6) {
                    continue;
                }
                let v = m.eval(&c, &priors).unwrap();
                assert!(
                    (-1e-9..=1.0 + 1e-9).contains(&v),
                    "{:?} out of range: {v}",
                    m.kind()
                );
            }
        }
    }

    #[test]
    fn convexity_of_recall_metrics_on_normalized_layout() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let priors = [0.4, 0.35, 0.25];
        let layout = ConfusionLayout::diagonal_normalized(3, &priors);
        let metrics = [
            Metric::new(MetricKind::HMean),
            Metric::new(MetricKind::GMean),
            Metric::new(MetricKind::QMean),
            Metric::new(MetricKind::MinMax),
        ];
        for _ in 0..200 {
            let r1: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let r2: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = rng.random();
            let mid: Vec<f64> = r1
                .iter()
                .zip(&r2)
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect();
            let c1 = ConfusionVector::new(layout.clone(), r1).unwrap();
            let c2 = ConfusionVector::new(layout.clone(), r2).unwrap();
            let cm = ConfusionVector::new(layout.clone(), mid).unwrap();
            for m in &metrics {
                let lhs = m.eval(&cm, &priors).unwrap();
                let rhs =
                    t * m.eval(&c1, &priors).unwrap() + (1.0 - t) * m.eval(&c2, &priors).unwrap();
                assert!(lhs <= rhs + 1e-9, "{:?}: {lhs} > {rhs}", m.kind());
            }
        }
    }

    #[test]
    fn qmean_lipschitz_is_inverse_sqrt_n() {
        let priors = [0.5, 0.3, 0.2];
        let layout = ConfusionLayout::diagonal_normalized(3, &priors);
        let m = Metric::new(MetricKind::QMean);
        let l = m.lipschitz(&layout, &priors);
        // gradient norm of the q-mean over recalls is exactly 1/sqrt(n)
        assert!((l - 1.0 / 3f64.sqrt()).abs() < 1e-3, "estimate {l}");
    }

    #[test]
    fn diagonal_layout_roundtrip() {
        let priors = [0.8, 0.2];
        let layout = ConfusionLayout::diagonal_normalized(2, &priors);
        let raw = vec![0.6, 0.2, 0.05, 0.15];
        let c = layout.apply(&raw).unwrap();
        assert_abs_diff_eq!(c.entries()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(c.entries()[1], 0.75, epsilon = 1e-12);
        // pulling a loss back distributes the mass inverses
        let full = layout.expand_loss(&[1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(full[0], 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(full[3], -5.0, epsilon = 1e-12);
        assert_eq!(full[1], 0.0);
        assert_eq!(full[2], 0.0);
    }

    #[test]
    fn expand_loss_is_transpose_of_apply() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let layouts = [
            ConfusionLayout::full(3),
            ConfusionLayout::diagonal_normalized(3, &[0.5, 0.3, 0.2]),
            ConfusionLayout::group_stacked(2, 2),
            ConfusionLayout::generalized(
                2,
                1,
                vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
            ),
        ];
        for layout in &layouts {
            for _ in 0..20 {
                let raw: Vec<f64> = (0..layout.raw_dim()).map(|_| rng.random::<f64>()).collect();
                let loss: Vec<f64> = (0..layout.dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                // <loss, apply(raw)> == <expand(loss), raw> for linear layouts
                if layout.representation() == Representation::DiagonalNormalized {
                    continue; // apply() clamps; checked separately
                }
                let lhs = dot(&loss, layout.apply(&raw).unwrap().entries());
                let rhs = dot(&layout.expand_loss(&loss).unwrap(), &raw);
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }
}
