//! Synthetic distribution generators, dataset ingestion and train/test
//! splitting.
//!
//! Randomness is pinned to `ChaCha8` seeded per operation, so every draw is
//! bit-reproducible across platforms given the same seed and sample order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Class-conditional distribution of one class of a synthetic mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassDist {
    /// Axis-aligned uniform box.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// Multivariate Gaussian with full covariance.
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl ClassDist {
    fn dim(&self) -> usize {
        match self {
            ClassDist::Uniform { lo, .. } => lo.len(),
            ClassDist::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn density(&self, x: &[f64]) -> f64 {
        match self {
            ClassDist::Uniform { lo, hi } => {
                let mut vol = 1.0;
                for ((l, h), xi) in lo.iter().zip(hi).zip(x) {
                    if xi < l || xi > h {
                        return 0.0;
                    }
                    vol *= h - l;
                }
                1.0 / vol
            }
            ClassDist::Gaussian { mean, cov } => {
                let q = mean.len();
                let m = nalgebra::DMatrix::from_fn(q, q, |i, j| cov[i][j]);
                let chol = nalgebra::Cholesky::new(m).expect("covariance must be SPD");
                let diff = nalgebra::DVector::from_fn(q, |i, _| x[i] - mean[i]);
                let solved = chol.solve(&diff);
                let quad = diff.dot(&solved);
                let det = chol.l().diagonal().iter().map(|d| d * d).product::<f64>();
                ((-0.5 * quad).exp()) / ((2.0 * std::f64::consts::PI).powi(q as i32) * det).sqrt()
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ClassDist::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| rng.random_range(l..h))
                .collect(),
            ClassDist::Gaussian { mean, cov } => {
                let q = mean.len();
                let m = nalgebra::DMatrix::from_fn(q, q, |i, j| cov[i][j]);
                let chol = nalgebra::Cholesky::new(m).expect("covariance must be SPD");
                let normal = rand_distr::StandardNormal;
                let z = nalgebra::DVector::from_fn(q, |_, _| rng.sample::<f64, _>(normal));
                let shifted = chol.l() * z;
                mean.iter().zip(shifted.iter()).map(|(m, s)| m + s).collect()
            }
        }
    }
}

/// Synthetic distributions used by the experiments and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Binary, 1-d: `X|0 ~ U[-1,1]`, `X|1 ~ U[0,2]`, `P(Y=1) = 1/3`.
    Unif,
    /// Binary, 1-d: Gaussians at -1/2 and +1/2, `P(Y=1) = 1/2`.
    NormBal,
    /// Binary, 1-d: Gaussians at -1/2 and +1/2, `P(Y=1) = 1/5`.
    NormImbal,
    /// 3-class, 2-d Gaussians: priors (0.85, 0.1, 0.05), means (1,1), (0,0),
    /// (-1,-1), shared covariance [[5,1],[1,5]].
    ThreeClass2d,
    /// 3-class, 1-d Gaussians at -1, 0, 1 with unit variance, equal priors.
    ThreeClass1d,
    Custom {
        components: Vec<ClassDist>,
        priors: Vec<f64>,
    },
}

impl SyntheticSpec {
    pub fn components(&self) -> (Vec<ClassDist>, Vec<f64>) {
        match self {
            SyntheticSpec::Unif => (
                vec![
                    ClassDist::Uniform {
                        lo: vec![-1.0],
                        hi: vec![1.0],
                    },
                    ClassDist::Uniform {
                        lo: vec![0.0],
                        hi: vec![2.0],
                    },
                ],
                vec![2.0 / 3.0, 1.0 / 3.0],
            ),
            SyntheticSpec::NormBal => (
                vec![
                    ClassDist::Gaussian {
                        mean: vec![-0.5],
                        cov: vec![vec![1.0]],
                    },
                    ClassDist::Gaussian {
                        mean: vec![0.5],
                        cov: vec![vec![1.0]],
                    },
                ],
                vec![0.5, 0.5],
            ),
            SyntheticSpec::NormImbal => (
                vec![
                    ClassDist::Gaussian {
                        mean: vec![-0.5],
                        cov: vec![vec![1.0]],
                    },
                    ClassDist::Gaussian {
                        mean: vec![0.5],
                        cov: vec![vec![1.0]],
                    },
                ],
                vec![0.8, 0.2],
            ),
            SyntheticSpec::ThreeClass2d => {
                let cov = vec![vec![5.0, 1.0], vec![1.0, 5.0]];
                (
                    vec![
                        ClassDist::Gaussian {
                            mean: vec![1.0, 1.0],
                            cov: cov.clone(),
                        },
                        ClassDist::Gaussian {
                            mean: vec![0.0, 0.0],
                            cov: cov.clone(),
                        },
                        ClassDist::Gaussian {
                            mean: vec![-1.0, -1.0],
                            cov,
                        },
                    ],
                    vec![0.85, 0.1, 0.05],
                )
            }
            SyntheticSpec::ThreeClass1d => (
                vec![
                    ClassDist::Gaussian {
                        mean: vec![-1.0],
                        cov: vec![vec![1.0]],
                    },
                    ClassDist::Gaussian {
                        mean: vec![0.0],
                        cov: vec![vec![1.0]],
                    },
                    ClassDist::Gaussian {
                        mean: vec![1.0],
                        cov: vec![vec![1.0]],
                    },
                ],
                vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            ),
            SyntheticSpec::Custom { components, priors } => (components.clone(), priors.clone()),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.components().1.len()
    }

    pub fn dim(&self) -> usize {
        self.components().0[0].dim()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.components().1
    }
}

/// A finite sample: `N x q` features, labels in `[n]`, optional groups in
/// `[m]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub groups: Option<Vec<usize>>,
    n_classes: usize,
    n_groups: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::InvalidData(
                "features and labels differ in length".into(),
            ));
        }
        if let Some(g) = &groups {
            if g.len() != labels.len() {
                return Err(DataError::InvalidData(
                    "groups and labels differ in length".into(),
                ));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DataError::SchemaError(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features
            .iter()
            .any(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(DataError::InvalidData("non-finite feature".into()));
        }
        let q = features.first().map(|r| r.len()).unwrap_or(0);
        if features.iter().any(|r| r.len() != q) {
            return Err(DataError::InvalidData("ragged feature rows".into()));
        }
        let n_groups = groups
            .as_ref()
            .map(|g| g.iter().max().map(|&m| m + 1).unwrap_or(1))
            .unwrap_or(1);
        Ok(Dataset {
            features,
            labels,
            groups,
            n_classes,
            n_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn q(&self) -> usize {
        self.features.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        self.groups.as_ref().map(|g| g[i]).unwrap_or(0)
    }

    /// Empirical class priors.
    pub fn priors(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for &y in &self.labels {
            p[y] += 1.0;
        }
        let n = self.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Empirical group-class masses `mu[a][i] = P(A=a, Y=i)`, flattened
    /// group-major.
    pub fn group_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_groups * self.n_classes];
        for i in 0..self.len() {
            m[self.group_of(i) * self.n_classes + self.labels[i]] += 1.0;
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Draws `n` i.i.d. examples from `spec` with a dedicated seeded generator.
pub fn sample_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Dataset {
    assert!(n >= 1);
    let (components, priors) = spec.components();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = priors.len() - 1;
        for (k, &p) in priors.iter().enumerate() {
            acc += p;
            if u < acc {
                y = k;
                break;
            }
        }
        features.push(components[y].sample(&mut rng));
        labels.push(y);
    }
    Dataset::new(features, labels, None, priors.len()).expect("synthetic draw is always valid")
}

/// Closed-form conditional class probabilities
/// `eta_i(x) = pi_i p_i(x) / sum_j pi_j p_j(x)`; falls back to the uniform
/// vector where every class density vanishes.
pub fn exact_eta(spec: &SyntheticSpec, x: &[f64]) -> Vec<f64> {
    exact_eta_checked(spec, x).0
}

/// As [`exact_eta`], with a flag that is `false` when the point lies outside
/// every class support and the uniform fallback was used.
pub fn exact_eta_checked(spec: &SyntheticSpec, x: &[f64]) -> (Vec<f64>, bool) {
    let (components, priors) = spec.components();
    let mut w: Vec<f64> = components
        .iter()
        .zip(&priors)
        .map(|(c, &p)| p * c.density(x))
        .collect();
    let z: f64 = w.iter().sum();
    if z <= 0.0 {
        let n = w.len() as f64;
        return (vec![1.0 / n; w.len()], false);
    }
    w.iter_mut().for_each(|v| *v /= z);
    (w, true)
}

/// Expected CSV header: `f0,...,f{q-1},label[,group]`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Number of classes; inferred from the data when absent.
    pub n_classes: Option<usize>,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut label_col = None;
    let mut group_col = None;
    let mut feature_cols = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        match name {
            "label" => label_col = Some(idx),
            "group" => group_col = Some(idx),
            _ => {
                if name.starts_with('f') && name[1..].parse::<usize>().is_ok() {
                    feature_cols.push(idx);
                } else {
                    return Err(DataError::SchemaError(format!(
                        "unexpected column '{name}'"
                    )));
                }
            }
        }
    }
    let label_col =
        label_col.ok_or_else(|| DataError::SchemaError("missing 'label' column".into()))?;
    if feature_cols.is_empty() {
        return Err(DataError::SchemaError("no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = record
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    DataError::SchemaError(format!("bad float in column {c}"))
                })?;
            row.push(v);
        }
        let y: usize = record
            .get(label_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| DataError::SchemaError("non-integer label".into()))?;
        if let (Some(gs), Some(gc)) = (&mut groups, group_col) {
            let g: usize = record
                .get(gc)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| DataError::SchemaError("non-integer group".into()))?;
            gs.push(g);
        }
        features.push(row);
        labels.push(y);
    }
    let n_classes = match schema.n_classes {
        Some(n) => n,
        None => labels.iter().max().map(|&m| m + 1).unwrap_or(1),
    };
    Dataset::new(features, labels, groups, n_classes)
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let q = dataset.q();
    let mut header: Vec<String> = (0..q).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    if dataset.groups.is_some() {
        header.push("group".into());
    }
    writer.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.features[i].iter().map(|v| format!("{v}")).collect();
        rec.push(dataset.labels[i].to_string());
        if dataset.groups.is_some() {
            rec.push(dataset.group_of(i).to_string());
        }
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Deterministic stratified-by-label split; `fraction` of each class (rounded)
/// goes to the first returned dataset. Row order within each part follows the
/// original dataset.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    assert!((0.0..=1.0).contains(&fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut take = vec![false; dataset.len()];
    for class in 0..dataset.n_classes() {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        for &i in idx.iter().take(k) {
            take[i] = true;
        }
    }
    let pick = |keep: bool| -> Dataset {
        let sel: Vec<usize> = (0..dataset.len()).filter(|&i| take[i] == keep).collect();
        Dataset {
            features: sel.iter().map(|&i| dataset.features[i].clone()).collect(),
            labels: sel.iter().map(|&i| dataset.labels[i]).collect(),
            groups: dataset
                .groups
                .as_ref()
                .map(|g| sel.iter().map(|&i| g[i]).collect()),
            n_classes: dataset.n_classes,
            n_groups: dataset.n_groups,
        }
    };
    (pick(true), pick(false))
}
