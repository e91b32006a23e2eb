//! Ellipsoid state and the minimal-volume update for half-space cuts through
//! the center.

use super::SolverError;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Ellipsoid `E(center, shape) = { x : (x - center)^T shape^{-1} (x - center) <= 1 }`
/// with a symmetric positive-definite shape matrix.
#[derive(Clone, Debug)]
pub struct EllipsoidState {
    center: Vec<f64>,
    shape: DMatrix<f64>,
}

impl EllipsoidState {
    /// Ball of the given radius around the origin.
    pub fn ball(dim: usize, radius: f64) -> Self {
        assert!(radius > 0.0 && dim >= 1);
        EllipsoidState {
            center: vec![0.0; dim],
            shape: DMatrix::identity(dim, dim) * radius * radius,
        }
    }

    pub fn new(center: Vec<f64>, shape: DMatrix<f64>) -> Result<Self, SolverError> {
        let dim = center.len();
        if shape.nrows() != dim || shape.ncols() != dim {
            return Err(SolverError::NumericalFailure {
                iteration: 0,
                message: "shape matrix dimension mismatch".into(),
            });
        }
        let sym_err = (&shape - shape.transpose()).abs().max();
        if sym_err > 1e-9 {
            return Err(SolverError::NumericalFailure {
                iteration: 0,
                message: format!("shape asymmetry {sym_err}"),
            });
        }
        Ok(EllipsoidState { center, shape })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// `0.5 * ln det(shape)`: the log-volume up to the unit-ball constant.
    pub fn log_volume(&self) -> f64 {
        let eig = SymmetricEigen::new(self.shape.clone());
        0.5 * eig.eigenvalues.iter().map(|&l| l.max(1e-300).ln()).sum::<f64>()
    }

    /// True when the shape matrix's condition number exceeds what the
    /// square-root factorization can resolve in double precision; further
    /// cuts are numerically meaningless.
    pub fn collapsed(&self) -> bool {
        let eig = SymmetricEigen::new(self.shape.clone());
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &l in eig.eigenvalues.iter() {
            lo = lo.min(l);
            hi = hi.max(l);
        }
        !(lo.is_finite() && hi.is_finite()) || lo <= 1e-12 * hi || lo <= 1e-100
    }

    /// Membership test with slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let d = DVector::from_fn(self.dim(), |i, _| x[i] - self.center[i]);
        let solved = self
            .shape
            .clone()
            .lu()
            .solve(&d)
            .expect("shape is invertible");
        d.dot(&solved) <= 1.0 + tol
    }

    fn sqrt_pair(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), SolverError> {
        let eig = SymmetricEigen::new(self.shape.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
            return Err(SolverError::NumericalFailure {
                iteration: 0,
                message: "shape matrix is not positive definite".into(),
            });
        }
        let q = &eig.eigenvectors;
        let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()));
        let inv_sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Ok((q * sqrt_l * q.transpose(), q * inv_sqrt_l * q.transpose()))
    }
}

/// Smallest ellipsoid containing the half `{ x : (x - center)^T w >= 0 }` of
/// the input ellipsoid. With ambient dimension `m` the construction uses
/// `t = 1/(m+1)`, `a = 1/(1-t)^2`, `b = (1-2t)/(1-t)^2`:
/// the new center is `center + t A^{1/2} w_hat` and the new shape is
/// `A^{1/2} ((1/a) w_hat w_hat^T + (1/b)(I - w_hat w_hat^T)) A^{1/2}`,
/// where `w_hat` normalizes `A^{1/2} w`.
pub fn jle(state: &EllipsoidState, w: &[f64]) -> Result<EllipsoidState, SolverError> {
    let m = state.dim();
    assert_eq!(w.len(), m);
    if w.iter().map(|v| v * v).sum::<f64>() <= 1e-300 {
        return Err(SolverError::ZeroCutDirection);
    }
    let (sqrt_a, _) = state.sqrt_pair()?;
    let wv = DVector::from_column_slice(w);
    let mut w_tilde = &sqrt_a * &wv;
    let norm = w_tilde.norm();
    if norm <= 1e-300 || !norm.is_finite() {
        return Err(SolverError::ZeroCutDirection);
    }
    w_tilde /= norm;

    let t = 1.0 / (m as f64 + 1.0);
    let a = 1.0 / ((1.0 - t) * (1.0 - t));
    let b = (1.0 - 2.0 * t) / ((1.0 - t) * (1.0 - t));

    let center_shift = &sqrt_a * &w_tilde * t;
    let center: Vec<f64> = state
        .center
        .iter()
        .zip(center_shift.iter())
        .map(|(c, s)| c + s)
        .collect();

    let outer = &w_tilde * w_tilde.transpose();
    let eye = DMatrix::identity(m, m);
    // inverse of the whitened shape is a * outer + b * (I - outer); invert in
    // closed form before un-whitening
    let b_matrix = outer.clone() / a + (eye - outer) / b;
    let mut shape = &sqrt_a * b_matrix * &sqrt_a;
    // symmetrize against floating-point drift
    shape = (shape.clone() + shape.transpose()) * 0.5;

    let out = EllipsoidState { center, shape };
    let eig_ok = SymmetricEigen::new(out.shape.clone())
        .eigenvalues
        .iter()
        .all(|&l| l > 0.0 && l.is_finite());
    if !eig_ok {
        return Err(SolverError::NumericalFailure {
            iteration: 0,
            message: "updated shape is not positive definite".into(),
        });
    }
    Ok(out)
}

/// Closed-form volume ratio of one cut: `vol(E') / vol(E) =
/// (m/(m+1)) * (m^2/(m^2-1))^{(m-1)/2}`.
pub fn jle_volume_ratio(m: usize) -> f64 {
    let mf = m as f64;
    (mf / (mf + 1.0)) * (mf * mf / (mf * mf - 1.0)).powf((mf - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_checked_two_dimensional_cut() {
        let state = EllipsoidState::ball(2, 1.0);
        let next = jle(&state, &[1.0, 0.0]).unwrap();
        // t = 1/3, a = 9/4, b = 3/4
        assert_abs_diff_eq!(next.center()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.center()[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.shape()[(0, 0)], 4.0 / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.shape()[(1, 1)], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.shape()[(0, 1)], 0.0, epsilon = 1e-12);
    }

    fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        &raw * raw.transpose() + DMatrix::identity(m, m) * 0.3
    }

    #[test]
    fn volume_ratio_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for m in 2..=6 {
            for _ in 0..20 {
                let shape = random_spd(&mut rng, m);
                let center: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let state = EllipsoidState::new(center, shape).unwrap();
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let next = jle(&state, &w).unwrap();
                let ratio = ((next.log_volume() - state.log_volume())).exp();
                assert_abs_diff_eq!(ratio, jle_volume_ratio(m), epsilon = 1e-10);
                assert!(ratio <= (-1.0 / (2.0 * m as f64)).exp());
            }
        }
    }

    #[test]
    fn cut_half_is_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for m in [2usize, 3, 5] {
            let shape = random_spd(&mut rng, m);
            let center: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let state = EllipsoidState::new(center.clone(), shape).unwrap();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let next = jle(&state, &w).unwrap();
            let (sqrt_a, _) = state.sqrt_pair().unwrap();
            let mut kept = 0;
            while kept < 1000 {
                // uniform point in the unit ball, mapped into E(center, A)
                let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
                    continue;
                }
                let uv = DVector::from_column_slice(&u);
                let x = &sqrt_a * uv;
                let x: Vec<f64> = x.iter().zip(&center).map(|(a, c)| a + c).collect();
                let side: f64 = x
                    .iter()
                    .zip(&center)
                    .zip(&w)
                    .map(|((xi, ci), wi)| (xi - ci) * wi)
                    .sum();
                if side < 0.0 {
                    continue;
                }
                kept += 1;
                assert!(next.contains(&x, 1e-9), "escaped point {x:?}");
            }
        }
    }

    #[test]
    fn zero_direction_is_rejected() {
        let state = EllipsoidState::ball(3, 1.0);
        assert!(matches!(
            jle(&state, &[0.0, 0.0, 0.0]),
            Err(SolverError::ZeroCutDirection)
        ));
    }
}
