//! Simulation metrics: dominant eigenvalue error and RMSE of fitted means.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
const MAX_POWER_ITERS: usize = 100_000;

/// Perron root of a nonnegative square matrix by power iteration on
/// `A + I`, stopped when the Collatz–Wielandt bounds meet.
pub fn spectral_radius(matrix: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Dimension("matrix must be square".into()));
    }
    if matrix.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("entries must be finite and nonnegative".into()));
    }
    if n == 0 || matrix.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    // The unit shift makes the Perron root strictly dominant even for
    // periodic matrices.
    let shifted = matrix + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..MAX_POWER_ITERS {
        let y = &shifted * &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            if x[i] > 0.0 {
                let r = y[i] / x[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let norm = y.norm();
        estimate = x.dot(&y) / x.dot(&x);
        x = y / norm;
        if hi - lo <= tol * hi {
            return Ok(0.5 * (lo + hi) - 1.0);
        }
    }
    Ok(estimate - 1.0)
}

fn check_shapes(pi_hat: &[DMatrix<f64>], pi_true: &[DMatrix<f64>]) -> Result<()> {
    if pi_hat.len() != pi_true.len() || pi_hat.is_empty() {
        return Err(Error::Dimension(format!(
            "{} fitted and {} true layers",
            pi_hat.len(),
            pi_true.len()
        )));
    }
    if pi_hat.iter().zip(pi_true).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Dimension("layer matrices differ in shape".into()));
    }
    Ok(())
}

/// Mean over layers of the difference in dominant eigenvalues.
pub fn eigen_error_mean(pi_hat: &[DMatrix<f64>], pi_true: &[DMatrix<f64>]) -> Result<f64> {
    check_shapes(pi_hat, pi_true)?;
    let mut total = 0.0;
    for (a, b) in pi_hat.iter().zip(pi_true) {
        total += spectral_radius(a, DEFAULT_EIGEN_TOL)? - spectral_radius(b, DEFAULT_EIGEN_TOL)?;
    }
    Ok(total / pi_hat.len() as f64)
}

/// Root mean squared error of the fitted mean at dyad `(i, j)` across layers.
pub fn rmse_pi(pi_hat: &[DMatrix<f64>], pi_true: &[DMatrix<f64>], dyad: (usize, usize)) -> Result<f64> {
    check_shapes(pi_hat, pi_true)?;
    let (i, j) = dyad;
    if i == j {
        return Err(Error::Domain(format!("({i}, {j}) is not a dyad")));
    }
    let n = pi_hat[0].nrows();
    if i >= n || j >= n {
        return Err(Error::Dimension(format!("dyad ({i}, {j}) outside {n} nodes")));
    }
    let sq: f64 = pi_hat.iter().zip(pi_true).map(|(a, b)| (a[(i, j)] - b[(i, j)]).powi(2)).sum();
    Ok((sq / pi_hat.len() as f64).sqrt())
}
