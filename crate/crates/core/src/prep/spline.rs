//! Cubic smoothing spline with an effective-degrees-of-freedom target.
//!
//! The fit minimizes `sum_i (y_i - f(x_i))^2 + lambda * int f''(x)^2 dx`
//! over natural cubic splines. Following Reinsch, the fitted values are
//! `f = y - lambda * Q * gamma` with `(R + lambda * Q'Q) gamma = Q'y`,
//! where `Q` (n x (n-2)) holds divided second differences and `R` is the
//! tridiagonal Gram matrix of the natural spline basis.
//!
//! The penalty `lambda` is not user-facing: it is chosen by bisection on
//! `log(lambda)` so that the trace of the smoother matrix
//! `S = (I + lambda K)^{-1}`, `K = Q R^{-1} Q'`, hits a requested value.
//! The trace is evaluated through the eigenvalues of `K`
//! (`tr S = sum_i 1 / (1 + lambda d_i)`), computed once per grid; the
//! per-curve solve stays O(n) thanks to the pentadiagonal structure of
//! `R + lambda Q'Q`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Tolerance on the achieved trace (effective df).
const DF_TOL: f64 = 0.01;

/// Bisection bracket on log(lambda).
const LOG_LAMBDA_LO: f64 = -20.0;
const LOG_LAMBDA_HI: f64 = 20.0;

/// A smoothing spline fitted to a fixed grid and df target.
///
/// Building one costs an `O(n^3)` eigendecomposition; applying it to a
/// curve is `O(n)`. Construct once per grid and reuse across curves.
#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    grid: Vec<f64>,
    h: Vec<f64>,
    lambda: f64,
    df: f64,
}

impl SmoothingSpline {
    /// Fit the penalty so that the smoother-matrix trace equals
    /// `target_df` within 0.01.
    pub fn new(grid: &[f64], target_df: f64) -> Result<Self> {
        let n = grid.len();
        if n < 4 {
            return Err(Error::invalid(format!(
                "smoothing spline needs at least 4 points, got {n}"
            )));
        }
        for i in 1..n {
            if !(grid[i] > grid[i - 1]) {
                return Err(Error::invalid("grid must be strictly increasing"));
            }
        }
        if !(target_df > 2.0 && target_df < n as f64) {
            return Err(Error::invalid(format!(
                "target df {target_df} outside the attainable range (2, {n})"
            )));
        }
        let h: Vec<f64> = (0..n - 1).map(|i| grid[i + 1] - grid[i]).collect();
        let penalty_eigs = penalty_eigenvalues(grid, &h);

        let df_at = |log_lambda: f64| -> f64 {
            let lambda = log_lambda.exp();
            penalty_eigs.iter().map(|d| 1.0 / (1.0 + lambda * d)).sum()
        };

        // trace is monotone decreasing in lambda
        let df_lo = df_at(LOG_LAMBDA_LO);
        let df_hi = df_at(LOG_LAMBDA_HI);
        if !(df_lo >= target_df && df_hi <= target_df) {
            return Err(Error::numeric(format!(
                "df target {target_df} not bracketed: trace at log lambda {LOG_LAMBDA_LO} is \
                 {df_lo:.4}, at {LOG_LAMBDA_HI} is {df_hi:.4}"
            )));
        }

        let mut lo = LOG_LAMBDA_LO;
        let mut hi = LOG_LAMBDA_HI;
        let mut mid = 0.5 * (lo + hi);
        let mut df_mid = df_at(mid);
        for _ in 0..200 {
            if (df_mid - target_df).abs() <= DF_TOL {
                break;
            }
            if df_mid > target_df {
                lo = mid;
            } else {
                hi = mid;
            }
            mid = 0.5 * (lo + hi);
            df_mid = df_at(mid);
        }
        if (df_mid - target_df).abs() > DF_TOL {
            return Err(Error::numeric(format!(
                "bisection failed to reach df {target_df} within {DF_TOL}; \
                 bracket [{lo}, {hi}], trace {df_mid:.6}"
            )));
        }

        Ok(SmoothingSpline {
            grid: grid.to_vec(),
            h,
            lambda: mid.exp(),
            df: df_mid,
        })
    }

    /// The fitted penalty.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The achieved trace of the smoother matrix.
    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Smooth one curve sampled on the spline's grid.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        if values.len() != n {
            return Err(Error::invalid(format!(
                "curve length {} does not match grid length {n}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve contains non-finite values"));
        }
        let m = n - 2;
        let h = &self.h;

        // rhs = Q' y (divided second differences)
        let mut rhs = vec![0.0; m];
        for j in 0..m {
            rhs[j] = (values[j + 2] - values[j + 1]) / h[j + 1] - (values[j + 1] - values[j]) / h[j];
        }

        // M = R + lambda Q'Q, pentadiagonal SPD; band Cholesky in-place.
        let (d0, d1, d2) = self.band_matrix();
        let gamma = solve_banded_spd(&d0, &d1, &d2, &rhs)?;

        // f = y - lambda Q gamma
        let mut fitted = values.to_vec();
        for j in 0..m {
            let g = self.lambda * gamma[j];
            fitted[j] -= g / h[j];
            fitted[j + 1] += g * (1.0 / h[j] + 1.0 / h[j + 1]);
            fitted[j + 2] -= g / h[j + 1];
        }
        Ok(fitted)
    }

    /// Diagonals (main, first, second) of `R + lambda Q'Q`.
    fn band_matrix(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = &self.h;
        let m = self.grid.len() - 2;
        let lam = self.lambda;
        // Column j of Q has entries 1/h_j at row j, -(1/h_j + 1/h_{j+1})
        // at row j+1, 1/h_{j+1} at row j+2.
        let q = |row: isize, col: isize| -> f64 {
            if col < 0 || col >= m as isize {
                return 0.0;
            }
            let j = col as usize;
            match row - col {
                0 => 1.0 / h[j],
                1 => -(1.0 / h[j] + 1.0 / h[j + 1]),
                2 => 1.0 / h[j + 1],
                _ => 0.0,
            }
        };
        let mut d0 = vec![0.0; m];
        let mut d1 = vec![0.0; m.saturating_sub(1)];
        let mut d2 = vec![0.0; m.saturating_sub(2)];
        for j in 0..m {
            let jj = j as isize;
            let mut acc = 0.0;
            for row in jj..=jj + 2 {
                acc += q(row, jj) * q(row, jj);
            }
            d0[j] = (h[j] + h[j + 1]) / 3.0 + lam * acc;
            if j + 1 < m {
                let mut acc = 0.0;
                for row in jj + 1..=jj + 2 {
                    acc += q(row, jj) * q(row, jj + 1);
                }
                d1[j] = h[j + 1] / 6.0 + lam * acc;
            }
            if j + 2 < m {
                d2[j] = lam * q(jj + 2, jj) * q(jj + 2, jj + 2);
            }
        }
        (d0, d1, d2)
    }
}

/// Eigenvalues of the penalty matrix `K = Q R^{-1} Q'`.
///
/// `K` is formed densely (it is not banded) and handed to a symmetric
/// eigensolver; only the values are needed.
fn penalty_eigenvalues(grid: &[f64], h: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let m = n - 2;

    // R: tridiagonal (m x m)
    let r_diag: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
    let r_off: Vec<f64> = (0..m - 1).map(|j| h[j + 1] / 6.0).collect();

    // W = R^{-1} Q': solve R w_col = q'_col for each of the n columns.
    // Column c of Q' is column c of Q transposed: entries live at rows
    // c-2, c-1, c (clipped to the valid range).
    let mut w = DMatrix::<f64>::zeros(m, n);
    let mut rhs = vec![0.0; m];
    for c in 0..n {
        for v in rhs.iter_mut() {
            *v = 0.0;
        }
        let c = c as isize;
        for j in c - 2..=c {
            if j < 0 || j >= m as isize {
                continue;
            }
            let ju = j as usize;
            let val = match c - j {
                0 => 1.0 / h[ju],
                1 => -(1.0 / h[ju] + 1.0 / h[ju + 1]),
                2 => 1.0 / h[ju + 1],
                _ => unreachable!(),
            };
            rhs[ju] = val;
        }
        let sol = solve_tridiagonal(&r_diag, &r_off, &rhs);
        for j in 0..m {
            w[(j, c as usize)] = sol[j];
        }
    }

    // K = Q W, built row by row (row i of Q touches columns i-2..=i).
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let ii = i as isize;
        for j in ii - 2..=ii {
            if j < 0 || j >= m as isize {
                continue;
            }
            let ju = j as usize;
            let qij = match ii - j {
                0 => 1.0 / h[ju],
                1 => -(1.0 / h[ju] + 1.0 / h[ju + 1]),
                2 => 1.0 / h[ju + 1],
                _ => unreachable!(),
            };
            for c in 0..n {
                k[(i, c)] += qij * w[(ju, c)];
            }
        }
    }
    // symmetrize away roundoff
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = avg;
            k[(j, i)] = avg;
        }
    }

    let mut eigs: Vec<f64> = k.symmetric_eigenvalues().iter().copied().collect();
    for e in eigs.iter_mut() {
        if *e < 0.0 {
            *e = 0.0;
        }
    }
    eigs
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = off.first().copied().unwrap_or(0.0) / diag[0];
    d[0] = rhs[0] / diag[0];
    for j in 1..m {
        let denom = diag[j] - off[j - 1] * c[j - 1];
        if j < m - 1 {
            c[j] = off[j] / denom;
        }
        d[j] = (rhs[j] - off[j - 1] * d[j - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for j in (0..m - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    x
}

/// Cholesky solve for an SPD pentadiagonal system given its three
/// diagonals (main, first off, second off).
fn solve_banded_spd(d0: &[f64], d1: &[f64], d2: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = d0.len();
    // L stored as three diagonals: l0 (main), l1, l2.
    let mut l0 = vec![0.0; m];
    let mut l1 = vec![0.0; m.saturating_sub(1)];
    let mut l2 = vec![0.0; m.saturating_sub(2)];
    for j in 0..m {
        let mut sum = d0[j];
        if j >= 1 {
            sum -= l1[j - 1] * l1[j - 1];
        }
        if j >= 2 {
            sum -= l2[j - 2] * l2[j - 2];
        }
        if sum <= 0.0 {
            return Err(Error::numeric(
                "banded Cholesky broke down; penalty matrix not positive definite",
            ));
        }
        l0[j] = sum.sqrt();
        if j + 1 < m {
            let mut s = d1[j];
            if j >= 1 {
                s -= l1[j - 1] * l2[j - 1];
            }
            l1[j] = s / l0[j];
        }
        if j + 2 < m {
            l2[j] = d2[j] / l0[j];
        }
    }
    // forward substitution L z = rhs
    let mut z = vec![0.0; m];
    for j in 0..m {
        let mut s = rhs[j];
        if j >= 1 {
            s -= l1[j - 1] * z[j - 1];
        }
        if j >= 2 {
            s -= l2[j - 2] * z[j - 2];
        }
        z[j] = s / l0[j];
    }
    // back substitution L' x = z
    let mut x = vec![0.0; m];
    for j in (0..m).rev() {
        let mut s = z[j];
        if j + 1 < m {
            s -= l1[j] * x[j + 1];
        }
        if j + 2 < m {
            s -= l2[j] * x[j + 2];
        }
        x[j] = s / l0[j];
    }
    Ok(x)
}
