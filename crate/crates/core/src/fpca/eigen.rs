//! Symmetric eigendecomposition via Householder tridiagonalization and
//! the implicit-shift QL iteration (the classical EISPACK tred2/tql2
//! pair, via its JAMA translation).
//!
//! Rank-deficient covariance matrices with exact-zero blocks are routine
//! inputs here, and this formulation handles them without producing
//! NaNs.

/// Eigenpairs of a symmetric matrix, eigenvalues non-increasing.
pub(crate) struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Decompose a symmetric matrix given as row-major storage.
pub(crate) fn symmetric_eigen(matrix: &[f64], n: usize) -> SymEigen {
    debug_assert_eq!(matrix.len(), n * n);
    let mut evec = matrix.to_vec();
    let mut eval = vec![0.0; n];
    let mut work = vec![0.0; n];
    tred2(&mut eval, &mut evec, &mut work, n);
    tql2(&mut eval, &mut evec, &mut work, n);
    // tql2 leaves eigenvalues ascending; report them descending
    let values: Vec<f64> = eval.iter().rev().copied().collect();
    let vectors: Vec<Vec<f64>> = (0..n)
        .rev()
        .map(|col| (0..n).map(|row| evec[row * n + col]).collect())
        .collect();
    SymEigen { values, vectors }
}

/// Householder reduction to tridiagonal form (Algol tred2 by Bowdler,
/// Martin, Reinsch and Wilkinson; EISPACK/JAMA lineage).
#[allow(clippy::needless_range_loop)]
fn tred2(eval: &mut [f64], evec: &mut [f64], work: &mut [f64], n: usize) {
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        eval[j] = evec[at(n - 1, j)];
    }

    for i in (1..n).rev() {
        // scale to avoid under/overflow
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += eval[k].abs();
        }
        if scale == 0.0 {
            work[i] = eval[i - 1];
            for j in 0..i {
                eval[j] = evec[at(i - 1, j)];
                evec[at(i, j)] = 0.0;
                evec[at(j, i)] = 0.0;
            }
        } else {
            // generate Householder vector
            for k in 0..i {
                eval[k] /= scale;
                h += eval[k] * eval[k];
            }
            let mut f = eval[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            work[i] = scale * g;
            h -= f * g;
            eval[i - 1] = f - g;
            for j in 0..i {
                work[j] = 0.0;
            }
            // apply similarity transformation to remaining columns
            for j in 0..i {
                f = eval[j];
                evec[at(j, i)] = f;
                g = work[j] + evec[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += evec[at(k, j)] * eval[k];
                    work[k] += evec[at(k, j)] * f;
                }
                work[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                work[j] /= h;
                f += work[j] * eval[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                work[j] -= hh * eval[j];
            }
            for j in 0..i {
                f = eval[j];
                g = work[j];
                for k in j..i {
                    evec[at(k, j)] -= f * work[k] + g * eval[k];
                }
                eval[j] = evec[at(i - 1, j)];
                evec[at(i, j)] = 0.0;
            }
        }
        eval[i] = h;
    }

    // accumulate transformations
    for i in 0..n - 1 {
        evec[at(n - 1, i)] = evec[at(i, i)];
        evec[at(i, i)] = 1.0;
        let h = eval[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                eval[k] = evec[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += evec[at(k, i + 1)] * evec[at(k, j)];
                }
                for k in 0..=i {
                    evec[at(k, j)] -= g * eval[k];
                }
            }
        }
        for k in 0..=i {
            evec[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        eval[j] = evec[at(n - 1, j)];
        evec[at(n - 1, j)] = 0.0;
    }
    evec[at(n - 1, n - 1)] = 1.0;
    work[0] = 0.0;
}

/// Implicit-shift QL iteration on the tridiagonal form (Algol tql2;
/// EISPACK/JAMA lineage). Leaves eigenvalues ascending with matching
/// eigenvector columns.
#[allow(clippy::needless_range_loop)]
fn tql2(eval: &mut [f64], evec: &mut [f64], work: &mut [f64], n: usize) {
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        work[i - 1] = work[i];
    }
    work[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(eval[l].abs() + work[l].abs());
        let mut m = l;
        while m < n {
            if work[m].abs() <= f64::EPSILON * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                // implicit shift
                let mut g = eval[l];
                let mut p = (eval[l + 1] - g) / (2.0 * work[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                eval[l] = work[l] / (p + r);
                eval[l + 1] = work[l] * (p + r);
                let eval_lp1 = eval[l + 1];
                let mut h = g - eval[l];
                for i in (l + 2)..n {
                    eval[i] -= h;
                }
                f += h;

                // implicit QL transformation
                p = eval[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let work_lp1 = work[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * work[i];
                    h = c * p;
                    r = p.hypot(work[i]);
                    work[i + 1] = s * r;
                    s = work[i] / r;
                    c = p / r;
                    p = c * eval[i] - s * g;
                    eval[i + 1] = h + s * (c * g + s * eval[i]);
                    for k in 0..n {
                        h = evec[at(k, i + 1)];
                        evec[at(k, i + 1)] = s * evec[at(k, i)] + c * h;
                        evec[at(k, i)] = c * evec[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * work_lp1 * work[l] / eval_lp1;
                work[l] = s * p;
                eval[l] = c * p;

                if work[l].abs() <= f64::EPSILON * tst1 {
                    break;
                }
            }
        }
        eval[l] += f;
        work[l] = 0.0;
    }

    // sort ascending, carrying the vectors
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = eval[i];
        for j in (i + 1)..n {
            if eval[j] < p {
                k = j;
                p = eval[j];
            }
        }
        if k != i {
            eval[k] = eval[i];
            eval[i] = p;
            for j in 0..n {
                evec.swap(at(j, i), at(j, k));
            }
        }
    }
}
