//! Random-intercept linear mixed model by profiled maximum likelihood.
//!
//! The model is `y = X b + u_g + e` with `u_g ~ N(0, tau^2)` per
//! participant and `e ~ N(0, sigma^2)`. Writing `theta = tau^2 / sigma^2`,
//! both `b` and `sigma^2` profile out in closed form for fixed `theta`
//! (the per-group covariance inverse is `I - theta/(1 + theta n_g) J`),
//! leaving a 1-D likelihood maximized by golden-section search on
//! `log(theta)` over `[-12, 12]`. A boundary optimum returns the
//! `tau^2 = 0` fit with a flag.

use super::stats::{chi2_sf, normal_two_sided_p};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const LOG_THETA_LO: f64 = -12.0;
const LOG_THETA_HI: f64 = 12.0;

/// One estimated fixed effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub z_value: f64,
    /// Two-sided Wald p-value (normal reference).
    pub p_value: f64,
}

/// A fitted random-intercept model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmmFit {
    pub fixed_effects: Vec<FixedEffect>,
    /// Participant-intercept variance tau^2.
    pub var_random: f64,
    /// Residual variance sigma^2.
    pub var_resid: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub bic: f64,
    pub reml: bool,
    /// True when the variance optimum sat on the tau^2 = 0 boundary.
    pub boundary: bool,
}

impl LmmFit {
    pub fn effect(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed_effects.iter().find(|e| e.name == name)
    }

    pub fn term_names(&self) -> Vec<&str> {
        self.fixed_effects.iter().map(|e| e.name.as_str()).collect()
    }
}

/// Design-side input to the solver: response, dense design, group index
/// per row, column names.
pub struct LmmProblem<'a> {
    pub y: &'a [f64],
    pub x: &'a DMatrix<f64>,
    pub groups: &'a [usize],
    pub names: &'a [String],
}

struct GroupStats {
    /// Row ranges per group.
    rows: Vec<Vec<usize>>,
}

fn group_rows(groups: &[usize]) -> GroupStats {
    let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut rows = vec![Vec::new(); n_groups];
    for (i, &g) in groups.iter().enumerate() {
        rows[g].push(i);
    }
    rows.retain(|r| !r.is_empty());
    GroupStats { rows }
}

/// Profiled quantities at a fixed theta.
struct ProfiledFit {
    beta: DVector<f64>,
    sigma2: f64,
    loglik: f64,
    info: DMatrix<f64>,
}

fn profile_theta(
    y: &[f64],
    x: &DMatrix<f64>,
    stats: &GroupStats,
    theta: f64,
    reml: bool,
) -> Result<ProfiledFit> {
    let n = y.len();
    let p = x.ncols();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut yty = 0.0;
    let mut logdet_v = 0.0;
    for rows in &stats.rows {
        let ng = rows.len() as f64;
        let c = theta / (1.0 + theta * ng);
        logdet_v += (1.0 + theta * ng).ln();
        // group sums
        let mut xsum = DVector::<f64>::zeros(p);
        let mut ysum = 0.0;
        for &i in rows {
            let xi = x.row(i).transpose();
            let yi = y[i];
            a.syger(1.0, &xi, &xi, 1.0);
            b.axpy(yi, &xi, 1.0);
            yty += yi * yi;
            xsum += xi;
            ysum += yi;
        }
        a.syger(-c, &xsum, &xsum, 1.0);
        b.axpy(-c * ysum, &xsum, 1.0);
        yty -= c * ysum * ysum;
    }
    // syger fills the lower triangle; mirror it
    for i in 0..p {
        for j in i + 1..p {
            a[(i, j)] = a[(j, i)];
        }
    }

    let chol = a.clone().cholesky().ok_or_else(|| Error::RankDeficient {
        columns: vec!["<design matrix>".to_string()],
    })?;
    let beta = chol.solve(&b);
    let rss = (yty - 2.0 * beta.dot(&b) + (&a * &beta).dot(&beta)).max(1e-300);
    let (denom, extra) = if reml {
        let logdet_xvx = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
        ((n - p) as f64, logdet_xvx)
    } else {
        (n as f64, 0.0)
    };
    let sigma2 = rss / denom;
    let two_pi = 2.0 * std::f64::consts::PI;
    let loglik = -0.5 * (denom * two_pi.ln() + denom * sigma2.ln() + logdet_v + extra + denom);
    Ok(ProfiledFit {
        beta,
        sigma2,
        loglik,
        info: a,
    })
}

/// Check the design for collinear columns via pivoted Gram elimination;
/// returns the offending column names.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let p = x.ncols();
    let mut gram = x.transpose() * x;
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].max(1e-300)).collect();
    let mut dropped = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for j in 0..p {
        // residual diagonal after eliminating previously accepted columns
        let dj = gram[(j, j)];
        if dj <= 1e-10 * scale[j] {
            dropped.push(names[j].clone());
            continue;
        }
        active.push(j);
        // eliminate column j from the remaining Gram block
        for k in j + 1..p {
            let f = gram[(k, j)] / dj;
            for l in j..p {
                let v = gram[(j, l)];
                gram[(k, l)] -= f * v;
            }
        }
    }
    let _ = active;
    dropped
}

/// Fit by golden-section search over log(theta).
pub fn fit_lmm_design(problem: &LmmProblem<'_>, reml: bool) -> Result<LmmFit> {
    let n = problem.y.len();
    let p = problem.x.ncols();
    if n == 0 || p == 0 {
        return Err(Error::invalid("empty design"));
    }
    if problem.x.nrows() != n || problem.groups.len() != n {
        return Err(Error::invalid("design dimensions disagree"));
    }
    if n <= p {
        return Err(Error::invalid(format!(
            "need more observations ({n}) than fixed effects ({p})"
        )));
    }
    let stats = group_rows(problem.groups);
    let n_groups = stats.rows.len();
    if n_groups < 2 {
        return Err(Error::invalid("need at least 2 participant groups"));
    }
    let dropped = collinear_columns(problem.x, problem.names);
    if !dropped.is_empty() {
        return Err(Error::RankDeficient { columns: dropped });
    }

    // Maximize the profiled likelihood over log(theta) by bisecting the
    // sign of its derivative. The score is a ratio of residual
    // quantities, so it is invariant (to rounding) under affine outcome
    // transforms, which keeps estimates and t-statistics stable in the
    // last digits. By the envelope theorem,
    //   dl/dtheta = n/2 * sum_g (1'r_g)^2 / (1+theta n_g)^2 / RSS_V
    //               - 1/2 * sum_g n_g / (1+theta n_g)
    // (ML; the REML score carries the usual extra trace term, absorbed
    // here by profiling on the same objective evaluated numerically).
    let score = |log_theta: f64| -> Result<f64> {
        let theta = log_theta.exp();
        let fit = profile_theta(problem.y, problem.x, &stats, theta, reml)?;
        let chol = fit
            .info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("information matrix lost positive definiteness"))?;
        let mut quad = 0.0;
        let mut rss = 0.0;
        let mut trace = 0.0;
        let mut reml_term = 0.0;
        for rows in &stats.rows {
            let ng = rows.len() as f64;
            let c = theta / (1.0 + theta * ng);
            let w = 1.0 / ((1.0 + theta * ng) * (1.0 + theta * ng));
            let mut gsum = 0.0;
            let mut gsq = 0.0;
            let mut xsum = DVector::<f64>::zeros(p);
            for &i in rows {
                let mut r = problem.y[i];
                for j in 0..p {
                    r -= problem.x[(i, j)] * fit.beta[j];
                }
                gsum += r;
                gsq += r * r;
                xsum += problem.x.row(i).transpose();
            }
            rss += gsq - c * gsum * gsum;
            quad += gsum * gsum * w;
            trace += ng / (1.0 + theta * ng);
            if reml {
                // d/dtheta ln|X'V^-1 X| contributes
                // -sum_g s_g' A^-1 s_g / (1+theta n_g)^2
                reml_term += w * xsum.dot(&chol.solve(&xsum));
            }
        }
        let denom = if reml { (n - p) as f64 } else { n as f64 };
        Ok(theta * (0.5 * denom * quad / rss.max(1e-300) - 0.5 * trace + 0.5 * reml_term))
    };

    let mut boundary = false;
    let mut theta;
    let s_lo = score(LOG_THETA_LO)?;
    let s_hi = score(LOG_THETA_HI)?;
    if s_lo <= 0.0 {
        // likelihood decreasing from the left edge: boundary optimum
        theta = 0.0;
        boundary = true;
    } else if s_hi >= 0.0 {
        theta = LOG_THETA_HI.exp();
    } else {
        let mut lo = LOG_THETA_LO;
        let mut hi = LOG_THETA_HI;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if score(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        theta = (0.5 * (lo + hi)).exp();
    }

    // guard against a spurious interior crossing that is worse than the
    // tau^2 = 0 boundary
    let interior = profile_theta(problem.y, problem.x, &stats, theta, reml)?;
    let at_zero = profile_theta(problem.y, problem.x, &stats, 0.0, reml)?;
    let fit = if boundary || at_zero.loglik >= interior.loglik {
        boundary = true;
        theta = 0.0;
        at_zero
    } else {
        interior
    };

    let sigma2 = fit.sigma2;
    let tau2 = theta * sigma2;
    // cov(beta) = sigma^2 (X' V^-1 X)^-1
    let cov = fit
        .info
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numeric("information matrix is singular"))?
        * sigma2;
    let fixed_effects: Vec<FixedEffect> = (0..p)
        .map(|j| {
            let est = fit.beta[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = if se > 0.0 { est / se } else { 0.0 };
            FixedEffect {
                name: problem.names[j].clone(),
                estimate: est,
                std_err: se,
                z_value: z,
                p_value: normal_two_sided_p(z),
            }
        })
        .collect();

    // free parameters: p fixed effects + tau^2 + sigma^2
    let k = (p + 2) as f64;
    let bic = -2.0 * fit.loglik + k * (n as f64).ln();
    Ok(LmmFit {
        fixed_effects,
        var_random: tau2,
        var_resid: sigma2,
        loglik: fit.loglik,
        n_obs: n,
        n_groups,
        bic,
        reml,
        boundary,
    })
}

/// Likelihood-ratio test between nested ML fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn lrt(full: &LmmFit, reduced: &LmmFit) -> Result<LrtResult> {
    if full.reml || reduced.reml {
        return Err(Error::invalid(
            "likelihood-ratio tests require ML fits, not REML",
        ));
    }
    if full.n_obs != reduced.n_obs || full.n_groups != reduced.n_groups {
        return Err(Error::invalid("fits were not computed on the same rows"));
    }
    let full_names: std::collections::BTreeSet<&str> =
        full.fixed_effects.iter().map(|e| e.name.as_str()).collect();
    for e in &reduced.fixed_effects {
        if !full_names.contains(e.name.as_str()) {
            return Err(Error::invalid(format!(
                "reduced model term `{}` is not in the full model",
                e.name
            )));
        }
    }
    if reduced.fixed_effects.len() > full.fixed_effects.len() {
        return Err(Error::invalid("reduced model has more terms than the full model"));
    }
    let df = full.fixed_effects.len() - reduced.fixed_effects.len();
    let statistic = (2.0 * (full.loglik - reduced.loglik)).max(0.0);
    let p_value = if df == 0 {
        1.0
    } else {
        chi2_sf(statistic, df as f64)
    };
    Ok(LrtResult {
        statistic,
        df,
        p_value,
    })
}
