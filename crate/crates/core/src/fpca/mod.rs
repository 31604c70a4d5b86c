//! Functional PCA of momenta fields.
//!
//! Univariate decompositions run separately on the temporal (x) and
//! amplitude (y) momentum domains under trapezoid quadrature; the
//! multivariate combination eigen-analyzes the stacked score covariance
//! and expresses multivariate eigenfunctions and scores as linear
//! combinations of the univariate ones. A concatenated-domain UFPCA is
//! provided as the comparison baseline.

mod eigen;
pub mod export;

use crate::error::{Error, Result};
use crate::geodesics::{MomentaField, Period};
use crate::grid::trapezoid_weights;
use crate::vec2::Vec2;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which functional domain a sample lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainLabel {
    /// Temporal-shift momenta.
    X,
    /// Amplitude momenta.
    Y,
    /// X and Y joined end to end.
    Concatenated,
}

/// A sample of n functions observed on a shared grid.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    pub grid: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// n x P matrix of function values.
    pub data: DMatrix<f64>,
    pub domain: DomainLabel,
    /// Optional participant ids, one per row.
    pub row_ids: Option<Vec<String>>,
}

impl FunctionalSample {
    pub fn new(grid: Vec<f64>, data: DMatrix<f64>, domain: DomainLabel) -> Result<Self> {
        if grid.len() != data.ncols() {
            return Err(Error::invalid(format!(
                "grid length {} does not match data columns {}",
                grid.len(),
                data.ncols()
            )));
        }
        if data.nrows() < 2 {
            return Err(Error::invalid("functional sample needs at least 2 rows"));
        }
        let quad_weights = trapezoid_weights(&grid);
        Ok(FunctionalSample {
            grid,
            quad_weights,
            data,
            domain,
            row_ids: None,
        })
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.data.nrows() {
            return Err(Error::invalid("row id count does not match data rows"));
        }
        self.row_ids = Some(ids);
        Ok(self)
    }

    /// Build the x- or y-domain sample from a set of momenta fields.
    ///
    /// All fields must share the control-point count; the functional
    /// grid is the control points' x-abscissae taken from the first
    /// field (shared across subjects on the common minute grid).
    pub fn from_momenta(fields: &[MomentaField], domain: DomainLabel) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::invalid("need at least 2 momenta fields"));
        }
        let p = fields[0].control_points.len();
        let grid: Vec<f64> = fields[0].control_points.iter().map(|q| q.x).collect();
        let mut data = DMatrix::zeros(fields.len(), p);
        let mut ids = Vec::with_capacity(fields.len());
        for (i, f) in fields.iter().enumerate() {
            if f.momenta.len() != p {
                return Err(Error::invalid(
                    "momenta fields disagree on control point count",
                ));
            }
            for (j, m) in f.momenta.iter().enumerate() {
                data[(i, j)] = match domain {
                    DomainLabel::X => m.x,
                    DomainLabel::Y => m.y,
                    DomainLabel::Concatenated => {
                        return Err(Error::invalid(
                            "build concatenated samples via concat_ufpca",
                        ))
                    }
                };
            }
            ids.push(f.participant_id.clone());
        }
        FunctionalSample::new(grid, data, domain)?.with_row_ids(ids)
    }
}

/// A fitted univariate FPCA model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaModel {
    pub domain: DomainLabel,
    pub grid: Vec<f64>,
    pub quad_weights: Vec<f64>,
    pub mean: Vec<f64>,
    /// K x P, row k is the k-th eigenfunction.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Retained eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum (all nonnegative eigenvalues), for variance
    /// accounting.
    pub spectrum: Vec<f64>,
    /// n x K scores, one row per subject.
    pub scores: Vec<Vec<f64>>,
    /// Cumulative proportion of variance explained per retained
    /// component.
    pub pve: Vec<f64>,
    pub row_ids: Option<Vec<String>>,
    /// Split position when the domain is `Concatenated`: the x-domain
    /// occupies grid indices `0..split`.
    pub concat_split: Option<usize>,
    /// Count of tiny negative eigenvalues clipped to zero.
    pub clipped_negatives: usize,
}

impl FpcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.scores.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    /// Reconstruct subject `i` from the leading `m` components.
    pub fn reconstruct(&self, subject: usize, m: usize) -> Result<Vec<f64>> {
        if subject >= self.n_subjects() {
            return Err(Error::invalid(format!("subject {subject} out of range")));
        }
        if m > self.n_components() {
            return Err(Error::invalid(format!(
                "truncation {m} exceeds retained components {}",
                self.n_components()
            )));
        }
        let mut out = self.mean.clone();
        for k in 0..m {
            let s = self.scores[subject][k];
            for (o, phi) in out.iter_mut().zip(&self.eigenfunctions[k]) {
                *o += s * phi;
            }
        }
        Ok(out)
    }

    /// Per-domain slices of eigenfunction `k` for concatenated models.
    pub fn eigenfunction_slices(&self, k: usize) -> Result<(&[f64], &[f64])> {
        let split = self
            .concat_split
            .ok_or_else(|| Error::invalid("not a concatenated model"))?;
        let ef = self
            .eigenfunctions
            .get(k)
            .ok_or_else(|| Error::invalid(format!("component {k} out of range")))?;
        Ok((&ef[..split], &ef[split..]))
    }
}

/// Univariate FPCA under trapezoid quadrature.
///
/// Eigenpairs come from the weighted covariance eigenproblem: with
/// `W = diag(w)`, eigendecompose `W^{1/2} Cov W^{1/2}` and map the
/// eigenvectors back by `W^{-1/2}`. `K` is the smallest count whose
/// cumulative variance fraction reaches `pve_target`; each
/// eigenfunction's sign is fixed so its largest-magnitude coordinate is
/// positive.
pub fn ufpca(sample: &FunctionalSample, pve_target: f64) -> Result<FpcaModel> {
    if !(pve_target > 0.0 && pve_target <= 1.0) {
        return Err(Error::invalid("pve_target must lie in (0, 1]"));
    }
    let n = sample.data.nrows();
    let p = sample.data.ncols();
    if n < 2 {
        return Err(Error::invalid("ufpca needs at least 2 subjects"));
    }

    let mean: Vec<f64> = (0..p)
        .map(|j| sample.data.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let mut centered = sample.data.clone();
    for i in 0..n {
        for j in 0..p {
            centered[(i, j)] -= mean[j];
        }
    }

    // B = W^{1/2} Cov W^{1/2} via the scaled data matrix
    let sqrt_w: Vec<f64> = sample.quad_weights.iter().map(|w| w.sqrt()).collect();
    let mut scaled = centered.clone();
    for j in 0..p {
        for i in 0..n {
            scaled[(i, j)] *= sqrt_w[j];
        }
    }
    let b = scaled.transpose() * &scaled / (n as f64 - 1.0);

    let eig = eigen::symmetric_eigen(b.as_slice(), p);

    let mut clipped = 0usize;
    let mut spectrum: Vec<f64> = Vec::with_capacity(p);
    for &v in &eig.values {
        if v < 0.0 {
            spectrum.push(0.0);
            clipped += 1;
        } else {
            spectrum.push(v);
        }
    }
    // numerical zeros: eigenvalues indistinguishable from roundoff in
    // the eigensolve count as no variance at all
    let raw_scale = sample.data.iter().map(|v| v * v).sum::<f64>() / (n * p) as f64;
    let floor = 1e-14 * spectrum.first().copied().unwrap_or(0.0).max(raw_scale);
    for v in spectrum.iter_mut() {
        if *v < floor {
            *v = 0.0;
        }
    }
    let total: f64 = spectrum.iter().sum();

    // K = smallest count reaching the PVE target; zero-variance data
    // keeps no components
    let k = select_pve_count(&spectrum, pve_target);

    let mut eigenfunctions = Vec::with_capacity(k);
    let mut scores = vec![vec![0.0; k]; n];
    let mut pve = Vec::with_capacity(k);
    let mut cum = 0.0;
    for rank in 0..k {
        let u = &eig.vectors[rank];
        let mut phi: Vec<f64> = (0..p).map(|j| u[j] / sqrt_w[j]).collect();
        // sign convention: largest-|coordinate| positive
        let mut flip = false;
        let mut best = 0.0;
        for &v in &phi {
            if v.abs() > best {
                best = v.abs();
                flip = v < 0.0;
            }
        }
        if flip {
            for v in phi.iter_mut() {
                *v = -*v;
            }
        }
        // scores xi_{i,k} = sum_p w_p (X_i(p) - mu(p)) phi_k(p)
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..p {
                s += sample.quad_weights[j] * centered[(i, j)] * phi[j];
            }
            scores[i][rank] = s;
        }
        eigenfunctions.push(phi);
        cum += spectrum[rank];
        pve.push(cum / total);
    }

    Ok(FpcaModel {
        domain: sample.domain,
        grid: sample.grid.clone(),
        quad_weights: sample.quad_weights.clone(),
        mean,
        eigenfunctions,
        eigenvalues: spectrum[..k].to_vec(),
        spectrum,
        scores,
        pve,
        row_ids: sample.row_ids.clone(),
        concat_split: None,
        clipped_negatives: clipped,
    })
}

/// A fitted multivariate FPCA model combining the x and y domains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfpcaModel {
    /// Weights of the x-domain univariate eigenfunctions: K1 x L.
    pub weights_x: Vec<Vec<f64>>,
    /// Weights of the y-domain univariate eigenfunctions: K2 x L.
    pub weights_y: Vec<Vec<f64>>,
    /// Retained multivariate eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum of the stacked score covariance.
    pub spectrum: Vec<f64>,
    /// L x P multivariate eigenfunctions per domain.
    pub eigenfunctions_x: Vec<Vec<f64>>,
    pub eigenfunctions_y: Vec<Vec<f64>>,
    /// n x L multivariate scores.
    pub scores: Vec<Vec<f64>>,
    /// Cumulative PVE per retained component.
    pub pve: Vec<f64>,
    pub l: usize,
    pub grid: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub row_ids: Option<Vec<String>>,
}

impl MfpcaModel {
    pub fn n_subjects(&self) -> usize {
        self.scores.len()
    }

    /// One-SD scale of mode `l` (1-based): `sqrt(nu_l)`.
    pub fn mode_scale(&self, l: usize) -> Result<f64> {
        if l == 0 || l > self.l {
            return Err(Error::invalid(format!("component {l} out of range")));
        }
        Ok(self.eigenvalues[l - 1].sqrt())
    }

    /// Reconstruct subject `i` from the leading `m` multivariate
    /// components; returns (x-domain, y-domain) functions.
    pub fn reconstruct(&self, subject: usize, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if subject >= self.n_subjects() {
            return Err(Error::invalid(format!("subject {subject} out of range")));
        }
        if m > self.l {
            return Err(Error::invalid(format!(
                "truncation {m} exceeds retained components {}",
                self.l
            )));
        }
        let mut x = self.mean_x.clone();
        let mut y = self.mean_y.clone();
        for l in 0..m {
            let s = self.scores[subject][l];
            for (o, psi) in x.iter_mut().zip(&self.eigenfunctions_x[l]) {
                *o += s * psi;
            }
            for (o, psi) in y.iter_mut().zip(&self.eigenfunctions_y[l]) {
                *o += s * psi;
            }
        }
        Ok((x, y))
    }
}

/// Combine per-domain univariate models into the multivariate
/// decomposition.
///
/// Stacks the univariate scores into `Xi` (n x K), eigen-analyzes
/// `Z = Xi' Xi / (n - 1)`, keeps the smallest L whose cumulative
/// eigenvalue fraction reaches `pve_target`, and forms multivariate
/// eigenfunctions and scores as weighted combinations of the univariate
/// ones.
pub fn mfpca(model_x: &FpcaModel, model_y: &FpcaModel, pve_target: f64) -> Result<MfpcaModel> {
    if !(pve_target > 0.0 && pve_target <= 1.0) {
        return Err(Error::invalid("pve_target must lie in (0, 1]"));
    }
    let n = model_x.n_subjects();
    if model_y.n_subjects() != n {
        return Err(Error::invalid(
            "x and y models were fit on different subject counts",
        ));
    }
    if let (Some(a), Some(b)) = (&model_x.row_ids, &model_y.row_ids) {
        if a != b {
            return Err(Error::invalid(
                "x and y models disagree on participant order",
            ));
        }
    }
    let k1 = model_x.n_components();
    let k2 = model_y.n_components();
    let k = k1 + k2;
    if k == 0 {
        return Err(Error::degenerate(
            "no univariate components in either domain; nothing to combine",
        ));
    }

    let mut xi = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k1 {
            xi[(i, j)] = model_x.scores[i][j];
        }
        for j in 0..k2 {
            xi[(i, k1 + j)] = model_y.scores[i][j];
        }
    }
    let z = xi.transpose() * &xi / (n as f64 - 1.0);
    let eig = eigen::symmetric_eigen(z.as_slice(), k);
    let spectrum: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return Err(Error::degenerate("stacked score covariance has zero trace"));
    }

    // L = min { l : cumulative fraction >= target }
    let l = select_pve_count(&spectrum, pve_target);

    let p = model_x.grid.len();
    let mut weights_x = vec![vec![0.0; l]; k1];
    let mut weights_y = vec![vec![0.0; l]; k2];
    let mut eigenfunctions_x = Vec::with_capacity(l);
    let mut eigenfunctions_y = Vec::with_capacity(l);
    let mut scores = vec![vec![0.0; l]; n];
    let mut pve = Vec::with_capacity(l);
    let mut cum = 0.0;
    for rank in 0..l {
        let mut c: Vec<f64> = eig.vectors[rank].clone();
        // sign convention: largest-|weight| positive
        let mut flip = false;
        let mut best = 0.0;
        for &v in &c {
            if v.abs() > best {
                best = v.abs();
                flip = v < 0.0;
            }
        }
        if flip {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
        for j in 0..k1 {
            weights_x[j][rank] = c[j];
        }
        for j in 0..k2 {
            weights_y[j][rank] = c[k1 + j];
        }
        // psi_l^{(j)} = sum_k c_k^{(j)} phi_k^{(j)}
        let mut psi_x = vec![0.0; p];
        for j in 0..k1 {
            for t in 0..p {
                psi_x[t] += c[j] * model_x.eigenfunctions[j][t];
            }
        }
        let mut psi_y = vec![0.0; p];
        for j in 0..k2 {
            for t in 0..p {
                psi_y[t] += c[k1 + j] * model_y.eigenfunctions[j][t];
            }
        }
        eigenfunctions_x.push(psi_x);
        eigenfunctions_y.push(psi_y);
        // rho_{i,l} = Xi c
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..k {
                s += xi[(i, j)] * c[j];
            }
            scores[i][rank] = s;
        }
        cum += spectrum[rank];
        pve.push(cum / total);
    }

    Ok(MfpcaModel {
        weights_x,
        weights_y,
        eigenvalues: spectrum[..l].to_vec(),
        spectrum,
        eigenfunctions_x,
        eigenfunctions_y,
        scores,
        pve,
        l,
        grid: model_x.grid.clone(),
        mean_x: model_x.mean.clone(),
        mean_y: model_y.mean.clone(),
        row_ids: model_x.row_ids.clone().or_else(|| model_y.row_ids.clone()),
    })
}

/// UFPCA on the x and y domains joined end to end.
///
/// Each subject's y-function is appended after its x-function; both
/// domains keep their own trapezoid weights. The joined abscissae place
/// the y-grid after the x-grid with one median-spacing gap so the grid
/// stays strictly increasing.
pub fn concat_ufpca(
    sample_x: &FunctionalSample,
    sample_y: &FunctionalSample,
    pve_target: f64,
) -> Result<FpcaModel> {
    let n = sample_x.data.nrows();
    if sample_y.data.nrows() != n {
        return Err(Error::invalid("x and y samples have different subject counts"));
    }
    if let (Some(a), Some(b)) = (&sample_x.row_ids, &sample_y.row_ids) {
        if a != b {
            return Err(Error::invalid("x and y samples disagree on participant order"));
        }
    }
    let p1 = sample_x.grid.len();
    let p2 = sample_y.grid.len();
    let x_end = *sample_x.grid.last().expect("nonempty grid");
    let spacing = if p1 > 1 {
        (x_end - sample_x.grid[0]) / (p1 as f64 - 1.0)
    } else {
        1.0
    };
    let offset = x_end + spacing - sample_y.grid[0];
    let mut grid = sample_x.grid.clone();
    grid.extend(sample_y.grid.iter().map(|&t| t + offset));

    let mut data = DMatrix::zeros(n, p1 + p2);
    for i in 0..n {
        for j in 0..p1 {
            data[(i, j)] = sample_x.data[(i, j)];
        }
        for j in 0..p2 {
            data[(i, p1 + j)] = sample_y.data[(i, j)];
        }
    }

    let mut joined = FunctionalSample::new(grid, data, DomainLabel::Concatenated)?;
    // keep each domain's own quadrature weights rather than the joined
    // trapezoid weights (which would couple the junction)
    let mut w = sample_x.quad_weights.clone();
    w.extend_from_slice(&sample_y.quad_weights);
    joined.quad_weights = w;
    joined.row_ids = sample_x.row_ids.clone().or_else(|| sample_y.row_ids.clone());

    let mut model = ufpca(&joined, pve_target)?;
    model.concat_split = Some(p1);
    Ok(model)
}

/// Shift mean momenta along multivariate mode `l` (1-based).
///
/// Returns a momenta field whose vectors are
/// `mean + scale * (psi_l^x, psi_l^y)` at the control points; the
/// conventional scale is one SD of the mode, `sqrt(nu_l)`.
pub fn pc_deformation(
    model: &MfpcaModel,
    mean_field: &MomentaField,
    l: usize,
    scale: f64,
) -> Result<MomentaField> {
    if l == 0 || l > model.l {
        return Err(Error::invalid(format!(
            "component {l} out of range 1..={}",
            model.l
        )));
    }
    let p = mean_field.control_points.len();
    if model.grid.len() != p {
        return Err(Error::invalid(format!(
            "model grid has {} points but the field has {p} control points",
            model.grid.len()
        )));
    }
    let psi_x = &model.eigenfunctions_x[l - 1];
    let psi_y = &model.eigenfunctions_y[l - 1];
    let momenta: Vec<Vec2> = mean_field
        .momenta
        .iter()
        .enumerate()
        .map(|(j, m)| Vec2::new(m.x + scale * psi_x[j], m.y + scale * psi_y[j]))
        .collect();
    MomentaField::new(
        format!("{}::pc{l}", mean_field.participant_id),
        mean_field.period,
        mean_field.control_points.clone(),
        momenta,
    )
}

/// Mean momenta field across subjects for one period.
pub fn mean_momenta_field(fields: &[MomentaField], period: Period) -> Result<MomentaField> {
    let in_period: Vec<&MomentaField> = fields.iter().filter(|f| f.period == period).collect();
    if in_period.is_empty() {
        return Err(Error::invalid("no momenta fields for the requested period"));
    }
    let p = in_period[0].control_points.len();
    let mut q = vec![Vec2::ZERO; p];
    let mut m = vec![Vec2::ZERO; p];
    for f in &in_period {
        if f.control_points.len() != p {
            return Err(Error::invalid("fields disagree on control point count"));
        }
        for j in 0..p {
            q[j] += f.control_points[j];
            m[j] += f.momenta[j];
        }
    }
    let inv = 1.0 / in_period.len() as f64;
    for j in 0..p {
        q[j] = inv * q[j];
        m[j] = inv * m[j];
    }
    MomentaField::new("mean", period, q, m)
}

/// The retained-component rule: the smallest count whose cumulative
/// share of the total spectrum reaches `target`. Exact equality counts
/// as reached, so ties resolve to the smaller count. Zero total keeps
/// nothing.
pub fn select_pve_count(spectrum: &[f64], target: f64) -> usize {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (i, v) in spectrum.iter().enumerate() {
        cum += v;
        if cum / total >= target {
            return i + 1;
        }
    }
    spectrum.len()
}

/// Inner product of two functions under a model's quadrature weights.
pub fn weighted_inner(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// Cosine similarity after aligning signs (absolute value of the
/// normalized weighted inner product).
pub fn aligned_cosine(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let ff = weighted_inner(w, f, f);
    let gg = weighted_inner(w, g, g);
    if ff <= 0.0 || gg <= 0.0 {
        return 0.0;
    }
    (weighted_inner(w, f, g) / (ff * gg).sqrt()).abs()
}

#[allow(dead_code)]
fn as_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(p: usize) -> Vec<f64> {
        (0..p).map(|i| -1.0 + 2.0 * i as f64 / (p - 1) as f64).collect()
    }

    fn sample_from_rows(rows: Vec<Vec<f64>>, g: Vec<f64>, domain: DomainLabel) -> FunctionalSample {
        let n = rows.len();
        let p = g.len();
        let mut data = DMatrix::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                data[(i, j)] = *v;
            }
        }
        FunctionalSample::new(g, data, domain).unwrap()
    }

    #[test]
    fn identical_functions_give_zero_eigenvalues() {
        let g = grid(30);
        let f: Vec<f64> = g.iter().map(|x| 1.0 + x * x).collect();
        let sample = sample_from_rows(vec![f.clone(); 5], g, DomainLabel::X);
        let model = ufpca(&sample, 0.99).unwrap();
        assert_eq!(model.n_components(), 0);
        assert!(model.total_variance() < 1e-20);
        for (a, b) in model.mean.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_data_recovers_the_generating_function() {
        let g = grid(40);
        let w = trapezoid_weights(&g);
        // unit-norm generator under the trapezoid inner product
        let mut phi: Vec<f64> = g.iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
        let norm = weighted_inner(&w, &phi, &phi).sqrt();
        for v in phi.iter_mut() {
            *v /= norm;
        }
        let loadings = [1.5, -0.7, 0.3, 2.2, -1.1, 0.9];
        let rows: Vec<Vec<f64>> = loadings
            .iter()
            .map(|&a| phi.iter().map(|&v| a * v).collect())
            .collect();
        let sample = sample_from_rows(rows, g, DomainLabel::X);
        let model = ufpca(&sample, 0.99).unwrap();
        assert_eq!(model.n_components(), 1);
        assert!((model.pve[0] - 1.0).abs() < 1e-10);
        let cos = aligned_cosine(&model.quad_weights, &model.eigenfunctions[0], &phi);
        assert!(cos > 1.0 - 1e-10, "cosine {cos}");
    }

    #[test]
    fn eigenfunctions_are_orthonormal_and_scores_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(25);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..25).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let sample = sample_from_rows(rows, g, DomainLabel::Y);
        let model = ufpca(&sample, 0.99).unwrap();
        let w = &model.quad_weights;
        for a in 0..model.n_components() {
            for b in 0..model.n_components() {
                let ip = weighted_inner(w, &model.eigenfunctions[a], &model.eigenfunctions[b]);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-8, "({a},{b}): {ip}");
            }
        }
        for k in 0..model.n_components() {
            let mean: f64 =
                model.scores.iter().map(|s| s[k]).sum::<f64>() / model.n_subjects() as f64;
            assert!(mean.abs() < 1e-8);
        }
        // eigenvalues non-increasing
        for wpair in model.eigenvalues.windows(2) {
            assert!(wpair[0] >= wpair[1] - 1e-12);
        }
    }

    #[test]
    fn scaling_a_domain_scales_its_eigenvalues_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(20);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let alpha = 2.5;
        let scaled_rows: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().map(|v| alpha * v).collect()).collect();
        let m1 = ufpca(&sample_from_rows(rows, g.clone(), DomainLabel::X), 1.0).unwrap();
        let m2 = ufpca(&sample_from_rows(scaled_rows, g, DomainLabel::X), 1.0).unwrap();
        for (a, b) in m1.eigenvalues.iter().zip(&m2.eigenvalues) {
            assert!((b - alpha * alpha * a).abs() < 1e-8 * b.max(1.0));
        }
    }

    #[test]
    fn reconstruction_improves_with_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(18);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let sample = sample_from_rows(rows.clone(), g, DomainLabel::X);
        let model = ufpca(&sample, 1.0).unwrap();
        // m = 0 gives the mean
        let rec0 = model.reconstruct(0, 0).unwrap();
        for (a, b) in rec0.iter().zip(&model.mean) {
            assert_eq!(a, b);
        }
        // full rank recovers the data
        let full = model.n_components();
        let mut prev_rms = f64::INFINITY;
        for m in 0..=full {
            let mut rms = 0.0;
            for i in 0..rows.len() {
                let rec = model.reconstruct(i, m).unwrap();
                for (a, b) in rec.iter().zip(&rows[i]) {
                    rms += (a - b) * (a - b);
                }
            }
            rms = (rms / (rows.len() * 18) as f64).sqrt();
            assert!(rms <= prev_rms + 1e-12, "rms rose at m={m}");
            prev_rms = rms;
        }
        assert!(prev_rms < 1e-6, "full-rank rms {prev_rms}");
    }

    #[test]
    fn mfpca_two_by_two_hand_example() {
        // Xi rows {(1,0),(-1,0)}: Z = [[2,0],[0,0]], eigenvalues (2,0)
        let g = grid(10);
        let phi: Vec<f64> = {
            let w = trapezoid_weights(&g);
            let mut v: Vec<f64> = g.iter().map(|x| 1.0 + 0.0 * x).collect();
            let norm = weighted_inner(&w, &v, &v).sqrt();
            for u in v.iter_mut() {
                *u /= norm;
            }
            v
        };
        // x-domain: scores (1, -1) on one component; y-domain: zero data
        let rows_x: Vec<Vec<f64>> = [1.0, -1.0]
            .iter()
            .map(|&a| phi.iter().map(|&v| a * v).collect())
            .collect();
        let rows_y = vec![vec![0.0; 10]; 2];
        let mx = ufpca(&sample_from_rows(rows_x, g.clone(), DomainLabel::X), 0.99).unwrap();
        let my = ufpca(&sample_from_rows(rows_y, g, DomainLabel::Y), 0.99).unwrap();
        assert_eq!(mx.n_components(), 1);
        assert_eq!(my.n_components(), 0);
        let m = mfpca(&mx, &my, 0.9).unwrap();
        assert_eq!(m.l, 1);
        assert!((m.eigenvalues[0] - 2.0).abs() < 1e-10);
        assert!((m.weights_x[0][0].abs() - 1.0).abs() < 1e-10);
        // multivariate scores are the univariate ones rotated by c = ±1
        assert!((m.scores[0][0].abs() - 1.0).abs() < 1e-10);
        assert!((m.scores[0][0] + m.scores[1][0]).abs() < 1e-10);
    }

    fn random_two_domain(n: usize, p: usize, seed: u64) -> (FpcaModel, FpcaModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid(p);
        let shared: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows_x: Vec<Vec<f64>> = shared
            .iter()
            .map(|&a| {
                g.iter()
                    .map(|&x| {
                        a * (2.0 * x).sin() + 0.2 * rng.random_range(-1.0..1.0)
                    })
                    .collect()
            })
            .collect();
        let rows_y: Vec<Vec<f64>> = shared
            .iter()
            .map(|&a| {
                g.iter()
                    .map(|&x| {
                        0.8 * a * (1.5 * x).cos() + 0.2 * rng.random_range(-1.0..1.0)
                    })
                    .collect()
            })
            .collect();
        let sx = sample_from_rows(rows_x, g.clone(), DomainLabel::X);
        let sy = sample_from_rows(rows_y, g, DomainLabel::Y);
        (ufpca(&sx, 0.99).unwrap(), ufpca(&sy, 0.99).unwrap())
    }

    #[test]
    fn mfpca_trace_identity_and_swap_invariance() {
        let (mx, my) = random_two_domain(60, 24, 19);
        let m = mfpca(&mx, &my, 0.9).unwrap();
        // trace identity
        let trace: f64 = mx.scores.iter().flatten().map(|s| s * s).sum::<f64>()
            / (mx.n_subjects() as f64 - 1.0)
            + my.scores.iter().flatten().map(|s| s * s).sum::<f64>()
                / (my.n_subjects() as f64 - 1.0);
        let total: f64 = m.spectrum.iter().sum();
        assert!((total - trace).abs() < 1e-10, "{total} vs {trace}");
        // swap-domain eigenvalue invariance
        let m_swapped = mfpca(&my, &mx, 0.9).unwrap();
        for (a, b) in m.spectrum.iter().zip(&m_swapped.spectrum) {
            assert!((a - b).abs() < 1e-10);
        }
        // PVE minimality
        let cum_l: f64 = m.spectrum[..m.l].iter().sum();
        assert!(cum_l / total >= 0.9);
        if m.l > 1 {
            let cum_lm1: f64 = m.spectrum[..m.l - 1].iter().sum();
            assert!(cum_lm1 / total < 0.9);
        }
    }

    #[test]
    fn mfpca_score_covariance_is_diagonal() {
        let (mx, my) = random_two_domain(300, 20, 23);
        let m = mfpca(&mx, &my, 0.9).unwrap();
        let n = m.n_subjects() as f64;
        for a in 0..m.l {
            for b in 0..m.l {
                let cov: f64 = m
                    .scores
                    .iter()
                    .map(|s| s[a] * s[b])
                    .sum::<f64>()
                    / (n - 1.0);
                let expect = if a == b { m.eigenvalues[a] } else { 0.0 };
                assert!(
                    (cov - expect).abs() < 1e-6,
                    "cov({a},{b}) = {cov}, expect {expect}"
                );
            }
        }
    }

    #[test]
    fn mfpca_rejects_mismatched_participants() {
        let (mx, my) = random_two_domain(20, 12, 5);
        let mut my_bad = my.clone();
        my_bad.row_ids = Some((0..20).map(|i| format!("other{i}")).collect());
        let mut mx_ids = mx.clone();
        mx_ids.row_ids = Some((0..20).map(|i| format!("p{i}")).collect());
        assert!(mfpca(&mx_ids, &my_bad, 0.9).is_err());
    }

    #[test]
    fn concat_with_zero_y_matches_x_only_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = grid(16);
        let rows_x: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rows_y = vec![vec![0.0; 16]; 20];
        let sx = sample_from_rows(rows_x, g.clone(), DomainLabel::X);
        let sy = sample_from_rows(rows_y, g.clone(), DomainLabel::Y);
        let concat = concat_ufpca(&sx, &sy, 0.99).unwrap();
        let x_only = ufpca(&sx, 0.99).unwrap();
        assert_eq!(concat.concat_split, Some(16));
        for k in 0..x_only.n_components().min(concat.n_components()) {
            let (xs, ys) = concat.eigenfunction_slices(k).unwrap();
            // y-slice vanishes
            for v in ys {
                assert!(v.abs() < 1e-10);
            }
            let cos = aligned_cosine(&x_only.quad_weights, xs, &x_only.eigenfunctions[k]);
            assert!(cos > 1.0 - 1e-8, "component {k} cosine {cos}");
        }
        // total variance adds across domains
        let sum = x_only.total_variance();
        assert!((concat.total_variance() - sum).abs() < 1e-10);
    }

    #[test]
    fn concat_total_variance_is_additive() {
        let (mx_model, my_model) = random_two_domain(40, 14, 41);
        // rebuild raw samples with the same seed to compare traces
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = grid(14);
        let shared: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows_x: Vec<Vec<f64>> = shared
            .iter()
            .map(|&a| {
                g.iter()
                    .map(|&x| a * (2.0 * x).sin() + 0.2 * rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let rows_y: Vec<Vec<f64>> = shared
            .iter()
            .map(|&a| {
                g.iter()
                    .map(|&x| 0.8 * a * (1.5 * x).cos() + 0.2 * rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let sx = sample_from_rows(rows_x, g.clone(), DomainLabel::X);
        let sy = sample_from_rows(rows_y, g, DomainLabel::Y);
        let concat = concat_ufpca(&sx, &sy, 0.99).unwrap();
        let total = mx_model.total_variance() + my_model.total_variance();
        assert!(
            (concat.total_variance() - total).abs() < 1e-10 * total.max(1.0),
            "{} vs {total}",
            concat.total_variance()
        );
    }

    #[test]
    fn pc_deformation_is_symmetric_about_the_mean() {
        let (mx, my) = random_two_domain(30, 12, 57);
        let m = mfpca(&mx, &my, 0.9).unwrap();
        let p = m.grid.len();
        let mean_field = MomentaField::new(
            "mean",
            Period::BaselineToW1,
            (0..p).map(|j| Vec2::new(m.grid[j], 0.1)).collect(),
            (0..p).map(|j| Vec2::new(0.01 * j as f64, -0.02)).collect(),
        )
        .unwrap();
        let zero = pc_deformation(&m, &mean_field, 1, 0.0).unwrap();
        assert_eq!(zero.momenta, mean_field.momenta);
        let s = m.mode_scale(1).unwrap();
        let plus = pc_deformation(&m, &mean_field, 1, s).unwrap();
        let minus = pc_deformation(&m, &mean_field, 1, -s).unwrap();
        for ((p1, p2), base) in plus.momenta.iter().zip(&minus.momenta).zip(&mean_field.momenta) {
            let mid = 0.5 * (*p1 + *p2);
            assert!((mid - *base).norm() < 1e-12);
        }
        assert!(plus.energy.is_finite() && plus.energy >= 0.0);
        assert!(pc_deformation(&m, &mean_field, m.l + 1, 1.0).is_err());
    }
}
