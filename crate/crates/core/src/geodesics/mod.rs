//! Diffeomorphic matching of scaled diurnal curves.
//!
//! The change between two visits is represented by initial momenta: one
//! 2D vector per control point on the source curve, shot through the
//! Hamiltonian flow of a Gaussian reproducing kernel. The x-component of
//! a momentum encodes local temporal shift, the y-component local
//! amplitude change.

mod currents;
mod kernel;
mod matching;
mod shoot;

pub mod io;

pub use currents::currents_distance;
pub use matching::{
    match_point_sets, matching_gradient, matching_objective, DeformationResult,
};
pub use shoot::{
    gauss_kernel, hamiltonian, shoot, shoot_with_carried, shoot_with_tape, Tape, Trajectory,
};

use crate::error::{Error, Result};
use crate::grid::GRID_LEN;
use crate::prep::{CurveStage, DiurnalCurve, Visit};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Transition period between consecutive visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    /// Baseline to W1 (eta = 0).
    BaselineToW1,
    /// W1 to W2 (eta = 1).
    W1ToW2,
}

impl Period {
    pub const ALL: [Period; 2] = [Period::BaselineToW1, Period::W1ToW2];

    pub fn index(&self) -> u8 {
        match self {
            Period::BaselineToW1 => 0,
            Period::W1ToW2 => 1,
        }
    }

    pub fn from_index(i: u8) -> Result<Period> {
        match i {
            0 => Ok(Period::BaselineToW1),
            1 => Ok(Period::W1ToW2),
            other => Err(Error::invalid(format!("unknown period index {other}"))),
        }
    }

    pub fn from_visits(earlier: Visit, later: Visit) -> Result<Period> {
        match (earlier, later) {
            (Visit::Baseline, Visit::W1) => Ok(Period::BaselineToW1),
            (Visit::W1, Visit::W2) => Ok(Period::W1ToW2),
            (a, b) => Err(Error::invalid(format!(
                "visits {a} -> {b} do not form a transition period"
            ))),
        }
    }

    pub fn visits(&self) -> (Visit, Visit) {
        match self {
            Period::BaselineToW1 => (Visit::Baseline, Visit::W1),
            Period::W1ToW2 => (Visit::W1, Visit::W2),
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Kernel widths, attachment weight, and discretization for matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Deformation kernel width in scaled coordinates.
    pub sigma_v: f64,
    /// Data-attachment (currents) kernel width.
    pub sigma_w: f64,
    /// Weight of the attachment term in the objective.
    pub gamma_data: f64,
    /// RK4 steps over tau in [0, 1].
    pub n_steps: usize,
    /// Control points are every `control_stride`-th curve vertex; 1
    /// uses all 1,080 minutes.
    pub control_stride: usize,
    /// Gradient-descent iteration cap.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop when the relative objective decrease drops below this.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_max_iters() -> usize {
    500
}

fn default_rel_tol() -> f64 {
    1e-6
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma_v: 0.2,
            sigma_w: 0.1,
            gamma_data: 10.0,
            n_steps: 15,
            control_stride: 10,
            max_iters: default_max_iters(),
            rel_tol: default_rel_tol(),
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v > 0.0) || !(self.sigma_w > 0.0) || !(self.gamma_data > 0.0) {
            return Err(Error::invalid(
                "sigma_v, sigma_w and gamma_data must be positive",
            ));
        }
        if self.n_steps == 0 || self.control_stride == 0 {
            return Err(Error::invalid("n_steps and control_stride must be positive"));
        }
        if !GRID_LEN.is_multiple_of(self.control_stride) {
            return Err(Error::invalid(format!(
                "control_stride {} must divide {GRID_LEN}",
                self.control_stride
            )));
        }
        if self.max_iters == 0 || !(self.rel_tol > 0.0) {
            return Err(Error::invalid("max_iters and rel_tol must be positive"));
        }
        Ok(())
    }

    /// Number of control points on the 1,080-minute grid.
    pub fn control_point_count(&self) -> usize {
        GRID_LEN / self.control_stride
    }
}

/// Initial momenta for one participant-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentaField {
    pub participant_id: String,
    pub period: Period,
    pub control_points: Vec<Vec2>,
    pub momenta: Vec<Vec2>,
    /// Plain sum of squared momentum components over control points.
    pub energy: f64,
}

impl MomentaField {
    pub fn new(
        participant_id: impl Into<String>,
        period: Period,
        control_points: Vec<Vec2>,
        momenta: Vec<Vec2>,
    ) -> Result<Self> {
        if control_points.len() != momenta.len() {
            return Err(Error::invalid(
                "control points and momenta must have equal length",
            ));
        }
        let energy = deformation_energy_of(&momenta);
        Ok(MomentaField {
            participant_id: participant_id.into(),
            period,
            control_points,
            momenta,
            energy,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.len() != self.momenta.len() {
            return Err(Error::invalid(
                "control points and momenta must have equal length",
            ));
        }
        let recomputed = deformation_energy_of(&self.momenta);
        if (recomputed - self.energy).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "stored energy {} disagrees with momenta ({})",
                self.energy, recomputed
            )));
        }
        Ok(())
    }
}

/// The scalar deformation summary: sum of squared momentum components.
///
/// This is the plain coordinate sum, not the kernel-weighted Hamiltonian;
/// the two are emitted side by side by the pipeline.
pub fn deformation_energy(field: &MomentaField) -> f64 {
    deformation_energy_of(&field.momenta)
}

pub(crate) fn deformation_energy_of(momenta: &[Vec2]) -> f64 {
    momenta.iter().map(|m| m.norm_sq()).sum()
}

/// Kernel-weighted counterpart of the deformation energy, `2 H(q0, p0)`.
pub fn kernel_energy(field: &MomentaField, sigma_v: f64) -> f64 {
    2.0 * hamiltonian(&field.control_points, &field.momenta, sigma_v)
}

/// Take every `stride`-th vertex of a scaled curve as a polyline.
pub fn curve_to_polyline(curve: &DiurnalCurve, stride: usize) -> Result<Vec<Vec2>> {
    if curve.stage != CurveStage::Scaled {
        return Err(Error::invalid("matching operates on scaled curves"));
    }
    if stride == 0 || !curve.grid.len().is_multiple_of(stride) {
        return Err(Error::invalid(format!(
            "stride {stride} must divide the grid length {}",
            curve.grid.len()
        )));
    }
    Ok(curve
        .grid
        .iter()
        .zip(&curve.values)
        .step_by(stride)
        .map(|(&x, &y)| Vec2::new(x, y))
        .collect())
}

/// Match one scaled curve onto the next visit's curve.
///
/// Control points are every `control_stride`-th vertex of the source;
/// the target is subsampled at the same stride so that identical curves
/// match with exactly zero momenta.
pub fn match_curves(
    source: &DiurnalCurve,
    target: &DiurnalCurve,
    config: &KernelConfig,
) -> Result<DeformationResult> {
    config.validate()?;
    if source.participant_id != target.participant_id {
        return Err(Error::invalid(
            "source and target belong to different participants",
        ));
    }
    if source.grid != target.grid {
        return Err(Error::invalid("source and target grids differ"));
    }
    let period = Period::from_visits(source.visit, target.visit)?;
    let src = curve_to_polyline(source, config.control_stride)?;
    let tgt = curve_to_polyline(target, config.control_stride)?;
    match_point_sets(&src, &tgt, config, &source.participant_id, period)
}

/// Shoot a momenta field and return the deformed control polygon at
/// `tau = 1`.
pub fn apply_momenta(field: &MomentaField, config: &KernelConfig) -> Result<Vec<Vec2>> {
    field.validate()?;
    let traj = shoot(
        &field.control_points,
        &field.momenta,
        config.sigma_v,
        config.n_steps,
    )?;
    Ok(traj.final_q().to_vec())
}

/// Shoot a momenta field while carrying a full curve through the flow.
///
/// Returns the deformed carried polyline; used to draw deformations of
/// the observed mean curve under mean or PC momenta.
pub fn apply_momenta_to_curve(
    field: &MomentaField,
    carried: &[Vec2],
    config: &KernelConfig,
) -> Result<Vec<Vec2>> {
    field.validate()?;
    let (_, deformed) = shoot_with_carried(
        &field.control_points,
        &field.momenta,
        carried,
        config.sigma_v,
        config.n_steps,
    )?;
    Ok(deformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn deformation_energy_examples() {
        let q = vec![v(0.0, 0.0)];
        let zero = MomentaField::new("p", Period::BaselineToW1, q.clone(), vec![Vec2::ZERO]).unwrap();
        assert_eq!(deformation_energy(&zero), 0.0);
        let one = MomentaField::new("p", Period::BaselineToW1, q, vec![v(0.3, 0.4)]).unwrap();
        assert!((deformation_energy(&one) - 0.25).abs() < 1e-15);
        // many identical vectors
        let n = 17;
        let f = MomentaField::new(
            "p",
            Period::W1ToW2,
            vec![Vec2::ZERO; n],
            vec![v(0.2, -0.5); n],
        )
        .unwrap();
        let expect = n as f64 * (0.2f64 * 0.2 + 0.5 * 0.5);
        assert!((deformation_energy(&f) - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_field_always_matches_momenta() {
        let f = MomentaField::new(
            "p",
            Period::BaselineToW1,
            vec![v(0.0, 0.0), v(0.5, 0.5)],
            vec![v(0.1, 0.2), v(-0.3, 0.05)],
        )
        .unwrap();
        f.validate().unwrap();
        let mut broken = f.clone();
        broken.energy += 1e-6;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn zero_momenta_apply_is_identity() {
        let pts: Vec<Vec2> = (0..12).map(|i| v(i as f64 * 0.1, (i as f64 * 0.3).sin())).collect();
        let f = MomentaField::new(
            "p",
            Period::BaselineToW1,
            pts.clone(),
            vec![Vec2::ZERO; pts.len()],
        )
        .unwrap();
        let out = apply_momenta(&f, &KernelConfig::default()).unwrap();
        for (a, b) in out.iter().zip(&pts) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_point_translation_via_apply() {
        let f = MomentaField::new(
            "p",
            Period::W1ToW2,
            vec![v(0.2, -0.1)],
            vec![v(0.4, 0.25)],
        )
        .unwrap();
        let out = apply_momenta(&f, &KernelConfig::default()).unwrap();
        assert!((out[0] - v(0.6, 0.15)).norm() < 1e-10);
    }

    #[test]
    fn curve_stride_and_period_wiring() {
        let g = grid::scaled_grid();
        let vals: Vec<f64> = g.iter().map(|x| 0.2 * x).collect();
        let c = DiurnalCurve::new("p", Visit::Baseline, g.clone(), vals.clone(), CurveStage::Scaled)
            .unwrap();
        let poly = curve_to_polyline(&c, 10).unwrap();
        assert_eq!(poly.len(), 108);
        assert_eq!(poly[0], v(-1.0, -0.2));
        assert!(curve_to_polyline(&c, 7).is_err());
        assert!(Period::from_visits(Visit::Baseline, Visit::W2).is_err());
        assert_eq!(
            Period::from_visits(Visit::W1, Visit::W2).unwrap(),
            Period::W1ToW2
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = KernelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.control_point_count(), 108);
        cfg.control_stride = 7;
        assert!(cfg.validate().is_err());
        cfg.control_stride = 1080;
        cfg.validate().unwrap();
        assert_eq!(cfg.control_point_count(), 1);
        cfg.sigma_v = 0.0;
        assert!(cfg.validate().is_err());
    }
}
