//! Minute-level accelerometer counts to smoothed, scaled diurnal curves.
//!
//! The stages, in order: vector-magnitude computation, valid-day
//! filtering, per-visit daily averaging, spline smoothing at a fixed
//! effective df, cohort-wide scaling, and the signed area summaries
//! (net-AUC and its between-visit difference).

mod spline;

pub use spline::SmoothingSpline;

use crate::error::{Error, Result};
use crate::grid::{self, GRID_LEN, WINDOW_START_MINUTE};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub mod io;

/// Accelerometer assessment visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Visit {
    Baseline,
    W1,
    W2,
}

impl Visit {
    pub const ALL: [Visit; 3] = [Visit::Baseline, Visit::W1, Visit::W2];

    pub fn as_str(&self) -> &'static str {
        match self {
            Visit::Baseline => "baseline",
            Visit::W1 => "w1",
            Visit::W2 => "w2",
        }
    }

    pub fn parse(s: &str) -> Result<Visit> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "b" | "v0" => Ok(Visit::Baseline),
            "w1" | "v1" => Ok(Visit::W1),
            "w2" | "v2" => Ok(Visit::W2),
            other => Err(Error::invalid(format!("unknown visit `{other}`"))),
        }
    }
}

impl std::fmt::Display for Visit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One minute of tri-axial counts for one participant-visit-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteRecord {
    pub participant_id: String,
    pub visit: Visit,
    /// 1-based day index within the visit's wear period.
    pub day_index: u32,
    /// Minute of the calendar day, 0..=1439.
    pub minute_of_day: u32,
    /// Vertical, horizontal, perpendicular counts per minute.
    pub axis_counts: [f64; 3],
    pub wear: bool,
}

impl MinuteRecord {
    pub fn validate(&self) -> Result<()> {
        if self.day_index == 0 {
            return Err(Error::invalid("day_index must be positive"));
        }
        if self.minute_of_day >= 1440 {
            return Err(Error::invalid(format!(
                "minute_of_day {} out of range",
                self.minute_of_day
            )));
        }
        for c in self.axis_counts {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::invalid(format!(
                    "axis count {c} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Processing stage of a diurnal curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveStage {
    RawMean,
    Smoothed,
    Scaled,
}

/// One participant-visit activity profile on the 1,080-minute grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalCurve {
    pub participant_id: String,
    pub visit: Visit,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stage: CurveStage,
}

impl DiurnalCurve {
    pub fn new(
        participant_id: impl Into<String>,
        visit: Visit,
        grid: Vec<f64>,
        values: Vec<f64>,
        stage: CurveStage,
    ) -> Result<Self> {
        if grid.len() != GRID_LEN || values.len() != GRID_LEN {
            return Err(Error::invalid(format!(
                "curve must have {GRID_LEN} points, got grid {} / values {}",
                grid.len(),
                values.len()
            )));
        }
        for i in 1..grid.len() {
            if !(grid[i] > grid[i - 1]) {
                return Err(Error::invalid("curve grid must be strictly increasing"));
            }
        }
        if stage == CurveStage::Scaled && (grid[0] < -1.0 - 1e-12 || grid[GRID_LEN - 1] > 1.0 + 1e-12)
        {
            return Err(Error::invalid("scaled curve grid must lie in [-1, 1]"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(DiurnalCurve {
            participant_id: participant_id.into(),
            visit,
            grid,
            values,
            stage,
        })
    }
}

/// Pooled scaling constants (counts/min) shared by the whole cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub grand_mean: f64,
    pub grand_sd: f64,
}

impl ScalingParams {
    pub fn new(grand_mean: f64, grand_sd: f64) -> Result<Self> {
        if !grand_mean.is_finite() || !grand_sd.is_finite() || grand_sd <= 0.0 {
            return Err(Error::degenerate(format!(
                "scaling needs finite mean and positive sd, got mean {grand_mean}, sd {grand_sd}"
            )));
        }
        Ok(ScalingParams {
            grand_mean,
            grand_sd,
        })
    }

    /// Counts to scaled amplitude: `(v - mean) / (4 sd)`.
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.grand_mean) / (4.0 * self.grand_sd)
    }

    /// Scaled amplitude back to counts.
    pub fn unscale(&self, s: f64) -> f64 {
        s * 4.0 * self.grand_sd + self.grand_mean
    }
}

/// Vector magnitude of one minute's tri-axial counts.
pub fn compute_vm(axis_counts: [f64; 3]) -> Result<f64> {
    for c in axis_counts {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::invalid(format!(
                "axis counts must be finite and nonnegative, got {c}"
            )));
        }
    }
    let [va, ha, ppa] = axis_counts;
    Ok((va * va + ha * ha + ppa * ppa).sqrt())
}

/// Why a participant-visit was excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub reason: String,
    pub retained_days: usize,
}

/// Outcome of the valid-day filter for one participant-visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DayFilterVerdict {
    /// Retained day indices, sorted.
    Valid { days: Vec<u32> },
    Excluded(Exclusion),
}

/// In-window non-wear minutes at or above this count exclude a day.
pub const MAX_NONWEAR_MINUTES: u32 = 240;
/// A valid day needs at least this many in-window wear minutes.
pub const MIN_WEAR_MINUTES: u32 = 840;
/// A participant-visit needs at least this many valid days.
pub const MIN_VALID_DAYS: usize = 4;

/// Apply the valid-day rules to one participant-visit's records.
///
/// Only minutes inside the 6:00-24:00 window count. A minute with no
/// record is treated as non-wear. A day is retained iff its non-wear
/// minutes are strictly below 4 hours and its wear minutes reach 14
/// hours; the visit is valid iff at least four days are retained.
pub fn filter_valid_days(records: &[MinuteRecord]) -> Result<DayFilterVerdict> {
    filter_valid_days_refs(records.iter())
}

/// Borrowing variant for callers that already grouped records.
pub(crate) fn filter_valid_days_refs<'a, I>(records: I) -> Result<DayFilterVerdict>
where
    I: IntoIterator<Item = &'a MinuteRecord>,
{
    let mut iter = records.into_iter().peekable();
    let Some(first) = iter.peek() else {
        return Err(Error::invalid("no minute records for participant-visit"));
    };
    let pid = first.participant_id.clone();
    let visit = first.visit;
    let mut wear_by_day: BTreeMap<u32, u32> = BTreeMap::new();
    let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();
    for r in iter {
        r.validate()?;
        if r.participant_id != pid || r.visit != visit {
            return Err(Error::invalid(
                "records span more than one participant-visit",
            ));
        }
        if !seen.insert((r.day_index, r.minute_of_day)) {
            return Err(Error::invalid(format!(
                "duplicate minute {} on day {} for participant {pid}",
                r.minute_of_day, r.day_index
            )));
        }
        let entry = wear_by_day.entry(r.day_index).or_insert(0);
        if grid::in_window(r.minute_of_day) && r.wear {
            *entry += 1;
        }
    }
    let mut days: Vec<u32> = Vec::new();
    for (&day, &wear) in &wear_by_day {
        let nonwear = GRID_LEN as u32 - wear;
        if nonwear < MAX_NONWEAR_MINUTES && wear >= MIN_WEAR_MINUTES {
            days.push(day);
        }
    }
    if days.len() >= MIN_VALID_DAYS {
        Ok(DayFilterVerdict::Valid { days })
    } else {
        Ok(DayFilterVerdict::Excluded(Exclusion {
            reason: "too few valid days".to_string(),
            retained_days: days.len(),
        }))
    }
}

/// Average retained days into one raw diurnal profile.
///
/// At each clock minute the mean runs over wear minutes only; minutes
/// that are non-wear on every retained day are filled by linear
/// interpolation between the nearest filled minutes (constant extension
/// at the window edges).
pub fn average_daily_profile(records: &[MinuteRecord], days: &[u32]) -> Result<DiurnalCurve> {
    average_daily_profile_refs(records.iter(), days)
}

/// Borrowing variant for callers that already grouped records.
pub(crate) fn average_daily_profile_refs<'a, I>(records: I, days: &[u32]) -> Result<DiurnalCurve>
where
    I: IntoIterator<Item = &'a MinuteRecord>,
{
    let mut iter = records.into_iter().peekable();
    let Some(first) = iter.peek() else {
        return Err(Error::invalid("no minute records"));
    };
    if days.len() < MIN_VALID_DAYS {
        return Err(Error::invalid(format!(
            "need at least {MIN_VALID_DAYS} retained days, got {}",
            days.len()
        )));
    }
    let day_set: BTreeSet<u32> = days.iter().copied().collect();
    let pid = first.participant_id.clone();
    let visit = first.visit;

    let mut sums = vec![0.0; GRID_LEN];
    let mut counts = vec![0u32; GRID_LEN];
    for r in iter {
        if !day_set.contains(&r.day_index) || !grid::in_window(r.minute_of_day) || !r.wear {
            continue;
        }
        let idx = (r.minute_of_day - WINDOW_START_MINUTE) as usize;
        sums[idx] += compute_vm(r.axis_counts)?;
        counts[idx] += 1;
    }

    let mut values = vec![f64::NAN; GRID_LEN];
    for i in 0..GRID_LEN {
        if counts[i] > 0 {
            values[i] = sums[i] / counts[i] as f64;
        }
    }
    fill_gaps_linear(&mut values)?;

    DiurnalCurve::new(pid, visit, grid::minute_grid(), values, CurveStage::RawMean)
}

/// Linear interpolation across NaN runs, constant extension at the ends.
fn fill_gaps_linear(values: &mut [f64]) -> Result<()> {
    let n = values.len();
    let filled: Vec<usize> = (0..n).filter(|&i| !values[i].is_nan()).collect();
    if filled.is_empty() {
        return Err(Error::degenerate(
            "no wear minutes at any clock minute; cannot form a daily profile",
        ));
    }
    let first = filled[0];
    let last = *filled.last().unwrap();
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..n {
        values[i] = values[last];
    }
    let mut w = 0;
    while w + 1 < filled.len() {
        let (a, b) = (filled[w], filled[w + 1]);
        if b > a + 1 {
            let (va, vb) = (values[a], values[b]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                values[i] = va + t * (vb - va);
            }
        }
        w += 1;
    }
    Ok(())
}

/// Smooth a raw profile with a cubic smoothing spline at `target_df`
/// effective degrees of freedom.
///
/// Convenience wrapper that fits the penalty for this one call; batch
/// callers should build one [`SmoothingSpline`] and reuse it.
pub fn smooth_curve(curve: &DiurnalCurve, target_df: f64) -> Result<DiurnalCurve> {
    let spline = SmoothingSpline::new(&curve.grid, target_df)?;
    smooth_curve_with(curve, &spline)
}

/// Smooth a raw profile with a prebuilt spline.
pub fn smooth_curve_with(curve: &DiurnalCurve, spline: &SmoothingSpline) -> Result<DiurnalCurve> {
    if curve.grid != spline.grid() {
        return Err(Error::invalid("curve grid does not match the spline grid"));
    }
    let values = spline.apply(&curve.values)?;
    DiurnalCurve::new(
        curve.participant_id.clone(),
        curve.visit,
        curve.grid.clone(),
        values,
        CurveStage::Smoothed,
    )
}

/// Pool every participant-visit-minute value into grand scaling constants.
///
/// Uses the sample standard deviation (n-1 denominator).
pub fn fit_scaling(curves: &[DiurnalCurve]) -> Result<ScalingParams> {
    if curves.is_empty() {
        return Err(Error::invalid("no curves to pool"));
    }
    let n = (curves.len() * GRID_LEN) as f64;
    let mut sum = 0.0;
    for c in curves {
        for v in &c.values {
            sum += v;
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for c in curves {
        for v in &c.values {
            let d = v - mean;
            ss += d * d;
        }
    }
    let var = ss / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::degenerate(
            "pooled values are constant; scaling sd would be zero",
        ));
    }
    ScalingParams::new(mean, var.sqrt())
}

/// Center by the grand mean, scale by 4 sd, and map the minute grid
/// affinely onto `[-1, 1]`.
pub fn scale_curve(curve: &DiurnalCurve, params: &ScalingParams) -> Result<DiurnalCurve> {
    if curve.stage == CurveStage::Scaled {
        return Err(Error::invalid("curve is already scaled"));
    }
    let values: Vec<f64> = curve.values.iter().map(|&v| params.scale(v)).collect();
    let grid: Vec<f64> = curve.grid.iter().map(|&t| grid::minute_to_scaled(t)).collect();
    DiurnalCurve::new(
        curve.participant_id.clone(),
        curve.visit,
        grid,
        values,
        CurveStage::Scaled,
    )
}

/// Trapezoid-rule signed area under a scaled curve.
pub fn net_auc(curve: &DiurnalCurve) -> Result<f64> {
    if curve.stage != CurveStage::Scaled {
        return Err(Error::invalid("net-AUC is defined on scaled curves"));
    }
    Ok(grid::trapezoid_integral(&curve.grid, &curve.values))
}

/// Between-visit change in net-AUC; positive means overall PA increase.
pub fn delta_net_auc(earlier: &DiurnalCurve, later: &DiurnalCurve) -> Result<f64> {
    if earlier.grid != later.grid {
        return Err(Error::invalid("curves live on different grids"));
    }
    Ok(net_auc(later)? - net_auc(earlier)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(day: u32, minute: u32, wear: bool) -> MinuteRecord {
        MinuteRecord {
            participant_id: "p1".into(),
            visit: Visit::Baseline,
            day_index: day,
            minute_of_day: minute,
            axis_counts: [10.0, 10.0, 10.0],
            wear,
        }
    }

    fn full_wear_day(day: u32) -> Vec<MinuteRecord> {
        (WINDOW_START_MINUTE..1440).map(|m| rec(day, m, true)).collect()
    }

    #[test]
    fn vm_pythagorean_examples() {
        assert_eq!(compute_vm([3.0, 4.0, 0.0]).unwrap(), 5.0);
        assert_eq!(compute_vm([0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(compute_vm([1.0, 2.0, 2.0]).unwrap(), 3.0);
    }

    #[test]
    fn vm_rejects_bad_input() {
        assert!(compute_vm([-1.0, 0.0, 0.0]).is_err());
        assert!(compute_vm([f64::NAN, 0.0, 0.0]).is_err());
        assert!(compute_vm([f64::INFINITY, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn vm_permutation_invariant_and_homogeneous(
            a in 0.0..1e4f64, b in 0.0..1e4f64, c in 0.0..1e4f64, alpha in 0.0..100.0f64
        ) {
            let v1 = compute_vm([a, b, c]).unwrap();
            let v2 = compute_vm([b, c, a]).unwrap();
            let v3 = compute_vm([c, a, b]).unwrap();
            prop_assert!((v1 - v2).abs() <= 1e-9 * v1.max(1.0));
            prop_assert!((v1 - v3).abs() <= 1e-9 * v1.max(1.0));
            let scaled = compute_vm([alpha * a, alpha * b, alpha * c]).unwrap();
            prop_assert!((scaled - alpha * v1).abs() <= 1e-9 * (alpha * v1).max(1.0));
        }
    }

    #[test]
    fn full_wear_day_is_retained() {
        let mut records = Vec::new();
        for d in 1..=4 {
            records.extend(full_wear_day(d));
        }
        match filter_valid_days(&records).unwrap() {
            DayFilterVerdict::Valid { days } => assert_eq!(days, vec![1, 2, 3, 4]),
            other => panic!("expected valid, got {other:?}"),
        }
    }

    #[test]
    fn three_valid_days_excludes_participant() {
        let mut records = Vec::new();
        for d in 1..=3 {
            records.extend(full_wear_day(d));
        }
        match filter_valid_days(&records).unwrap() {
            DayFilterVerdict::Excluded(e) => {
                assert_eq!(e.reason, "too few valid days");
                assert_eq!(e.retained_days, 3);
            }
            other => panic!("expected exclusion, got {other:?}"),
        }
    }

    #[test]
    fn exactly_240_nonwear_minutes_excludes_the_day() {
        // 4 full days plus one day sitting exactly on the non-wear boundary
        let mut records = Vec::new();
        for d in 1..=4 {
            records.extend(full_wear_day(d));
        }
        let boundary: Vec<MinuteRecord> = (WINDOW_START_MINUTE..1440)
            .map(|m| rec(5, m, m >= WINDOW_START_MINUTE + 240))
            .collect();
        // wear = 840, nonwear = 240: excluded by the strict < 240 rule
        records.extend(boundary);
        match filter_valid_days(&records).unwrap() {
            DayFilterVerdict::Valid { days } => assert_eq!(days, vec![1, 2, 3, 4]),
            other => panic!("expected valid with day 5 dropped, got {other:?}"),
        }
        // one fewer non-wear minute and the day is retained
        let mut records = Vec::new();
        for d in 1..=4 {
            records.extend(full_wear_day(d));
        }
        let boundary: Vec<MinuteRecord> = (WINDOW_START_MINUTE..1440)
            .map(|m| rec(5, m, m >= WINDOW_START_MINUTE + 239))
            .collect();
        records.extend(boundary);
        match filter_valid_days(&records).unwrap() {
            DayFilterVerdict::Valid { days } => assert_eq!(days, vec![1, 2, 3, 4, 5]),
            other => panic!("expected all five days, got {other:?}"),
        }
    }

    #[test]
    fn filter_rejects_empty_and_duplicates() {
        assert!(filter_valid_days(&[]).is_err());
        let mut records = full_wear_day(1);
        records.push(rec(1, WINDOW_START_MINUTE, true));
        assert!(filter_valid_days(&records).is_err());
    }

    #[test]
    fn filter_is_order_insensitive() {
        let mut records = Vec::new();
        for d in 1..=5 {
            records.extend(full_wear_day(d));
        }
        let forward = filter_valid_days(&records).unwrap();
        records.reverse();
        let backward = filter_valid_days(&records).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn averaging_two_constant_days() {
        let mut records = Vec::new();
        for (d, level) in [(1u32, 10.0), (2, 20.0)] {
            for m in WINDOW_START_MINUTE..1440 {
                records.push(MinuteRecord {
                    participant_id: "p1".into(),
                    visit: Visit::Baseline,
                    day_index: d,
                    minute_of_day: m,
                    // vm = value exactly
                    axis_counts: [level, 0.0, 0.0],
                    wear: true,
                });
            }
        }
        // two more days so the >= 4 day precondition holds
        for d in [3u32, 4] {
            for m in WINDOW_START_MINUTE..1440 {
                records.push(MinuteRecord {
                    participant_id: "p1".into(),
                    visit: Visit::Baseline,
                    day_index: d,
                    minute_of_day: m,
                    axis_counts: [15.0, 0.0, 0.0],
                    wear: true,
                });
            }
        }
        let curve = average_daily_profile(&records, &[1, 2, 3, 4]).unwrap();
        assert_eq!(curve.stage, CurveStage::RawMean);
        for v in &curve.values {
            assert!((v - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_requires_four_days() {
        let records = full_wear_day(1);
        assert!(average_daily_profile(&records, &[1]).is_err());
    }

    #[test]
    fn averaging_uses_wear_minutes_only() {
        // at one minute: days carry {0, 0, 30} with wear {false, true, true}
        let target = WINDOW_START_MINUTE + 100;
        let mut records = Vec::new();
        for d in 1..=4u32 {
            for m in WINDOW_START_MINUTE..1440 {
                let (counts, wear) = if m == target {
                    match d {
                        1 => ([0.0, 0.0, 0.0], false),
                        2 => ([0.0, 0.0, 0.0], true),
                        3 => ([30.0, 0.0, 0.0], true),
                        _ => ([10.0, 0.0, 0.0], true),
                    }
                } else {
                    ([10.0, 0.0, 0.0], true)
                };
                records.push(MinuteRecord {
                    participant_id: "p1".into(),
                    visit: Visit::W1,
                    day_index: d,
                    minute_of_day: m,
                    axis_counts: counts,
                    wear,
                });
            }
        }
        let curve = average_daily_profile(&records, &[1, 2, 3, 4]).unwrap();
        let idx = (target - WINDOW_START_MINUTE) as usize;
        // wear-weighted mean over days 2, 3, 4: (0 + 30 + 10) / 3
        assert!((curve.values[idx] - 40.0 / 3.0).abs() < 1e-12);
        // day 1's non-wear zero is ignored
    }

    #[test]
    fn averaging_interpolates_all_nonwear_minutes() {
        let gap_lo = WINDOW_START_MINUTE + 500;
        let gap_hi = WINDOW_START_MINUTE + 503;
        let mut records = Vec::new();
        for d in 1..=4u32 {
            for m in WINDOW_START_MINUTE..1440 {
                let in_gap = (gap_lo..=gap_hi).contains(&m);
                let v = if m < gap_lo { 10.0 } else { 20.0 };
                records.push(MinuteRecord {
                    participant_id: "p1".into(),
                    visit: Visit::W2,
                    day_index: d,
                    minute_of_day: m,
                    axis_counts: [if in_gap { 0.0 } else { v }, 0.0, 0.0],
                    wear: !in_gap,
                });
            }
        }
        let curve = average_daily_profile(&records, &[1, 2, 3, 4]).unwrap();
        let lo = (gap_lo - WINDOW_START_MINUTE) as usize;
        // neighbors are 10 (at lo-1) and 20 (at lo+4); interior fills linearly
        let expect = [12.0, 14.0, 16.0, 18.0];
        for (off, e) in expect.iter().enumerate() {
            assert!(
                (curve.values[lo + off] - e).abs() < 1e-12,
                "minute {off}: {} vs {e}",
                curve.values[lo + off]
            );
        }
    }

    fn constant_curve(id: &str, visit: Visit, v: f64) -> DiurnalCurve {
        DiurnalCurve::new(
            id,
            visit,
            grid::minute_grid(),
            vec![v; GRID_LEN],
            CurveStage::Smoothed,
        )
        .unwrap()
    }

    #[test]
    fn scaling_two_constant_curves() {
        // 1080 zeros and 1080 twos: mean 1, sample sd sqrt(2160/2159)
        let curves = vec![
            constant_curve("a", Visit::Baseline, 0.0),
            constant_curve("b", Visit::Baseline, 2.0),
        ];
        let params = fit_scaling(&curves).unwrap();
        assert!((params.grand_mean - 1.0).abs() < 1e-12);
        let expected_sd = (2160.0f64 / 2159.0).sqrt();
        assert!((params.grand_sd - expected_sd).abs() < 1e-12);
    }

    #[test]
    fn scaling_rejects_constant_pool() {
        let curves = vec![
            constant_curve("a", Visit::Baseline, 3.0),
            constant_curve("b", Visit::Baseline, 3.0),
        ];
        assert!(matches!(
            fit_scaling(&curves),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn scaling_symmetric_single_curve_has_zero_mean() {
        let values: Vec<f64> = (0..GRID_LEN).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let curve = DiurnalCurve::new(
            "a",
            Visit::Baseline,
            grid::minute_grid(),
            values,
            CurveStage::Smoothed,
        )
        .unwrap();
        let params = fit_scaling(&[curve]).unwrap();
        assert!(params.grand_mean.abs() < 1e-12);
    }

    #[test]
    fn scale_curve_maps_mean_and_endpoints() {
        let params = ScalingParams::new(100.0, 25.0).unwrap();
        let mut values = vec![100.0; GRID_LEN];
        values[1] = 100.0 + 4.0 * 25.0;
        let curve = DiurnalCurve::new(
            "a",
            Visit::W1,
            grid::minute_grid(),
            values,
            CurveStage::Smoothed,
        )
        .unwrap();
        let scaled = scale_curve(&curve, &params).unwrap();
        assert_eq!(scaled.stage, CurveStage::Scaled);
        assert_eq!(scaled.values[0], 0.0);
        assert_eq!(scaled.values[1], 1.0);
        assert_eq!(scaled.grid[0], -1.0);
        assert_eq!(scaled.grid[GRID_LEN - 1], 1.0);
    }

    #[test]
    fn scale_then_unscale_roundtrip() {
        let params = ScalingParams::new(850.0, 212.5).unwrap();
        let values: Vec<f64> = (0..GRID_LEN).map(|i| 400.0 + (i as f64) * 0.9).collect();
        for &v in &values {
            let round = params.unscale(params.scale(v));
            assert!((round - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    fn scaled(values: Vec<f64>) -> DiurnalCurve {
        DiurnalCurve::new(
            "a",
            Visit::Baseline,
            grid::scaled_grid(),
            values,
            CurveStage::Scaled,
        )
        .unwrap()
    }

    #[test]
    fn net_auc_constant_and_odd_cases() {
        assert_eq!(net_auc(&scaled(vec![0.0; GRID_LEN])).unwrap(), 0.0);
        let c = 0.37;
        let auc = net_auc(&scaled(vec![c; GRID_LEN])).unwrap();
        assert!((auc - 2.0 * c).abs() < 1e-12);
        let odd: Vec<f64> = grid::scaled_grid();
        let auc = net_auc(&scaled(odd)).unwrap();
        assert!(auc.abs() < 1e-12);
    }

    #[test]
    fn net_auc_is_linear() {
        let g = grid::scaled_grid();
        let f: Vec<f64> = g.iter().map(|x| (x * 3.0).sin()).collect();
        let h: Vec<f64> = g.iter().map(|x| x * x - 0.2).collect();
        let (alpha, beta) = (1.7, -0.6);
        let combo: Vec<f64> = f
            .iter()
            .zip(&h)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let lhs = net_auc(&scaled(combo)).unwrap();
        let rhs = alpha * net_auc(&scaled(f)).unwrap() + beta * net_auc(&scaled(h)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn delta_net_auc_examples() {
        let zero = scaled(vec![0.0; GRID_LEN]);
        let half = scaled(vec![0.5; GRID_LEN]);
        assert_eq!(delta_net_auc(&zero, &zero).unwrap(), 0.0);
        assert!((delta_net_auc(&zero, &half).unwrap() - 1.0).abs() < 1e-12);
        assert!((delta_net_auc(&half, &zero).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_net_auc_rejects_grid_mismatch() {
        let a = scaled(vec![0.0; GRID_LEN]);
        let mut g = grid::scaled_grid();
        g[5] += 1e-6;
        let b = DiurnalCurve::new(
            "a",
            Visit::W1,
            g,
            vec![0.0; GRID_LEN],
            CurveStage::Scaled,
        )
        .unwrap();
        assert!(delta_net_auc(&a, &b).is_err());
    }

    #[test]
    fn smooth_curve_targets_df_on_minute_grid() {
        // the full 1080-point grid with the production df target
        let g = grid::minute_grid();
        let sp = SmoothingSpline::new(&g, 25.0).unwrap();
        assert!((sp.df() - 25.0).abs() <= 0.01);
        let noisy: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, t)| (t / 80.0).sin() * 50.0 + ((i * 2654435761) % 97) as f64 * 0.3)
            .collect();
        let curve = DiurnalCurve::new(
            "p",
            Visit::Baseline,
            g.clone(),
            noisy,
            CurveStage::RawMean,
        )
        .unwrap();
        let smoothed = smooth_curve_with(&curve, &sp).unwrap();
        assert_eq!(smoothed.stage, CurveStage::Smoothed);
        assert!(smoothed.values.iter().all(|v| v.is_finite()));
    }
}
