//! The shared minute grid and quadrature helpers.
//!
//! All diurnal curves live on the 1,080-minute window from 6:00 a.m. to
//! midnight. In raw coordinates the grid is `t = 1..=1080` (minutes since
//! 6:00 a.m.); in scaled coordinates it is mapped affinely onto `[-1, 1]`
//! with both endpoints hit exactly.

/// Number of in-window minutes per day (6:00 a.m. to midnight).
pub const GRID_LEN: usize = 1080;

/// First in-window minute of day (6:00 a.m. = minute 360 of 1440).
pub const WINDOW_START_MINUTE: u32 = 360;

/// One past the last in-window minute of day (midnight).
pub const WINDOW_END_MINUTE: u32 = 1440;

/// True if a minute-of-day falls in the 6:00-24:00 analysis window.
pub fn in_window(minute_of_day: u32) -> bool {
    (WINDOW_START_MINUTE..WINDOW_END_MINUTE).contains(&minute_of_day)
}

/// The raw minute grid `1, 2, ..., 1080`.
pub fn minute_grid() -> Vec<f64> {
    (1..=GRID_LEN).map(|t| t as f64).collect()
}

/// Affine map taking minute `t in 1..=1080` onto `[-1, 1]`:
/// `t -> 2 (t - 1) / 1079 - 1`.
pub fn minute_to_scaled(t: f64) -> f64 {
    2.0 * (t - 1.0) / (GRID_LEN as f64 - 1.0) - 1.0
}

/// The scaled grid: 1,080 points spanning `[-1, 1]` inclusive.
pub fn scaled_grid() -> Vec<f64> {
    (1..=GRID_LEN).map(|t| minute_to_scaled(t as f64)).collect()
}

/// Trapezoid-rule quadrature weights for an increasing grid.
///
/// `sum_i w_i f(x_i)` equals the trapezoid integral of `f` over the grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    assert!(n >= 2, "need at least two grid points");
    let mut w = vec![0.0; n];
    w[0] = (grid[1] - grid[0]) / 2.0;
    for i in 1..n - 1 {
        w[i] = (grid[i + 1] - grid[i - 1]) / 2.0;
    }
    w[n - 1] = (grid[n - 1] - grid[n - 2]) / 2.0;
    w
}

/// Trapezoid-rule integral of sampled values over `grid`.
pub fn trapezoid_integral(grid: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let mut acc = 0.0;
    for i in 0..grid.len() - 1 {
        acc += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_grid_hits_endpoints_exactly() {
        let g = scaled_grid();
        assert_eq!(g.len(), GRID_LEN);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[GRID_LEN - 1], 1.0);
        for i in 1..GRID_LEN {
            assert!(g[i] > g[i - 1]);
        }
    }

    #[test]
    fn trapezoid_weights_integrate_linears_exactly() {
        let grid: Vec<f64> = vec![0.0, 0.5, 1.25, 2.0, 3.0];
        let w = trapezoid_weights(&grid);
        // integral of x over [0, 3] = 4.5
        let approx: f64 = grid.iter().zip(&w).map(|(x, w)| x * w).sum();
        assert!((approx - 4.5).abs() < 1e-12);
        // weighted sum of ones = domain length
        let total: f64 = w.iter().sum();
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_integral_matches_weights() {
        let grid = scaled_grid();
        let vals: Vec<f64> = grid.iter().map(|x| x * x).collect();
        let w = trapezoid_weights(&grid);
        let a = trapezoid_integral(&grid, &vals);
        let b: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
        assert!((a - b).abs() < 1e-12);
    }
}
