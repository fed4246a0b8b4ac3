use serde::{Deserialize, Serialize};

use super::bounds::Levels;
use super::semigroup::Semigroup;
use super::OracleError;

/// Bisection stops once the bracket is this narrow (in time units).
pub const QUANTILE_TOLERANCE: f64 = 1e-12;
/// `r` closer than this to `θ` or 1 makes the level count fragile at finite `N`.
pub const BOUNDARY_MARGIN: f64 = 0.05;
/// Survival this close to one is treated as no mass lost.
const LOSSLESS_GUARD: f64 = 1e-12;
const MONOTONICITY_GRID: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileWarning {
    /// `|r - θ|` or `|r - 1|` is below [`BOUNDARY_MARGIN`].
    Boundary { r: f64, theta: f64 },
    /// `log p_T / log θ` is within the integer guard of an integer.
    IntegerRatio { ratio: f64 },
    /// `p_T = 1`: nothing is killed before the horizon, `r` is meaningless.
    NoMassLost,
}

/// The times `t_j` where survival crosses `θ^j`, for `j = 1..=j_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub theta: f64,
    pub horizon: f64,
    pub t_levels: Vec<f64>,
    pub j_max: usize,
    pub r: f64,
    pub p_t: f64,
    /// Survival strictly decreased between consecutive points of a fine grid on `[0, T]`.
    pub strictly_decreasing: bool,
    pub warnings: Vec<QuantileWarning>,
}

impl QuantileGrid {
    /// `t_j` for `j = 0..=j_max+1` with the conventions `t_0 = 0`, `t_{j_max+1} = T`.
    pub fn padded_levels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.j_max + 2);
        out.push(0.0);
        out.extend_from_slice(&self.t_levels);
        out.push(self.horizon);
        out
    }

    /// True when any warning was raised.
    pub fn is_flagged(&self) -> bool {
        !self.warnings.is_empty()
    }
}

pub(crate) fn compute(sg: &Semigroup, theta: f64, horizon: f64) -> Result<QuantileGrid, OracleError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(OracleError::OutOfRange(format!("T must be finite and > 0, got {horizon}")));
    }
    let p_t = sg.survival(horizon)?;
    if !(p_t > 0.0) {
        return Err(OracleError::OutOfRange(format!("p_T = {p_t} is not positive")));
    }
    // truncation of the Poisson series leaves lossless survival a hair off one
    let p_t = if p_t > 1.0 - LOSSLESS_GUARD { 1.0 } else { p_t };
    let levels = Levels::new(p_t, theta)?;

    let mut strictly_decreasing = true;
    let mut prev = 1.0;
    for i in 1..=MONOTONICITY_GRID {
        let p = sg.survival(horizon * i as f64 / MONOTONICITY_GRID as f64)?;
        if !(p < prev) {
            strictly_decreasing = false;
        }
        prev = p;
    }

    let mut t_levels = Vec::with_capacity(levels.j_max);
    let mut lo = 0.0;
    for j in 1..=levels.j_max {
        let target = theta.powi(j as i32);
        let mut hi = horizon;
        // invariant: p(lo) > target >= p(hi)
        let mut a = lo;
        let mut iterations = 0;
        while hi - a > QUANTILE_TOLERANCE && iterations < 200 {
            let mid = 0.5 * (a + hi);
            if mid <= a || mid >= hi {
                break;
            }
            if sg.survival(mid)? > target {
                a = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let t_j = hi;
        let delta = 1e-6 * horizon.max(1.0);
        // a level reached right at the horizon has nothing after it to compare
        if t_j + delta < horizon && target - sg.survival(t_j + delta)? <= 1e-12 * target {
            return Err(OracleError::DegenerateQuantile { level: j, time: t_j });
        }
        t_levels.push(t_j);
        lo = t_j;
    }

    let mut warnings = Vec::new();
    if p_t >= 1.0 {
        warnings.push(QuantileWarning::NoMassLost);
    } else if (levels.r - theta).abs() < BOUNDARY_MARGIN || (levels.r - 1.0).abs() < BOUNDARY_MARGIN {
        warnings.push(QuantileWarning::Boundary { r: levels.r, theta });
    }
    if p_t < 1.0 && levels.near_integer() {
        warnings.push(QuantileWarning::IntegerRatio { ratio: levels.ratio });
    }
    Ok(QuantileGrid {
        theta,
        horizon,
        t_levels,
        j_max: levels.j_max,
        r: levels.r,
        p_t,
        strictly_decreasing,
        warnings,
    })
}
