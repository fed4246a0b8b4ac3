//! Closed forms in `(p_T, θ)`: level count, relative-variance bounds, `h(θ)`
//! and the cost model.

use super::OracleError;

/// Distance to an integer below which `log p_T / log θ` is treated as integral.
pub const INTEGER_RATIO_GUARD: f64 = 1e-9;

/// Number of `θ`-levels above `p_T` and the remaining fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Levels {
    /// `⌊log p_T / log θ⌋`.
    pub j_max: usize,
    /// `p_T θ^{-j_max}`, in `(θ, 1]`.
    pub r: f64,
    /// `log p_T / log θ`.
    pub ratio: f64,
}

impl Levels {
    pub fn new(p_t: f64, theta: f64) -> Result<Self, OracleError> {
        check_theta(theta)?;
        if !(p_t > 0.0 && p_t <= 1.0) {
            return Err(OracleError::OutOfRange(format!("p_T must lie in (0, 1], got {p_t}")));
        }
        let ratio = p_t.ln() / theta.ln();
        let j_max = ratio.floor().max(0.0) as usize;
        let r = p_t / theta.powi(j_max as i32);
        Ok(Self { j_max, r, ratio })
    }

    /// True when `log p_T / log θ` is (numerically) an integer.
    pub fn near_integer(&self) -> bool {
        (self.ratio - self.ratio.round()).abs() < INTEGER_RATIO_GUARD
    }
}

fn check_theta(theta: f64) -> Result<(), OracleError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(OracleError::OutOfRange(format!("theta must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

fn check_rare(p_t: f64) -> Result<(), OracleError> {
    if !(p_t > 0.0 && p_t < 1.0) {
        return Err(OracleError::OutOfRange(format!("p_T must lie in (0, 1), got {p_t}")));
    }
    Ok(())
}

/// Lower and upper bounds on the relative asymptotic variance `σ_T²(1_F)/p_T²`:
///
/// lower `= j_max (1-θ)/θ + (1-r)/r`,
/// upper `= (1+θ)/p_T - (θ+r)/r - j_max (1-θ)`.
pub fn relative_variance_bounds(p_t: f64, theta: f64) -> Result<(f64, f64), OracleError> {
    check_rare(p_t)?;
    let Levels { j_max, r, .. } = Levels::new(p_t, theta)?;
    let j = j_max as f64;
    let lower = j * (1.0 - theta) / theta + (1.0 - r) / r;
    let upper = (1.0 + theta) / p_t - (theta + r) / r - j * (1.0 - theta);
    Ok((lower, upper))
}

/// `h(θ) = j (1-θ)/θ + θ^j / p_T - 1` with `j = ⌊log p_T / log θ⌋`.
pub fn h_theta(p_t: f64, theta: f64) -> Result<f64, OracleError> {
    check_rare(p_t)?;
    let Levels { j_max, .. } = Levels::new(p_t, theta)?;
    let j = j_max as f64;
    Ok(j * (1.0 - theta) / theta + theta.powi(j_max as i32) / p_t - 1.0)
}

/// Expected number of simulated segments: synchronized `N (1 + j_max (1-θ))`
/// and classical `N (1 - log p_T)`.
pub fn cost_model(p_t: f64, theta: f64, n_particles: usize) -> Result<(f64, f64), OracleError> {
    let Levels { j_max, .. } = Levels::new(p_t, theta)?;
    let n = n_particles as f64;
    Ok((n * (1.0 + j_max as f64 * (1.0 - theta)), n * (1.0 - p_t.ln())))
}

/// `h` sampled on `start, start + step, ..` up to `stop` (inclusive within rounding).
pub fn h_curve(p_t: f64, start: f64, stop: f64, step: f64) -> Result<Vec<(f64, f64)>, OracleError> {
    theta_grid(start, stop, step)?
        .into_iter()
        .map(|theta| h_theta(p_t, theta).map(|h| (theta, h)))
        .collect()
}

/// `start, start + step, ..` up to `stop`, computed by index and rounded to
/// 12 decimals so that `0.1 + 2 * 0.1` prints as `0.3`.
pub fn theta_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, OracleError> {
    if !(step > 0.0) || !(start <= stop) {
        return Err(OracleError::OutOfRange(format!(
            "theta grid needs step > 0 and start <= stop (start {start}, stop {stop}, step {step})"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    for &theta in &grid {
        check_theta(theta)?;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_for_pure_death_benchmark() {
        let l = Levels::new((-3.0f64).exp(), 0.5).unwrap();
        assert_eq!(l.j_max, 4);
        assert!((l.r - 16.0 * (-3.0f64).exp()).abs() < 1e-15);
        assert!(!l.near_integer());
        assert!(Levels::new(0.25, 0.5).unwrap().near_integer());
        let none = Levels::new(1.0, 0.5).unwrap();
        assert_eq!((none.j_max, none.r), (0, 1.0));
    }

    #[test]
    fn range_checks() {
        assert!(relative_variance_bounds(1.0, 0.5).is_err());
        assert!(relative_variance_bounds(0.1, 1.0).is_err());
        assert!(h_theta(0.0, 0.5).is_err());
        assert!(cost_model(0.1, 0.0, 10).is_err());
        assert!(theta_grid(0.5, 0.1, 0.1).is_err());
        let grid = theta_grid(0.1, 0.9, 0.1).unwrap();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid[2], 0.3);
    }

    #[test]
    fn cost_without_levels_is_one_pass() {
        let (sync, _) = cost_model(0.9, 0.5, 1000).unwrap();
        assert_eq!(sync, 1000.0);
    }
}
