//! Asymptotic variances of `√N (γ_T^N(φ) - γ_T(φ))`.
//!
//! Two normalizations of the same semigroup vectors are used here and must
//! not be mixed up:
//!
//! * synchronized system: `η_t = γ_t / ρ_t` with `ρ_t = θ^j` on `[t_j, t_{j+1})`,
//!   a sub-probability whose missing mass sits on the cemetery;
//! * classical system (`K = 1`): `η_t = γ_t / p_t`, the law conditioned on survival.
//!
//! `𝕍_μ(f) = μ(f²) - μ(f)²` in both cases, with `f(∂) = 0`.

use super::quantile::QuantileGrid;
use super::semigroup::{dot, Semigroup};
use super::OracleError;

pub const QUADRATURE_TOLERANCE: f64 = 1e-9;
const QUADRATURE_PANELS: usize = 16;
const QUADRATURE_MAX_DEPTH: u32 = 40;

fn moment_variance(mu: &[f64], f: &[f64]) -> f64 {
    let m1: f64 = mu.iter().zip(f).map(|(m, v)| m * v).sum();
    let m2: f64 = mu.iter().zip(f).map(|(m, v)| m * v * v).sum();
    m2 - m1 * m1
}

fn scaled(v: &[f64], factor: f64) -> Vec<f64> {
    v.iter().map(|x| x * factor).collect()
}

/// Pieces shared by both synchronized formulas.
#[derive(Clone, Debug)]
pub struct LevelMeasures {
    /// `η_{t_j}` for `j = 1..=j_max`, each a probability vector.
    pub eta_levels: Vec<Vec<f64>>,
    /// `η_T = γ_T / θ^{j_max}`.
    pub eta_horizon: Vec<f64>,
}

impl LevelMeasures {
    pub fn new(sg: &Semigroup, grid: &QuantileGrid) -> Result<Self, OracleError> {
        let eta_levels = grid
            .t_levels
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let rho = grid.theta.powi(i as i32 + 1);
                sg.gamma(t).map(|g| scaled(&g, 1.0 / rho))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rho_t = grid.theta.powi(grid.j_max as i32);
        let eta_horizon = scaled(&sg.gamma(grid.horizon)?, 1.0 / rho_t);
        Ok(Self {
            eta_levels,
            eta_horizon,
        })
    }
}

/// `𝕍_{η_{t_j}}(Q^{T-t_j} φ)` for `j = 1..=j_max`.
pub fn variance_terms(
    sg: &Semigroup,
    grid: &QuantileGrid,
    levels: &LevelMeasures,
    phi: &[f64],
) -> Result<Vec<f64>, OracleError> {
    grid.t_levels
        .iter()
        .zip(&levels.eta_levels)
        .map(|(&t, eta)| Ok(moment_variance(eta, &sg.apply(grid.horizon - t, phi)?)))
        .collect()
}

/// `θ^{2J} 𝕍_{η_T}(φ) + J (1/θ - 1) θ^{2J} η_T(φ)² + Σ_j 𝕍_{η_{t_j}}(Q^{T-t_j}φ) (θ^{2j-1} - θ^{2j+1})`.
pub fn sync_variance(
    sg: &Semigroup,
    grid: &QuantileGrid,
    levels: &LevelMeasures,
    phi: &[f64],
) -> Result<f64, OracleError> {
    let theta = grid.theta;
    let j_max = grid.j_max as i32;
    let theta_2j = theta.powi(2 * j_max);
    let eta_phi = dot(&levels.eta_horizon, phi);
    let mut sigma2 = theta_2j * moment_variance(&levels.eta_horizon, phi)
        + grid.j_max as f64 * (1.0 / theta - 1.0) * theta_2j * eta_phi * eta_phi;
    for (j, v) in (1..).zip(variance_terms(sg, grid, levels, phi)?) {
        sigma2 += v * (theta.powi(2 * j - 1) - theta.powi(2 * j + 1));
    }
    Ok(sigma2)
}

/// Predicted-measure form:
/// `Σ_{j=0}^{J} θ^{2j} 𝕍_{η̃_{t_{j+1}}}(Q) - Σ_{j=1}^{J} θ^{2j+1} 𝕍_{η_{t_j}}(Q)`,
/// where `η̃_{t_{j+1}} = η_{t_j} Q^{t_{j+1}-t_j}` is obtained by propagating the
/// previous level measure (with `t_0 = 0`, `η_{t_0} = η_0`, `t_{J+1} = T`).
pub fn sync_variance_predicted(
    sg: &Semigroup,
    grid: &QuantileGrid,
    levels: &LevelMeasures,
    phi: &[f64],
) -> Result<f64, OracleError> {
    let theta = grid.theta;
    let times = grid.padded_levels();
    let mut previous: Vec<f64> = sg.initial_law().to_vec();
    let mut sigma2 = 0.0;
    for j in 0..=grid.j_max {
        let predicted = sg.apply_left(times[j + 1] - times[j], &previous)?;
        let q = sg.apply(grid.horizon - times[j + 1], phi)?;
        sigma2 += theta.powi(2 * j as i32) * moment_variance(&predicted, &q);
        if j < grid.j_max {
            let eta = &levels.eta_levels[j];
            sigma2 -= theta.powi(2 * j as i32 + 3) * moment_variance(eta, &q);
            previous = eta.clone();
        }
    }
    Ok(sigma2)
}

/// Classical (`K = 1`) variance
/// `p_T² 𝕍_{η_T}(φ) - p_T² log(p_T) η_T(φ)² - 2 ∫_0^T 𝕍_{η_t}(Q^{T-t}φ) p_t dp_t`
/// with `η_t` conditioned on survival. The integral is taken by adaptive
/// Simpson on `t` using `dp_t = (η_0 e^{tA} A 1) dt`.
pub fn classical_variance(sg: &Semigroup, horizon: f64, phi: &[f64]) -> Result<f64, OracleError> {
    let gamma_t = sg.gamma(horizon)?;
    let p_t: f64 = gamma_t.iter().sum();
    let g_phi = dot(&gamma_t, phi);
    let g_phi2: f64 = gamma_t.iter().zip(phi).map(|(g, v)| g * v * v).sum();
    // p_T² 𝕍_{η_T}(φ) = p_T γ_T(φ²) - γ_T(φ)²,  p_T² η_T(φ)² = γ_T(φ)²
    let terminal = p_t * g_phi2 - g_phi * g_phi - p_t.ln() * g_phi * g_phi;

    let n = sg.n_states();
    let kill_flux = sg.generator_apply(&vec![1.0; n]);
    // 𝕍_{η_t}(Q) p_t · dp_t/dt = (γ_t(Q²) - γ_t(Q)²/p_t) · γ_t(A 1)
    let integrand = |t: f64| -> Result<f64, OracleError> {
        let gamma = sg.gamma(t)?;
        let p: f64 = gamma.iter().sum();
        if p <= 0.0 {
            return Ok(0.0);
        }
        let q = sg.apply(horizon - t, phi)?;
        let g1 = dot(&gamma, &q);
        let g2: f64 = gamma.iter().zip(&q).map(|(g, v)| g * v * v).sum();
        Ok((g2 - g1 * g1 / p) * dot(&gamma, &kill_flux))
    };
    let integral = adaptive_simpson(integrand, 0.0, horizon, QUADRATURE_TOLERANCE)?;
    Ok(terminal - 2.0 * integral)
}

/// Adaptive Simpson quadrature to `tol` absolute error over `[a, b]`, starting
/// from a fixed number of panels.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, OracleError>
where
    F: Fn(f64) -> Result<f64, OracleError>,
{
    let width = (b - a) / QUADRATURE_PANELS as f64;
    let panel_tol = tol / QUADRATURE_PANELS as f64;
    let mut total = 0.0;
    for i in 0..QUADRATURE_PANELS {
        let lo = a + i as f64 * width;
        let hi = if i + 1 == QUADRATURE_PANELS { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo)?, f(mid)?, f(hi)?);
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(&f, lo, hi, flo, fmid, fhi, whole, panel_tol, QUADRATURE_MAX_DEPTH)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, OracleError>
where
    F: Fn(f64) -> Result<f64, OracleError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 {
        return Err(OracleError::Quadrature { at: m, error: diff.abs() });
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}
