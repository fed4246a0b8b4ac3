//! Exact reference values for finite-state models.
//!
//! Everything here is a deterministic function of the sub-generator, the
//! initial law, `θ` and `T`: survival curve, quantile times, the synchronized
//! asymptotic variance in two algebraically equivalent forms, the classical
//! (`K = 1`) variance, the relative-variance bounds, `h(θ)` and the cost model.

mod bounds;
mod quantile;
mod semigroup;
mod variance;

pub use bounds::{cost_model, h_curve, h_theta, relative_variance_bounds, theta_grid, Levels, INTEGER_RATIO_GUARD};
pub use quantile::{QuantileGrid, QuantileWarning, BOUNDARY_MARGIN, QUANTILE_TOLERANCE};
pub use semigroup::{Semigroup, POISSON_TAIL};
pub use variance::{adaptive_simpson, LevelMeasures, QUADRATURE_TOLERANCE};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{CtmcModel, TestFunction};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("time must be finite and >= 0, got {0}")]
    NegativeTime(f64),
    #[error("vector has {got} entries, model has {expected} states")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    OutOfRange(String),
    #[error("survival is flat at level {level} (t ≈ {time}); the quantile time is not unique")]
    DegenerateQuantile { level: usize, time: f64 },
    #[error("adaptive quadrature did not converge near t = {at} (local error {error:e})")]
    Quadrature { at: f64, error: f64 },
    #[error("model has no exact oracle")]
    NoOracle,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `exp(tA) φ`.
pub fn semigroup_apply(model: &CtmcModel, t: f64, phi: &[f64]) -> Result<Vec<f64>, OracleError> {
    Semigroup::new(model).apply(t, phi)
}

/// `p_t = η_0 exp(tA) 1`.
pub fn survival_probability(model: &CtmcModel, t: f64) -> Result<f64, OracleError> {
    Semigroup::new(model).survival(t)
}

pub fn quantile_times(model: &CtmcModel, theta: f64, horizon: f64) -> Result<QuantileGrid, OracleError> {
    quantile::compute(&Semigroup::new(model), theta, horizon)
}

pub fn sigma2_sync(model: &CtmcModel, phi: &[f64], theta: f64, horizon: f64) -> Result<f64, OracleError> {
    Oracle::new(model, theta, horizon)?.sigma2_sync(phi)
}

pub fn sigma2_sync_alt(model: &CtmcModel, phi: &[f64], theta: f64, horizon: f64) -> Result<f64, OracleError> {
    Oracle::new(model, theta, horizon)?.sigma2_sync_alt(phi)
}

pub fn sigma2_classical(model: &CtmcModel, phi: &[f64], horizon: f64) -> Result<f64, OracleError> {
    variance::classical_variance(&Semigroup::new(model), horizon, phi)
}

/// Survival curve `(t, p_t)` on `points` equally spaced times in `[0, T]`, as CSV.
pub fn write_survival_curve<W: Write>(
    model: &CtmcModel,
    horizon: f64,
    points: usize,
    out: W,
) -> Result<(), OracleError> {
    let sg = Semigroup::new(model);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p_t"])?;
    let steps = points.max(2) - 1;
    for i in 0..=steps {
        let t = horizon * i as f64 / steps as f64;
        w.write_record([t.to_string(), sg.survival(t)?.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A model prepared for repeated exact queries at fixed `(θ, T)`.
#[derive(Clone, Debug)]
pub struct Oracle {
    semigroup: Semigroup,
    grid: QuantileGrid,
    levels: LevelMeasures,
}

impl Oracle {
    pub fn new(model: &CtmcModel, theta: f64, horizon: f64) -> Result<Self, OracleError> {
        let semigroup = Semigroup::new(model);
        let grid = quantile::compute(&semigroup, theta, horizon)?;
        let levels = LevelMeasures::new(&semigroup, &grid)?;
        Ok(Self {
            semigroup,
            grid,
            levels,
        })
    }

    pub fn semigroup(&self) -> &Semigroup {
        &self.semigroup
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn levels(&self) -> &LevelMeasures {
        &self.levels
    }

    fn check(&self, phi: &[f64]) -> Result<(), OracleError> {
        let n = self.semigroup.n_states();
        if phi.len() != n {
            return Err(OracleError::Dimension {
                expected: n,
                got: phi.len(),
            });
        }
        Ok(())
    }

    /// `γ_T(φ)`.
    pub fn gamma(&self, phi: &[f64]) -> Result<f64, OracleError> {
        self.check(phi)?;
        Ok(semigroup::dot(&self.semigroup.gamma(self.grid.horizon)?, phi))
    }

    pub fn sigma2_sync(&self, phi: &[f64]) -> Result<f64, OracleError> {
        self.check(phi)?;
        variance::sync_variance(&self.semigroup, &self.grid, &self.levels, phi)
    }

    pub fn sigma2_sync_alt(&self, phi: &[f64]) -> Result<f64, OracleError> {
        self.check(phi)?;
        variance::sync_variance_predicted(&self.semigroup, &self.grid, &self.levels, phi)
    }

    pub fn sigma2_classical(&self, phi: &[f64]) -> Result<f64, OracleError> {
        self.check(phi)?;
        variance::classical_variance(&self.semigroup, self.grid.horizon, phi)
    }

    pub fn variance_terms(&self, phi: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.check(phi)?;
        variance::variance_terms(&self.semigroup, &self.grid, &self.levels, phi)
    }

    /// `φ - (γ_T(φ)/p_T) 1_F`, the centred function whose variance drives the
    /// normalized estimator `η_T^N(φ)/η_T^N(1_F)`.
    pub fn centred(&self, phi: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mean = self.gamma(phi)? / self.grid.p_t;
        Ok(phi.iter().map(|v| v - mean).collect())
    }
}

/// Exact quantities for one test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalOracle {
    pub name: String,
    pub values: Vec<f64>,
    pub sup_norm: f64,
    /// `γ_T(φ)`.
    pub gamma_t: f64,
    /// `E[φ(X_T) | τ_∂ > T]`.
    pub conditional_mean: f64,
    pub sigma2_sync: f64,
    pub sigma2_sync_alt: f64,
    pub sigma2_classical: f64,
    /// Asymptotic variance of the normalized estimator, synchronized system.
    pub sigma2_normalized_sync: f64,
    /// Same for the classical system.
    pub sigma2_normalized_classical: f64,
    /// `𝕍_{η_{t_j}}(Q^{T-t_j}φ)`, `j = 1..=j_max`.
    pub variance_terms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantiles: QuantileGrid,
    pub n_particles: usize,
    pub functionals: Vec<FunctionalOracle>,
    /// `σ_T²(1_F)/p_T²`.
    pub rel_var_sync: f64,
    pub rel_var_lower: Option<f64>,
    pub rel_var_upper: Option<f64>,
    /// `(θ, h(θ))` on `0.01, 0.02, .., 0.99`.
    pub h_curve: Vec<(f64, f64)>,
    pub cost_sync: f64,
    pub cost_classical: f64,
    /// `η_{t_j}` for `j = 1..=j_max`.
    pub eta_levels: Vec<Vec<f64>>,
}

impl OracleReport {
    pub fn compute(
        model: &CtmcModel,
        test_functions: &[TestFunction<usize>],
        theta: f64,
        horizon: f64,
        n_particles: usize,
    ) -> Result<Self, OracleError> {
        let oracle = Oracle::new(model, theta, horizon)?;
        let grid = oracle.grid().clone();
        let p_t = grid.p_t;
        let mut functionals = Vec::with_capacity(test_functions.len());
        for phi in test_functions {
            let values = model.values(phi);
            let gamma_t = oracle.gamma(&values)?;
            let centred = oracle.centred(&values)?;
            functionals.push(FunctionalOracle {
                name: phi.name().to_string(),
                sup_norm: phi.sup_norm(),
                gamma_t,
                conditional_mean: gamma_t / p_t,
                sigma2_sync: oracle.sigma2_sync(&values)?,
                sigma2_sync_alt: oracle.sigma2_sync_alt(&values)?,
                sigma2_classical: oracle.sigma2_classical(&values)?,
                sigma2_normalized_sync: oracle.sigma2_sync(&centred)? / (p_t * p_t),
                sigma2_normalized_classical: oracle.sigma2_classical(&centred)? / (p_t * p_t),
                variance_terms: oracle.variance_terms(&values)?,
                values,
            });
        }
        let ones = vec![1.0; model.n_states()];
        let rel_var_sync = oracle.sigma2_sync(&ones)? / (p_t * p_t);
        let (rel_var_lower, rel_var_upper, h_curve) = if p_t < 1.0 {
            let (lo, hi) = relative_variance_bounds(p_t, theta)?;
            (Some(lo), Some(hi), h_curve(p_t, 0.01, 0.99, 0.01)?)
        } else {
            (None, None, Vec::new())
        };
        let (cost_sync, cost_classical) = cost_model(p_t, theta, n_particles)?;
        Ok(Self {
            eta_levels: oracle.levels().eta_levels.clone(),
            quantiles: grid,
            n_particles,
            functionals,
            rel_var_sync,
            rel_var_lower,
            rel_var_upper,
            h_curve,
            cost_sync,
            cost_classical,
        })
    }

    pub fn p_t(&self) -> f64 {
        self.quantiles.p_t
    }

    pub fn theta(&self) -> f64 {
        self.quantiles.theta
    }

    pub fn functional(&self, name: &str) -> Option<&FunctionalOracle> {
        self.functionals.iter().find(|f| f.name == name)
    }

    /// `1_F` entry, computed on demand if the report was built without it.
    pub fn indicator(&self) -> Option<&FunctionalOracle> {
        self.functional("one")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ProcessModel;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain Taylor series of `exp(tA)` with scaling and squaring, used only as
    /// an independent check on uniformization.
    fn taylor_expm(a: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
        let n = a.len();
        let norm: f64 = a.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t;
        let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
        let scale = t / 2f64.powi(squarings as i32);
        let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum()).collect())
                .collect()
        };
        let mut result: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let mut term = result.clone();
        let scaled: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        for k in 1..30 {
            term = mul(&term, &scaled);
            for row in term.iter_mut() {
                for x in row.iter_mut() {
                    *x /= k as f64;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    result[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            result = mul(&result, &result);
        }
        result
    }

    fn pure_death() -> CtmcModel {
        CtmcModel::pure_death(1.0).unwrap()
    }

    #[test]
    fn pure_death_reference_values() {
        let p = (-3.0f64).exp();
        let o = Oracle::new(&pure_death(), 0.5, 3.0).unwrap();
        assert_eq!(o.grid().j_max, 4);
        for (j, t) in o.grid().t_levels.iter().enumerate() {
            assert!((t - (j + 1) as f64 * std::f64::consts::LN_2).abs() < 1e-11);
        }
        let s = o.sigma2_sync(&[1.0]).unwrap();
        let r = 16.0 * p;
        // every level measure is the point mass at the single state; only the
        // terminal sub-probability r has non-zero variance
        let expected = 0.5f64.powi(8) * (r - r * r + 4.0 * r * r);
        assert!((s / expected - 1.0).abs() < 1e-10);
        assert!((s / (p * p) - 4.25535).abs() < 1e-5);
        assert!((s / 0.0105482 - 1.0).abs() < 1e-4);
        let c = o.sigma2_classical(&[1.0]).unwrap();
        assert!((c / (p * p) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_killing_gives_zero_variance_of_indicator() {
        let m = CtmcModel::new(vec![vec![-1.0, 1.0], vec![2.0, -2.0]], vec![0.3, 0.7]).unwrap();
        let report = OracleReport::compute(&m, &[TestFunction::indicator()], 0.5, 2.0, 100).unwrap();
        assert_eq!(report.quantiles.j_max, 0);
        assert_eq!(report.quantiles.warnings, vec![QuantileWarning::NoMassLost]);
        assert!(report.rel_var_sync.abs() < 1e-12);
        assert!(report.rel_var_lower.is_none());
        assert_eq!(report.cost_sync, 100.0);
    }

    #[test]
    fn two_state_forms_agree_and_lie_within_bounds() {
        let m = CtmcModel::new(vec![vec![-1.5, 1.0], vec![1.0, -3.0]], vec![1.0, 0.0]).unwrap();
        let tfs = [TestFunction::indicator(), m.test_function("state:1").unwrap()];
        let report = OracleReport::compute(&m, &tfs, 0.5, 2.5, 1000).unwrap();
        assert!((report.p_t() - 0.09847).abs() < 1e-4);
        assert_eq!(report.quantiles.j_max, 3);
        for f in &report.functionals {
            assert!((f.sigma2_sync - f.sigma2_sync_alt).abs() <= 1e-10 * f.sigma2_sync.abs().max(1e-300));
        }
        let (lo, hi) = (report.rel_var_lower.unwrap(), report.rel_var_upper.unwrap());
        assert!(lo <= report.rel_var_sync && report.rel_var_sync <= hi, "{lo} {} {hi}", report.rel_var_sync);
    }

    #[test]
    fn uniformization_matches_taylor_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5 {
            let m = CtmcModel::random(n, &mut rng).unwrap();
            let sg = Semigroup::new(&m);
            let e = taylor_expm(m.sub_generator(), 1.7);
            for i in 0..n {
                let mut unit = vec![0.0; n];
                unit[i] = 1.0;
                let col = sg.apply(1.7, &unit).unwrap();
                for k in 0..n {
                    assert!((col[k] - e[k][i]).abs() < 1e-12, "n={n} ({k},{i})");
                }
            }
        }
    }

    #[test]
    fn survival_curve_csv() {
        let mut buf = Vec::new();
        write_survival_curve(&pure_death(), 1.0, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,p_t");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1"));
    }

    #[test]
    fn pure_death_bounds_h_and_cost() {
        let p = (-3.0f64).exp();
        let (lo, hi) = relative_variance_bounds(p, 0.5).unwrap();
        assert!((lo - 4.25535).abs() < 1e-5);
        assert!((hi - 26.5006).abs() < 1e-4);
        assert!((h_theta(p, 0.5).unwrap() - lo).abs() < 1e-14);
        let (sync, classical) = cost_model(p, 0.5, 10_000).unwrap();
        assert!((sync - 3e4).abs() < 1e-9 && (classical - 4e4).abs() < 1e-9);
        let curve = h_curve(p, 0.05, 0.95, 0.01).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert!((h_theta(p, 0.999).unwrap() - 3.0).abs() < 0.01);
    }

    #[test]
    fn short_horizon_has_no_levels() {
        let g = quantile_times(&pure_death(), 0.5, 0.5).unwrap();
        assert_eq!(g.j_max, 0);
        assert!(g.t_levels.is_empty());
        assert!((g.r - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn two_state_classical_variance_window() {
        let m = CtmcModel::new(vec![vec![-1.5, 1.0], vec![1.0, -3.0]], vec![1.0, 0.0]).unwrap();
        let p = survival_probability(&m, 2.5).unwrap();
        let c = sigma2_classical(&m, &[1.0, 1.0], 2.5).unwrap();
        assert!(c >= p * p * -p.ln());
        assert!(c <= p * p * (2.0 * (1.0 - p) / p + p.ln()));
        let e = taylor_expm(m.sub_generator(), 1.0);
        let direct = survival_probability(&m, 1.0).unwrap();
        assert!((direct - (e[0][0] + e[0][1])).abs() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn semigroup_composes(seed in any::<u64>(), s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = CtmcModel::random(4, &mut rng).unwrap();
            let sg = Semigroup::new(&m);
            let phi = [1.0, -0.5, 2.0, 0.25];
            let once = sg.apply(s + t, &phi).unwrap();
            let twice = sg.apply(s, &sg.apply(t, &phi).unwrap()).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sync_variance_forms_agree(seed in any::<u64>(), theta in 0.2f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = CtmcModel::random(3, &mut rng).unwrap();
            let phi = [0.0, 1.0, 2.0];
            let o = Oracle::new(&m, theta, 2.0).unwrap();
            let a = o.sigma2_sync(&phi).unwrap();
            let b = o.sigma2_sync_alt(&phi).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }
}
