//! Replication harness: many independent runs, summarized against the oracle.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::engine::{run_fv, EngineError, FVConfig, FVRunRecord};
use crate::models::{ProcessModel, TestFunction};
use crate::oracle::{cost_model, OracleError, OracleReport};

/// Below this many replicas variance confidence intervals are not reported.
pub const MIN_REPLICAS_FOR_CI: usize = 100;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("at least 2 replicas are needed, got {0}")]
    TooFewReplicas(usize),
    #[error("replica {index} (seed {seed}) failed: {source}")]
    Replica {
        index: usize,
        seed: u64,
        #[source]
        source: EngineError,
    },
    #[error("records do not share a common configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs `m` replicas with seeds `base_seed, .., base_seed + m - 1`, in parallel
/// across replicas. The result is in seed order whatever the scheduling.
pub fn run_replicas<M: ProcessModel>(
    config: &FVConfig,
    model: &M,
    test_functions: &[TestFunction<M::State>],
    m: usize,
    base_seed: u64,
) -> Result<Vec<FVRunRecord>, StatsError> {
    if m < 2 {
        return Err(StatsError::TooFewReplicas(m));
    }
    config.validate().map_err(|source| StatsError::Replica {
        index: 0,
        seed: base_seed,
        source,
    })?;
    (0..m)
        .into_par_iter()
        .map(|index| {
            let seed = base_seed.wrapping_add(index as u64);
            run_fv(&config.clone().with_seed(seed), model, test_functions)
                .map_err(|source| StatsError::Replica { index, seed, source })
        })
        .collect()
}

/// Empirical counterpart of the asymptotic variance for one estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledVariance {
    /// Replicas that produced a value.
    pub count: usize,
    /// `N` times the sample variance (`M - 1` denominator).
    pub var_scaled: f64,
    /// The oracle's asymptotic variance it should approach.
    pub target: f64,
    /// Chi-square 95% interval for `var_scaled`; absent with too few replicas.
    pub ci95: Option<(f64, f64)>,
}

impl ScaledVariance {
    fn new(values: &[f64], n: usize, target: f64) -> Self {
        let count = values.len();
        let var_scaled = n as f64 * sample_variance(values);
        Self {
            count,
            var_scaled,
            target,
            ci95: variance_ci95(var_scaled, count),
        }
    }

    /// `|var_scaled / target - 1| <= tolerance`.
    pub fn within(&self, tolerance: f64) -> bool {
        self.target > 0.0 && (self.var_scaled / self.target - 1.0).abs() <= tolerance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    #[serde(rename = "M")]
    pub m: usize,
    pub n_particles: usize,
    pub batch_size: usize,
    pub horizon: f64,
    /// True when `M` is below [`MIN_REPLICAS_FOR_CI`].
    pub insufficient_replicas: bool,
    /// Exact `p_T`.
    pub p_t: f64,
    pub mean_p: f64,
    /// Empirical variance of `√N (p_T^N - p_T)`, with `ci95_var` and the oracle target.
    pub var_scaled: f64,
    pub ci95_var: Option<(f64, f64)>,
    /// Synchronized variance for `K > 1`, classical for `K = 1`.
    pub sigma2_target: f64,
    pub bias: f64,
    /// Standard error of `mean_p`.
    pub bias_stderr: f64,
    /// `|bias| <= 4` standard errors.
    pub bias_ok: bool,
    /// Mean `τ_j` over the replicas that branched at least `j` times,
    /// `j = 1..=j_max`; `None` when no replica got that far.
    pub tau_means: Vec<Option<f64>>,
    /// Mean `|τ_j - t_j|` over the same replicas.
    pub tau_abs_dev: Vec<Option<f64>>,
    /// Fraction of replicas with exactly `j_max` branchings.
    pub jmax_match_frac: f64,
    /// `N · MSE(γ_T^N(φ))` per test function.
    pub mse_scaled: BTreeMap<String, f64>,
    /// The L² bound `4 ‖φ‖∞²` per test function.
    pub l2_bound: BTreeMap<String, f64>,
    /// Scaled variance of `η_T^N(φ)/η_T^N(1_F)` against its oracle target.
    pub eta_norm: BTreeMap<String, ScaledVariance>,
    /// Skewness and excess kurtosis of the standardized errors of `p_T^N`.
    pub normality_stats: (f64, f64),
    /// Sample correlation of `p_T^N` between consecutive replicas.
    pub lag1_correlation: f64,
    pub cost_mean: f64,
    /// Histogram of resampling counts.
    pub resample_counts: BTreeMap<usize, usize>,
}

impl ReplicaSummary {
    pub fn p_variance(&self) -> ScaledVariance {
        ScaledVariance {
            count: self.m,
            var_scaled: self.var_scaled,
            target: self.sigma2_target,
            ci95: self.ci95_var,
        }
    }
}

fn check_common(records: &[FVRunRecord], report: &OracleReport) -> Result<(), StatsError> {
    let first = records.first().ok_or(StatsError::TooFewReplicas(0))?;
    if records.len() < 2 {
        return Err(StatsError::TooFewReplicas(records.len()));
    }
    for r in records {
        if r.n_particles != first.n_particles || r.batch_size != first.batch_size || r.horizon != first.horizon {
            return Err(StatsError::Mismatch(format!(
                "seed {} has (N, K, T) = ({}, {}, {}), seed {} has ({}, {}, {})",
                r.seed, r.n_particles, r.batch_size, r.horizon, first.seed, first.n_particles, first.batch_size, first.horizon
            )));
        }
    }
    let horizon = report.quantiles.horizon;
    if (first.horizon - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(StatsError::Mismatch(format!(
            "records run to T = {}, oracle computed at T = {horizon}",
            first.horizon
        )));
    }
    Ok(())
}

/// Compares replicas with the oracle. The variance target for `p_T^N` is the
/// classical one when `K = 1` and the synchronized one otherwise.
pub fn clt_report(records: &[FVRunRecord], report: &OracleReport) -> Result<ReplicaSummary, StatsError> {
    check_common(records, report)?;
    let m = records.len();
    let n = records[0].n_particles;
    let k = records[0].batch_size;
    let classical = k == 1;
    let p_t = report.p_t();
    let grid = &report.quantiles;

    let p_hats: Vec<f64> = records.iter().map(|r| r.p_hat).collect();
    let mean_p = mean(&p_hats);
    let var = sample_variance(&p_hats);
    let var_scaled = n as f64 * var;
    let bias = mean_p - p_t;
    let bias_stderr = (var / m as f64).sqrt();

    let indicator = report
        .indicator()
        .ok_or_else(|| StatsError::Mismatch("oracle report lacks the indicator function \"one\"".into()))?;
    let sigma2_target = if classical {
        indicator.sigma2_classical
    } else {
        indicator.sigma2_sync
    };

    let mut tau_means = Vec::with_capacity(grid.j_max);
    let mut tau_abs_dev = Vec::with_capacity(grid.j_max);
    for (j, &t_j) in grid.t_levels.iter().enumerate() {
        let taus: Vec<f64> = records.iter().filter_map(|r| r.branch_times.get(j).copied()).collect();
        if taus.is_empty() {
            tau_means.push(None);
            tau_abs_dev.push(None);
        } else {
            tau_means.push(Some(mean(&taus)));
            tau_abs_dev.push(Some(taus.iter().map(|t| (t - t_j).abs()).sum::<f64>() / taus.len() as f64));
        }
    }
    let jmax_match_frac = records.iter().filter(|r| r.resample_count == grid.j_max).count() as f64 / m as f64;

    let mut mse_scaled = BTreeMap::new();
    let mut l2_bound = BTreeMap::new();
    let mut eta_norm = BTreeMap::new();
    for f in &report.functionals {
        let estimates: Vec<f64> = records.iter().filter_map(|r| r.gamma_hat.get(&f.name).copied()).collect();
        if estimates.len() == m {
            let mse = estimates.iter().map(|g| (g - f.gamma_t).powi(2)).sum::<f64>() / m as f64;
            mse_scaled.insert(f.name.clone(), n as f64 * mse);
            l2_bound.insert(f.name.clone(), 4.0 * f.sup_norm * f.sup_norm);
        }
        let normalized: Vec<f64> = records
            .iter()
            .filter_map(|r| r.eta_norm_hat.get(&f.name).copied().flatten())
            .collect();
        if normalized.len() >= 2 {
            let target = if classical {
                f.sigma2_normalized_classical
            } else {
                f.sigma2_normalized_sync
            };
            eta_norm.insert(f.name.clone(), ScaledVariance::new(&normalized, n, target));
        }
    }

    let mut resample_counts = BTreeMap::new();
    for r in records {
        *resample_counts.entry(r.resample_count).or_insert(0) += 1;
    }

    Ok(ReplicaSummary {
        m,
        n_particles: n,
        batch_size: k,
        horizon: grid.horizon,
        insufficient_replicas: m < MIN_REPLICAS_FOR_CI,
        p_t,
        mean_p,
        var_scaled,
        ci95_var: variance_ci95(var_scaled, m),
        sigma2_target,
        bias,
        bias_stderr,
        bias_ok: bias.abs() <= 4.0 * bias_stderr,
        tau_means,
        tau_abs_dev,
        jmax_match_frac,
        mse_scaled,
        l2_bound,
        eta_norm,
        normality_stats: moments(&p_hats),
        lag1_correlation: lag1_correlation(&p_hats),
        cost_mean: records.iter().map(|r| r.cost_segments as f64).sum::<f64>() / m as f64,
        resample_counts,
    })
}

/// Mean simulated segments against the cost model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_particles: usize,
    pub batch_size: usize,
    pub mean_cost: f64,
    /// `N (1 + j_max (1 - θ))`.
    pub predicted_sync: f64,
    /// `N (1 - log p_T)`.
    pub predicted_classical: f64,
    /// The prediction matching the run: classical for `K = 1`.
    pub predicted: f64,
    /// `mean_cost / predicted - 1`.
    pub rel_deviation: f64,
}

pub fn cost_report(records: &[FVRunRecord], report: &OracleReport) -> Result<CostReport, StatsError> {
    let first = records.first().ok_or(StatsError::TooFewReplicas(0))?;
    let n = first.n_particles;
    let (predicted_sync, predicted_classical) = cost_model(report.p_t(), report.theta(), n)?;
    let predicted = if first.batch_size == 1 {
        predicted_classical
    } else {
        predicted_sync
    };
    let mean_cost = records.iter().map(|r| r.cost_segments as f64).sum::<f64>() / records.len() as f64;
    Ok(CostReport {
        n_particles: n,
        batch_size: first.batch_size,
        mean_cost,
        predicted_sync,
        predicted_classical,
        predicted,
        rel_deviation: mean_cost / predicted - 1.0,
    })
}

/// One CSV row per replica: seed, `p_hat`, resampling count, cost, then
/// `τ_1, τ_2, ..` padded to the longest run.
pub fn write_records_csv<W: Write>(records: &[FVRunRecord], out: W) -> Result<(), StatsError> {
    let width = records.iter().map(|r| r.branch_times.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["seed".to_string(), "p_hat".into(), "resample_count".into(), "cost_segments".into()];
    header.extend((1..=width).map(|j| format!("tau_{j}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.seed.to_string(),
            r.p_hat.to_string(),
            r.resample_count.to_string(),
            r.cost_segments.to_string(),
        ];
        row.extend((0..width).map(|j| r.branch_times.get(j).map_or_else(String::new, f64::to_string)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mu = mean(x);
    x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// 95% interval for a variance estimate from `count` values, using the
/// chi-square law with `count - 1` degrees of freedom.
pub fn variance_ci95(var: f64, count: usize) -> Option<(f64, f64)> {
    if count < MIN_REPLICAS_FOR_CI {
        return None;
    }
    let dof = (count - 1) as f64;
    let chi = ChiSquared::new(dof).ok()?;
    Some((dof * var / chi.inverse_cdf(0.975), dof * var / chi.inverse_cdf(0.025)))
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn moments(x: &[f64]) -> (f64, f64) {
    let mu = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return (0.0, 0.0);
    }
    let m3 = x.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Correlation between `x[i]` and `x[i + 1]`.
pub fn lag1_correlation(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    let (a, b) = (&x[..x.len() - 1], &x[1..]);
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum();
    let va: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
