//! Subcommands of the `syncfv` binary. Each takes a parsed configuration and an
//! output directory, writes its files there and returns a one-line summary.
//! Output files depend only on the configuration, so reruns are byte-identical.

pub mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use syncfv::engine::FVRunRecord;
use syncfv::models::{AnyModel, CtmcModel, ProcessModel};
use syncfv::oracle::{
    cost_model, h_theta, relative_variance_bounds, theta_grid, write_survival_curve, Levels, Oracle, OracleError,
    OracleReport, INTEGER_RATIO_GUARD,
};
use syncfv::stats::{
    clt_report, cost_report, run_replicas, write_records_csv, CostReport, ReplicaSummary, StatsError,
};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Engine(String),
    #[error("no exact oracle: {0}")]
    NoOracle(String),
    #[error("{failed} of {total} criteria failed (summary written to {path})")]
    CriteriaFailed { failed: usize, total: usize, path: PathBuf },
    #[error("oracle computation failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 1,
            CliError::Engine(_) | CliError::Oracle(_) => 2,
            CliError::NoOracle(_) => 3,
            CliError::CriteriaFailed { .. } => 4,
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::TooFewReplicas(_) | StatsError::Mismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Engine(e.to_string()),
        }
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(out: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(out).map_err(|e| output_error(out, e))?;
    let path = out.join(name);
    let file = File::create(&path).map_err(|e| output_error(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_error(&path, e))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| output_error(&path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| output_error(&path, e))?;
    Ok(path)
}

fn write_records(out: &Path, records: &[FVRunRecord]) -> Result<(), CliError> {
    write_json(out, "records.json", &records)?;
    let (path, w) = create(out, "records.csv")?;
    write_records_csv(records, w).map_err(|e| output_error(&path, e))
}

fn ctmc(config: &ExperimentConfig) -> Result<CtmcModel, CliError> {
    match config.model.build().map_err(|e| CliError::Config(e.to_string()))? {
        AnyModel::Ctmc(m) => Ok(m),
        AnyModel::Diffusion(_) => Err(CliError::NoOracle(
            "diffusion models have no exact oracle; only finite-state (ctmc, pure_death) models do".into(),
        )),
    }
}

fn simulate_records<M: ProcessModel>(config: &ExperimentConfig, model: &M) -> Result<Vec<FVRunRecord>, CliError> {
    let tfs = config.resolve_test_functions(model)?;
    Ok(run_replicas(&config.fv_config()?, model, &tfs, config.replicas, config.seed())?)
}

fn resample_histogram(records: &[FVRunRecord]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.resample_count).or_insert(0) += 1;
    }
    counts
}

/// Runs the replicas and writes `records.json` and `records.csv`.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let records = match config.model.build().map_err(|e| CliError::Config(e.to_string()))? {
        AnyModel::Ctmc(m) => simulate_records(config, &m)?,
        AnyModel::Diffusion(d) => simulate_records(config, &d)?,
    };
    write_records(out, &records)?;
    let mean = records.iter().map(|r| r.p_hat).sum::<f64>() / records.len() as f64;
    let counts: Vec<String> = resample_histogram(&records)
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect();
    Ok(format!(
        "M={} mean p_hat={mean:.6e} resample counts {{{}}}",
        records.len(),
        counts.join(", ")
    ))
}

/// Writes `oracle_report.json` and `survival_curve.csv`.
pub fn cmd_oracle(config: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let model = ctmc(config)?;
    let tfs = config.resolve_test_functions(&model)?;
    let theta = config.oracle_theta()?;
    let report = OracleReport::compute(&model, &tfs, theta, config.horizon, config.n_particles)?;
    write_json(out, "oracle_report.json", &report)?;
    let (path, w) = create(out, "survival_curve.csv")?;
    write_survival_curve(&model, config.horizon, config.curve_points, w).map_err(|e| output_error(&path, e))?;
    Ok(format!(
        "p_T={:.6e} j_max={} r={:.6} sigma2_sync(1)={:.6e} warnings={}",
        report.p_t(),
        report.quantiles.j_max,
        report.quantiles.r,
        report.rel_var_sync * report.p_t() * report.p_t(),
        report.quantiles.warnings.len()
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// One named check of `validate`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub status: Status,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Criterion {
    fn check(name: &str, pass: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            value: Some(value),
            threshold: Some(threshold),
            detail,
        }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Skipped,
            value: None,
            threshold: None,
            detail: detail.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Validation {
    pub oracle_theta: f64,
    pub warnings: Vec<String>,
    pub summary: ReplicaSummary,
    pub cost: CostReport,
    pub criteria: Vec<Criterion>,
    pub all_passed: bool,
}

fn criteria(config: &ExperimentConfig, report: &OracleReport, s: &ReplicaSummary, cost: &CostReport) -> Vec<Criterion> {
    let tol = &config.tolerances;
    let classical = s.batch_size == 1;
    let mut out = Vec::new();

    if s.insufficient_replicas {
        out.push(Criterion::skipped("clt_variance", "fewer than 100 replicas"));
    } else {
        let dev = (s.var_scaled / s.sigma2_target - 1.0).abs();
        out.push(Criterion::check(
            "clt_variance",
            dev <= tol.variance_rel,
            dev,
            tol.variance_rel,
            format!(
                "var_scaled {:.6e} vs {} oracle {:.6e}",
                s.var_scaled,
                if classical { "classical" } else { "synchronized" },
                s.sigma2_target
            ),
        ));
    }

    let z = if s.bias_stderr > 0.0 { s.bias.abs() / s.bias_stderr } else if s.bias == 0.0 { 0.0 } else { f64::INFINITY };
    out.push(Criterion::check(
        "bias",
        z <= tol.bias_se,
        z,
        tol.bias_se,
        format!("mean p_hat {:.6e} vs p_T {:.6e}", s.mean_p, s.p_t),
    ));

    if classical {
        out.push(Criterion::skipped("quantile_convergence", "K = 1 has no theta levels"));
        out.push(Criterion::skipped("jmax_match", "K = 1 has no theta levels"));
    } else if report.quantiles.j_max == 0 {
        out.push(Criterion::skipped("quantile_convergence", "no quantile level above p_T"));
        out.push(Criterion::check(
            "jmax_match",
            s.jmax_match_frac >= tol.jmax_frac,
            s.jmax_match_frac,
            tol.jmax_frac,
            "fraction of runs with no resampling".into(),
        ));
    } else {
        let worst = s
            .tau_abs_dev
            .iter()
            .map(|d| d.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        out.push(Criterion::check(
            "quantile_convergence",
            worst <= tol.tau_abs,
            worst,
            tol.tau_abs,
            "max over j of mean |tau_j - t_j|".into(),
        ));
        out.push(Criterion::check(
            "jmax_match",
            s.jmax_match_frac >= tol.jmax_frac,
            s.jmax_match_frac,
            tol.jmax_frac,
            format!("fraction of runs with exactly j_max = {} resamplings", report.quantiles.j_max),
        ));
    }

    let slack = 1.0 + 5.0 / (s.m as f64).sqrt();
    for (name, mse) in &s.mse_scaled {
        let bound = s.l2_bound[name] * slack;
        if bound.is_finite() {
            out.push(Criterion::check(
                &format!("l2_bound[{name}]"),
                *mse <= bound,
                *mse,
                bound,
                "N * MSE of gamma_T^N(phi) against 4 sup|phi|^2 (1 + 5/sqrt(M))".into(),
            ));
        }
    }

    for (name, v) in &s.eta_norm {
        if name == "one" {
            continue;
        }
        let label = format!("eta_norm_variance[{name}]");
        if s.insufficient_replicas || v.target <= 0.0 {
            out.push(Criterion::skipped(&label, "fewer than 100 replicas or zero target"));
        } else {
            let dev = (v.var_scaled / v.target - 1.0).abs();
            out.push(Criterion::check(
                &label,
                dev <= tol.variance_rel,
                dev,
                tol.variance_rel,
                format!("var_scaled {:.6e} vs oracle {:.6e}", v.var_scaled, v.target),
            ));
        }
    }

    let cost_tol = if classical { 2.0 * tol.cost_rel } else { tol.cost_rel };
    out.push(Criterion::check(
        "cost",
        cost.rel_deviation.abs() <= cost_tol,
        cost.rel_deviation.abs(),
        cost_tol,
        format!("mean cost {:.1} vs predicted {:.1}", cost.mean_cost, cost.predicted),
    ));

    let worst = report
        .functionals
        .iter()
        .map(|f| {
            let scale = f.sigma2_sync.abs().max(f64::MIN_POSITIVE);
            (f.sigma2_sync - f.sigma2_sync_alt).abs() / scale
        })
        .fold(0.0, f64::max);
    out.push(Criterion::check(
        "variance_equivalence",
        worst <= 1e-10,
        worst,
        1e-10,
        "relative gap between the two synchronized variance forms".into(),
    ));

    match (report.rel_var_lower, report.rel_var_upper) {
        (Some(lo), Some(hi)) => out.push(Criterion::check(
            "bound_sandwich",
            lo <= report.rel_var_sync && report.rel_var_sync <= hi,
            report.rel_var_sync,
            hi,
            format!("lower {lo:.6} <= sigma2/p_T^2 <= upper {hi:.6}"),
        )),
        _ => out.push(Criterion::skipped("bound_sandwich", "p_T = 1")),
    }
    out
}

/// Runs replicas, compares them with the oracle and writes `validation.json`
/// and `records.csv`. Fails with exit code 4 if any criterion fails.
pub fn cmd_validate(config: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let model = ctmc(config)?;
    let theta = config.oracle_theta()?;
    let tfs = config.resolve_test_functions(&model)?;
    let report = OracleReport::compute(&model, &tfs, theta, config.horizon, config.n_particles)?;
    let records = simulate_records(config, &model)?;
    let summary = clt_report(&records, &report)?;
    let cost = cost_report(&records, &report)?;
    let criteria = criteria(config, &report, &summary, &cost);

    let mut warnings: Vec<String> = report
        .quantiles
        .warnings
        .iter()
        .map(|w| serde_json::to_string(w).expect("plain data"))
        .collect();
    if summary.insufficient_replicas {
        let w = format!("only {} replicas; variance criteria skipped", summary.m);
        eprintln!("warning: {w}");
        warnings.push(w);
    }
    let failed = criteria.iter().filter(|c| c.status == Status::Fail).count();
    let passed = criteria.iter().filter(|c| c.status == Status::Pass).count();
    let validation = Validation {
        oracle_theta: theta,
        warnings,
        summary,
        cost,
        all_passed: failed == 0,
        criteria,
    };
    let path = write_json(out, "validation.json", &validation)?;
    let (csv_path, w) = create(out, "records.csv")?;
    write_records_csv(&records, w).map_err(|e| output_error(&csv_path, e))?;
    if failed > 0 {
        for c in validation.criteria.iter().filter(|c| c.status == Status::Fail) {
            eprintln!("FAIL {}: {}", c.name, c.detail);
        }
        return Err(CliError::CriteriaFailed {
            failed,
            total: validation.criteria.len(),
            path,
        });
    }
    Ok(format!(
        "{passed} passed, {} skipped, 0 failed",
        validation.criteria.len() - passed
    ))
}

/// One row of the `θ` sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub j_max: usize,
    pub r: f64,
    pub h: f64,
    pub rel_var_lower: f64,
    pub rel_var_upper: f64,
    /// Exact `σ_T²(1_F)/p_T²`; empty when the level grid is degenerate.
    pub rel_var_sync: Option<f64>,
    pub cost_sync: f64,
    pub cost_classical: f64,
    /// Space-free warning tags, `;`-separated; empty when clean.
    pub flag: String,
}

fn sweep_row(model: &CtmcModel, p_t: f64, theta: f64, config: &ExperimentConfig) -> Result<SweepRow, CliError> {
    let levels = Levels::new(p_t, theta)?;
    let (lower, upper) = relative_variance_bounds(p_t, theta)?;
    let (cost_sync, cost_classical) = cost_model(p_t, theta, config.n_particles)?;
    let mut flags = Vec::new();
    if levels.near_integer() {
        flags.push(format!("integer_ratio(guard={INTEGER_RATIO_GUARD:e})"));
    }
    let rel_var_sync = match Oracle::new(model, theta, config.horizon) {
        Ok(o) => {
            for w in &o.grid().warnings {
                match w {
                    syncfv::oracle::QuantileWarning::Boundary { .. } => flags.push("boundary".into()),
                    syncfv::oracle::QuantileWarning::IntegerRatio { .. } if !levels.near_integer() => {
                        flags.push("integer_ratio".into())
                    }
                    _ => {}
                }
            }
            Some(o.sigma2_sync(&vec![1.0; model.n_states()])? / (p_t * p_t))
        }
        Err(OracleError::DegenerateQuantile { level, .. }) => {
            flags.push(format!("degenerate_level_{level}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    Ok(SweepRow {
        theta,
        j_max: levels.j_max,
        r: levels.r,
        h: h_theta(p_t, theta)?,
        rel_var_lower: lower,
        rel_var_upper: upper,
        rel_var_sync,
        cost_sync,
        cost_classical,
        flag: flags.join(";"),
    })
}

/// Writes `sweep_theta.csv` with one row per grid point. Flagged rows are kept.
pub fn cmd_sweep_theta(config: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let model = ctmc(config)?;
    let p_t = syncfv::oracle::survival_probability(&model, config.horizon)?;
    if p_t >= 1.0 {
        return Err(CliError::Config("the sweep needs p_T < 1, but the model loses no mass".into()));
    }
    let grid = theta_grid(config.sweep.start, config.sweep.stop, config.sweep.step)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let rows = grid
        .iter()
        .map(|&theta| sweep_row(&model, p_t, theta, config))
        .collect::<Result<Vec<_>, _>>()?;
    let (path, w) = create(out, "sweep_theta.csv")?;
    let mut csv = csv::Writer::from_writer(w);
    for row in &rows {
        csv.serialize(row).map_err(|e| output_error(&path, e))?;
    }
    csv.flush().map_err(|e| output_error(&path, e))?;
    let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
    Ok(format!("{} rows ({flagged} flagged), p_T={p_t:.6e}", rows.len()))
}
