//! Workloads shared by the criterion benches.

use syncfv::benchmarks::{self, Benchmark};
use syncfv::engine::{run_fv, Batch, FVConfig, FVRunRecord};
use syncfv::models::TestFunction;

/// The three CTMC reference problems.
pub fn workloads() -> Vec<Benchmark> {
    benchmarks::all()
}

/// One run of `b` with `n` particles; `batch = None` uses the benchmark's `θ`.
pub fn single_run(b: &Benchmark, n: usize, batch: Option<Batch>, seed: u64) -> FVRunRecord {
    let batch = batch.unwrap_or(Batch::Theta(b.theta));
    let config = FVConfig::new(n, batch, b.horizon, seed)
        .expect("valid config")
        .with_max_branchings(1_000_000);
    run_fv(&config, &b.model, &[TestFunction::indicator()]).expect("run completes")
}
