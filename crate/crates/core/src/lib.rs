//! Synchronized Fleming-Viot particle systems for killed Markov processes,
//! with exact finite-state oracles and a replication harness that checks the
//! particle estimators against them.

// Range checks are written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod engine;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod stats;

pub use engine::{
    batch_from_theta, branch_step, choose_parents, estimators_at_t, rho_estimator, run_fv, Batch,
    EngineError, EnsembleState, Estimates, FVConfig, FVRunRecord,
};
pub use models::{
    AnyModel, CtmcModel, DiffusionModel, ModelError, ModelSpec, ProcessModel, StatePoint, TestFunction,
    TrajectorySegment,
};
pub use oracle::{Oracle, OracleError, OracleReport, QuantileGrid};
pub use stats::{clt_report, cost_report, run_replicas, CostReport, ReplicaSummary, StatsError};
