//! The finite-state reference problems used by the acceptance suite, the CLI
//! examples and the benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::models::{CtmcModel, ModelError};
use crate::oracle::{survival_probability, OracleError};

/// A CTMC together with the `(θ, T)` it is studied at.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub model: CtmcModel,
    pub theta: f64,
    pub horizon: f64,
}

/// One state killed at rate 1, `T = 3`, `θ = 1/2`: `p_T = e^{-3}`, four levels.
pub fn pure_death() -> Benchmark {
    Benchmark {
        name: "pure_death",
        model: CtmcModel::pure_death(1.0).expect("valid rate"),
        theta: 0.5,
        horizon: 3.0,
    }
}

/// Two states switching at rate 1, killed at rates 0.5 and 2, started in the
/// first state. `T = 2.5` gives `p_T ≈ 0.0985`, three levels at `θ = 1/2` and
/// `r ≈ 0.79`, well away from both ends of `(θ, 1)`.
pub fn two_state() -> Benchmark {
    Benchmark {
        name: "two_state",
        model: two_state_model(),
        theta: 0.5,
        horizon: 2.5,
    }
}

pub fn two_state_model() -> CtmcModel {
    CtmcModel::two_state(1.0, 1.0, [0.5, 2.0], [1.0, 0.0]).expect("valid rates")
}

/// Seed of the randomized 5-state benchmark.
pub const RANDOM_BENCHMARK_SEED: u64 = 20_240_917;

/// A random 5-state CTMC with `T` solved from `p_T = θ^{3.5}`, so that
/// `j_max = 3` and `r = θ^{1/2}` sit in the middle of their ranges.
pub fn random_five_state(seed: u64) -> Result<Benchmark, OracleError> {
    let theta: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = CtmcModel::random(5, &mut rng).map_err(model_err)?;
    let horizon = time_for_survival(&model, theta.powf(3.5))?;
    Ok(Benchmark {
        name: "random_five_state",
        model,
        theta,
        horizon,
    })
}

fn model_err(e: ModelError) -> OracleError {
    OracleError::OutOfRange(e.to_string())
}

/// Smallest `t` with `p_t <= target`, by doubling then bisection.
pub fn time_for_survival(model: &CtmcModel, target: f64) -> Result<f64, OracleError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(OracleError::OutOfRange(format!("target survival must lie in (0, 1), got {target}")));
    }
    let mut hi = 1.0;
    while survival_probability(model, hi)? > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(OracleError::OutOfRange(format!("survival never drops to {target}")));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if survival_probability(model, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// The three CTMC benchmarks.
pub fn all() -> Vec<Benchmark> {
    vec![
        pure_death(),
        two_state(),
        random_five_state(RANDOM_BENCHMARK_SEED).expect("fixed seed gives a killed chain"),
    ]
}
