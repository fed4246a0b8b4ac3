//! Killed Markov processes.
//!
//! A model evolves a single particle in its interior state space until it is
//! either killed (sent to the cemetery) or reaches a time cap. Models never
//! hold randomness of their own; every draw comes from the caller's stream.

mod ctmc;
mod diffusion;
mod segment;
mod spec;

pub use ctmc::{CtmcModel, MAX_JUMPS_PER_SEGMENT};
pub use diffusion::{DiffusionModel, Drift, InitialLaw, Killing};
pub use segment::TrajectorySegment;
pub use spec::{AnyModel, ModelSpec};

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid time window: t_from = {t_from} must be < t_cap = {t_cap}")]
    TimeWindow { t_from: f64, t_cap: f64 },
    #[error("unknown test function `{0}` for this model")]
    UnknownTestFunction(String),
    #[error("trajectory exceeded {0} jumps without reaching its cap or being killed")]
    Runaway(usize),
}

/// A point of `F ∪ {∂}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StatePoint<S> {
    Interior(S),
    Cemetery,
}

impl<S> StatePoint<S> {
    pub fn is_interior(&self) -> bool {
        matches!(self, StatePoint::Interior(_))
    }

    pub fn interior(&self) -> Option<&S> {
        match self {
            StatePoint::Interior(s) => Some(s),
            StatePoint::Cemetery => None,
        }
    }
}

type Evaluator<S> = Arc<dyn Fn(&S) -> f64 + Send + Sync>;

/// A bounded observable on the interior, extended by zero on the cemetery.
#[derive(Clone)]
pub struct TestFunction<S> {
    name: String,
    eval: Evaluator<S>,
    sup_norm: f64,
}

impl<S> TestFunction<S> {
    pub fn new(
        name: impl Into<String>,
        sup_norm: f64,
        eval: impl Fn(&S) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            sup_norm,
        }
    }

    /// The indicator of the interior, `1_F`.
    pub fn indicator() -> Self {
        Self::new("one", 1.0, |_| 1.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn evaluate(&self, x: &StatePoint<S>) -> f64 {
        match x {
            StatePoint::Interior(s) => (self.eval)(s),
            StatePoint::Cemetery => 0.0,
        }
    }

    pub fn evaluate_interior(&self, s: &S) -> f64 {
        (self.eval)(s)
    }
}

impl<S> fmt::Debug for TestFunction<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

/// A killed Markov process that can be simulated segment by segment.
pub trait ProcessModel: Send + Sync {
    type State: Clone + Send + Sync + fmt::Debug + PartialEq;

    /// Draws `X_0` from the initial law. The initial law puts no mass on the cemetery.
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Simulates the process from `state` at `t_from` until it is killed or
    /// `t_cap` is reached, keeping every visited state so the segment can be
    /// queried afterwards.
    fn advance_with_skeleton<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        t_from: f64,
        t_cap: f64,
        rng: &mut R,
    ) -> Result<TrajectorySegment<Self::State>, ModelError>;

    /// Resolves a named observable. Every model understands `"one"`.
    fn test_function(&self, name: &str) -> Result<TestFunction<Self::State>, ModelError>;

    /// Models with an exact oracle expose their finite-state form.
    fn as_ctmc(&self) -> Option<&CtmcModel> {
        None
    }
}

pub(crate) fn check_window(t_from: f64, t_cap: f64) -> Result<(), ModelError> {
    if !(t_from < t_cap) || t_from.is_nan() {
        return Err(ModelError::TimeWindow { t_from, t_cap });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_functions_vanish_on_cemetery() {
        let phi = TestFunction::<usize>::new("double", 2.0, |_| 2.0);
        assert_eq!(phi.evaluate(&StatePoint::Interior(3)), 2.0);
        assert_eq!(phi.evaluate(&StatePoint::Cemetery), 0.0);
        assert_eq!(TestFunction::<usize>::indicator().evaluate(&StatePoint::Cemetery), 0.0);
    }

    #[test]
    fn window_check_rejects_empty_intervals() {
        assert!(check_window(1.0, 1.0).is_err());
        assert!(check_window(2.0, 1.0).is_err());
        assert!(check_window(f64::NAN, 1.0).is_err());
        assert!(check_window(0.0, f64::INFINITY).is_ok());
    }
}
