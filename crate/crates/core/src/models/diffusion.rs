//! Euler-Maruyama diffusions killed on leaving a box or at a state-dependent rate.
//!
//! These models are discretized, so their estimates carry time-step bias and
//! simultaneous deaths on the grid are possible. They have no exact oracle.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_window, ModelError, ProcessModel, TestFunction, TrajectorySegment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    /// `b(x) = M x + c`.
    Linear { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// Coordinatewise `b(x)_i = -4 s x_i (x_i^2 - 1)`, the gradient flow of a double well.
    DoubleWell {
        #[serde(default = "unit")]
        strength: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Killing {
    /// Killed at the first grid point outside `[lower, upper]`.
    Barrier { lower: Vec<f64>, upper: Vec<f64> },
    /// Killed at rate `base + quadratic * |x|^2`.
    Rate { base: f64, quadratic: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Point { x: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionModel {
    pub drift: Drift,
    pub diffusion_coeff: f64,
    pub killing: Killing,
    pub step_size: f64,
    pub initial_law: InitialLaw,
}

impl DiffusionModel {
    pub fn new(
        drift: Drift,
        diffusion_coeff: f64,
        killing: Killing,
        step_size: f64,
        initial_law: InitialLaw,
    ) -> Result<Self, ModelError> {
        let model = Self {
            drift,
            diffusion_coeff,
            killing,
            step_size,
            initial_law,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        match &self.initial_law {
            InitialLaw::Point { x } => x.len(),
            InitialLaw::UniformBox { lower, .. } => lower.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(m.to_string()));
        let d = self.dim();
        if d == 0 {
            return bad("diffusion dimension must be positive");
        }
        if !(self.diffusion_coeff > 0.0) || !self.diffusion_coeff.is_finite() {
            return bad("diffusion_coeff must be > 0");
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad("step_size must be > 0");
        }
        match &self.drift {
            Drift::Linear { matrix, offset } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) || offset.len() != d {
                    return bad("linear drift dimensions do not match the state dimension");
                }
            }
            Drift::DoubleWell { strength } => {
                if !strength.is_finite() {
                    return bad("double-well strength must be finite");
                }
            }
        }
        if let InitialLaw::UniformBox { lower, upper } = &self.initial_law {
            if upper.len() != d || lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                return bad("initial box must satisfy lower <= upper in every coordinate");
            }
        }
        match &self.killing {
            Killing::Barrier { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return bad("barrier dimensions do not match the state dimension");
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return bad("barrier box must be nonempty");
                }
                let inside = |x: &[f64]| x.iter().zip(lower).zip(upper).all(|((v, l), u)| l < v && v < u);
                let ok = match &self.initial_law {
                    InitialLaw::Point { x } => inside(x),
                    InitialLaw::UniformBox { lower: a, upper: b } => inside(a) && inside(b),
                };
                if !ok {
                    return bad("initial law must lie strictly inside the barrier box");
                }
            }
            Killing::Rate { base, quadratic } => {
                if !(*base >= 0.0) || !(*quadratic >= 0.0) {
                    return bad("killing rate coefficients must be >= 0");
                }
            }
        }
        Ok(())
    }

    fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Drift::Linear { matrix, offset } => {
                for (o, (row, c)) in out.iter_mut().zip(matrix.iter().zip(offset)) {
                    *o = c + row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
                }
            }
            Drift::DoubleWell { strength } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -4.0 * strength * v * (v * v - 1.0);
                }
            }
        }
    }
}

impl ProcessModel for DiffusionModel {
    type State = Vec<f64>;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.initial_law {
            InitialLaw::Point { x } => x.clone(),
            InitialLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        }
    }

    fn advance_with_skeleton<R: Rng + ?Sized>(
        &self,
        state: &Vec<f64>,
        t_from: f64,
        t_cap: f64,
        rng: &mut R,
    ) -> Result<TrajectorySegment<Vec<f64>>, ModelError> {
        check_window(t_from, t_cap)?;
        if !t_cap.is_finite() {
            return Err(ModelError::Invalid("diffusion segments need a finite time cap".into()));
        }
        let d = state.len();
        let mut x = state.clone();
        let mut b = vec![0.0; d];
        let mut skeleton = vec![(t_from, x.clone())];
        let mut k: u64 = 0;
        let mut t = t_from;
        while t < t_cap {
            k += 1;
            let next = (t_from + k as f64 * self.step_size).min(t_cap);
            let dt = next - t;
            self.drift_at(&x, &mut b);
            let noise = self.diffusion_coeff * dt.sqrt();
            for (xi, bi) in x.iter_mut().zip(&b) {
                let z: f64 = rng.sample(StandardNormal);
                *xi += bi * dt + noise * z;
            }
            t = next;
            let killed = match &self.killing {
                Killing::Barrier { lower, upper } => x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .any(|(v, (l, u))| !(l < v && v < u)),
                Killing::Rate { base, quadratic } => {
                    let rate = base + quadratic * x.iter().map(|v| v * v).sum::<f64>();
                    rng.random::<f64>() < -(-rate * dt).exp_m1()
                }
            };
            if killed {
                return Ok(TrajectorySegment::from_parts(t_from, t_cap, skeleton, Some(t)));
            }
            skeleton.push((t, x.clone()));
        }
        Ok(TrajectorySegment::from_parts(t_from, t_cap, skeleton, None))
    }

    fn test_function(&self, name: &str) -> Result<TestFunction<Vec<f64>>, ModelError> {
        if matches!(name, "one" | "indicator") {
            return Ok(TestFunction::indicator());
        }
        let k: usize = name
            .strip_prefix("coord:")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k < self.dim())
            .ok_or_else(|| ModelError::UnknownTestFunction(name.to_string()))?;
        let sup = match &self.killing {
            Killing::Barrier { lower, upper } => lower[k].abs().max(upper[k].abs()),
            Killing::Rate { .. } => f64::INFINITY,
        };
        Ok(TestFunction::new(name, sup, move |x: &Vec<f64>| x[k]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    fn box_model(step: f64) -> DiffusionModel {
        DiffusionModel::new(
            Drift::DoubleWell { strength: 1.0 },
            0.7,
            Killing::Barrier {
                lower: vec![-1.5],
                upper: vec![1.5],
            },
            step,
            InitialLaw::Point { x: vec![1.0] },
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(DiffusionModel::new(
            Drift::DoubleWell { strength: 1.0 },
            0.7,
            Killing::Barrier { lower: vec![1.0], upper: vec![1.0] },
            0.01,
            InitialLaw::Point { x: vec![1.0] },
        )
        .is_err());
        let mut m = box_model(0.01);
        m.step_size = 0.0;
        assert!(m.validate().is_err());
        let mut m = box_model(0.01);
        m.initial_law = InitialLaw::Point { x: vec![2.0] };
        assert!(m.validate().is_err());
    }

    #[test]
    fn deaths_land_on_the_grid_and_outside_the_box() {
        let m = box_model(0.05);
        let mut rng = StreamFactory::new(3).evolve(0, 0);
        let mut deaths = 0;
        for _ in 0..300 {
            let seg = m.advance_with_skeleton(&vec![1.0], 0.2, 4.0, &mut rng).unwrap();
            for (t, x) in seg.skeleton() {
                assert!(x[0].abs() < 1.5);
                let k = (t - 0.2) / 0.05;
                assert!((k - k.round()).abs() < 1e-9 || *t == 4.0);
            }
            if let Some(d) = seg.death_time() {
                deaths += 1;
                let k = (d - 0.2) / 0.05;
                assert!((k - k.round()).abs() < 1e-9);
            }
        }
        assert!(deaths > 0);
    }

    #[test]
    fn coordinate_test_function_is_bounded_by_barrier() {
        let m = box_model(0.01);
        let phi = m.test_function("coord:0").unwrap();
        assert_eq!(phi.sup_norm(), 1.5);
        assert!(m.test_function("coord:1").is_err());
    }

    #[test]
    fn reproducible_with_same_stream() {
        let m = box_model(0.01);
        let f = StreamFactory::new(11);
        let a = m.advance_with_skeleton(&vec![1.0], 0.0, 2.0, &mut f.evolve(1, 2)).unwrap();
        let b = m.advance_with_skeleton(&vec![1.0], 0.0, 2.0, &mut f.evolve(1, 2)).unwrap();
        assert_eq!(a, b);
    }
}
