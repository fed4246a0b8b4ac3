//! `exp(tA)` for a sub-generator `A` by uniformization.
//!
//! With `Λ = max_i |A_ii|` and `P = I + A/Λ` (entrywise non-negative and
//! substochastic), `exp(tA) = Σ_k e^{-Λt} (Λt)^k / k! P^k`. The horizon is cut
//! into pieces with `Λ dt <= 8` so the Poisson weights never underflow, and
//! each series is truncated once the remaining Poisson mass drops below
//! [`POISSON_TAIL`].

use crate::models::CtmcModel;

use super::OracleError;

pub const POISSON_TAIL: f64 = 1e-13;
const MAX_RATE_PER_PIECE: f64 = 8.0;
const MAX_TERMS: usize = 400;

#[derive(Clone, Debug)]
pub struct Semigroup {
    n: usize,
    lambda: f64,
    // row-major P = I + A/Λ
    jump: Vec<f64>,
    // row-major A
    generator: Vec<f64>,
    initial_law: Vec<f64>,
}

impl Semigroup {
    pub fn new(model: &CtmcModel) -> Self {
        let n = model.n_states();
        let a = model.sub_generator();
        let lambda = (0..n).map(|i| -a[i][i]).fold(0.0, f64::max);
        let mut generator = Vec::with_capacity(n * n);
        let mut jump = Vec::with_capacity(n * n);
        for (i, row) in a.iter().enumerate() {
            for (j, &q) in row.iter().enumerate() {
                generator.push(q);
                let id = if i == j { 1.0 } else { 0.0 };
                jump.push(if lambda > 0.0 { id + q / lambda } else { id });
            }
        }
        Self {
            n,
            lambda,
            jump,
            generator,
            initial_law: model.initial_law().to_vec(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial_law
    }

    fn right_mul(&self, m: &[f64], v: &[f64]) -> Vec<f64> {
        m.chunks_exact(self.n).map(|row| dot(row, v)).collect()
    }

    fn left_mul(&self, m: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &ui) in m.chunks_exact(self.n).zip(u) {
            if ui != 0.0 {
                for (o, &mij) in out.iter_mut().zip(row) {
                    *o += ui * mij;
                }
            }
        }
        out
    }

    fn uniformize(&self, t: f64, v: &[f64], left: bool) -> Result<Vec<f64>, OracleError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(OracleError::NegativeTime(t));
        }
        if v.len() != self.n {
            return Err(OracleError::Dimension {
                expected: self.n,
                got: v.len(),
            });
        }
        if t == 0.0 || self.lambda == 0.0 {
            return Ok(v.to_vec());
        }
        let pieces = (self.lambda * t / MAX_RATE_PER_PIECE).ceil().max(1.0) as usize;
        let x = self.lambda * t / pieces as f64;
        let mut current = v.to_vec();
        for _ in 0..pieces {
            let mut weight = (-x).exp();
            let mut mass = weight;
            let mut term = current.clone();
            let mut acc: Vec<f64> = term.iter().map(|c| weight * c).collect();
            let mut k = 0;
            while 1.0 - mass > POISSON_TAIL && k < MAX_TERMS {
                k += 1;
                term = if left {
                    self.left_mul(&self.jump, &term)
                } else {
                    self.right_mul(&self.jump, &term)
                };
                weight *= x / k as f64;
                mass += weight;
                for (a, c) in acc.iter_mut().zip(&term) {
                    *a += weight * c;
                }
            }
            current = acc;
        }
        Ok(current)
    }

    /// `exp(tA) φ`, i.e. `x ↦ E_x[φ(X_t)]` with `φ(∂) = 0`.
    pub fn apply(&self, t: f64, phi: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.uniformize(t, phi, false)
    }

    /// `μ exp(tA)`, the law at time `t` restricted to the interior when started from `μ`.
    pub fn apply_left(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.uniformize(t, mu, true)
    }

    /// `γ_t = η_0 exp(tA)`.
    pub fn gamma(&self, t: f64) -> Result<Vec<f64>, OracleError> {
        self.apply_left(t, &self.initial_law)
    }

    /// `A v`.
    pub fn generator_apply(&self, v: &[f64]) -> Vec<f64> {
        self.right_mul(&self.generator, v)
    }

    /// `p_t = γ_t(1_F)`.
    pub fn survival(&self, t: f64) -> Result<f64, OracleError> {
        Ok(self.gamma(t)?.iter().sum())
    }

    /// `dp_t/dt = η_0 exp(tA) A 1`.
    pub fn survival_derivative(&self, t: f64) -> Result<f64, OracleError> {
        let a1 = self.generator_apply(&vec![1.0; self.n]);
        Ok(dot(&self.gamma(t)?, &a1))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_identity() {
        let m = CtmcModel::two_state(1.0, 1.0, [0.5, 2.0], [1.0, 0.0]).unwrap();
        let s = Semigroup::new(&m);
        assert_eq!(s.apply(0.0, &[0.3, -1.0]).unwrap(), vec![0.3, -1.0]);
        assert!(matches!(s.apply(-1.0, &[1.0, 1.0]), Err(OracleError::NegativeTime(_))));
        assert!(s.apply(1.0, &[1.0]).is_err());
    }

    #[test]
    fn pure_death_matches_exponential() {
        let s = Semigroup::new(&CtmcModel::pure_death(1.0).unwrap());
        let v = s.apply(3.0, &[1.0]).unwrap()[0];
        assert!((v - (-3.0f64).exp()).abs() < 1e-15);
        assert!((s.survival(std::f64::consts::LN_2).unwrap() - 0.5).abs() < 1e-14);
        // long horizons split into many pieces without underflow
        let v = s.apply(40.0, &[1.0]).unwrap()[0];
        assert!((v / (-40.0f64).exp() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn survival_derivative_matches_killing_flux() {
        let m = CtmcModel::two_state(1.0, 1.0, [0.5, 2.0], [1.0, 0.0]).unwrap();
        let s = Semigroup::new(&m);
        let t = 0.7;
        let g = s.gamma(t).unwrap();
        let flux = -(g[0] * 0.5 + g[1] * 2.0);
        assert!((s.survival_derivative(t).unwrap() - flux).abs() < 1e-14);
    }
}
