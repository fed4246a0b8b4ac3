//! Finite-state continuous-time Markov chains with killing.

use rand::Rng;
use rand_distr::Exp1;

use super::{check_window, ModelError, ProcessModel, TestFunction, TrajectorySegment};

/// Guard against chains that keep jumping forever without reaching the cap
/// (only possible with an infinite cap).
pub const MAX_JUMPS_PER_SEGMENT: usize = 10_000_000;

const LAW_TOLERANCE: f64 = 1e-12;

/// A CTMC on `{0, .., n-1}` given by its sub-generator. The row deficit of
/// the sub-generator is the killing rate of each state.
#[derive(Clone, Debug, PartialEq)]
pub struct CtmcModel {
    n_states: usize,
    sub_generator: Vec<Vec<f64>>,
    initial_law: Vec<f64>,
    exit_rate: Vec<f64>,
    killing_rate: Vec<f64>,
    // per state: (target, cumulative rate) over off-diagonal moves, after the killing slice
    jump_table: Vec<Vec<(usize, f64)>>,
    initial_cdf: Vec<f64>,
}

impl CtmcModel {
    pub fn new(sub_generator: Vec<Vec<f64>>, initial_law: Vec<f64>) -> Result<Self, ModelError> {
        let n = sub_generator.len();
        if n == 0 {
            return Err(ModelError::Invalid("sub_generator must have at least one state".into()));
        }
        if sub_generator.iter().any(|row| row.len() != n) {
            return Err(ModelError::Invalid("sub_generator must be square".into()));
        }
        if initial_law.len() != n {
            return Err(ModelError::Invalid(format!(
                "initial_law has {} entries, expected {n}",
                initial_law.len()
            )));
        }
        let mut exit_rate = Vec::with_capacity(n);
        let mut killing_rate = Vec::with_capacity(n);
        let mut jump_table = Vec::with_capacity(n);
        for (i, row) in sub_generator.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Invalid(format!("row {i} has non-finite entries")));
            }
            let diag = row[i];
            if diag > 0.0 {
                return Err(ModelError::Invalid(format!("diagonal entry {i} is positive")));
            }
            let mut cumulative = 0.0;
            let mut moves = Vec::new();
            for (j, &q) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                if q < 0.0 {
                    return Err(ModelError::Invalid(format!("off-diagonal entry ({i},{j}) is negative")));
                }
                if q > 0.0 {
                    cumulative += q;
                    moves.push((j, cumulative));
                }
            }
            let exit = -diag;
            let kill = exit - cumulative;
            if kill < -LAW_TOLERANCE * exit.max(1.0) {
                return Err(ModelError::Invalid(format!(
                    "row {i} sums to {} > 0; killing rates must be non-negative",
                    -kill
                )));
            }
            let kill = kill.max(0.0);
            exit_rate.push(exit);
            killing_rate.push(kill);
            jump_table.push(moves);
        }
        if initial_law.iter().any(|&p| !(p >= 0.0)) {
            return Err(ModelError::Invalid("initial_law entries must be non-negative".into()));
        }
        let total: f64 = initial_law.iter().sum();
        if (total - 1.0).abs() > LAW_TOLERANCE {
            return Err(ModelError::Invalid(format!("initial_law sums to {total}, expected 1")));
        }
        let initial_cdf = initial_law
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            n_states: n,
            sub_generator,
            initial_law,
            exit_rate,
            killing_rate,
            jump_table,
            initial_cdf,
        })
    }

    /// One interior state killed at constant `rate`.
    pub fn pure_death(rate: f64) -> Result<Self, ModelError> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(ModelError::Invalid(format!("pure-death rate must be finite and >= 0, got {rate}")));
        }
        Self::new(vec![vec![-rate]], vec![1.0])
    }

    /// Two states with switching rates `q01`, `q10` and killing rates `kill`.
    pub fn two_state(q01: f64, q10: f64, kill: [f64; 2], initial_law: [f64; 2]) -> Result<Self, ModelError> {
        Self::new(
            vec![vec![-(q01 + kill[0]), q01], vec![q10, -(q10 + kill[1])]],
            initial_law.to_vec(),
        )
    }

    /// A random chain on `n` states: jump rates in `[0, 2)` with roughly a
    /// third of the edges removed, killing rates in `[0.1, 1.5)`, and a random
    /// initial law. Every state is killed at a positive rate, so survival is
    /// strictly decreasing.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self, ModelError> {
        let mut q = vec![vec![0.0; n]; n];
        for (i, row) in q.iter_mut().enumerate() {
            let mut out = 0.0;
            for (j, rate) in row.iter_mut().enumerate() {
                if i != j && rng.random::<f64>() > 0.3 {
                    *rate = 2.0 * rng.random::<f64>();
                    out += *rate;
                }
            }
            let kill = 0.1 + 1.4 * rng.random::<f64>();
            row[i] = -(out + kill);
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = weights.iter().sum();
        let mut law: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // absorb rounding so the law sums to one
        let drift: f64 = 1.0 - law.iter().sum::<f64>();
        law[n - 1] += drift;
        Self::new(q, law)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn sub_generator(&self) -> &[Vec<f64>] {
        &self.sub_generator
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial_law
    }

    /// Killing rate `κ_i = -Σ_j A_ij` of every state.
    pub fn killing_rates(&self) -> &[f64] {
        &self.killing_rate
    }

    /// The vector `(φ(0), .., φ(n-1))`.
    pub fn values(&self, phi: &TestFunction<usize>) -> Vec<f64> {
        (0..self.n_states).map(|i| phi.evaluate_interior(&i)).collect()
    }

    fn pick_jump(&self, state: usize, u: f64) -> Option<usize> {
        // u is uniform on [0, exit_rate); the first `killing_rate` of it kills
        let v = u - self.killing_rate[state];
        if v < 0.0 {
            return None;
        }
        let table = &self.jump_table[state];
        if table.is_empty() {
            return None;
        }
        let idx = table.partition_point(|&(_, c)| c <= v);
        // rounding can push v past the last cumulative value
        Some(table[idx.min(table.len() - 1)].0)
    }
}

impl ProcessModel for CtmcModel {
    type State = usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.initial_cdf[self.n_states - 1];
        // first state whose cumulative mass exceeds u; it always carries positive mass
        self.initial_cdf.partition_point(|&c| c <= u).min(self.n_states - 1)
    }

    fn advance_with_skeleton<R: Rng + ?Sized>(
        &self,
        state: &usize,
        t_from: f64,
        t_cap: f64,
        rng: &mut R,
    ) -> Result<TrajectorySegment<usize>, ModelError> {
        check_window(t_from, t_cap)?;
        let mut current = *state;
        let mut t = t_from;
        let mut skeleton = vec![(t_from, current)];
        loop {
            let rate = self.exit_rate[current];
            if rate == 0.0 {
                return Ok(TrajectorySegment::from_parts(t_from, t_cap, skeleton, None));
            }
            let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
            let next = t + hold;
            if next > t_cap {
                return Ok(TrajectorySegment::from_parts(t_from, t_cap, skeleton, None));
            }
            let u = rng.random::<f64>() * rate;
            match self.pick_jump(current, u) {
                None => return Ok(TrajectorySegment::from_parts(t_from, t_cap, skeleton, Some(next))),
                Some(j) => {
                    current = j;
                    t = next;
                    skeleton.push((t, current));
                    if skeleton.len() > MAX_JUMPS_PER_SEGMENT {
                        return Err(ModelError::Runaway(MAX_JUMPS_PER_SEGMENT));
                    }
                }
            }
        }
    }

    fn test_function(&self, name: &str) -> Result<TestFunction<usize>, ModelError> {
        match name {
            "one" | "indicator" => Ok(TestFunction::indicator()),
            "index" => {
                let sup = (self.n_states - 1) as f64;
                Ok(TestFunction::new("index", sup, |&i: &usize| i as f64))
            }
            other => {
                let Some(k) = other.strip_prefix("state:") else {
                    return Err(ModelError::UnknownTestFunction(other.to_string()));
                };
                let k: usize = k
                    .parse()
                    .map_err(|_| ModelError::UnknownTestFunction(other.to_string()))?;
                if k >= self.n_states {
                    return Err(ModelError::UnknownTestFunction(other.to_string()));
                }
                Ok(TestFunction::new(other, 1.0, move |&i: &usize| if i == k { 1.0 } else { 0.0 }))
            }
        }
    }

    fn as_ctmc(&self) -> Option<&CtmcModel> {
        Some(self)
    }
}
