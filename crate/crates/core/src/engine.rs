//! The synchronized Fleming-Viot particle system.
//!
//! `N` particles evolve independently. Each time the `K`-th pending death
//! occurs before the horizon, the `K` dead particles are reborn at that
//! instant, each copying the state of a survivor chosen uniformly (with
//! replacement) among the `N - K` others. Survivors keep their already
//! simulated trajectories; only reborn particles are simulated again.
//!
//! At the horizon the system yields
//! `ρ = (1 - K/N)^B`, `η(φ) = (1/N) Σ φ(X^n)`, `γ(φ) = ρ η(φ)` and
//! `p = γ(1_F)`, where `B` counts branchings and dead particles that are
//! still waiting for their batch contribute zero.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, ProcessModel, StatePoint, TestFunction, TrajectorySegment};
use crate::rng::{StreamFactory, MAX_EPOCH};

pub const DEFAULT_MAX_BRANCHINGS: usize = 10_000;

// Below this many particles to evolve, the rayon split costs more than it saves.
const PARALLEL_MIN_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "branching count exceeded {limit} at t = {time}; the system does not reach the horizon \
         in finitely many branchings (check killing rates and batch size)"
    )]
    NonTermination { limit: usize, time: f64 },
    #[error("every particle is dead at t = {time}; no survivor to branch onto")]
    Extinction { time: f64 },
    #[error("expected {expected} survivor states, got {got}")]
    SurvivorCount { expected: usize, got: usize },
    #[error("branching needs exactly {k} pending deaths, found {pending}")]
    BatchNotReady { pending: usize, k: usize },
    #[error("particle {0} has not been simulated up to the query time")]
    NotEvolved(usize),
}

/// How many particles are killed before each branching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Batch {
    /// Explicit `K`, `1 <= K < N`.
    Size(usize),
    /// Survivor fraction `θ ∈ (0,1)`; `K = round((1 - θ) N)` clamped to `[1, N-1]`.
    Theta(f64),
}

/// `K` for a survivor fraction `theta`: `round((1 - θ) N)` clamped to `[1, N-1]`.
pub fn batch_from_theta(theta: f64, n: usize) -> usize {
    let k = ((1.0 - theta) * n as f64).round() as usize;
    k.clamp(1, n.saturating_sub(1).max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FVConfig {
    pub n_particles: usize,
    pub batch: Batch,
    pub horizon: f64,
    pub seed: u64,
    pub max_branchings: usize,
    /// Evolve reborn particles on the rayon pool. Results are identical to
    /// the serial mode because every particle owns its random stream.
    pub parallel: bool,
}

impl FVConfig {
    pub fn new(n_particles: usize, batch: Batch, horizon: f64, seed: u64) -> Result<Self, EngineError> {
        let config = Self {
            n_particles,
            batch,
            horizon,
            seed,
            max_branchings: DEFAULT_MAX_BRANCHINGS,
            parallel: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_max_branchings(mut self, limit: usize) -> Self {
        self.max_branchings = limit;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let invalid = |m: String| Err(EngineError::InvalidConfig(m));
        let n = self.n_particles;
        if n < 2 {
            return invalid(format!("N must be >= 2, got {n}"));
        }
        if n > u32::MAX as usize {
            return invalid(format!("N must fit in 32 bits, got {n}"));
        }
        match self.batch {
            Batch::Size(k) if k == 0 || k >= n => {
                return invalid(format!("K must satisfy 1 <= K < N (K = {k}, N = {n})"));
            }
            Batch::Theta(theta) if !(theta > 0.0 && theta < 1.0) => {
                return invalid(format!("theta must lie in (0, 1), got {theta}"));
            }
            _ => {}
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return invalid(format!("T must be finite and > 0, got {}", self.horizon));
        }
        if self.max_branchings as u64 > MAX_EPOCH {
            return invalid(format!("max_branchings must be <= {MAX_EPOCH}"));
        }
        Ok(())
    }

    /// The batch size `K`.
    pub fn batch_size(&self) -> usize {
        match self.batch {
            Batch::Size(k) => k,
            Batch::Theta(theta) => batch_from_theta(theta, self.n_particles),
        }
    }

    /// `1 - K/N`, the empirical counterpart of `θ`.
    pub fn survivor_ratio(&self) -> f64 {
        1.0 - self.batch_size() as f64 / self.n_particles as f64
    }
}

/// `(1 - K/N)^B`.
pub fn rho_estimator(branch_count: usize, k: usize, n: usize) -> Result<f64, EngineError> {
    if k == 0 || k >= n {
        return Err(EngineError::InvalidConfig(format!(
            "K must satisfy 1 <= K < N (K = {k}, N = {n})"
        )));
    }
    let base = (n - k) as f64 / n as f64;
    let exponent = i32::try_from(branch_count)
        .map_err(|_| EngineError::InvalidConfig(format!("branch count {branch_count} too large")))?;
    Ok(base.powi(exponent))
}

/// `k` independent uniform picks among `n_survivors` slots.
pub fn choose_parents<R: Rng + ?Sized>(k: usize, n_survivors: usize, rng: &mut R) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n_survivors)).collect()
}

/// The particle system between events.
#[derive(Clone, Debug)]
pub struct EnsembleState<S> {
    segments: Vec<TrajectorySegment<S>>,
    dead_pending: Vec<usize>,
    awaiting: Vec<usize>,
    k: usize,
    branch_count: usize,
    time: f64,
    branch_times: Vec<f64>,
    cost_segments: u64,
}

impl<S: Clone + Send + Sync> EnsembleState<S> {
    /// Builds a system from a snapshot at `time`. Interior particles still
    /// have to be evolved; cemetery particles are pending deaths.
    pub fn from_states(
        states: Vec<StatePoint<S>>,
        k: usize,
        time: f64,
        branch_count: usize,
    ) -> Result<Self, EngineError> {
        let n = states.len();
        rho_estimator(0, k, n)?;
        let mut segments = Vec::with_capacity(n);
        let mut dead_pending = Vec::new();
        let mut awaiting = Vec::new();
        for (i, s) in states.into_iter().enumerate() {
            match s {
                StatePoint::Interior(x) => {
                    segments.push(TrajectorySegment::stub(x, time));
                    awaiting.push(i);
                }
                StatePoint::Cemetery => {
                    segments.push(TrajectorySegment::cemetery(time));
                    dead_pending.push(i);
                }
            }
        }
        Ok(Self {
            segments,
            dead_pending,
            awaiting,
            k,
            branch_count,
            time,
            branch_times: Vec::new(),
            cost_segments: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.segments.len()
    }

    pub fn batch_size(&self) -> usize {
        self.k
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn branch_times(&self) -> &[f64] {
        &self.branch_times
    }

    pub fn cost_segments(&self) -> u64 {
        self.cost_segments
    }

    pub fn dead_pending(&self) -> &[usize] {
        &self.dead_pending
    }

    pub fn segments(&self) -> &[TrajectorySegment<S>] {
        &self.segments
    }

    /// Particles reborn (or freshly initialized) that have not been simulated yet.
    pub fn awaiting_evolution(&self) -> &[usize] {
        &self.awaiting
    }

    /// `ρ^N` at the current time.
    pub fn rho(&self) -> f64 {
        rho_estimator(self.branch_count, self.k, self.n_particles()).expect("validated at construction")
    }

    /// Every particle's state at time `t`.
    pub fn states_at(&self, t: f64) -> Result<Vec<StatePoint<S>>, EngineError> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, seg)| seg.state_at(t).ok_or(EngineError::NotEvolved(i)))
            .collect()
    }

    /// Replaces every pending dead particle by a stub at the current time
    /// carrying the matching parent state, and records the branching.
    fn rebirth(&mut self, parent_states: Vec<S>) {
        debug_assert_eq!(parent_states.len(), self.dead_pending.len());
        debug_assert!(self.branch_times.last().is_none_or(|&last| last <= self.time));
        for (&dead, state) in self.dead_pending.iter().zip(parent_states) {
            self.segments[dead] = TrajectorySegment::stub(state, self.time);
        }
        self.awaiting.append(&mut self.dead_pending);
        self.branch_count += 1;
        self.branch_times.push(self.time);
    }

    /// Simulates every awaiting particle up to `horizon` with its own stream
    /// for the current epoch. Returns the indices that were evolved.
    pub fn evolve_awaiting<M>(
        &mut self,
        model: &M,
        streams: &StreamFactory,
        horizon: f64,
        parallel: bool,
    ) -> Result<Vec<usize>, EngineError>
    where
        M: ProcessModel<State = S>,
    {
        let epoch = self.branch_count as u64;
        let todo = std::mem::take(&mut self.awaiting);
        let advance = |&i: &usize| -> Result<TrajectorySegment<S>, EngineError> {
            let seg = &self.segments[i];
            let state = seg.last_interior().ok_or(EngineError::NotEvolved(i))?;
            let mut rng = streams.evolve(epoch, i as u32);
            Ok(model.advance_with_skeleton(state, seg.start(), horizon, &mut rng)?)
        };
        let evolved: Vec<TrajectorySegment<S>> = if parallel && todo.len() >= PARALLEL_MIN_BATCH {
            todo.par_iter().map(advance).collect::<Result<_, _>>()?
        } else {
            todo.iter().map(advance).collect::<Result<_, _>>()?
        };
        for (&i, seg) in todo.iter().zip(evolved) {
            self.segments[i] = seg;
        }
        self.cost_segments += todo.len() as u64;
        Ok(todo)
    }
}

/// Rebranches the `K` pending dead particles onto the given survivor states,
/// each dead particle drawing its parent independently and uniformly.
pub fn branch_step<S, R>(
    ensemble: &mut EnsembleState<S>,
    survivor_states: &[S],
    rng: &mut R,
) -> Result<(), EngineError>
where
    S: Clone + Send + Sync,
    R: Rng + ?Sized,
{
    let k = ensemble.k;
    if ensemble.dead_pending.len() != k {
        return Err(EngineError::BatchNotReady {
            pending: ensemble.dead_pending.len(),
            k,
        });
    }
    let expected = ensemble.n_particles() - k;
    if survivor_states.len() != expected {
        return Err(EngineError::SurvivorCount {
            expected,
            got: survivor_states.len(),
        });
    }
    let parents = choose_parents(k, expected, rng);
    let states = parents.into_iter().map(|p| survivor_states[p].clone()).collect();
    ensemble.rebirth(states);
    Ok(())
}

/// Estimates read off the system at its current time.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimates {
    pub rho: f64,
    pub alive_fraction: f64,
    pub p_hat: f64,
    pub eta: BTreeMap<String, f64>,
    pub gamma_hat: BTreeMap<String, f64>,
    /// `η(φ)/η(1_F)`; `None` when every particle is dead.
    pub eta_norm_hat: BTreeMap<String, Option<f64>>,
}

pub fn estimators_at_t<S: Clone + Send + Sync>(
    ensemble: &EnsembleState<S>,
    test_functions: &[TestFunction<S>],
) -> Result<Estimates, EngineError> {
    let states = ensemble.states_at(ensemble.time)?;
    let n = states.len() as f64;
    let rho = ensemble.rho();
    let alive = states.iter().filter(|s| s.is_interior()).count();
    let alive_fraction = alive as f64 / n;
    let mut eta = BTreeMap::new();
    let mut gamma_hat = BTreeMap::new();
    let mut eta_norm_hat = BTreeMap::new();
    for phi in test_functions {
        let mean = states.iter().map(|s| phi.evaluate(s)).sum::<f64>() / n;
        eta.insert(phi.name().to_string(), mean);
        gamma_hat.insert(phi.name().to_string(), rho * mean);
        let normalized = (alive > 0).then(|| mean / alive_fraction);
        eta_norm_hat.insert(phi.name().to_string(), normalized);
    }
    Ok(Estimates {
        rho,
        alive_fraction,
        p_hat: rho * alive_fraction,
        eta,
        gamma_hat,
        eta_norm_hat,
    })
}

/// Output of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FVRunRecord {
    pub n_particles: usize,
    pub batch_size: usize,
    pub horizon: f64,
    pub seed: u64,
    pub p_hat: f64,
    pub gamma_hat: BTreeMap<String, f64>,
    pub eta_norm_hat: BTreeMap<String, Option<f64>>,
    pub branch_times: Vec<f64>,
    pub resample_count: usize,
    pub cost_segments: u64,
    #[serde(rename = "alive_fraction_at_T")]
    pub alive_fraction_at_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DeathEvent {
    time: f64,
    particle: usize,
}

impl Eq for DeathEvent {}

impl Ord for DeathEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.particle.cmp(&other.particle))
    }
}

impl PartialOrd for DeathEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn death_of<S: Clone>(segments: &[TrajectorySegment<S>], i: usize) -> f64 {
    segments[i].death_time().expect("pending particles are dead")
}

/// Maps the rank of a survivor (among particles not in `excluded`, which is
/// sorted) to its particle index.
fn survivor_index(rank: usize, excluded_offsets: &[usize]) -> usize {
    rank + excluded_offsets.partition_point(|&g| g <= rank)
}

/// Runs the synchronized system up to the configured horizon.
///
/// Deaths exactly at the horizon count as dead but trigger nothing. If a
/// discretized model produces several deaths at the very instant of the
/// `K`-th one, the tied particles are ordered uniformly at random, exactly
/// `K` are rebranched and the rest stay pending for the next batch.
pub fn run_fv<M: ProcessModel>(
    config: &FVConfig,
    model: &M,
    test_functions: &[TestFunction<M::State>],
) -> Result<FVRunRecord, EngineError> {
    config.validate()?;
    let n = config.n_particles;
    let k = config.batch_size();
    let horizon = config.horizon;
    let streams = StreamFactory::new(config.seed);

    let initial = (0..n)
        .map(|i| StatePoint::Interior(model.sample_initial(&mut streams.initial(i as u32))))
        .collect();
    let mut ens = EnsembleState::from_states(initial, k, 0.0, 0)?;
    let mut heap: BinaryHeap<Reverse<DeathEvent>> = BinaryHeap::with_capacity(n);

    let mut evolved = ens.evolve_awaiting(model, &streams, horizon, config.parallel)?;
    loop {
        for &i in &evolved {
            if let Some(time) = ens.segments[i].death_time() {
                heap.push(Reverse(DeathEvent { time, particle: i }));
            }
        }

        while ens.dead_pending.len() < k {
            match heap.peek() {
                Some(Reverse(ev)) if ev.time < horizon => {
                    ens.dead_pending.push(ev.particle);
                    heap.pop();
                }
                _ => break,
            }
        }
        if ens.dead_pending.len() < k {
            break;
        }
        let tau = death_of(&ens.segments, ens.dead_pending[k - 1]);
        while let Some(Reverse(ev)) = heap.peek() {
            if ev.time != tau {
                break;
            }
            ens.dead_pending.push(ev.particle);
            heap.pop();
        }

        let epoch = ens.branch_count + 1;
        if epoch > config.max_branchings {
            return Err(EngineError::NonTermination {
                limit: config.max_branchings,
                time: tau,
            });
        }
        let mut rng = streams.branching(epoch as u64);

        let mut excluded = ens.dead_pending.clone();
        excluded.sort_unstable();
        let excess = if ens.dead_pending.len() > k {
            let first_tied = ens
                .dead_pending
                .partition_point(|&i| death_of(&ens.segments, i) < tau);
            let mut tied = ens.dead_pending.split_off(first_tied);
            tied.sort_unstable();
            tied.shuffle(&mut rng);
            let rest = tied.split_off(k - first_tied);
            ens.dead_pending.extend(tied);
            rest
        } else {
            Vec::new()
        };

        let n_survivors = n - excluded.len();
        if n_survivors == 0 {
            return Err(EngineError::Extinction { time: tau });
        }
        let offsets: Vec<usize> = excluded.iter().enumerate().map(|(j, &i)| i - j).collect();
        let parent_states = choose_parents(k, n_survivors, &mut rng)
            .into_iter()
            .map(|rank| {
                let parent = survivor_index(rank, &offsets);
                match ens.segments[parent].state_at(tau) {
                    Some(StatePoint::Interior(s)) => Ok(s),
                    _ => Err(EngineError::NotEvolved(parent)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        ens.time = tau;
        ens.rebirth(parent_states);
        let mut excess = excess;
        excess.sort_unstable();
        ens.dead_pending = excess;
        evolved = ens.evolve_awaiting(model, &streams, horizon, config.parallel)?;
    }

    ens.time = horizon;
    debug_assert_eq!(ens.cost_segments, (n + k * ens.branch_count) as u64);
    let est = estimators_at_t(&ens, test_functions)?;
    Ok(FVRunRecord {
        n_particles: n,
        batch_size: k,
        horizon,
        seed: config.seed,
        p_hat: est.p_hat,
        gamma_hat: est.gamma_hat,
        eta_norm_hat: est.eta_norm_hat,
        resample_count: ens.branch_count,
        branch_times: ens.branch_times,
        cost_segments: ens.cost_segments,
        alive_fraction_at_t: est.alive_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CtmcModel;

    #[test]
    fn rho_examples() {
        assert_eq!(rho_estimator(0, 7, 100).unwrap(), 1.0);
        assert!((rho_estimator(3, 2, 10).unwrap() - 0.512).abs() < 1e-15);
        assert!((rho_estimator(1, 9, 10).unwrap() - 0.1).abs() < 1e-15);
        assert!(rho_estimator(1, 10, 10).is_err());
        assert!(rho_estimator(1, 0, 10).is_err());
    }

    #[test]
    fn k_from_theta() {
        assert_eq!(batch_from_theta(0.5, 10_000), 5000);
        assert_eq!(batch_from_theta(0.999, 10), 1);
        assert_eq!(batch_from_theta(0.001, 10), 9);
        assert_eq!(batch_from_theta(0.75, 10), 3);
    }

    #[test]
    fn config_validation() {
        assert!(FVConfig::new(1, Batch::Size(1), 1.0, 0).is_err());
        assert!(FVConfig::new(10, Batch::Size(10), 1.0, 0).is_err());
        assert!(FVConfig::new(10, Batch::Size(0), 1.0, 0).is_err());
        assert!(FVConfig::new(10, Batch::Theta(1.0), 1.0, 0).is_err());
        assert!(FVConfig::new(10, Batch::Theta(0.5), 0.0, 0).is_err());
        assert!(FVConfig::new(10, Batch::Theta(0.5), f64::INFINITY, 0).is_err());
        assert_eq!(FVConfig::new(10, Batch::Theta(0.5), 1.0, 0).unwrap().batch_size(), 5);
    }

    #[test]
    fn survivor_rank_mapping_skips_excluded() {
        let excluded = [1usize, 2, 5];
        let offsets: Vec<usize> = excluded.iter().enumerate().map(|(j, &i)| i - j).collect();
        let mapped: Vec<usize> = (0..5).map(|r| survivor_index(r, &offsets)).collect();
        assert_eq!(mapped, vec![0, 3, 4, 6, 7]);
    }

    #[test]
    fn single_survivor_is_always_chosen() {
        let mut ens =
            EnsembleState::from_states(vec![StatePoint::Interior(3usize), StatePoint::Cemetery], 1, 0.5, 0).unwrap();
        let mut rng = StreamFactory::new(1).branching(1);
        branch_step(&mut ens, &[3usize], &mut rng).unwrap();
        assert_eq!(ens.branch_count(), 1);
        assert_eq!(ens.branch_times(), &[0.5]);
        assert!(ens.dead_pending().is_empty());
        let states = ens.states_at(0.5).unwrap();
        assert_eq!(states, vec![StatePoint::Interior(3), StatePoint::Interior(3)]);
    }

    #[test]
    fn branch_step_checks_preconditions() {
        let states = vec![
            StatePoint::Interior(0usize),
            StatePoint::Interior(1),
            StatePoint::Cemetery,
            StatePoint::Interior(2),
        ];
        let mut ens = EnsembleState::from_states(states.clone(), 2, 0.0, 0).unwrap();
        let mut rng = StreamFactory::new(1).branching(1);
        assert!(matches!(
            branch_step(&mut ens, &[0, 1], &mut rng),
            Err(EngineError::BatchNotReady { pending: 1, k: 2 })
        ));
        let mut ens = EnsembleState::from_states(states, 1, 0.0, 0).unwrap();
        assert!(matches!(
            branch_step(&mut ens, &[0, 1], &mut rng),
            Err(EngineError::SurvivorCount { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn branching_draws_parents_uniformly() {
        // N = 10, K = 5, five labelled survivors
        let mut counts = [[0u32; 5]; 5];
        let survivors: Vec<usize> = (0..5).collect();
        let rounds = 100_000;
        let mut rng = StreamFactory::new(99).branching(1);
        let mut states: Vec<StatePoint<usize>> = (0..5).map(StatePoint::Interior).collect();
        states.extend(std::iter::repeat_n(StatePoint::Cemetery, 5));
        for _ in 0..rounds {
            let mut ens = EnsembleState::from_states(states.clone(), 5, 1.0, 0).unwrap();
            branch_step(&mut ens, &survivors, &mut rng).unwrap();
            let after = ens.states_at(1.0).unwrap();
            assert!(after.iter().all(StatePoint::is_interior));
            for (slot, s) in after[5..].iter().enumerate() {
                counts[slot][*s.interior().unwrap()] += 1;
            }
        }
        for slot in counts {
            for c in slot {
                let f = c as f64 / rounds as f64;
                assert!((f - 0.2).abs() < 0.01, "{f}");
            }
        }
    }

    #[test]
    fn estimator_hand_example() {
        let phi = TestFunction::<char>::new("two", 2.0, |_| 2.0);
        let states = vec![
            StatePoint::Interior('x'),
            StatePoint::Interior('x'),
            StatePoint::Cemetery,
            StatePoint::Cemetery,
        ];
        let ens = EnsembleState::from_states(states, 2, 1.0, 1).unwrap();
        let est = estimators_at_t(&ens, &[phi, TestFunction::indicator()]).unwrap();
        assert_eq!(est.eta["two"], 1.0);
        assert_eq!(est.gamma_hat["two"], 0.5);
        assert_eq!(est.eta_norm_hat["two"], Some(2.0));
        assert_eq!(est.eta_norm_hat["one"], Some(1.0));
        assert_eq!(est.p_hat, 0.25);
    }

    #[test]
    fn all_alive_gives_unit_probability() {
        let states = vec![StatePoint::Interior(0usize); 5];
        let ens = EnsembleState::from_states(states, 2, 0.0, 0).unwrap();
        let est = estimators_at_t(&ens, &[TestFunction::indicator()]).unwrap();
        assert_eq!(est.p_hat, 1.0);
    }

    #[test]
    fn all_dead_flags_normalized_estimate() {
        let states = vec![StatePoint::<usize>::Cemetery; 3];
        let ens = EnsembleState::from_states(states, 1, 0.0, 2).unwrap();
        let est = estimators_at_t(&ens, &[TestFunction::indicator()]).unwrap();
        assert_eq!(est.p_hat, 0.0);
        assert_eq!(est.eta_norm_hat["one"], None);
    }

    #[test]
    fn no_killing_never_branches() {
        let model = CtmcModel::two_state(1.0, 2.0, [0.0, 0.0], [0.5, 0.5]).unwrap();
        for (n, k) in [(2, 1), (50, 10), (200, 199)] {
            let cfg = FVConfig::new(n, Batch::Size(k), 4.0, 17).unwrap();
            let rec = run_fv(&cfg, &model, &[TestFunction::indicator()]).unwrap();
            assert_eq!(rec.p_hat, 1.0);
            assert_eq!(rec.resample_count, 0);
            assert!(rec.branch_times.is_empty());
            assert_eq!(rec.cost_segments, n as u64);
        }
    }

    #[test]
    fn ceiling_stops_runaway_branching() {
        let model = CtmcModel::pure_death(50.0).unwrap();
        let cfg = FVConfig::new(10, Batch::Size(1), 10.0, 3)
            .unwrap()
            .with_max_branchings(100);
        assert!(matches!(
            run_fv(&cfg, &model, &[]),
            Err(EngineError::NonTermination { limit: 100, .. })
        ));
    }

    #[test]
    fn run_is_deterministic_and_conserves_cost() {
        let model = CtmcModel::two_state(1.0, 1.0, [0.5, 2.0], [1.0, 0.0]).unwrap();
        let tfs = [TestFunction::indicator(), model.test_function("state:1").unwrap()];
        let cfg = FVConfig::new(500, Batch::Theta(0.5), 2.5, 8).unwrap();
        let a = run_fv(&cfg, &model, &tfs).unwrap();
        let b = run_fv(&cfg, &model, &tfs).unwrap();
        let c = run_fv(&cfg.clone().with_parallel(true), &model, &tfs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.cost_segments, (500 + 250 * a.resample_count) as u64);
        assert!(a.branch_times.windows(2).all(|w| w[0] < w[1]));
        let expected = rho_estimator(a.resample_count, 250, 500).unwrap() * a.alive_fraction_at_t;
        assert_eq!(a.p_hat, expected);
    }
}
