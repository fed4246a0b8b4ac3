use super::StatePoint;

/// One simulated piece of a particle trajectory on `[start, cap]`.
///
/// The skeleton holds `(time, state)` pairs in increasing time order, the
/// first one at `start`. The path is right-continuous and constant between
/// recorded times. A killed segment stays at the cemetery from its death time
/// onwards.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment<S> {
    start: f64,
    cap: f64,
    skeleton: Vec<(f64, S)>,
    death: Option<f64>,
}

impl<S: Clone> TrajectorySegment<S> {
    /// A segment that has not been evolved yet: the particle sits at `state` at time `start`.
    pub fn stub(state: S, start: f64) -> Self {
        Self {
            start,
            cap: start,
            skeleton: vec![(start, state)],
            death: None,
        }
    }

    /// A particle already at the cemetery at `time`.
    pub fn cemetery(time: f64) -> Self {
        Self {
            start: time,
            cap: time,
            skeleton: Vec::new(),
            death: Some(time),
        }
    }

    pub(crate) fn from_parts(start: f64, cap: f64, skeleton: Vec<(f64, S)>, death: Option<f64>) -> Self {
        debug_assert!(!skeleton.is_empty());
        debug_assert!(skeleton.windows(2).all(|w| w[0].0 <= w[1].0));
        Self {
            start,
            cap,
            skeleton,
            death,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn death_time(&self) -> Option<f64> {
        self.death
    }

    pub fn survived(&self) -> bool {
        self.death.is_none()
    }

    /// Death time if killed, otherwise the cap.
    pub fn end(&self) -> f64 {
        self.death.unwrap_or(self.cap)
    }

    pub fn skeleton(&self) -> &[(f64, S)] {
        &self.skeleton
    }

    /// Last interior state visited, `None` only for a bare cemetery segment.
    pub fn last_interior(&self) -> Option<&S> {
        self.skeleton.last().map(|(_, s)| s)
    }

    pub fn final_state(&self) -> StatePoint<S> {
        match (self.death, self.last_interior()) {
            (None, Some(s)) => StatePoint::Interior(s.clone()),
            _ => StatePoint::Cemetery,
        }
    }

    pub fn is_alive_at(&self, t: f64) -> bool {
        self.death.is_none_or(|d| t < d)
    }

    /// State at time `t`, or `None` when `t` is before the start or past the
    /// cap of a surviving segment.
    pub fn state_at(&self, t: f64) -> Option<StatePoint<S>> {
        if t < self.start || t.is_nan() {
            return None;
        }
        if let Some(d) = self.death {
            if t >= d {
                return Some(StatePoint::Cemetery);
            }
        } else if t > self.cap {
            return None;
        }
        let idx = self.skeleton.partition_point(|(s, _)| *s <= t);
        idx.checked_sub(1)
            .map(|i| StatePoint::Interior(self.skeleton[i].1.clone()))
    }
}
