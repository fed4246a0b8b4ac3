//! Counter-based random streams.
//!
//! Every random draw made by the engine comes from a ChaCha8 stream keyed by
//! the run seed and addressed by `(purpose, epoch, particle)`. Because the
//! address is fixed before any work is scheduled, a particle's trajectory does
//! not depend on which thread simulated it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to models and the branching step.
pub type StreamRng = ChaCha8Rng;

/// Largest epoch that can be encoded in a stream id.
pub const MAX_EPOCH: u64 = (1 << 30) - 1;

const PURPOSE_EVOLVE: u64 = 0;
const PURPOSE_INITIAL: u64 = 1;
const PURPOSE_BRANCH: u64 = 2;

#[derive(Clone, Debug)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            key: ChaCha8Rng::seed_from_u64(seed).get_seed(),
        }
    }

    fn stream(&self, purpose: u64, epoch: u64, index: u32) -> StreamRng {
        debug_assert!(epoch <= MAX_EPOCH);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((purpose << 62) | (epoch << 32) | u64::from(index));
        rng
    }

    /// Stream used to draw a particle's initial state.
    pub fn initial(&self, particle: u32) -> StreamRng {
        self.stream(PURPOSE_INITIAL, 0, particle)
    }

    /// Stream used to evolve `particle` from its birth in `epoch`
    /// (epoch 0 is the initial evolution, epoch j follows the j-th branching).
    pub fn evolve(&self, epoch: u64, particle: u32) -> StreamRng {
        self.stream(PURPOSE_EVOLVE, epoch, particle)
    }

    /// Stream used for tie ordering and parent selection at branching `epoch`.
    pub fn branching(&self, epoch: u64) -> StreamRng {
        self.stream(PURPOSE_BRANCH, epoch, 0)
    }
}
