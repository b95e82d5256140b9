use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::Transition;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// Fixed-capacity ring of transitions with its own sampling RNG.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends, overwriting the oldest record once full.
    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `k` distinct stored positions, uniformly at random.
    pub fn sample_indices(&mut self, k: usize) -> Result<Vec<usize>> {
        if k > self.data.len() {
            return Err(Error::Config(format!(
                "cannot sample {k} records from a buffer holding {}",
                self.data.len()
            )));
        }
        Ok(index::sample(&mut self.rng, self.data.len(), k).into_vec())
    }

    pub fn sample(&mut self, k: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(k)?;
        Ok(idx.into_iter().map(|i| &self.data[i]).collect())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }
}
