use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::TrialTensor;

/// Fixed-capacity replay memory filled by reservoir sampling: after `n ≥ k`
/// offers every offered item is present with probability `k/n`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T = TrialTensor> {
    capacity: usize,
    items: Vec<T>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of items offered so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Offer one item; returns the slot it landed in, if any.
    pub fn offer(&mut self, item: T) -> Option<usize> {
        let slot = if self.items.len() < self.capacity {
            self.items.push(item);
            Some(self.items.len() - 1)
        } else if self.capacity > 0 {
            let j = self.rng.random_range(0..=self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = item;
                Some(j as usize)
            } else {
                None
            }
        } else {
            None
        };
        self.seen += 1;
        slot
    }
}

pub fn reservoir_offer<T>(buf: &mut ReplayBuffer<T>, item: T) -> Option<usize> {
    buf.offer(item)
}
