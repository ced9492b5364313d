//! Experience replay: ring buffer with uniform without-replacement batches.

use stoqrl_core::lattice::{Action, SpinConfig};
use stoqrl_core::rng::Rng;

/// One transition (s, a, r, s'), with the terminal flag of the successor.
#[derive(Debug, Clone, Copy)]
pub struct Experience {
    pub state: SpinConfig,
    pub action: Action,
    pub reward: f64,
    pub next: SpinConfig,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer. Training only samples once the buffer has
/// filled completely.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: Vec<Experience>,
    capacity: usize,
    head: usize,
    filled: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            head: 0,
            filled: false,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        if self.filled {
            self.capacity
        } else {
            self.slots.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.filled
    }

    pub fn push(&mut self, e: Experience) {
        if self.slots.len() < self.capacity {
            self.slots.push(e);
            if self.slots.len() == self.capacity {
                self.filled = true;
            }
        } else {
            self.slots[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform sample of `batch` distinct slots (partial Fisher-Yates).
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Vec<Experience> {
        let n = self.len();
        assert!(batch <= n, "batch {batch} exceeds buffer occupancy {n}");
        let mut indices: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(batch);
        for k in 0..batch {
            let pick = k + rng.below(n - k);
            indices.swap(k, pick);
            out.push(self.slots[indices[k]]);
        }
        out
    }
}
