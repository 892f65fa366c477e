//! Experience pool: a seeded-uniform replay ring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Transition;

/// Fixed-capacity ring of transitions with uniform sampling, without
/// replacement within one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self { capacity, items: Vec::with_capacity(capacity.min(4096)), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends one transition, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws `batch` distinct transitions uniformly (partial Fisher-Yates
    /// over the index set). Requires at least `batch` stored items.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<Transition> {
        assert!(
            batch <= self.items.len(),
            "sampling {batch} needs at least that many stored, have {}",
            self.items.len()
        );
        let mut indices: Vec<u32> = (0..self.items.len() as u32).collect();
        let mut out = Vec::with_capacity(batch);
        for i in 0..batch {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
            out.push(self.items[indices[i] as usize]);
        }
        out
    }
}
