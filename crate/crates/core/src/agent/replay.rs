use alloc::vec::Vec;

use rand::Rng as _;

use super::Transition;
use crate::error::{usage, Result};
use crate::rng::Rng;

/// Fixed-capacity FIFO store of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(usage("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Stores `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        let (newer, older) = self.storage.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `n` uniform draws with replacement; empty when the buffer is.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut Rng) -> Vec<&'a Transition> {
        if self.storage.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ActionMask;
    use crate::rng::rng_from_seed;

    fn t(r: f64) -> Transition {
        Transition {
            state: alloc::vec![r],
            action: 0,
            reward: r,
            next_state: alloc::vec![r],
            done: true,
            next_mask: ActionMask::all(1),
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for r in 0..5 {
            b.push(t(r as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for r in 0..10 {
            b.push(t(r as f64));
        }
        let a: Vec<f64> = b.sample(8, &mut rng_from_seed(1)).iter().map(|t| t.reward).collect();
        let c: Vec<f64> = b.sample(8, &mut rng_from_seed(1)).iter().map(|t| t.reward).collect();
        assert_eq!(a, c);
        assert!(ReplayBuffer::new(0).is_err());
        assert!(ReplayBuffer::new(2).unwrap().sample(4, &mut rng_from_seed(0)).is_empty());
    }
}
