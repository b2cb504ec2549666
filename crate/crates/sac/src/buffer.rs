//! FIFO replay memory with uniform sampling without replacement.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::losses::Batch;

/// Ring buffer of `(state, raw action, reward, next state)` records stored in
/// flat arrays. Storage grows on demand up to `capacity`; after that the
/// oldest record is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    /// Slot the next record goes to once the buffer is full.
    cursor: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            cursor: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Records ever pushed, including overwritten ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64]) {
        assert_eq!(state.len(), self.state_dim);
        assert_eq!(next_state.len(), self.state_dim);
        assert_eq!(action.len(), self.action_dim);
        if self.len() < self.capacity {
            self.states.extend_from_slice(state);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_states.extend_from_slice(next_state);
        } else {
            let i = self.cursor;
            let (sd, ad) = (self.state_dim, self.action_dim);
            self.states[i * sd..(i + 1) * sd].copy_from_slice(state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(next_state);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    /// `n` distinct record indices, uniformly at random.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(n <= self.len(), "batch of {n} from {} records", self.len());
        rand::seq::index::sample(rng, self.len(), n).into_vec()
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = indices.len();
        let rows = |src: &[f64], d: usize| Array2::from_shape_fn((n, d), |(b, j)| src[indices[b] * d + j]);
        Batch {
            states: rows(&self.states, sd),
            actions: rows(&self.actions, ad),
            rewards: Array1::from_iter(indices.iter().map(|&i| self.rewards[i])),
            next_states: rows(&self.next_states, sd),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(n, rng);
        self.gather(&idx)
    }
}
