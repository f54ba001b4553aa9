use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::LearnerError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Stacked transitions, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let b = items.len();
        let (od, ad) = items
            .first()
            .map(|t| (t.obs.len(), t.action.len()))
            .unwrap_or((0, 0));
        let stack = |f: &dyn Fn(&Transition) -> &[f64], cols: usize| {
            let mut m = Array2::zeros((b, cols));
            for (i, t) in items.iter().enumerate() {
                m.row_mut(i).assign(&ndarray::ArrayView1::from(f(t)));
            }
            m
        };
        Batch {
            obs: stack(&|t| &t.obs, od),
            actions: stack(&|t| &t.action, ad),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_obs: stack(&|t| &t.next_obs, od),
            terminals: items.iter().map(|t| t.terminal).collect(),
        }
    }
}

/// Bounded FIFO store with uniform sampling (with replacement).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, LearnerError> {
        if capacity == 0 {
            return Err(LearnerError::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) -> Result<(), LearnerError> {
        if !t.reward.is_finite() {
            return Err(LearnerError::InvalidTransition("non-finite reward".into()));
        }
        if let Some(first) = self.items.front() {
            if first.obs.len() != t.obs.len()
                || first.action.len() != t.action.len()
                || t.next_obs.len() != t.obs.len()
            {
                return Err(LearnerError::InvalidTransition("dimension change".into()));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch, LearnerError> {
        if self.items.is_empty() {
            return Err(LearnerError::EmptyBuffer);
        }
        let picked: Vec<&Transition> = self
            .sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect();
        Ok(Batch::from_transitions(&picked))
    }
}
