use rand::Rng;

use crate::error::{Error, Result};

/// One stored interaction. States are flattened and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for terminal transitions; time-limit cut-offs keep bootstrapping.
    pub done: bool,
}

/// A sampled minibatch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub state_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(rows: &[&Transition]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::config("batch needs at least one transition"))?;
        let dim = first.state.len();
        let mut b = Batch {
            size: rows.len(),
            state_dim: dim,
            states: Vec::with_capacity(rows.len() * dim),
            actions: Vec::with_capacity(rows.len() * 2),
            rewards: Vec::with_capacity(rows.len()),
            next_states: Vec::with_capacity(rows.len() * dim),
            dones: Vec::with_capacity(rows.len()),
        };
        for t in rows {
            if t.state.len() != dim || t.next_state.len() != dim {
                return Err(Error::config("transitions in a batch must share one state width"));
            }
            b.states.extend_from_slice(&t.state);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_states.extend_from_slice(&t.next_state);
            b.dones.push(t.done);
        }
        Ok(b)
    }
}

/// Fixed-capacity FIFO replay memory with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
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

    /// Stored transitions from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.next % self.items.len().max(1));
        older.iter().chain(newer.iter())
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() || t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::numeric(
                "replay push",
                format!("reward {} / action {:?} out of range", t.reward, t.action),
            ));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Uniform sample with replacement; refuses while fewer than `batch` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Usage(format!(
                "cannot sample {batch} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        let rows: Vec<&Transition> = (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Batch::from_transitions(&rows)
    }

    /// Rebuilds a buffer from transitions listed oldest first.
    pub fn from_fifo(capacity: usize, items: Vec<Transition>) -> Result<Self> {
        let mut buf = Self::new(capacity)?;
        if items.len() > capacity {
            return Err(Error::config("more stored transitions than capacity"));
        }
        for t in items {
            buf.push(t)?;
        }
        Ok(buf)
    }
}
