use rand::Rng;

use crate::error::{Error, Result};

/// Element-wise Bernoulli dropout with inverted `1/keep` rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliDropout {
    keep: f64,
}

impl BernoulliDropout {
    pub fn new(keep: f64) -> Result<Self> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::config(format!("dropout keep probability {keep} outside (0, 1]")));
        }
        Ok(Self { keep })
    }

    pub fn keep(&self) -> f64 {
        self.keep
    }

    /// Multipliers of `0` or `1/keep`, one per element.
    pub fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let scale = 1.0 / self.keep;
        (0..len)
            .map(|_| if rng.random::<f64>() < self.keep { scale } else { 0.0 })
            .collect()
    }
}
