//! Action-consistency penalty between sub-policies and the best target sub-policy.

use crate::error::{Error, Result};

use super::model::FeatureMask;

/// Weight and the masks of every dropping configuration, in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSpec {
    pub lambda: f64,
    pub masks: Vec<FeatureMask>,
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(j),
        }
    }
    best
}

/// Sums `[set, batch]` values over the batch.
pub fn per_set_sums(values: &[f64], batch: usize) -> Vec<f64> {
    values.chunks_exact(batch).map(|c| c.iter().sum()).collect()
}

/// `lambda * sum_j sum_i |a_j(s_i) - target(s_i)|^2` and its gradient w.r.t.
/// the `[set, batch, 2]` online actions. `target` is `[batch, 2]` and constant.
pub fn aux_penalty(online: &[f64], target: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if target.is_empty() || online.len() % target.len() != 0 {
        return Err(Error::config("aux online actions must be whole copies of the target batch"));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(online.len());
    for set in online.chunks_exact(target.len()) {
        for (a, t) in set.iter().zip(target) {
            let d = a - t;
            loss += d * d;
            grad.push(2.0 * lambda * d);
        }
    }
    Ok((lambda * loss, grad))
}
