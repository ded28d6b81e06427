use rand::Rng;
use rand_distr::StandardNormal;

use super::sensors::{MultiObservation, Sensor};
use crate::error::{Error, Result};

/// Per-sensor Gaussian noise (in normalized units) and failure flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNoiseSpec {
    pub sigma: [f64; 3],
    pub failed: [bool; 3],
    pub seed: u64,
}

impl SensorNoiseSpec {
    pub fn clean(seed: u64) -> Self {
        Self {
            sigma: [0.0; 3],
            failed: [false; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("noise sigma must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0) && !self.failed.iter().any(|&f| f)
    }
}

/// Applies failures and additive Gaussian noise.
///
/// Failed blocks are zeroed and flagged unavailable. Noise is drawn in
/// sensor order, element by element, as `sigma * scale * xi`; laser ranges
/// are clipped to `[0, max_range]` and image cells to `[0, 1]`.
pub fn corrupt<R: Rng + ?Sized>(
    obs: &MultiObservation,
    spec: &SensorNoiseSpec,
    rng: &mut R,
) -> Result<MultiObservation> {
    spec.validate()?;
    let mut out = obs.clone();
    for sensor in Sensor::ALL {
        let i = sensor.index();
        if spec.failed[i] {
            out.block_mut(sensor).iter_mut().for_each(|v| *v = 0.0);
            out.available[i] = false;
            continue;
        }
        let sigma = spec.sigma[i];
        if sigma == 0.0 {
            continue;
        }
        let max_range = out.max_range;
        let scales: Vec<f64> = (0..out.block(sensor).len())
            .map(|k| obs.scale(sensor, k))
            .collect();
        for (v, scale) in out.block_mut(sensor).iter_mut().zip(scales) {
            let xi: f64 = rng.sample(StandardNormal);
            *v += sigma * scale * xi;
            match sensor {
                Sensor::Physical => {}
                Sensor::Laser => *v = v.clamp(0.0, max_range),
                Sensor::Image => *v = v.clamp(0.0, 1.0),
            }
        }
    }
    Ok(out)
}
