use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Mean-reverting Ornstein-Uhlenbeck noise around zero, one value per action dim.
#[derive(Debug, Clone, PartialEq)]
pub struct OuProcess {
    pub x: [f64; 2],
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl OuProcess {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Result<Self> {
        let ok = theta.is_finite() && theta >= 0.0 && sigma.is_finite() && sigma >= 0.0;
        if !ok || !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config(format!(
                "invalid OU parameters theta={theta} sigma={sigma} dt={dt}"
            )));
        }
        Ok(Self {
            x: [0.0; 2],
            theta,
            sigma,
            dt,
        })
    }

    pub fn reset(&mut self) {
        self.x = [0.0; 2];
    }

    /// `x <- x - theta * x * dt + sigma * sqrt(dt) * xi`.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 2] {
        let s = self.sigma * self.dt.sqrt();
        for x in &mut self.x {
            let xi: f64 = rng.sample(StandardNormal);
            *x += self.theta * (0.0 - *x) * self.dt + s * xi;
        }
        self.x
    }
}
