//! Sensor Dropout: whole sensor blocks are switched off according to a
//! categorical law over the `2^M - 1` non-empty sensor subsets, and the
//! surviving blocks are rescaled by
//! `alpha = sum(K_i) / sum(delta_i * K_i)` so that a uniform input keeps the
//! same total mass under every configuration.

use rand::Rng;

use crate::error::{Error, Result};

/// Largest supported number of sensor blocks.
pub const MAX_SENSORS: usize = 16;

/// On/off pattern over `M` sensors. The all-off pattern is not representable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DropConfig {
    flags: Vec<bool>,
    index: usize,
}

impl DropConfig {
    /// Builds a configuration from flags; sensor 1 is the most significant bit
    /// of the 1-based index.
    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        if flags.is_empty() || flags.len() > MAX_SENSORS {
            return Err(Error::config(format!(
                "sensor count {} outside 1..={MAX_SENSORS}",
                flags.len()
            )));
        }
        let index = flags
            .iter()
            .fold(0usize, |acc, &on| (acc << 1) | usize::from(on));
        if index == 0 {
            return Err(Error::config("the all-off configuration is excluded"));
        }
        Ok(Self {
            flags: flags.to_vec(),
            index,
        })
    }

    /// Configuration implied by the set of currently available sensors.
    pub fn from_availability(available: &[bool]) -> Result<Self> {
        if !available.iter().any(|&a| a) {
            return Err(Error::Refusal("no sensor is available".into()));
        }
        Self::from_flags(available)
    }

    pub fn all_on(m: usize) -> Result<Self> {
        Self::from_flags(&vec![true; m])
    }

    /// Configuration number `index` in `1..=2^m - 1`.
    pub fn from_index(m: usize, index: usize) -> Result<Self> {
        if m == 0 || m > MAX_SENSORS {
            return Err(Error::config(format!("sensor count {m} outside 1..={MAX_SENSORS}")));
        }
        let n = (1usize << m) - 1;
        if index == 0 || index > n {
            return Err(Error::config(format!("config index {index} outside 1..={n}")));
        }
        let flags = (0..m).map(|i| (index >> (m - 1 - i)) & 1 == 1).collect();
        Ok(Self { flags, index })
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// 1-based position in the enumeration order.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn sensors(&self) -> usize {
        self.flags.len()
    }

    pub fn is_all_on(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    /// Short label such as `110`.
    pub fn label(&self) -> String {
        self.flags.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }
}

/// All non-empty configurations over `m` sensors in ascending binary order.
pub fn enumerate_configs(m: usize) -> Result<Vec<DropConfig>> {
    if m == 0 || m > MAX_SENSORS {
        return Err(Error::config(format!("sensor count {m} outside 1..={MAX_SENSORS}")));
    }
    (1..(1usize << m)).map(|j| DropConfig::from_index(m, j)).collect()
}

/// `alpha = sum(K) / sum(delta * K)`.
pub fn rescale_factor(config: &DropConfig, dims: &[usize]) -> Result<f64> {
    if dims.len() != config.sensors() {
        return Err(Error::config(format!(
            "{} sensor dims for a {}-sensor config",
            dims.len(),
            config.sensors()
        )));
    }
    if dims.iter().any(|&k| k == 0) {
        return Err(Error::config("sensor dims must be positive"));
    }
    let total: usize = dims.iter().sum();
    let active: usize = dims
        .iter()
        .zip(config.flags())
        .filter(|(_, &on)| on)
        .map(|(&k, _)| k)
        .sum();
    if active == 0 {
        return Err(Error::config("configuration keeps no sensor"));
    }
    Ok(total as f64 / active as f64)
}

/// Per-element multiplier `alpha * delta_i` over the flattened multimodal state.
#[derive(Debug, Clone, PartialEq)]
pub struct SdMask {
    multipliers: Vec<f64>,
}

impl SdMask {
    pub fn new(config: &DropConfig, dims: &[usize]) -> Result<Self> {
        let alpha = rescale_factor(config, dims)?;
        let mut multipliers = Vec::with_capacity(dims.iter().sum());
        for (&k, &on) in dims.iter().zip(config.flags()) {
            let v = if on { alpha } else { 0.0 };
            multipliers.extend(std::iter::repeat_n(v, k));
        }
        Ok(Self { multipliers })
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.multipliers.len() {
            return Err(Error::config(format!(
                "state has {} elements, mask covers {}",
                state.len(),
                self.multipliers.len()
            )));
        }
        Ok(state
            .iter()
            .zip(&self.multipliers)
            .map(|(x, m)| x * m)
            .collect())
    }
}

/// Zeroes dropped blocks and rescales the rest by the config's `alpha`.
pub fn apply_mask(state: &[f64], config: &DropConfig, dims: &[usize]) -> Result<Vec<f64>> {
    SdMask::new(config, dims)?.apply(state)
}

/// Categorical law over the non-empty configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct DropDistribution {
    sensor_dims: Vec<usize>,
    probs: Vec<f64>,
    configs: Vec<DropConfig>,
}

fn validate_simplex(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::config(format!(
            "distribution has {} entries, expected {n}",
            p.len()
        )));
    }
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::config("distribution entries must be finite and non-negative"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("distribution sums to {s}, not 1")));
    }
    Ok(())
}

impl DropDistribution {
    pub fn uniform(sensor_dims: &[usize]) -> Result<Self> {
        let configs = enumerate_configs(sensor_dims.len())?;
        let n = configs.len();
        Ok(Self {
            sensor_dims: sensor_dims.to_vec(),
            probs: vec![1.0 / n as f64; n],
            configs,
        })
    }

    pub fn new(sensor_dims: &[usize], probs: Vec<f64>) -> Result<Self> {
        let configs = enumerate_configs(sensor_dims.len())?;
        validate_simplex(&probs, configs.len())?;
        Ok(Self {
            sensor_dims: sensor_dims.to_vec(),
            probs,
            configs,
        })
    }

    /// All mass on configuration `index` (1-based).
    pub fn one_hot(sensor_dims: &[usize], index: usize) -> Result<Self> {
        let n = (1usize << sensor_dims.len()).saturating_sub(1);
        if index == 0 || index > n {
            return Err(Error::config(format!("config index {index} outside 1..={n}")));
        }
        let mut p = vec![0.0; n];
        p[index - 1] = 1.0;
        Self::new(sensor_dims, p)
    }

    pub fn sensors(&self) -> usize {
        self.sensor_dims.len()
    }

    pub fn sensor_dims(&self) -> &[usize] {
        &self.sensor_dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn configs(&self) -> &[DropConfig] {
        &self.configs
    }

    /// Draws one configuration; consumes exactly one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &DropConfig {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last = j;
            acc += p;
            if u < acc {
                return &self.configs[j];
            }
        }
        // rounding left u beyond the cumulative sum
        &self.configs[last]
    }

    /// Probability that each sensor is switched on: `p_i = sum_j delta_j(i) p_j`.
    pub fn marginal_on_prob(&self) -> Vec<f64> {
        (0..self.sensors())
            .map(|i| {
                self.configs
                    .iter()
                    .zip(&self.probs)
                    .filter(|(c, _)| c.flags()[i])
                    .map(|(_, &p)| p)
                    .sum()
            })
            .collect()
    }

    /// Replaces the probability vector, rejecting anything off the simplex.
    pub fn set_distribution(&mut self, probs: Vec<f64>) -> Result<()> {
        validate_simplex(&probs, self.configs.len())?;
        self.probs = probs;
        Ok(())
    }
}

/// Convenience wrapper mirroring [`DropDistribution::sample`].
pub fn sample_config<'a, R: Rng + ?Sized>(dist: &'a DropDistribution, rng: &mut R) -> &'a DropConfig {
    dist.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flags(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn enumeration_order() {
        let one = enumerate_configs(1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].flags(), &[true]);

        let two = enumerate_configs(2).unwrap();
        let got: Vec<_> = two.iter().map(|c| c.flags().to_vec()).collect();
        assert_eq!(got, vec![flags(&[0, 1]), flags(&[1, 0]), flags(&[1, 1])]);
        assert_eq!(two[2].index(), 3);

        assert_eq!(enumerate_configs(3).unwrap().len(), 7);
        assert!(enumerate_configs(0).is_err());
        assert!(enumerate_configs(17).is_err());
    }

    #[test]
    fn rescale_examples() {
        let all = DropConfig::all_on(3).unwrap();
        assert_eq!(rescale_factor(&all, &[10, 19, 256]).unwrap(), 1.0);

        let c = DropConfig::from_flags(&flags(&[1, 1, 0])).unwrap();
        let a = rescale_factor(&c, &[10, 19, 256]).unwrap();
        assert!((a - 285.0 / 29.0).abs() < 1e-12);
        assert!((a - 9.8276).abs() < 1e-4);

        let c = DropConfig::from_flags(&flags(&[0, 0, 1])).unwrap();
        let a = rescale_factor(&c, &[10, 19, 12288]).unwrap();
        assert!((a - 12317.0 / 12288.0).abs() < 1e-12);
        assert!((a - 1.00236).abs() < 1e-5);

        assert!(DropConfig::from_flags(&[false, false]).is_err());
    }

    #[test]
    fn mask_examples() {
        let all = DropConfig::all_on(3).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(apply_mask(&x, &all, &[2, 2, 2]).unwrap(), x.to_vec());

        let mid = DropConfig::from_flags(&flags(&[0, 1, 0])).unwrap();
        assert_eq!(
            apply_mask(&x, &mid, &[2, 2, 2]).unwrap(),
            vec![0.0, 0.0, 9.0, 12.0, 0.0, 0.0]
        );
        assert!(apply_mask(&x[..5], &mid, &[2, 2, 2]).is_err());
    }

    #[test]
    fn sampling_concentrated_and_never_empty() {
        let d = DropDistribution::one_hot(&[1, 1, 1], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng).index(), 3);
        }
    }

    #[test]
    fn marginals() {
        let u = DropDistribution::uniform(&[10, 19, 256]).unwrap();
        for p in u.marginal_on_prob() {
            assert!((p - 4.0 / 7.0).abs() < 1e-15);
        }
        let full = DropDistribution::one_hot(&[1, 1, 1], 7).unwrap();
        assert_eq!(full.marginal_on_prob(), vec![1.0; 3]);

        let d = DropDistribution::new(&[1, 1], vec![0.5, 0.25, 0.25]).unwrap();
        assert_eq!(d.marginal_on_prob(), vec![0.5, 0.75]);
    }

    #[test]
    fn set_distribution_validates() {
        let mut d = DropDistribution::uniform(&[3, 4, 5]).unwrap();
        d.set_distribution(vec![1.0 / 7.0; 7]).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-15));
        let mut neg = vec![0.2; 7];
        neg[0] = -0.2;
        assert!(d.set_distribution(neg).is_err());
        assert!(d.set_distribution(vec![0.5; 7]).is_err());

        let mut hot = vec![0.0; 7];
        hot[6] = 1.0;
        d.set_distribution(hot).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = d.sample(&mut rng);
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(apply_mask(&x, c, d.sensor_dims()).unwrap(), x);
    }

    #[test]
    fn availability_refusal() {
        assert!(matches!(
            DropConfig::from_availability(&[false, false, false]),
            Err(Error::Refusal(_))
        ));
        let c = DropConfig::from_availability(&[true, false, true]).unwrap();
        assert_eq!(c.label(), "101");
        assert_eq!(c.index(), 5);
    }
}
