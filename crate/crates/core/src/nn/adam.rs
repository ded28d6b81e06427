use crate::error::{Error, Result};

/// Optimizer state for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update. Parameters are left untouched when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() || self.m.len() != self.v.len()
        {
            return Err(Error::config(format!(
                "adam length mismatch: params {}, grads {}, moments {}/{}",
                params.len(),
                grads.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(
                "adam_step",
                format!("gradient {i} is {}", grads[i]),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target <- (1 - tau) * target + tau * online`, element-wise.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("tau {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::config(format!(
            "soft update length mismatch: {} vs {}",
            target.len(),
            online.len()
        )));
    }
    if tau == 1.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        let mut p = vec![0.5; 4];
        let mut st = AdamState::new(4, 1e-3);
        st.step(&mut p, &[1.0; 4]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        for v in &p {
            assert!((v - expected).abs() < 1e-15);
            assert!(((0.5 - v) - 1e-3).abs() < 1e-10);
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, 1e-3);
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn repeated_constant_gradient_does_not_grow_step() {
        // t=1 step = lr; t=2: m_hat = g, v_hat = g^2 again, step = lr * g/(|g|+eps)
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(2, 1e-3);
        st.step(&mut p, &[0.3, -2.0]).unwrap();
        let d1: Vec<f64> = p.iter().map(|v| v.abs()).collect();
        let before = p.clone();
        st.step(&mut p, &[0.3, -2.0]).unwrap();
        for i in 0..2 {
            let d2 = (p[i] - before[i]).abs();
            assert!(d2 <= d1[i] + 1e-15);
        }
    }

    #[test]
    fn non_finite_grad_leaves_params() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2, 1e-3);
        assert!(st.step(&mut p, &[f64::NAN, 1.0]).is_err());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn soft_update_cases() {
        let mut t = vec![0.0, 1.0];
        soft_update(&mut t, &[2.0, 3.0], 1.0).unwrap();
        assert_eq!(t, vec![2.0, 3.0]);

        let mut t = vec![0.25, 1.0];
        soft_update(&mut t, &[2.0, 3.0], 0.0).unwrap();
        assert_eq!(t, vec![0.25, 1.0]);

        let mut t = vec![0.0];
        soft_update(&mut t, &[2.0], 0.001).unwrap();
        assert!((t[0] - 0.002).abs() < 1e-15);

        assert!(soft_update(&mut t, &[2.0], 1.5).is_err());
        assert!(soft_update(&mut t, &[2.0], -0.1).is_err());
    }
}
