use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            b1: 0.9,
            b2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let AdamConfig { lr, b1, b2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let grads = vec![Tensor::vector(vec![1.0, 1.0])];
        let mut st = AdamState::new(cfg, &params);
        st.step(&mut params, &grads).unwrap();
        // m̂ = 1, v̂ = 1 at t=1, so delta = -lr / (1 + eps).
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - 1.0 - expected).abs() < 1e-15);
        assert!((params[0].data()[1] + 2.0 - expected).abs() < 1e-15);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![Tensor::vector(vec![0.5])];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        st.step(&mut params, &[Tensor::vector(vec![2.0])]).unwrap();
        let before = params[0].data()[0];
        let (m1, v1) = (st.first_moment(0)[0], st.second_moment(0)[0]);
        let mut frozen = params.clone();
        let mut st2 = st.clone();
        st2.config.lr = 0.0;
        st2.step(&mut frozen, &[Tensor::vector(vec![0.0])]).unwrap();
        assert!(st2.first_moment(0)[0].abs() < m1.abs());
        assert!(st2.second_moment(0)[0] < v1);

        let mut zero_params = vec![Tensor::vector(vec![0.5])];
        let mut fresh = AdamState::new(AdamConfig::default(), &zero_params);
        fresh
            .step(&mut zero_params, &[Tensor::vector(vec![0.0])])
            .unwrap();
        assert_eq!(zero_params[0].data()[0], 0.5);
        assert!(before != 0.5);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        let mut params = vec![Tensor::vector(vec![0.0; 3])];
        let g = vec![Tensor::vector(vec![0.3, -1.2, 4.0])];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        st.step(&mut params, &g).unwrap();
        let d1: Vec<f64> = params[0].data().to_vec();
        st.step(&mut params, &g).unwrap();
        for (i, &p) in params[0].data().iter().enumerate() {
            let d2 = p - d1[i];
            assert!(d2.abs() <= d1[i].abs() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut params = vec![Tensor::vector(vec![0.0; 3])];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        let err = st.step(&mut params, &[Tensor::vector(vec![0.0; 2])]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }
}
