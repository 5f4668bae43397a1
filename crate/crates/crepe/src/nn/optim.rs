//! Adam with bias correction over named parameter maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moment state, keyed like the parameters
/// themselves so iteration order is deterministic.
pub struct Adam<S> {
    pub cfg: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter. A name missing from `grads` counts
    /// as a zero gradient: its moments still decay.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<S>>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<()> {
        self.t += 1;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let lr = S::from_f64(self.cfg.lr);
        let eps = S::from_f64(self.cfg.eps);
        let corr1 = S::one() - S::from_f64(self.cfg.beta1.powi(self.t as i32));
        let corr2 = S::one() - S::from_f64(self.cfg.beta2.powi(self.t as i32));
        for (name, p) in params.iter_mut() {
            let zero;
            let g = match grads.get(name) {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(Error::Dimension(format!(
                            "gradient for {name} is {}x{}, parameter is {}x{}",
                            g.rows(),
                            g.cols(),
                            p.rows(),
                            p.cols()
                        )));
                    }
                    g
                }
                None => {
                    zero = Tensor::zeros(p.rows(), p.cols());
                    &zero
                }
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (S::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (S::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / corr1;
                let vhat = vi / corr2;
                p.data_mut()[i] = p.data()[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// (step count, first moments, second moments) for checkpoint sidecars.
    pub fn state(&self) -> (u64, &BTreeMap<String, Tensor<S>>, &BTreeMap<String, Tensor<S>>) {
        (self.t, &self.m, &self.v)
    }

    pub fn from_state(
        cfg: AdamConfig,
        t: u64,
        m: BTreeMap<String, Tensor<S>>,
        v: BTreeMap<String, Tensor<S>>,
    ) -> Self {
        Adam { cfg, t, m, v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::<f64>::new(cfg);
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::new(1, 2, vec![1.0, -2.0]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(1, 2, vec![0.5, -0.25]).unwrap());
        adam.step(&mut params, &grads).unwrap();
        for (i, &g) in [0.5f64, -0.25].iter().enumerate() {
            let m = (1.0 - cfg.beta1) * g;
            let v = (1.0 - cfg.beta2) * g * g;
            let mhat = m / (1.0 - cfg.beta1);
            let vhat = v / (1.0 - cfg.beta2);
            let expected = [1.0, -2.0][i] - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            assert!((params["w"].data()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_still_decays_moments() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        adam.step(&mut params, &grads).unwrap();
        let m_after_one = adam.m["w"].item();
        adam.step(&mut params, &BTreeMap::new()).unwrap();
        assert!((adam.m["w"].item() - m_after_one * adam.cfg.beta1).abs() < 1e-15);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::zeros(2, 2));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(1, 2));
        assert!(matches!(
            adam.step(&mut params, &grads),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut adam = Adam::<f32>::new(AdamConfig::default());
            let mut params = BTreeMap::new();
            params.insert("w".to_string(), Tensor::new(1, 3, vec![0.1f32, 0.2, 0.3]).unwrap());
            for step in 0..5 {
                let mut grads = BTreeMap::new();
                grads.insert(
                    "w".to_string(),
                    Tensor::new(1, 3, vec![0.01 * step as f32, -0.02, 0.005]).unwrap(),
                );
                adam.step(&mut params, &grads).unwrap();
            }
            params["w"].data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
