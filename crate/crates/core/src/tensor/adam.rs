use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Gradients, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
///
/// Moments are created lazily the first time a parameter receives a
/// gradient; parameters without a gradient entry are left untouched.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if let Some(m) = self.first.get(name) {
                if m.shape() != g.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("{name}: moment {:?} vs grad {:?}", m.shape(), g.shape()),
                    ));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let p = params.get_mut(name)?;
            for (((pv, mv), vv), gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tape};

    fn grads_for(params: &ParamSet, g: &[f64]) -> Gradients {
        let mut tape = Tape::new();
        let w = tape.param("w", params.get("w").unwrap().clone());
        let c = tape.constant(Tensor::vector(g.to_vec()));
        let p = tape.mul(&w, &c).unwrap();
        let loss = tape.sum(&p).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.5, -2.0]));
        let before = params.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &grads_for(&before, &[0.0, 0.0])).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![0.25]));
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
        let g = grads_for(&params, &[1.0]);
        adam.step(&mut params, &g).unwrap();
        let expected = 0.25 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut other = ParamSet::new();
        other.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let g = grads_for(&other, &[1.0, 1.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(adam.step(&mut params, &g).is_err());
        assert_eq!(adam.steps(), 0);
    }
}
