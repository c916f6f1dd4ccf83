//! Bias-corrected Adam over a [`ParameterStore`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::ParameterStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter that has a gradient, in name order.
    /// Parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParameterStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dimension("adam_step", &[p.shape(), g.shape()]));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let p = params.get_mut(name).expect("checked above");
            let (ms, vs, ps) = (m.values_mut(), v.values_mut(), p.values_mut());
            for (i, &gi) in g.values().iter().enumerate() {
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gi;
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = ms[i] / c1;
                let v_hat = vs[i] / c2;
                ps[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("theta.x", Tensor::scalar(v)).unwrap();
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("theta.x".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_parameters() {
        let mut s = store(1.5);
        AdamState::new().update(&mut s, &grad(0.0), 0.1).unwrap();
        assert_eq!(s.get("theta.x").unwrap().item(), 1.5);
        AdamState::new().update(&mut s, &grad(3.0), 0.0).unwrap();
        assert_eq!(s.get("theta.x").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut s = store(0.0);
            AdamState::new().update(&mut s, &grad(g), 0.01).unwrap();
            let moved = s.get("theta.x").unwrap().item();
            assert!((moved + 0.01 * g.signum()).abs() < 1e-7, "{g}: {moved}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut s = store(0.0);
        let g = BTreeMap::from([("theta.x".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(AdamState::new().update(&mut s, &g, 0.1), Err(Error::Dimension { .. })));
    }
}
