//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Gradients, Parameters};
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.m.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn second_moments(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.v.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn from_moments(
        m: BTreeMap<String, Tensor<T>>,
        v: BTreeMap<String, Tensor<T>>,
        step: u64,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|((a, x), (b, y))| a != b || x.shape() != y.shape()) {
            return Err(Error::Config("optimizer moments do not pair up".into()));
        }
        Ok(AdamState {
            m,
            v,
            t: step,
            ..Self::new()
        })
    }
}

/// One Adam update over every parameter that has a gradient.
///
/// Refuses the whole step (leaving parameters and state untouched) if any
/// gradient is non-finite or mis-shaped.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {name} has shape {}, parameter {}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                layer: name.to_string(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let eps = T::of(state.eps);
    let lr_t = T::of(lr);

    for (name, g) in grads.iter() {
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(name).expect("checked above");
        for (((p, m), v), &g) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            // lr == 0 must leave parameters bitwise untouched, which
            // `p - 0 * x` does not guarantee for p == -0.0
            if lr != 0.0 {
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> (Parameters<f64>, ModelConfig) {
        let cfg = ModelConfig {
            base_channels: 1,
            input_size: (16, 16),
            ..ModelConfig::default()
        };
        (Parameters::init(&cfg, 0).unwrap(), cfg)
    }

    fn grads_like(p: &Parameters<f64>, value: f64) -> Gradients<f64> {
        let mut g = Gradients::new();
        for (name, t) in p.iter() {
            g.insert(name.to_string(), Tensor::full(t.shape(), value));
        }
        g
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, _) = tiny();
        let before = p.get("classifier.conv.bias").unwrap().data()[0];
        let mut st = AdamState::new();
        let g = grads_like(&p, 1.0);
        adam_step(&mut p, &g, &mut st, 1e-4).unwrap();
        let after = p.get("classifier.conv.bias").unwrap().data()[0];
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((after - before - expected).abs() < 1e-18);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let (mut p, _) = tiny();
        let before = p.clone();
        let mut st = AdamState::new();
        adam_step(&mut p, &grads_like(&before, 0.0), &mut st, 1e-4).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_opposes_gradient_sign() {
        let (mut p, _) = tiny();
        let before = p.clone();
        let mut g = Gradients::new();
        for (name, t) in before.iter() {
            let data = (0..t.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
            g.insert(name.to_string(), Tensor::from_vec(t.shape(), data).unwrap());
        }
        adam_step(&mut p, &g, &mut AdamState::new(), 1e-3).unwrap();
        for (name, t) in p.iter() {
            let old = before.get(name).unwrap();
            for (i, (a, b)) in t.data().iter().zip(old.data()).enumerate() {
                let d = a - b;
                let gi = g.get(name).unwrap().data()[i];
                assert!(d * gi < 0.0, "{name}[{i}]");
            }
        }
    }

    #[test]
    fn non_finite_gradient_refused() {
        let (mut p, _) = tiny();
        let before = p.clone();
        let mut g = grads_like(&before, 0.1);
        g.tensors.get_mut("enc2.conv1.weight").unwrap().data_mut()[0] = f64::NAN;
        let mut st = AdamState::new();
        let err = adam_step(&mut p, &g, &mut st, 1e-4).unwrap_err();
        assert!(err.to_string().contains("enc2.conv1.weight"));
        assert_eq!(p, before);
        assert_eq!(st.step(), 0);
    }
}
