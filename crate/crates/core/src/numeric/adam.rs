use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Gradients, ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: u64,
}

/// First/second moments per parameter.
///
/// Each parameter keeps its own step counter so that a parameter skipped by
/// a step (no gradient entry) gets the correct bias correction later.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, Moments>,
    steps: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Step counter of one parameter.
    pub fn param_steps(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.t)
    }
}

/// Applies one Adam update for every parameter that has a gradient entry.
/// Parameters without an entry are left untouched, moments included.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    grads.check_finite()?;
    for (name, g) in grads.iter() {
        let p = params.get(name).ok_or_else(|| Error::Unknown {
            kind: "parameter",
            id: name.to_string(),
        })?;
        if p.dims() != g.dims() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.dims().to_vec(),
                right: g.dims().to_vec(),
            });
        }
    }
    state.steps += 1;
    for (name, g) in grads.iter() {
        let p = params.get_mut(name).expect("checked above");
        let mo = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: Tensor::zeros(g.dims()),
                v: Tensor::zeros(g.dims()),
                t: 0,
            });
        mo.t += 1;
        let c1 = 1.0 - config.beta1.powi(mo.t as i32);
        let c2 = 1.0 - config.beta2.powi(mo.t as i32);
        let (m, v) = (mo.m.values_mut(), mo.v.values_mut());
        for (((pi, &gi), mi), vi) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(name: &str, v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(name, Tensor::vector(vec![v])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![0.3, -2.0, 5.0])).unwrap();
        let before = p.clone();
        let mut g = ParameterSet::new();
        g.insert("w", Tensor::zeros(&[3])).unwrap();
        let mut s = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.steps(), 5);
        assert_eq!(s.param_steps("w"), 5);
    }

    #[test]
    fn single_step_on_unit_gradient() {
        let mut p = scalar("p", 1.0);
        let g = scalar("p", 1.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("p").unwrap().values()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.999).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_scripted_reference() {
        // Reference: the textbook update written out by hand.
        let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.001, 0.9, 0.999, 1e-8);
        let gs = [0.7_f64, -1.3];
        let mut pr = 0.25_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, g) in gs.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            pr -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = scalar("p", 0.25);
        let mut s = AdamState::new();
        for g in gs {
            adam_step(&mut p, &scalar("p", g), &mut s, &AdamConfig::default()).unwrap();
        }
        assert!((p.get("p").unwrap().values()[0] - pr).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar("layer.w", 1.0);
        let before = p.clone();
        let mut s = AdamState::new();
        let err = adam_step(&mut p, &scalar("layer.w", f64::NAN), &mut s, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("layer.w"));
        assert_eq!(p, before);
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn absent_parameters_are_untouched() {
        let mut p = scalar("a", 1.0);
        p.insert("b", Tensor::vector(vec![2.0])).unwrap();
        let mut s = AdamState::new();
        let mut g = scalar("a", 1.0);
        g.insert("b", Tensor::vector(vec![1.0])).unwrap();
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        let b_after_first = p.get("b").unwrap().values()[0];
        adam_step(&mut p, &scalar("a", 1.0), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("b").unwrap().values()[0], b_after_first);
        assert_eq!(s.param_steps("a"), 2);
        assert_eq!(s.param_steps("b"), 1);
    }
}
