//! Adam with bias correction over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Hash-grid convention: `beta2 = 0.99`, tiny epsilon.
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// One update of every trainable segment. Frozen segments keep their values
/// and moments. The gradient is zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
    check_finite(store)?;
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ranges: Vec<_> = store
        .segments()
        .iter()
        .filter(|s| s.trainable)
        .map(|s| s.range())
        .collect();
    for range in ranges {
        for i in range {
            let g = store.grad[i];
            let m = cfg.beta1 * store.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * store.v[i] + (1.0 - cfg.beta2) * g * g;
            store.m[i] = m;
            store.v[i] = v;
            store.values[i] -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
    }
    store.zero_grad();
    Ok(())
}

fn check_finite(store: &ParamStore) -> Result<()> {
    let mut worst: Option<(usize, &str)> = None;
    for seg in store.segments() {
        let bad = store.grad[seg.range()]
            .iter()
            .filter(|g| !g.is_finite())
            .count();
        if bad > 0 && worst.map_or(true, |(n, _)| bad > n) {
            worst = Some((bad, &seg.name));
        }
    }
    match worst {
        Some((count, name)) => Err(Error::NonFiniteGradient {
            segment: name.to_string(),
            count,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.push_segment("p", values, true);
        s
    }

    #[test]
    fn zero_gradient_keeps_values_and_decays_moments() {
        let mut s = store(vec![1.0, 2.0]);
        s.m = vec![0.5, -0.5];
        s.v = vec![0.25, 0.25];
        s.step = 3;
        // nonzero moments still move the parameters; here only check decay
        let cfg = AdamConfig::default();
        let before = s.clone();
        adam_step(&mut s, 0.0, &cfg).unwrap();
        assert_eq!(s.values, before.values);
        assert_eq!(s.m, vec![0.45, -0.45]);
        assert!((s.v[0] - 0.2475).abs() < 1e-15);
        assert_eq!(s.step, 4);
    }

    #[test]
    fn fresh_zero_gradient_is_a_no_op() {
        let mut s = store(vec![1.0, -3.0]);
        adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(s.values, vec![1.0, -3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut s = store(vec![0.0, 0.0, 0.0]);
        s.grad = vec![0.5, -2.0, 1e-3];
        let g = s.grad.clone();
        adam_step(&mut s, 0.01, &cfg).unwrap();
        for i in 0..3 {
            let want = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!(
                (s.values[i] - want).abs() < 1e-15,
                "{} vs {want}",
                s.values[i]
            );
        }
        assert!(s.grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_converges() {
        // f(p) = (p - 3)^2 from p = 0, lr 0.1
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut s = store(vec![0.0]);
        for _ in 0..100 {
            s.grad[0] = 2.0 * (s.values[0] - 3.0);
            adam_step(&mut s, 0.1, &cfg).unwrap();
        }
        // independent scalar recurrence
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (p - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(s.values[0], p);
        assert!((p - 3.0).abs() < 0.1, "{p}");
    }

    #[test]
    fn frozen_segments_do_not_move() {
        let mut s = ParamStore::new();
        s.push_segment("a", vec![1.0], true);
        s.push_segment("b", vec![1.0], false);
        s.grad = vec![1.0, 1.0];
        adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap();
        assert!(s.values[0] < 1.0);
        assert_eq!(s.values[1], 1.0);
    }

    #[test]
    fn non_finite_gradient_names_segment() {
        let mut s = ParamStore::new();
        s.push_segment("grid.lidar", vec![0.0; 2], true);
        s.push_segment("head.color", vec![0.0; 2], true);
        s.grad = vec![0.0, 0.0, f64::NAN, f64::INFINITY];
        match adam_step(&mut s, 0.1, &AdamConfig::default()) {
            Err(Error::NonFiniteGradient { segment, count }) => {
                assert_eq!(segment, "head.color");
                assert_eq!(count, 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
