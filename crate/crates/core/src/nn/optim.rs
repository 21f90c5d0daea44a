use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: ParamSet<f64>,
    v: ParamSet<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros = || {
            let mut p = ParamSet::new();
            for (k, t) in params.iter() {
                p.insert(k.clone(), Tensor::zeros(t.shape().to_vec()))
                    .expect("names unique");
            }
            p
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<f64>> {
        self.m.get(name)
    }

    /// One update. Fails without touching anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("gradient for unknown {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.get_mut(name).expect("same names");
            let v = self.v.get_mut(name).expect("same names");
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = f64::from(*gv);
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let update = lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                *pv = (f64::from(*pv) - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = one(0.5);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &one(0.0)).unwrap();
        assert_eq!(p, one(0.5));
        opt.step(&mut p, &one(1.0)).unwrap();
        let m1 = opt.first_moment("w").unwrap().data()[0];
        opt.step(&mut p, &one(0.0)).unwrap();
        let m2 = opt.first_moment("w").unwrap().data()[0];
        assert!((m2 - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut p = one(0.0);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, &p);
        let mut last = 0.0f32;
        for _ in 0..2000 {
            last = p.get("w").unwrap().data()[0];
            opt.step(&mut p, &one(-3.0)).unwrap();
        }
        let step = f64::from(p.get("w").unwrap().data()[0] - last);
        assert!((step - cfg.lr).abs() < 1e-4 * cfg.lr + 1e-6, "{step}");
    }

    #[test]
    fn identical_runs_match_and_nan_fails() {
        let run = || {
            let mut p = one(0.3);
            let mut opt = Adam::new(AdamConfig::default(), &p);
            for i in 0..10 {
                opt.step(&mut p, &one((i as f32).sin())).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = one(0.3);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(matches!(opt.step(&mut p, &one(f32::NAN)), Err(Error::Numeric(_))));
        assert_eq!(p, one(0.3));
        assert_eq!(opt.steps(), 0);
    }
}
