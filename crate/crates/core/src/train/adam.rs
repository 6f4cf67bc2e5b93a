//! Adam with bias correction. Moment buffers are keyed by parameter name
//! so they can be checkpointed and restored alongside the weights.

use crate::error::{Error, Result};
use crate::model::ParamSet;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn moments<'a>(
        &'a self,
        params: &'a ParamSet,
    ) -> impl Iterator<Item = (&'a str, &'a [f32], &'a [f32])> {
        params.names().filter_map(|name| {
            let m = self.m.get(name)?;
            let v = self.v.get(name)?;
            Some((name, m.as_slice(), v.as_slice()))
        })
    }

    /// Restore saved moment buffers (inverse of [`Adam::moments`]).
    pub fn restore(&mut self, step: u64, saved: Vec<(String, Vec<f32>, Vec<f32>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in saved {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }

    /// Apply one update from named gradients. Parameters without a gradient
    /// entry are left untouched; gradient shapes must match their tensors.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(String, Vec<f32>)]) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.cfg.beta1.powf(t);
        let c2 = 1.0 - self.cfg.beta2.powf(t);
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        for (name, g) in grads {
            let tensor = params.get_mut(name)?;
            if tensor.numel() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    tensor.numel()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let data = tensor.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                data[i] -= (self.cfg.lr * mh / (vh.sqrt() + self.cfg.eps)) as f32;
            }
            if !data.iter().all(|x| x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "parameter {name} became non-finite during the update"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorData;

    fn one_param(value: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", TensorData::scalar(value)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_roughly_lr_against_gradient() {
        let mut params = one_param(0.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1)).unwrap();
        opt.step(&mut params, &[("x".into(), vec![2.5])]).unwrap();
        let x = params.get("x").unwrap().data()[0];
        // bias-corrected first step is lr * g / (|g| + eps) = ~lr
        assert!(
            (x + 0.1).abs() < 1e-6,
            "first Adam step should be ~ -lr * sign(g), got {x}"
        );
    }

    #[test]
    fn quadratic_minimization_converges() {
        let mut params = one_param(5.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05)).unwrap();
        for _ in 0..2000 {
            let x = params.get("x").unwrap().data()[0];
            let g = 2.0 * (x - 3.0);
            opt.step(&mut params, &[("x".into(), vec![g])]).unwrap();
        }
        let x = params.get("x").unwrap().data()[0];
        assert!(
            (x - 3.0).abs() < 1e-2,
            "Adam should find the minimum of (x-3)^2, ended at {x}"
        );
    }

    #[test]
    fn missing_parameter_and_bad_shape_are_errors() {
        let mut params = one_param(1.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(
            opt.step(&mut params, &[("y".into(), vec![1.0])]).is_err(),
            "gradient for unknown parameter must fail"
        );
        assert!(
            opt.step(&mut params, &[("x".into(), vec![1.0, 2.0])])
                .is_err(),
            "gradient with the wrong element count must fail"
        );
    }

    #[test]
    fn moments_round_trip_through_restore() {
        let mut params = one_param(0.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut params, &[("x".into(), vec![1.0])]).unwrap();
        opt.step(&mut params, &[("x".into(), vec![-0.5])]).unwrap();

        let saved: Vec<(String, Vec<f32>, Vec<f32>)> = opt
            .moments(&params)
            .map(|(n, m, v)| (n.to_string(), m.to_vec(), v.to_vec()))
            .collect();
        let mut other = Adam::new(AdamConfig::default()).unwrap();
        other.restore(opt.step_count(), saved);

        let mut pa = params.clone();
        let mut pb = params.clone();
        opt.step(&mut pa, &[("x".into(), vec![0.3])]).unwrap();
        other.step(&mut pb, &[("x".into(), vec![0.3])]).unwrap();
        assert_eq!(
            pa.get("x").unwrap().data(),
            pb.get("x").unwrap().data(),
            "restored optimizer must continue identically"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(Adam::new(AdamConfig::with_lr(0.0)).is_err(), "zero lr");
        let mut cfg = AdamConfig::default();
        cfg.beta1 = 1.0;
        assert!(Adam::new(cfg).is_err(), "beta1 of 1 never decays");
    }
}
