use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, EvfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Named parameters plus per-parameter Adam moments, in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(invalid(format!("duplicate parameter `{name}`")));
        }
        self.moments.insert(
            name.to_string(),
            Moments {
                m: Tensor::zeros(value.shape()),
                v: Tensor::zeros(value.shape()),
            },
        );
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Gaussian-initialized weight with standard deviation `std`.
    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f32, rng: &mut impl Rng) -> Result<()> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f32, std).map_err(|e| invalid(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub(crate) fn set_optimizer_state(&mut self, step: u64, moments: BTreeMap<String, Moments>) -> Result<()> {
        for (name, p) in &self.params {
            let m = moments
                .get(name)
                .ok_or_else(|| invalid(format!("optimizer state missing `{name}`")))?;
            if m.m.shape() != p.shape() || m.v.shape() != p.shape() {
                return Err(invalid(format!("optimizer state shape mismatch for `{name}`")));
            }
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }

    /// One Adam update with bias correction. Gradients missing from `grads`
    /// count as zero. Non-finite gradients abort the step before any
    /// parameter is touched.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| EvfError::UnknownParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(invalid(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(EvfError::NonFiniteGradient(name.clone()));
            }
        }
        let scale = match cfg.clip_norm {
            Some(max) => {
                let norm = grads
                    .values()
                    .flat_map(|g| g.data())
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt() as f32;
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let p = self.params.get_mut(name).unwrap();
            let mo = self.moments.get_mut(name).unwrap();
            let (pd, md, vd) = (p.data_mut(), mo.m.data_mut(), mo.v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i] * scale;
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![w, -w])).unwrap();
        s
    }

    fn grads(g: Vec<f32>) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::vector(g))])
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = single(0.5);
        s.adam_step(&grads(vec![0.0, 0.0]), &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.5, -0.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2  =>  delta = -lr * g / (|g| + eps)
        let cfg = AdamConfig::default();
        let mut s = single(0.5);
        s.adam_step(&grads(vec![3.0, -0.2]), &cfg).unwrap();
        let w = s.get("w").unwrap().data();
        assert!((w[0] - (0.5 - cfg.lr)).abs() < 1e-6);
        assert!((w[1] - (-0.5 + cfg.lr)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        for _ in 0..100 {
            let w = s.get("w").unwrap().item();
            s.adam_step(&BTreeMap::from([("w".to_string(), Tensor::scalar(2.0 * w))]), &cfg)
                .unwrap();
        }
        assert!(s.get("w").unwrap().item().abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut s = single(0.5);
        let err = s
            .adam_step(&grads(vec![f32::NAN, 0.0]), &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.step(), 0);
        assert_eq!(s.get("w").unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn clip_limits_global_norm() {
        let cfg = AdamConfig {
            clip_norm: Some(5.0),
            ..Default::default()
        };
        let mut s = single(0.0);
        s.adam_step(&grads(vec![300.0, 400.0]), &cfg).unwrap();
        let m = &s.moments("w").unwrap().m;
        assert!((m.data()[0] - 0.1 * 3.0).abs() < 1e-5);
        assert!((m.data()[1] - 0.1 * 4.0).abs() < 1e-5);
    }
}
