//! Diagonal Gaussians as graph nodes: reparameterized sampling and the
//! closed-form KL divergence.

use crate::error::{EvfError, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, NodeId};

pub const LOG_VAR_MIN: f32 = -10.0;
pub const LOG_VAR_MAX: f32 = 10.0;

/// Mean and log-variance nodes of a diagonal Gaussian. `log_var` is always
/// the clamped node.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams {
    pub mean: NodeId,
    pub log_var: NodeId,
}

impl GaussianParams {
    /// Clamps `raw_log_var` into `[-10, 10]` and pairs it with `mean`.
    pub fn new(g: &mut Graph, mean: NodeId, raw_log_var: NodeId) -> Result<Self> {
        let (ms, ls) = (g.value(mean).shape(), g.value(raw_log_var).shape());
        if ms != ls {
            return Err(EvfError::Shape {
                op: "gaussian",
                node: raw_log_var.index(),
                detail: format!("mean {ms:?} vs log_var {ls:?}"),
            });
        }
        let log_var = g.clamp(raw_log_var, LOG_VAR_MIN, LOG_VAR_MAX)?;
        Ok(Self { mean, log_var })
    }

    /// Zero-mean, unit-variance prior with the given shape.
    pub fn standard(g: &mut Graph, shape: &[usize]) -> Self {
        let mean = g.constant(Tensor::zeros(shape));
        let log_var = g.constant(Tensor::zeros(shape));
        Self { mean, log_var }
    }

    pub fn shape<'a>(&self, g: &'a Graph) -> &'a [usize] {
        g.value(self.mean).shape()
    }
}

/// `mean + exp(0.5 * log_var) * noise`, differentiable in mean and log-variance.
pub fn reparameterize(g: &mut Graph, q: &GaussianParams, noise: NodeId) -> Result<NodeId> {
    let (qs, ns) = (q.shape(g), g.value(noise).shape());
    if qs != ns {
        return Err(EvfError::Shape {
            op: "reparameterize",
            node: noise.index(),
            detail: format!("noise {ns:?} vs mean {qs:?}"),
        });
    }
    let half = g.scale(q.log_var, 0.5)?;
    let std = g.exp(half)?;
    let eps = g.mul(std, noise)?;
    g.add(q.mean, eps)
}

/// `sum 0.5 * (exp(lq - lp) + (mq - mp)^2 / exp(lp) - 1 + lp - lq)` over all
/// components, as a scalar node.
pub fn kl_diag_gaussian(g: &mut Graph, q: &GaussianParams, p: &GaussianParams) -> Result<NodeId> {
    let (qs, ps) = (q.shape(g), p.shape(g));
    if qs != ps {
        return Err(EvfError::Shape {
            op: "kl",
            node: p.mean.index(),
            detail: format!("q {qs:?} vs p {ps:?}"),
        });
    }
    let n = g.value(q.mean).len();
    let dl = g.sub(q.log_var, p.log_var)?;
    let ratio = g.exp(dl)?;
    let dm = g.sub(q.mean, p.mean)?;
    let dm2 = g.square(dm)?;
    let neg_lp = g.scale(p.log_var, -1.0)?;
    let inv_vp = g.exp(neg_lp)?;
    let maha = g.mul(dm2, inv_vp)?;
    let a = g.add(ratio, maha)?;
    let b = g.sub(a, dl)?;
    let per = g.sum(b)?;
    // -1 per component folded into a constant offset.
    let offset = g.constant(Tensor::scalar(-(n as f32)));
    let total = g.add(per, offset)?;
    g.scale(total, 0.5)
}

/// Scalar form used by tests and analysis code.
pub fn kl_diag_gaussian_values(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    mq.iter()
        .zip(lq)
        .zip(mp.iter().zip(lp))
        .map(|((&mq, &lq), (&mp, &lp))| {
            0.5 * ((lq - lp).exp() + (mq - mp).powi(2) / lp.exp() - 1.0 + lp - lq)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(g: &mut Graph, m: Vec<f32>, lv: Vec<f32>) -> GaussianParams {
        let mean = g.input("m", Tensor::vector(m));
        let lv = g.input("lv", Tensor::vector(lv));
        GaussianParams::new(g, mean, lv).unwrap()
    }

    #[test]
    fn kl_identity_is_zero() {
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![0.3, -1.2], vec![0.5, -2.0]);
        let k = kl_diag_gaussian(&mut g, &q, &q).unwrap();
        assert!(g.value(k).item().abs() < 1e-7);
    }

    #[test]
    fn kl_unit_shift() {
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![1.0], vec![0.0]);
        let p = GaussianParams::standard(&mut g, &[1]);
        let k = kl_diag_gaussian(&mut g, &q, &p).unwrap();
        assert!((g.value(k).item() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn reparam_zero_noise_is_mean() {
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![0.7, -3.1], vec![1.5, 4.0]);
        let noise = g.input("eps", Tensor::zeros(&[2]));
        let z = reparameterize(&mut g, &q, noise).unwrap();
        assert_eq!(g.value(z).data(), g.value(q.mean).data());
    }

    #[test]
    fn reparam_collapsed_variance() {
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![0.7, -3.1], vec![-1e3, -50.0]);
        let noise = g.input("eps", Tensor::vector(vec![2.5, -1.0]));
        let z = reparameterize(&mut g, &q, noise).unwrap();
        for ((z, m), e) in g.value(z).data().iter().zip([0.7f32, -3.1]).zip([2.5f32, -1.0]) {
            assert!((z - m).abs() < 0.01 * e.abs());
        }
    }

    #[test]
    fn reparam_grad_wrt_mean_is_one() {
        let mut g = Graph::new();
        let mean = g.param("m", Tensor::vector(vec![0.1, 0.2, 0.3]));
        let lv = g.param("lv", Tensor::vector(vec![0.0, -1.0, 2.0]));
        let q = GaussianParams::new(&mut g, mean, lv).unwrap();
        let noise = g.input("eps", Tensor::vector(vec![0.5, -0.4, 1.3]));
        let z = reparameterize(&mut g, &q, noise).unwrap();
        let l = g.sum(z).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param("m").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn reparam_shape_mismatch() {
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![0.0, 0.0], vec![0.0, 0.0]);
        let noise = g.input("eps", Tensor::zeros(&[3]));
        assert!(reparameterize(&mut g, &q, noise).is_err());
    }

    #[test]
    fn reparam_monte_carlo_moments() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut g = Graph::new();
        let q = gauss(&mut g, vec![0.0; n], vec![0.0; n]);
        let e = g.input("eps", Tensor::vector(noise));
        let z = reparameterize(&mut g, &q, e).unwrap();
        let xs: Vec<f64> = g.value(z).data().iter().map(|&x| x as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
