//! Set-level variational bound, rescaled for a subsampled support set:
//! per trajectory `recon + beta * Z + (gamma / |D|) * C`, averaged over the batch.

use rand::Rng;

use crate::autodiff::{kl_diag_gaussian, reparameterize, GaussianParams, Graph, NodeId};
use crate::error::{invalid, Result};
use crate::pushworld::Trajectory;
use crate::tensor::Tensor;

use super::{standard_normal, ContextPosterior, Evf, RolloutResult, SupportSet};

/// Standard-normal draws consumed by one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    /// `[1, d_c]` draw for the context sample.
    pub c: Tensor,
    /// One `[B, d_z]` draw per predicted step.
    pub z: Vec<Tensor>,
}

impl ElboNoise {
    pub fn sample(evf: &Evf, batch: usize, seq_len: usize, rng: &mut impl Rng) -> Self {
        let c = standard_normal(&[1, evf.cfg.context_dim], rng);
        let z = (1..seq_len)
            .map(|_| standard_normal(&[batch, evf.cfg.latent_dim], rng))
            .collect();
        Self { c, z }
    }

    /// Noise restricted to batch rows `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let z = self
            .z
            .iter()
            .map(|t| {
                let picked: Vec<&[f32]> = rows.iter().map(|&r| t.row(r)).collect();
                Tensor::stack_rows(&picked).expect("non-empty selection")
            })
            .collect();
        Self { c: self.c.clone(), z }
    }
}

#[derive(Debug, Clone)]
pub struct ElboTerms {
    pub loss: NodeId,
    pub recon: NodeId,
    pub z_kl: NodeId,
    /// Absent in no-context mode.
    pub c_kl: Option<NodeId>,
    pub posterior: Option<ContextPosterior>,
    pub context: NodeId,
    pub rollout: RolloutResult,
}

/// Scalar diagnostics read back from an [`ElboTerms`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboValues {
    pub loss: f32,
    pub recon: f32,
    pub z_kl: f32,
    pub c_kl: f32,
}

impl ElboTerms {
    pub fn values(&self, g: &Graph) -> ElboValues {
        ElboValues {
            loss: g.value(self.loss).item(),
            recon: g.value(self.recon).item(),
            z_kl: g.value(self.z_kl).item(),
            c_kl: self.c_kl.map_or(0.0, |n| g.value(n).item()),
        }
    }
}

impl Evf {
    /// Builds the loss for one object. `support = None` is the no-context
    /// model: `c` is the zero vector and the context KL is dropped.
    pub fn elbo_loss(
        &self,
        g: &mut Graph,
        support: Option<&SupportSet>,
        batch: &[&Trajectory],
        dataset_size: usize,
        noise: &ElboNoise,
    ) -> Result<ElboTerms> {
        if dataset_size == 0 {
            return Err(invalid("dataset size must be positive"));
        }
        let object_id = batch.first().ok_or_else(|| invalid("empty training batch"))?.object_id;
        if batch.iter().any(|t| t.object_id != object_id) {
            return Err(invalid("batch mixes objects"));
        }
        let (context, c_kl, posterior) = match support {
            Some(s) => {
                if s.object_id != object_id {
                    return Err(invalid(format!(
                        "support set is from object {} but the batch is from object {object_id}",
                        s.object_id
                    )));
                }
                let post = self.encode_experience(g, s)?;
                let eps = g.input("c_noise", noise.c.clone());
                let c = reparameterize(g, &post.gaussian, eps)?;
                let prior = GaussianParams::standard(g, &[1, self.cfg.context_dim]);
                let kl = kl_diag_gaussian(g, &post.gaussian, &prior)?;
                (c, Some(kl), Some(post))
            }
            None => (g.constant(Tensor::zeros(&[1, self.cfg.context_dim])), None, None),
        };
        let rollout = self.rollout_train(g, batch, context, &noise.z)?;
        let mut loss = rollout.recon;
        if self.cfg.beta != 0.0 {
            let bz = g.scale(rollout.z_kl, self.cfg.beta)?;
            loss = g.add(loss, bz)?;
        }
        if let Some(kl) = c_kl {
            if self.cfg.gamma != 0.0 {
                let gc = g.scale(kl, self.cfg.gamma / dataset_size as f32)?;
                loss = g.add(loss, gc)?;
            }
        }
        Ok(ElboTerms {
            loss,
            recon: rollout.recon,
            z_kl: rollout.z_kl,
            c_kl,
            posterior,
            context,
            rollout,
        })
    }
}
