//! The three networks: the experience encoder (support set to context
//! posterior), the frame encoder (per-step latent posterior, training only)
//! and the recurrent generator, plus the set-level variational bound.

pub mod config;
pub mod elbo;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{kl_diag_gaussian, reparameterize, GaussianParams, Graph, NodeId, ParamStore};
use crate::error::{invalid, Result};
use crate::pushworld::{Action, Frame, Trajectory};
use crate::tensor::Tensor;

pub use config::ModelConfig;
pub use elbo::{ElboNoise, ElboTerms};

/// Upper bound on support-set size.
pub const MAX_SUPPORT: usize = 5;

/// Scale applied to posterior-head weights at initialization so the first
/// posteriors sit close to the prior.
const HEAD_GAIN: f32 = 0.01;

/// Action-free frame sequences from one object.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub sequences: Vec<Vec<Frame>>,
    pub object_id: u32,
}

impl SupportSet {
    pub fn new(sequences: Vec<Vec<Frame>>, object_id: u32) -> Result<Self> {
        if sequences.is_empty() {
            return Err(invalid("support set is empty"));
        }
        if sequences.len() > MAX_SUPPORT {
            return Err(invalid(format!(
                "support set holds {} sequences, at most {MAX_SUPPORT} allowed",
                sequences.len()
            )));
        }
        let len = sequences[0].len();
        let dims = sequences[0].first().map(|f| (f.height, f.width));
        if len == 0 {
            return Err(invalid("support sequences must be non-empty"));
        }
        for s in &sequences {
            if s.len() != len || s.iter().any(|f| Some((f.height, f.width)) != dims) {
                return Err(invalid("support sequences must share length and frame size"));
            }
        }
        Ok(Self { sequences, object_id })
    }

    /// Drops the actions from `trajectories`.
    pub fn from_trajectories(trajectories: &[&Trajectory]) -> Result<Self> {
        let object_id = trajectories
            .first()
            .ok_or_else(|| invalid("support set is empty"))?
            .object_id;
        Self::new(trajectories.iter().map(|t| t.frames.clone()).collect(), object_id)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Posterior over the context, as nodes of the graph that produced it.
#[derive(Debug, Clone, Copy)]
pub struct ContextPosterior {
    pub gaussian: GaussianParams,
}

impl ContextPosterior {
    pub fn mean(&self, g: &Graph) -> Vec<f32> {
        g.value(self.gaussian.mean).data().to_vec()
    }

    pub fn log_var(&self, g: &Graph) -> Vec<f32> {
        g.value(self.gaussian.log_var).data().to_vec()
    }
}

/// Output of one generator step.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    pub frame: NodeId,
    pub hidden: NodeId,
    pub candidate: NodeId,
    pub gate: NodeId,
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Predictions for frames 2..T (one `[B, frame_dim]` node each).
    pub predicted: Vec<NodeId>,
    pub posteriors: Vec<GaussianParams>,
    pub latents: Vec<NodeId>,
    /// Mean over the batch of the per-trajectory squared error, averaged over steps.
    pub recon: NodeId,
    /// Mean over the batch of the summed per-step latent KL.
    pub z_kl: NodeId,
}

pub fn frames_tensor(frames: &[&Frame]) -> Result<Tensor> {
    let rows: Vec<&[f32]> = frames.iter().map(|f| f.pixels.as_slice()).collect();
    Tensor::stack_rows(&rows)
}

pub fn actions_tensor(actions: &[Action]) -> Result<Tensor> {
    let data = actions.iter().flat_map(|a| [a.dx, a.dy]).collect();
    Tensor::matrix(actions.len(), 2, data)
}

pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

pub fn frame_from_row(row: &[f32], height: usize, width: usize) -> Frame {
    Frame {
        height,
        width,
        pixels: row.to_vec(),
        pusher_mask: vec![false; row.len()],
    }
}

/// Model configuration plus all parameters (`theta/`, `phi/`, `psi/`).
#[derive(Debug, Clone, PartialEq)]
pub struct Evf {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Evf {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (f, h, dc, dz) = (cfg.frame_dim, cfg.hidden_dim, cfg.context_dim, cfg.latent_dim);
        // Experience encoder.
        layers::init_dense(&mut p, "phi/embed", f, h, 1.0, &mut rng)?;
        layers::init_gru(&mut p, "phi/gru", h, h, &mut rng)?;
        layers::init_dense(&mut p, "phi/mean", h, dc, HEAD_GAIN, &mut rng)?;
        layers::init_dense(&mut p, "phi/logvar", h, dc, HEAD_GAIN, &mut rng)?;
        // Frame encoder.
        layers::init_dense(&mut p, "psi/hidden", 2 * f + dc, h, 1.0, &mut rng)?;
        layers::init_dense(&mut p, "psi/mean", h, dz, HEAD_GAIN, &mut rng)?;
        layers::init_dense(&mut p, "psi/logvar", h, dz, HEAD_GAIN, &mut rng)?;
        // Generator.
        layers::init_gru(&mut p, "theta/gru", cfg.generator_input(), h, &mut rng)?;
        layers::init_dense(&mut p, "theta/out", h, 2 * f, 1.0, &mut rng)?;
        Ok(Self { cfg, params: p })
    }

    pub fn encode_experience(&self, g: &mut Graph, support: &SupportSet) -> Result<ContextPosterior> {
        let m = support.len();
        let t_len = support.sequences[0].len();
        let mut h = g.constant(Tensor::zeros(&[m, self.cfg.hidden_dim]));
        for t in 0..t_len {
            let frames: Vec<&Frame> = support.sequences.iter().map(|s| &s[t]).collect();
            let x = g.input("support", frames_tensor(&frames)?);
            let e = layers::dense(g, &self.params, "phi/embed", x)?;
            let e = g.relu(e)?;
            h = layers::gru_step(g, &self.params, "phi/gru", e, h)?;
        }
        let pooled = g.mean_rows(h)?;
        let mean = layers::dense(g, &self.params, "phi/mean", pooled)?;
        let lv = layers::dense(g, &self.params, "phi/logvar", pooled)?;
        Ok(ContextPosterior {
            gaussian: GaussianParams::new(g, mean, lv)?,
        })
    }

    /// `q(z_t | I_t, I_{t-1}, c)`; all inputs are `[B, *]` nodes.
    pub fn encode_frame_posterior(&self, g: &mut Graph, current: NodeId, previous: NodeId, c: NodeId) -> Result<GaussianParams> {
        let x = g.concat(&[current, previous, c])?;
        let hdn = layers::dense(g, &self.params, "psi/hidden", x)?;
        let hdn = g.relu(hdn)?;
        let mean = layers::dense(g, &self.params, "psi/mean", hdn)?;
        let lv = layers::dense(g, &self.params, "psi/logvar", hdn)?;
        GaussianParams::new(g, mean, lv)
    }

    /// One recurrent step. The prediction blends a candidate frame with the
    /// first frame through a per-pixel gate: `first + gate * (cand - first)`.
    #[allow(clippy::too_many_arguments)]
    pub fn generator_step(
        &self,
        g: &mut Graph,
        prev_frame: NodeId,
        action: NodeId,
        z: NodeId,
        c: NodeId,
        hidden: NodeId,
        first_frame: NodeId,
    ) -> Result<GeneratorOutput> {
        let f = self.cfg.frame_dim;
        let x = g.concat(&[prev_frame, action, z, c])?;
        let hidden = layers::gru_step(g, &self.params, "theta/gru", x, hidden)?;
        let out = layers::dense(g, &self.params, "theta/out", hidden)?;
        let cand_pre = g.slice(out, 0, f)?;
        let gate_pre = g.slice(out, f, 2 * f)?;
        let candidate = g.sigmoid(cand_pre)?;
        let gate = g.sigmoid(gate_pre)?;
        let delta = g.sub(candidate, first_frame)?;
        let gated = g.mul(gate, delta)?;
        let frame = g.add(first_frame, gated)?;
        Ok(GeneratorOutput {
            frame,
            hidden,
            candidate,
            gate,
        })
    }

    fn context_rows(&self, g: &mut Graph, c: NodeId, rows: usize) -> Result<NodeId> {
        let shape = g.value(c).shape().to_vec();
        if shape.len() == 2 && shape[0] == rows {
            return Ok(c);
        }
        g.broadcast(c, &[rows, self.cfg.context_dim])
    }

    /// Teacher-forced on the context frames, autoregressive afterwards, with
    /// one posterior sample of `z_t` per step. `z_noise[k]` is the `[B, d_z]`
    /// standard-normal draw for the prediction of frame `k + 2`.
    pub fn rollout_train(&self, g: &mut Graph, batch: &[&Trajectory], c: NodeId, z_noise: &[Tensor]) -> Result<RolloutResult> {
        let b = batch.len();
        if b == 0 {
            return Err(invalid("empty training batch"));
        }
        let t_len = batch[0].frames.len();
        if t_len < self.cfg.context_frames + 1 {
            return Err(invalid(format!(
                "trajectory length {t_len} is shorter than {} context frames plus one target",
                self.cfg.context_frames
            )));
        }
        if batch.iter().any(|t| t.frames.len() != t_len || t.actions.len() != t_len - 1) {
            return Err(invalid("batch trajectories must share length"));
        }
        if z_noise.len() != t_len - 1 {
            return Err(invalid("latent noise must cover every predicted step"));
        }
        let cb = self.context_rows(g, c, b)?;
        let mut frames = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let fs: Vec<&Frame> = batch.iter().map(|tr| &tr.frames[t]).collect();
            frames.push(g.input("frame", frames_tensor(&fs)?));
        }
        let prior = GaussianParams::standard(g, &[b, self.cfg.latent_dim]);
        let mut hidden = g.constant(Tensor::zeros(&[b, self.cfg.hidden_dim]));
        let mut prev = frames[0];
        let mut predicted = Vec::with_capacity(t_len - 1);
        let mut posteriors = Vec::with_capacity(t_len - 1);
        let mut latents = Vec::with_capacity(t_len - 1);
        let mut sq_terms = Vec::with_capacity(t_len - 1);
        let mut kl_terms = Vec::with_capacity(t_len - 1);
        for t in 1..t_len {
            if t <= self.cfg.context_frames {
                prev = frames[t - 1];
            }
            let acts: Vec<Action> = batch.iter().map(|tr| tr.actions[t - 1]).collect();
            let a = g.input("action", actions_tensor(&acts)?);
            let q = self.encode_frame_posterior(g, frames[t], frames[t - 1], cb)?;
            let eps = g.input("z_noise", z_noise[t - 1].clone());
            let z = reparameterize(g, &q, eps)?;
            let out = self.generator_step(g, prev, a, z, cb, hidden, frames[0])?;
            hidden = out.hidden;
            prev = out.frame;
            let diff = g.sub(out.frame, frames[t])?;
            let sq = g.square(diff)?;
            sq_terms.push(g.sum(sq)?);
            kl_terms.push(kl_diag_gaussian(g, &q, &prior)?);
            predicted.push(out.frame);
            posteriors.push(q);
            latents.push(z);
        }
        let recon = sum_nodes(g, &sq_terms)?;
        let recon = g.scale(recon, 1.0 / (b * (t_len - 1)) as f32)?;
        let z_kl = sum_nodes(g, &kl_terms)?;
        let z_kl = g.scale(z_kl, 1.0 / b as f32)?;
        Ok(RolloutResult {
            predicted,
            posteriors,
            latents,
            recon,
            z_kl,
        })
    }

    /// Prior-sampled rollout over a batch. `context[k]` holds ground-truth
    /// frame `k + 1` for every row (at least one); `actions[k]` is the action
    /// taken after frame `k + 1` and must cover `context.len() - 1 + horizon`
    /// steps. `z_noise` needs one `[B, d_z]` draw per generator step. Returns
    /// `horizon` predicted `[B, frame_dim]` tensors.
    pub fn rollout_predict_batch(
        &self,
        context: &[Tensor],
        actions: &[Tensor],
        c: &Tensor,
        horizon: usize,
        z_noise: &[Tensor],
    ) -> Result<Vec<Tensor>> {
        if context.is_empty() {
            return Err(invalid("prediction needs at least one context frame"));
        }
        if horizon == 0 {
            return Ok(Vec::new());
        }
        let steps = context.len() - 1 + horizon;
        if actions.len() < steps || z_noise.len() < steps {
            return Err(invalid(format!(
                "need {steps} actions and noise draws, got {} and {}",
                actions.len(),
                z_noise.len()
            )));
        }
        let b = context[0].rows();
        let mut g = Graph::new();
        let cn = g.input("c", c.clone());
        let cb = self.context_rows(&mut g, cn, b)?;
        let first = g.input("first", context[0].clone());
        let mut hidden = g.constant(Tensor::zeros(&[b, self.cfg.hidden_dim]));
        let mut prev = first;
        let mut out = Vec::with_capacity(horizon);
        for k in 0..steps {
            if k < context.len() {
                prev = if k == 0 { first } else { g.input("context", context[k].clone()) };
            }
            let a = g.input("action", actions[k].clone());
            let z = g.input("z", z_noise[k].clone());
            let step = self.generator_step(&mut g, prev, a, z, cb, hidden, first)?;
            hidden = step.hidden;
            prev = step.frame;
            if k + 1 >= context.len() {
                out.push(g.value(step.frame).clone());
            }
        }
        Ok(out)
    }

    /// Single-trajectory prediction with `z_t` drawn from the prior.
    pub fn rollout_predict(
        &self,
        context: &[Frame],
        actions: &[Action],
        c: &[f32],
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Frame>> {
        if horizon == 0 {
            return Ok(Vec::new());
        }
        let first = context.first().ok_or_else(|| invalid("prediction needs a context frame"))?;
        let (h, w) = (first.height, first.width);
        let steps = context.len() - 1 + horizon;
        let ctx: Vec<Tensor> = context.iter().map(|f| frames_tensor(&[f])).collect::<Result<_>>()?;
        let acts: Vec<Tensor> = actions.iter().map(|a| actions_tensor(&[*a])).collect::<Result<_>>()?;
        let noise: Vec<Tensor> = (0..steps)
            .map(|_| standard_normal(&[1, self.cfg.latent_dim], rng))
            .collect();
        let c = Tensor::matrix(1, self.cfg.context_dim, c.to_vec())?;
        let preds = self.rollout_predict_batch(&ctx, &acts, &c, horizon, &noise)?;
        Ok(preds.iter().map(|p| frame_from_row(p.data(), h, w)).collect())
    }

    /// Posterior mean and log-variance of the context for one support set.
    pub fn context_posterior(&self, support: &SupportSet) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut g = Graph::new();
        let post = self.encode_experience(&mut g, support)?;
        Ok((post.mean(&g), post.log_var(&g)))
    }
}

pub(crate) fn sum_nodes(g: &mut Graph, xs: &[NodeId]) -> Result<NodeId> {
    let mut acc = *xs.first().ok_or_else(|| invalid("nothing to sum"))?;
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(acc)
}
