//! Best-of-K evaluation: per trajectory, K prior-sampled rollouts; for each
//! metric and step keep the best sample, then average over trajectories.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::model::{actions_tensor, frame_from_row, frames_tensor, standard_normal, Evf};
use crate::pushworld::{DatasetFile, Frame};
use crate::tensor::Tensor;
use crate::training::sample_support_excluding;

use super::{psnr, ssim};

/// Where the context comes from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Support drawn from the same object's other trajectories.
    Matched,
    /// Support drawn from a different object (the next one in the list).
    Mismatched,
    /// `c = 0`, for the no-context model.
    Zero,
}

impl ContextMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::Mismatched => "mismatched",
            Self::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub horizon: usize,
    pub support_size: usize,
    /// Evaluate at most this many trajectories per object (0 = all).
    pub max_trajectories: usize,
    /// Draw `c` from the context posterior per sample; otherwise use its mean.
    pub sample_context: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            horizon: 10,
            support_size: 5,
            max_trajectories: 0,
            sample_context: true,
            seed: 0,
        }
    }
}

/// Best-of-K curves for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScore {
    pub object_id: u32,
    pub index: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl TrajectoryScore {
    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAggregate {
    pub object_id: u32,
    pub trajectories: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub horizon: usize,
    pub mode: ContextMode,
    /// Mean over trajectories of the best-of-K value at each step.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub objects: Vec<ObjectAggregate>,
    pub trajectories: Vec<TrajectoryScore>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn mean_curve(curves: &[&[f64]], len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len().max(1) as f64)
        .collect()
}

impl EvalReport {
    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    /// Per-trajectory mean SSIM in evaluation order, for paired tests.
    pub fn trajectory_ssim(&self) -> Vec<f64> {
        self.trajectories.iter().map(TrajectoryScore::mean_ssim).collect()
    }

    /// Rows `t,psnr,ssim` with `t` counting predicted frames from 1.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("t,psnr,ssim\n");
        for t in 0..self.horizon {
            let _ = writeln!(s, "{},{},{}", t + 1, self.psnr[t], self.ssim[t]);
        }
        s
    }

    pub fn objects_csv(&self) -> String {
        let mut s = String::from("object_id,trajectories,mean_psnr,mean_ssim\n");
        for o in &self.objects {
            let _ = writeln!(s, "{},{},{},{}", o.object_id, o.trajectories, o.mean_psnr, o.mean_ssim);
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "context: {}\nK: {}\nhorizon: {}\ntrajectories: {}\nobjects: {}\nmean psnr: {:.4}\nmean ssim: {:.6}\n",
            self.mode.name(),
            self.k,
            self.horizon,
            self.trajectories.len(),
            self.objects.len(),
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

fn eval_rng(seed: u64, object_id: u32, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((object_id as u64) << 32) ^ index as u64);
    rng.set_stream(purpose);
    rng
}

/// Context rows for the K samples: posterior draws for a support-based
/// mode, zeros otherwise. Sample `k` uses its own stream so that the first
/// K rows do not depend on the total K.
fn context_samples(evf: &Evf, datasets: &[DatasetFile], o: usize, i: usize, cfg: &EvalConfig, mode: ContextMode) -> Result<Tensor> {
    let dc = evf.cfg.context_dim;
    let ds = &datasets[o];
    let (source, exclude): (&DatasetFile, Vec<usize>) = match mode {
        ContextMode::Zero => return Ok(Tensor::zeros(&[cfg.k, dc])),
        ContextMode::Matched => (ds, vec![i]),
        ContextMode::Mismatched => (&datasets[(o + 1) % datasets.len()], Vec::new()),
    };
    let mut rng = eval_rng(cfg.seed, ds.object_id, i, 0);
    let draw = sample_support_excluding(source, cfg.support_size, &exclude, &mut rng)?;
    let (mean, log_var) = evf.context_posterior(&draw.support)?;
    let mut data = Vec::with_capacity(cfg.k * dc);
    for k in 0..cfg.k {
        let mut rng = eval_rng(cfg.seed, ds.object_id, i, 1 + 2 * k as u64);
        let mut eps = standard_normal(&[dc], &mut rng);
        if !cfg.sample_context {
            eps.data_mut().fill(0.0);
        }
        data.extend(mean.iter().zip(&log_var).zip(eps.data()).map(|((m, lv), e)| m + (0.5 * lv).exp() * e));
    }
    Tensor::matrix(cfg.k, dc, data)
}

/// The K prediction rollouts for trajectory `i` of object `o`, each
/// `horizon` frames long. Sample `k` depends only on its own streams.
pub fn sample_rollouts(
    evf: &Evf,
    datasets: &[DatasetFile],
    o: usize,
    i: usize,
    cfg: &EvalConfig,
    mode: ContextMode,
) -> Result<Vec<Vec<Frame>>> {
    let ds = &datasets[o];
    let tr = &ds.trajectories[i];
    let cf = evf.cfg.context_frames;
    let horizon = cfg.horizon.min(tr.frames.len() - cf);
    let k = cfg.k;
    let c = context_samples(evf, datasets, o, i, cfg, mode)?;
    let context: Vec<Tensor> = tr.frames[..cf]
        .iter()
        .map(|f| frames_tensor(&vec![f; k]))
        .collect::<Result<_>>()?;
    let actions: Vec<Tensor> = tr.actions.iter().map(|a| actions_tensor(&vec![*a; k])).collect::<Result<_>>()?;
    let steps = cf - 1 + horizon;
    let dz = evf.cfg.latent_dim;
    let mut noise = vec![Vec::with_capacity(k * dz); steps];
    for s in 0..k {
        let mut rng = eval_rng(cfg.seed, ds.object_id, i, 2 + 2 * s as u64);
        for step in noise.iter_mut() {
            step.extend_from_slice(standard_normal(&[dz], &mut rng).data());
        }
    }
    let noise: Vec<Tensor> = noise.into_iter().map(|d| Tensor::matrix(k, dz, d)).collect::<Result<_>>()?;
    let preds = evf.rollout_predict_batch(&context, &actions, &c, horizon, &noise)?;
    let (h, w) = (tr.frames[0].height, tr.frames[0].width);
    Ok((0..k)
        .map(|s| preds.iter().map(|p| frame_from_row(p.row(s), h, w)).collect())
        .collect())
}

fn score_trajectory(evf: &Evf, datasets: &[DatasetFile], o: usize, i: usize, cfg: &EvalConfig, mode: ContextMode) -> Result<TrajectoryScore> {
    let ds = &datasets[o];
    let tr = &ds.trajectories[i];
    let cf = evf.cfg.context_frames;
    let samples = sample_rollouts(evf, datasets, o, i, cfg, mode)?;
    let horizon = samples[0].len();
    let mut best_psnr = vec![f64::NEG_INFINITY; horizon];
    let mut best_ssim = vec![f64::NEG_INFINITY; horizon];
    for sample in &samples {
        for (t, f) in sample.iter().enumerate() {
            let truth: &Frame = &tr.frames[cf + t];
            best_psnr[t] = best_psnr[t].max(psnr(f, truth)?);
            best_ssim[t] = best_ssim[t].max(ssim(f, truth)?);
        }
    }
    Ok(TrajectoryScore {
        object_id: ds.object_id,
        index: i,
        psnr: best_psnr,
        ssim: best_ssim,
    })
}

/// Evaluates every (capped) trajectory of every dataset.
pub fn best_of_k_eval(evf: &Evf, datasets: &[DatasetFile], cfg: &EvalConfig, mode: ContextMode) -> Result<EvalReport> {
    if cfg.k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if datasets.is_empty() {
        return Err(invalid("no datasets to evaluate"));
    }
    if mode == ContextMode::Mismatched && datasets.len() < 2 {
        return Err(invalid("mismatched support needs at least two objects"));
    }
    let cf = evf.cfg.context_frames;
    for ds in datasets {
        if mode == ContextMode::Matched && ds.len() < 2 {
            return Err(invalid(format!(
                "object {} has a single trajectory; no support is available",
                ds.object_id
            )));
        }
        if ds.horizon() <= cf {
            return Err(invalid(format!("object {} has no frames after the context", ds.object_id)));
        }
    }
    let horizon = datasets.iter().map(|d| d.horizon() - cf).min().unwrap_or(0).min(cfg.horizon);
    let jobs: Vec<(usize, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(o, ds)| {
            let n = if cfg.max_trajectories == 0 { ds.len() } else { ds.len().min(cfg.max_trajectories) };
            (0..n).map(move |i| (o, i))
        })
        .collect();
    let cfg = EvalConfig { horizon, ..cfg.clone() };
    let trajectories: Vec<TrajectoryScore> = jobs
        .par_iter()
        .map(|&(o, i)| score_trajectory(evf, datasets, o, i, &cfg, mode))
        .collect::<Result<_>>()?;
    let objects = datasets
        .iter()
        .map(|ds| {
            let mine: Vec<&TrajectoryScore> = trajectories.iter().filter(|t| t.object_id == ds.object_id).collect();
            ObjectAggregate {
                object_id: ds.object_id,
                trajectories: mine.len(),
                mean_psnr: mean(&mine.iter().map(|t| t.mean_psnr()).collect::<Vec<_>>()),
                mean_ssim: mean(&mine.iter().map(|t| t.mean_ssim()).collect::<Vec<_>>()),
            }
        })
        .collect();
    let ps: Vec<&[f64]> = trajectories.iter().map(|t| t.psnr.as_slice()).collect();
    let ss: Vec<&[f64]> = trajectories.iter().map(|t| t.ssim.as_slice()).collect();
    Ok(EvalReport {
        k: cfg.k,
        horizon,
        mode,
        psnr: mean_curve(&ps, horizon),
        ssim: mean_curve(&ss, horizon),
        objects,
        trajectories,
    })
}
