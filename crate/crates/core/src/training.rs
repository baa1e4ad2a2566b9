//! Meta-batch construction, support-set sampling and the optimization loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint;
use crate::autodiff::{AdamConfig, Graph};
use crate::error::{invalid, EvfError, Result};
use crate::model::elbo::ElboValues;
use crate::model::{ElboNoise, Evf, ModelConfig, SupportSet, MAX_SUPPORT};
use crate::pushworld::{DatasetFile, Trajectory};
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "step,recon,z_kl,c_kl,loss,wall_ms";
pub const CHECKPOINT_NAME: &str = "model.evfp";
pub const LOG_NAME: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Objects per optimizer step.
    pub meta_batch_objects: usize,
    /// Target trajectories per object.
    pub trajectories_per_object: usize,
    pub support_size: usize,
    pub lr: f32,
    pub clip_norm: Option<f32>,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Train the no-context model (`c = 0`, no context KL).
    pub baseline: bool,
    /// Record per-step wall time in the log; otherwise the column is 0 and
    /// the log is byte-reproducible.
    pub log_wall_ms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            meta_batch_objects: 8,
            trajectories_per_object: 8,
            support_size: 5,
            lr: 3e-3,
            clip_norm: None,
            seed: 0,
            checkpoint_every: 500,
            baseline: false,
            log_wall_ms: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.support_size == 0 || self.support_size > MAX_SUPPORT {
            return Err(invalid(format!("support size must be in 1..={MAX_SUPPORT}")));
        }
        if self.trajectories_per_object == 0 || self.meta_batch_objects == 0 {
            return Err(invalid("batch sizes must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupportDraw {
    pub support: SupportSet,
    pub indices: Vec<usize>,
    pub warning: Option<String>,
}

/// `min(M, N)` distinct trajectories, actions dropped.
pub fn sample_support_set(dataset: &DatasetFile, m: usize, rng: &mut ChaCha8Rng) -> Result<SupportDraw> {
    sample_support_excluding(dataset, m, &[], rng)
}

/// Like [`sample_support_set`] but never picks an index in `exclude` unless
/// nothing else is left.
pub fn sample_support_excluding(dataset: &DatasetFile, m: usize, exclude: &[usize], rng: &mut ChaCha8Rng) -> Result<SupportDraw> {
    let n = dataset.len();
    if n == 0 {
        return Err(invalid(format!("dataset for object {} is empty", dataset.object_id)));
    }
    if m == 0 || m > MAX_SUPPORT {
        return Err(invalid(format!("support size must be in 1..={MAX_SUPPORT}")));
    }
    let pool: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    let pool = if pool.is_empty() { (0..n).collect() } else { pool };
    let take = m.min(pool.len());
    let warning = (take < m).then(|| {
        format!(
            "object {}: only {take} trajectories available for a support set of {m}",
            dataset.object_id
        )
    });
    let indices: Vec<usize> = index::sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
    let refs: Vec<&Trajectory> = indices.iter().map(|&i| &dataset.trajectories[i]).collect();
    Ok(SupportDraw {
        support: SupportSet::from_trajectories(&refs)?,
        indices,
        warning,
    })
}

/// Disjoint support and target index sets when `N >= M + b`; otherwise the
/// support takes what it can and targets are drawn from the whole dataset.
pub fn split_support_targets(n: usize, m: usize, b: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    if n >= m + b {
        let picked = index::sample(rng, n, m + b).into_vec();
        (picked[..m].to_vec(), picked[m..].to_vec())
    } else {
        let support = index::sample(rng, n, m.min(n)).into_vec();
        let targets = (0..b).map(|_| rand::Rng::random_range(rng, 0..n)).collect();
        (support, targets)
    }
}

/// Per-step diagnostics, averaged over the objects of the meta-batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub loss: f32,
    pub recon: f32,
    pub z_kl: f32,
    pub c_kl: f32,
    /// Mean over objects of `C / |D|`, the quantity `gamma` multiplies.
    pub c_kl_scaled: f32,
}

/// Builds the meta-batch objective in one graph. Returns the graph, loss
/// node and diagnostics without touching parameters.
pub fn meta_batch_loss(
    evf: &Evf,
    datasets: &[DatasetFile],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Graph, crate::autodiff::NodeId, StepDiagnostics)> {
    if datasets.len() < cfg.meta_batch_objects {
        return Err(invalid(format!(
            "need at least {} datasets, have {}",
            cfg.meta_batch_objects,
            datasets.len()
        )));
    }
    let objects = index::sample(rng, datasets.len(), cfg.meta_batch_objects).into_vec();
    let mut g = Graph::new();
    let mut losses = Vec::with_capacity(objects.len());
    let mut diag = StepDiagnostics::default();
    for &o in &objects {
        let ds = &datasets[o];
        let (sup_idx, tgt_idx) = split_support_targets(ds.len(), cfg.support_size, cfg.trajectories_per_object, rng);
        let batch: Vec<&Trajectory> = tgt_idx.iter().map(|&i| &ds.trajectories[i]).collect();
        let noise = ElboNoise::sample(evf, batch.len(), ds.horizon(), rng);
        let support = if cfg.baseline {
            None
        } else {
            let refs: Vec<&Trajectory> = sup_idx.iter().map(|&i| &ds.trajectories[i]).collect();
            Some(SupportSet::from_trajectories(&refs)?)
        };
        let terms = evf.elbo_loss(&mut g, support.as_ref(), &batch, ds.len(), &noise)?;
        let v: ElboValues = terms.values(&g);
        diag.recon += v.recon;
        diag.z_kl += v.z_kl;
        diag.c_kl += v.c_kl;
        diag.c_kl_scaled += v.c_kl / ds.len() as f32;
        losses.push(terms.loss);
    }
    let total = crate::model::sum_nodes(&mut g, &losses)?;
    let k = objects.len() as f32;
    let loss = g.scale(total, 1.0 / k)?;
    diag.loss = g.value(loss).item();
    diag.recon /= k;
    diag.z_kl /= k;
    diag.c_kl /= k;
    diag.c_kl_scaled /= k;
    Ok((g, loss, diag))
}

/// Gradients for every parameter in the store; unused parameters get zeros.
pub fn full_gradients(evf: &Evf, g: &Graph, loss: crate::autodiff::NodeId) -> Result<BTreeMap<String, Tensor>> {
    let grads = g.backward(loss)?;
    Ok(evf
        .params
        .iter()
        .map(|(name, p)| {
            let t = grads.param(name).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()));
            (name.to_string(), t)
        })
        .collect())
}

/// RNG for optimizer step `step`; independent of earlier steps so resumed
/// runs replay the same draws.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a1e);
    rng.set_stream(step);
    rng
}

pub fn train_step(evf: &mut Evf, datasets: &[DatasetFile], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<StepDiagnostics> {
    let (g, loss, diag) = meta_batch_loss(evf, datasets, cfg, rng)?;
    let grads = full_gradients(evf, &g, loss)?;
    evf.params.adam_step(&grads, &cfg.adam())?;
    Ok(diag)
}

/// Shuffles a copy of `items` under `seed`; used for deterministic ordering.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Paths written by [`train_loop`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_step: u64,
}

pub fn config_snapshot(model: &ModelConfig, train: &TrainConfig) -> String {
    crate::config::RunConfig {
        seed: train.seed,
        model: model.clone(),
        train: train.clone(),
        ..Default::default()
    }
    .to_kv_text()
}

pub fn save_checkpoint(evf: &Evf, train: &TrainConfig, path: &Path) -> Result<()> {
    checkpoint::save(&evf.params, path)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".cfg");
    checkpoint::write_atomic(Path::new(&side), config_snapshot(&evf.cfg, train).as_bytes())
}

/// The configuration stored next to a checkpoint, or the defaults when the
/// sidecar is absent.
pub fn checkpoint_config(path: &Path) -> Result<crate::config::RunConfig> {
    let mut side = path.as_os_str().to_owned();
    side.push(".cfg");
    let side = PathBuf::from(side);
    if side.exists() {
        crate::config::RunConfig::parse_kv(&fs::read_to_string(&side)?)
    } else {
        Ok(Default::default())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Evf> {
    let params = checkpoint::load(path)?;
    let cfg = checkpoint_config(path)?.model;
    Ok(Evf { cfg, params })
}

/// Runs `cfg.steps` optimizer steps from scratch, or continues from
/// `out_dir/model.evfp` when `resume` is set and the checkpoint exists.
pub fn train_loop(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    datasets: &[DatasetFile],
    out_dir: &Path,
    resume: bool,
    mut on_step: impl FnMut(u64, &StepDiagnostics),
) -> Result<TrainOutputs> {
    cfg.validate()?;
    if datasets.len() < cfg.meta_batch_objects {
        return Err(invalid(format!(
            "need at least {} training datasets, have {}",
            cfg.meta_batch_objects,
            datasets.len()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join(CHECKPOINT_NAME);
    let log_path = out_dir.join(LOG_NAME);
    let mut evf = if resume && ckpt.exists() {
        load_checkpoint(&ckpt)?
    } else {
        let evf = Evf::init(model_cfg.clone(), cfg.seed)?;
        fs::write(&log_path, format!("{LOG_HEADER}\n"))?;
        save_checkpoint(&evf, cfg, &ckpt)?;
        evf
    };
    if !log_path.exists() {
        fs::write(&log_path, format!("{LOG_HEADER}\n"))?;
    }
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    let start = evf.params.step();
    for step in start..cfg.steps as u64 {
        let t0 = Instant::now();
        let mut rng = step_rng(cfg.seed, step);
        let d = train_step(&mut evf, datasets, cfg, &mut rng)?;
        let ms = if cfg.log_wall_ms { t0.elapsed().as_millis() } else { 0 };
        writeln!(log, "{},{},{},{},{},{ms}", step + 1, d.recon, d.z_kl, d.c_kl, d.loss)?;
        on_step(step + 1, &d);
        let done = step + 1 == cfg.steps as u64;
        if done || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every as u64 == 0) {
            log.flush()?;
            save_checkpoint(&evf, cfg, &ckpt)?;
        }
    }
    if !ckpt.exists() {
        return Err(EvfError::MissingPath(ckpt));
    }
    Ok(TrainOutputs {
        checkpoint: ckpt,
        log: log_path,
        final_step: evf.params.step(),
    })
}
