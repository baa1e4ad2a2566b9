//! Flat `key=value` run configuration. Files hold one assignment per line;
//! `#` starts a comment. Unknown keys are rejected.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{EvfError, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::planner::{PlanConfig, TaskKind};
use crate::training::TrainConfig;

/// Corpus layout for `gen-data`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub k_train: usize,
    pub k_test: usize,
    pub trajectories: usize,
    pub seq_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            k_train: 25,
            k_test: 8,
            trajectories: 50,
            seq_len: 12,
        }
    }
}

/// Embedding analysis for `embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub draws: usize,
    pub support_size: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { draws: 10, support_size: 5 }
    }
}

/// Control benchmark layout for `plan`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// Episodes per task kind and object split.
    pub episodes: usize,
    pub episode_len: usize,
    /// Trajectories in the support set that fixes `c` for an episode.
    pub support_size: usize,
    pub tasks: Vec<TaskKind>,
    /// Write a PNG strip of every episode.
    pub dump_frames: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            episode_len: 10,
            support_size: 5,
            tasks: vec![TaskKind::Reposition, TaskKind::Track],
            dump_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub embed: EmbedConfig,
    pub plan: PlanConfig,
    pub control: ControlConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| EvfError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(EvfError::Config(format!("invalid value {value:?} for {key}"))),
    }
}

fn show<T: Display>(v: T) -> String {
    v.to_string()
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, m, t) = (&self.data, &self.model, &self.train);
        let (e, em, p, c) = (&self.eval, &self.embed, &self.plan, &self.control);
        vec![
            ("seed", show(self.seed)),
            ("data.k_train", show(d.k_train)),
            ("data.k_test", show(d.k_test)),
            ("data.trajectories", show(d.trajectories)),
            ("data.seq_len", show(d.seq_len)),
            ("model.frame_dim", show(m.frame_dim)),
            ("model.action_dim", show(m.action_dim)),
            ("model.context_dim", show(m.context_dim)),
            ("model.latent_dim", show(m.latent_dim)),
            ("model.hidden_dim", show(m.hidden_dim)),
            ("model.beta", show(m.beta)),
            ("model.gamma", show(m.gamma)),
            ("model.context_frames", show(m.context_frames)),
            ("model.predict_frames", show(m.predict_frames)),
            ("train.steps", show(t.steps)),
            ("train.meta_batch_objects", show(t.meta_batch_objects)),
            ("train.trajectories_per_object", show(t.trajectories_per_object)),
            ("train.support_size", show(t.support_size)),
            ("train.lr", show(t.lr)),
            ("train.clip_norm", show(t.clip_norm.unwrap_or(0.0))),
            ("train.checkpoint_every", show(t.checkpoint_every)),
            ("train.baseline", show(t.baseline)),
            ("train.log_wall_ms", show(t.log_wall_ms)),
            ("eval.k", show(e.k)),
            ("eval.horizon", show(e.horizon)),
            ("eval.support_size", show(e.support_size)),
            ("eval.max_trajectories", show(e.max_trajectories)),
            ("eval.sample_context", show(e.sample_context)),
            ("embed.draws", show(em.draws)),
            ("embed.support_size", show(em.support_size)),
            ("plan.horizon", show(p.horizon)),
            ("plan.candidates", show(p.candidates)),
            ("plan.elites", show(p.elites)),
            ("plan.cem_iters", show(p.cem_iters)),
            ("plan.a_max", show(p.a_max)),
            ("plan.replan_every", show(p.replan_every)),
            ("plan.samples_per_candidate", show(p.samples_per_candidate)),
            ("plan.init_std", show(p.init_std)),
            ("plan.episodes", show(c.episodes)),
            ("plan.episode_len", show(c.episode_len)),
            ("plan.support_size", show(c.support_size)),
            ("plan.tasks", c.tasks.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")),
            ("plan.dump_frames", show(c.dump_frames)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (d, m, t) = (&mut self.data, &mut self.model, &mut self.train);
        let (e, em, p, c) = (&mut self.eval, &mut self.embed, &mut self.plan, &mut self.control);
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data.k_train" => d.k_train = parse(key, v)?,
            "data.k_test" => d.k_test = parse(key, v)?,
            "data.trajectories" => d.trajectories = parse(key, v)?,
            "data.seq_len" => d.seq_len = parse(key, v)?,
            "model.frame_dim" => m.frame_dim = parse(key, v)?,
            "model.action_dim" => m.action_dim = parse(key, v)?,
            "model.context_dim" => m.context_dim = parse(key, v)?,
            "model.latent_dim" => m.latent_dim = parse(key, v)?,
            "model.hidden_dim" => m.hidden_dim = parse(key, v)?,
            "model.beta" => m.beta = parse(key, v)?,
            "model.gamma" => m.gamma = parse(key, v)?,
            "model.context_frames" => m.context_frames = parse(key, v)?,
            "model.predict_frames" => m.predict_frames = parse(key, v)?,
            "train.steps" => t.steps = parse(key, v)?,
            "train.meta_batch_objects" => t.meta_batch_objects = parse(key, v)?,
            "train.trajectories_per_object" => t.trajectories_per_object = parse(key, v)?,
            "train.support_size" => t.support_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.clip_norm" => {
                let c: f32 = parse(key, v)?;
                t.clip_norm = (c > 0.0).then_some(c);
            }
            "train.checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "train.baseline" => t.baseline = parse_bool(key, v)?,
            "train.log_wall_ms" => t.log_wall_ms = parse_bool(key, v)?,
            "eval.k" => e.k = parse(key, v)?,
            "eval.horizon" => e.horizon = parse(key, v)?,
            "eval.support_size" => e.support_size = parse(key, v)?,
            "eval.max_trajectories" => e.max_trajectories = parse(key, v)?,
            "eval.sample_context" => e.sample_context = parse_bool(key, v)?,
            "embed.draws" => em.draws = parse(key, v)?,
            "embed.support_size" => em.support_size = parse(key, v)?,
            "plan.horizon" => p.horizon = parse(key, v)?,
            "plan.candidates" => p.candidates = parse(key, v)?,
            "plan.elites" => p.elites = parse(key, v)?,
            "plan.cem_iters" => p.cem_iters = parse(key, v)?,
            "plan.a_max" => p.a_max = parse(key, v)?,
            "plan.replan_every" => p.replan_every = parse(key, v)?,
            "plan.samples_per_candidate" => p.samples_per_candidate = parse(key, v)?,
            "plan.init_std" => p.init_std = parse(key, v)?,
            "plan.episodes" => c.episodes = parse(key, v)?,
            "plan.episode_len" => c.episode_len = parse(key, v)?,
            "plan.support_size" => c.support_size = parse(key, v)?,
            "plan.tasks" => {
                c.tasks = v
                    .split(',')
                    .map(|k| TaskKind::parse(k.trim()).map_err(|_| EvfError::Config(format!("invalid value {v:?} for {key}"))))
                    .collect::<Result<_>>()?;
                if c.tasks.is_empty() {
                    return Err(EvfError::Config(format!("{key} must list at least one task")));
                }
            }
            "plan.dump_frames" => c.dump_frames = parse_bool(key, v)?,
            other => return Err(EvfError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EvfError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses `key=value` text over the defaults.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(EvfError::MissingPath(path.to_path_buf()));
        }
        Self::parse_kv(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
