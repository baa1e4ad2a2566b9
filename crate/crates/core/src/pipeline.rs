//! Stage drivers behind the command-line tool. Each stage reads its inputs,
//! writes its artifacts into an output directory and records the resolved
//! configuration and build identifier next to them.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{invalid, EvfError, Result};
use crate::metrics::embedding::{pca_csv, EmbeddingPoint};
use crate::metrics::{best_of_k_eval, embedding_separation, pca_project, ContextMode, EvalConfig, EvalReport, SeparationStats};
use crate::model::Evf;
use crate::planner::mpc::object_context;
use crate::planner::{
    episodes_csv, make_task, mpc_run, parse_episodes_csv, summarize, Controller, ControlSummary, EpisodeRecord, EpisodeSummary,
    LearnedDynamics, ObjectSplit, SimDynamics, TaskKind,
};
use crate::pushworld::dataset::{write_dataset, Manifest, Split};
use crate::pushworld::{generate_dataset, sample_object_catalog, DatasetFile, Frame};
use crate::training::{checkpoint_config, load_checkpoint, train_loop, StepDiagnostics, TrainOutputs, CHECKPOINT_NAME, LOG_NAME};

pub const BUILD_ID: &str = env!("EVF_BUILD_ID");
pub const CONFIG_FILE: &str = "config.txt";
pub const BUILD_FILE: &str = "build.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const EPISODES_FILE: &str = "episodes.csv";

/// Fails if any of `names` already exists in `out` and `force` is unset.
fn guard(out: &Path, names: &[&str], force: bool) -> Result<()> {
    if !force {
        for n in names {
            let p = out.join(n);
            if p.exists() {
                return Err(EvfError::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_run_info(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(out.join(CONFIG_FILE), cfg.to_kv_text())?;
    fs::write(out.join(BUILD_FILE), format!("{BUILD_ID}\n"))?;
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(EvfError::MissingPath(path.to_path_buf()))
    }
}

/// Generation seed of the dataset at catalog position `index`.
pub fn dataset_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Samples `k_train + k_test` objects; the first `k_train` form the training
/// split. Writes one dataset file per object and the manifest.
pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<Manifest> {
    let d = &cfg.data;
    if d.k_train == 0 || d.k_test == 0 {
        return Err(invalid("both splits need at least one object"));
    }
    let specs = sample_object_catalog(cfg.seed, d.k_train + d.k_test)?;
    let names: Vec<(Split, String)> = (0..specs.len())
        .map(|i| {
            if i < d.k_train {
                (Split::Train, format!("train_{i:02}.evfd"))
            } else {
                (Split::Test, format!("test_{:02}.evfd", i - d.k_train))
            }
        })
        .collect();
    let mut guarded: Vec<&str> = names.iter().map(|(_, n)| n.as_str()).collect();
    guarded.push(MANIFEST_FILE);
    guard(out, &guarded, force)?;
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let ds = generate_dataset(spec, i as u32, d.trajectories, d.seq_len, dataset_seed(cfg.seed, i))?;
            write_dataset(&ds, &out.join(&names[i].1))
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        entries: names.into_iter().map(|(s, n)| (s, PathBuf::from(n))).collect(),
    };
    fs::write(out.join(MANIFEST_FILE), manifest.to_text())?;
    write_run_info(out, cfg)?;
    Ok(manifest)
}

/// Trains on the manifest's training split. Without `resume` an existing
/// checkpoint is an error unless `force` is set.
pub fn train(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    force: bool,
    resume: bool,
    on_step: impl FnMut(u64, &StepDiagnostics),
) -> Result<TrainOutputs> {
    let datasets = Manifest::load_split(manifest, Split::Train)?;
    if !resume {
        guard(out, &[CHECKPOINT_NAME, LOG_NAME], force)?;
    }
    fs::create_dir_all(out)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    write_run_info(out, cfg)?;
    train_loop(&cfg.model, &train_cfg, &datasets, out, resume, on_step)
}

/// Context mode used when none is requested: no-context checkpoints are
/// evaluated with `c = 0`, everything else with matched support.
pub fn default_context_mode(checkpoint: &Path) -> Result<ContextMode> {
    Ok(if checkpoint_config(checkpoint)?.train.baseline {
        ContextMode::Zero
    } else {
        ContextMode::Matched
    })
}

pub fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        seed: cfg.seed,
        ..cfg.eval.clone()
    }
}

/// Best-of-K evaluation on the held-out split.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, mode: ContextMode, out: &Path, force: bool) -> Result<EvalReport> {
    require(checkpoint)?;
    let evf = load_checkpoint(checkpoint)?;
    let datasets = Manifest::load_split(manifest, Split::Test)?;
    guard(out, &["curves.csv", "objects.csv", "trajectories.csv", "summary.txt"], force)?;
    let report = best_of_k_eval(&evf, &datasets, &eval_config(cfg), mode)?;
    let mut traj = String::from("object_id,index,mean_psnr,mean_ssim\n");
    for t in &report.trajectories {
        traj.push_str(&format!("{},{},{},{}\n", t.object_id, t.index, t.mean_psnr(), t.mean_ssim()));
    }
    fs::write(out.join("curves.csv"), report.curves_csv())?;
    fs::write(out.join("objects.csv"), report.objects_csv())?;
    fs::write(out.join("trajectories.csv"), traj)?;
    fs::write(out.join("summary.txt"), report.summary())?;
    write_run_info(out, cfg)?;
    Ok(report)
}

/// Context embeddings of the held-out objects: separation statistics, the
/// raw posterior means and a 2-D PCA projection.
pub fn embed(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path, force: bool) -> Result<(Vec<EmbeddingPoint>, SeparationStats)> {
    require(checkpoint)?;
    let evf = load_checkpoint(checkpoint)?;
    let datasets = Manifest::load_split(manifest, Split::Test)?;
    guard(out, &["separation.txt", "embeddings.csv", "pca.csv"], force)?;
    let (points, stats) = embedding_separation(&evf, &datasets, cfg.embed.draws, cfg.embed.support_size, cfg.seed)?;
    let dc = points.first().map_or(0, |p| p.mean.len());
    let mut raw = String::from("object_id,draw");
    for j in 0..dc {
        raw.push_str(&format!(",c{j}"));
    }
    raw.push('\n');
    for p in &points {
        raw.push_str(&format!("{},{}", p.object_id, p.draw));
        for v in &p.mean {
            raw.push_str(&format!(",{v}"));
        }
        raw.push('\n');
    }
    let means: Vec<Vec<f32>> = points.iter().map(|p| p.mean.clone()).collect();
    let pca = pca_project(&means, 2)?;
    fs::write(out.join("separation.txt"), stats.summary())?;
    fs::write(out.join("embeddings.csv"), raw)?;
    fs::write(out.join("pca.csv"), pca_csv(&points, &pca))?;
    write_run_info(out, cfg)?;
    Ok((points, stats))
}

/// Controllers for the control benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Learned model with `c` from the object's support set.
    Evf,
    /// Learned model with `c = 0`.
    NoContext,
    /// Zero actions.
    NoMotion,
    /// The simulator itself as the planning model.
    Simulator,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Evf => "evf",
            Self::NoContext => "no-context",
            Self::NoMotion => "no-motion",
            Self::Simulator => "simulator",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "evf" => Ok(Self::Evf),
            "no-context" => Ok(Self::NoContext),
            "no-motion" => Ok(Self::NoMotion),
            "simulator" => Ok(Self::Simulator),
            _ => Err(invalid(format!("unknown method {s:?}"))),
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Self::Evf | Self::NoContext)
    }
}

/// Random stream for one purpose of one benchmark episode. Tasks depend only
/// on (seed, task, split, episode), so every method faces the same tasks.
fn episode_rng(seed: u64, kind: TaskKind, split: ObjectSplit, episode: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = matches!(kind, TaskKind::Track) as u64;
    let s = matches!(split, ObjectSplit::Unseen) as u64;
    rng.set_stream((k << 48) | (s << 40) | ((episode as u64) << 8) | purpose);
    rng
}

fn run_episode(
    cfg: &RunConfig,
    method: Method,
    evf: Option<&Evf>,
    ds: &DatasetFile,
    kind: TaskKind,
    split: ObjectSplit,
    episode: usize,
) -> Result<(EpisodeRecord, Frame)> {
    let c = &cfg.control;
    let task = make_task(kind, &ds.spec, ds.object_id, split, c.episode_len, &mut episode_rng(cfg.seed, kind, split, episode, 0))?;
    let mut plan_rng = episode_rng(cfg.seed, kind, split, episode, 2);
    let sim = SimDynamics { spec: ds.spec };
    let learned = match (method, evf) {
        (Method::Evf, Some(evf)) => Some(LearnedDynamics {
            evf,
            context: object_context(evf, ds, c.support_size, &mut episode_rng(cfg.seed, kind, split, episode, 1))?,
            samples: cfg.plan.samples_per_candidate,
        }),
        (Method::NoContext, Some(evf)) => Some(LearnedDynamics {
            evf,
            context: vec![0.0; evf.cfg.context_dim],
            samples: cfg.plan.samples_per_candidate,
        }),
        (Method::Evf | Method::NoContext, None) => return Err(invalid("learned methods need a checkpoint")),
        _ => None,
    };
    let controller = match (method, &learned) {
        (Method::NoMotion, _) => Controller::NoMotion,
        (Method::Simulator, _) => Controller::Planner(&sim),
        (_, Some(l)) => Controller::Planner(l),
        (_, None) => unreachable!("checked above"),
    };
    let record = mpc_run(&controller, method.name(), &task, &cfg.plan, &mut plan_rng)?;
    Ok((record, task.goal_frame_at(c.episode_len).clone()))
}

fn episode_name(kind: TaskKind, split: ObjectSplit, episode: usize) -> String {
    format!("{}_{}_{episode:03}", kind.name(), split.name())
}

/// Horizontal strip of the executed frames followed by the final goal frame,
/// each scaled up by `scale`.
pub fn write_strip_png(frames: &[&Frame], scale: usize, path: &Path) -> Result<()> {
    let (h, w) = frames.first().map(|f| (f.height, f.width)).ok_or_else(|| invalid("no frames to draw"))?;
    let (width, height) = (w * scale * frames.len(), h * scale);
    let mut data = vec![0u8; width * height];
    for (k, f) in frames.iter().enumerate() {
        for y in 0..h * scale {
            for x in 0..w * scale {
                let v = f.pixels[(y / scale) * w + x / scale];
                data[y * width + k * w * scale + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| invalid(format!("png: {e}")))?;
    writer.write_image_data(&data).map_err(|e| invalid(format!("png: {e}")))?;
    Ok(())
}

/// Runs `control.episodes` episodes per task kind and object split. Seen
/// episodes use training objects, unseen ones held-out objects, cycling
/// through the objects of each split.
pub fn plan(cfg: &RunConfig, method: Method, checkpoint: Option<&Path>, manifest: &Path, out: &Path, force: bool) -> Result<Vec<EpisodeSummary>> {
    cfg.plan.validate()?;
    let evf = match (method.needs_checkpoint(), checkpoint) {
        (true, Some(p)) => {
            require(p)?;
            Some(load_checkpoint(p)?)
        }
        (true, None) => return Err(invalid(format!("method {} needs a checkpoint", method.name()))),
        (false, _) => None,
    };
    let seen = Manifest::load_split(manifest, Split::Train)?;
    let unseen = Manifest::load_split(manifest, Split::Test)?;
    guard(out, &[EPISODES_FILE, "summary.csv", "summary.txt"], force)?;
    let mut jobs = Vec::new();
    for &kind in &cfg.control.tasks {
        for (split, objs) in [(ObjectSplit::Seen, &seen), (ObjectSplit::Unseen, &unseen)] {
            if objs.is_empty() {
                return Err(invalid(format!("no {} objects in the manifest", split.name())));
            }
            for e in 0..cfg.control.episodes {
                jobs.push((kind, split, e, &objs[e % objs.len()]));
            }
        }
    }
    let records: Vec<(EpisodeRecord, Frame)> = jobs
        .par_iter()
        .map(|&(kind, split, e, ds)| run_episode(cfg, method, evf.as_ref(), ds, kind, split, e))
        .collect::<Result<_>>()?;
    let steps_dir = out.join("steps");
    fs::create_dir_all(&steps_dir)?;
    let mut rows = Vec::with_capacity(records.len());
    for (&(kind, split, e, _), (rec, goal)) in jobs.iter().zip(&records) {
        let name = episode_name(kind, split, e);
        fs::write(steps_dir.join(format!("{name}.csv")), rec.to_csv())?;
        if cfg.control.dump_frames {
            let frames_dir = out.join("frames");
            fs::create_dir_all(&frames_dir)?;
            let mut strip: Vec<&Frame> = rec.frames.iter().collect();
            strip.push(goal);
            write_strip_png(&strip, 8, &frames_dir.join(format!("{name}.png")))?;
        }
        rows.push(EpisodeSummary::of(rec, e));
    }
    let summary = summarize(&rows);
    fs::write(out.join(EPISODES_FILE), episodes_csv(&rows))?;
    fs::write(out.join("summary.csv"), summary.to_csv())?;
    fs::write(out.join("summary.txt"), summary.to_text())?;
    write_run_info(out, cfg)?;
    Ok(rows)
}

/// Merges the episode tables of several `plan` runs into one comparison.
pub fn report(cfg: &RunConfig, inputs: &[PathBuf], out: &Path, force: bool) -> Result<ControlSummary> {
    if inputs.is_empty() {
        return Err(invalid("report needs at least one plan directory"));
    }
    let mut rows = Vec::new();
    for dir in inputs {
        let path = dir.join(EPISODES_FILE);
        require(&path)?;
        rows.extend(parse_episodes_csv(&fs::read_to_string(&path)?)?);
    }
    guard(out, &["report.csv", "report.txt"], force)?;
    let summary = summarize(&rows);
    let mut text = summary.to_text();
    text.push('\n');
    for (method, kind, ratio) in summary.degradations() {
        text.push_str(&format!("{method} {} unseen/seen median ratio: {ratio:.3}\n", kind.name()));
    }
    fs::write(out.join("report.csv"), summary.to_csv())?;
    fs::write(out.join("report.txt"), text)?;
    write_run_info(out, cfg)?;
    Ok(summary)
}
