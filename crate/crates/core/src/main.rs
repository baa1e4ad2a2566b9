use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use evf::config::RunConfig;
use evf::metrics::ContextMode;
use evf::pipeline::{self, Method};

#[derive(Parser)]
#[command(name = "evf", version = pipeline::BUILD_ID, about = "Context-adaptive video prediction and visual MPC in a pushing world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Inputs {
    /// Dataset manifest written by gen-data.
    #[arg(long, default_value = "data/manifest.txt")]
    data: PathBuf,
    /// Model checkpoint written by train.
    #[arg(long, default_value = "runs/train/model.evfp")]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the object corpus and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data/manifest.txt")]
        data: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Best-of-K prediction quality on held-out objects.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// matched, mismatched or zero; defaults to zero for no-context checkpoints.
        #[arg(long)]
        context: Option<String>,
    },
    /// Context-embedding separation and PCA of held-out objects.
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Control benchmark episodes for one method.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// evf, no-context, no-motion or simulator.
        #[arg(long, default_value = "evf")]
        method: String,
    },
    /// Merge the episode tables of several plan runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Plan output directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn resolve(common: &Common) -> evf::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| evf::EvfError::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn context_mode(name: Option<&str>, checkpoint: &Path) -> evf::Result<ContextMode> {
    match name {
        None => pipeline::default_context_mode(checkpoint),
        Some("matched") => Ok(ContextMode::Matched),
        Some("mismatched") => Ok(ContextMode::Mismatched),
        Some("zero") => Ok(ContextMode::Zero),
        Some(other) => Err(evf::EvfError::Config(format!("unknown context mode {other:?}"))),
    }
}

fn init_threads() -> evf::Result<()> {
    if let Ok(v) = std::env::var("EVF_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| evf::EvfError::Config(format!("EVF_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| evf::EvfError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> evf::Result<()> {
    init_threads()?;
    let t0 = Instant::now();
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, "data");
            let m = pipeline::gen_data(&cfg, &out, common.force)?;
            eprintln!("wrote {} datasets to {}", m.entries.len(), out.display());
        }
        Command::Train { common, data, resume } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, "runs/train");
            let total = cfg.train.steps;
            let res = pipeline::train(&cfg, &data, &out, common.force, resume, |step, d| {
                if step % 100 == 0 || step as usize == total {
                    eprintln!(
                        "step {step}/{total} loss {:.4} recon {:.4} z_kl {:.3} c_kl {:.3} ({:.0?})",
                        d.loss,
                        d.recon,
                        d.z_kl,
                        d.c_kl,
                        t0.elapsed()
                    );
                }
            })?;
            eprintln!("checkpoint {} at step {}", res.checkpoint.display(), res.final_step);
        }
        Command::Eval { common, inputs, context } => {
            let cfg = resolve(&common)?;
            let mode = context_mode(context.as_deref(), &inputs.checkpoint)?;
            let out = out_dir(&common, "runs/eval");
            let r = pipeline::eval(&cfg, &inputs.checkpoint, &inputs.data, mode, &out, common.force)?;
            print!("{}", r.summary());
        }
        Command::Embed { common, inputs } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, "runs/embed");
            let (_, s) = pipeline::embed(&cfg, &inputs.checkpoint, &inputs.data, &out, common.force)?;
            print!("{}", s.summary());
        }
        Command::Plan { common, inputs, method } => {
            let cfg = resolve(&common)?;
            let method = Method::parse(&method)?;
            let out = out_dir(&common, &format!("runs/plan-{}", method.name()));
            let ckpt = method.needs_checkpoint().then_some(inputs.checkpoint.as_path());
            let rows = pipeline::plan(&cfg, method, ckpt, &inputs.data, &out, common.force)?;
            print!("{}", evf::planner::summarize(&rows).to_text());
        }
        Command::Report { common, runs } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, "runs/report");
            let s = pipeline::report(&cfg, &runs, &out, common.force)?;
            print!("{}", s.to_text());
        }
    }
    eprintln!("done in {:.1?}", t0.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
