//! Generates a small corpus and trains a reduced model on it. The other
//! examples read the run directory written here.
//!
//! cargo run --release --example train -- [run-dir]

use std::path::PathBuf;

use evf::config::RunConfig;
use evf::pipeline::{self, MANIFEST_FILE};

fn main() -> evf::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-run".into()));
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("data.k_train", "8"),
        ("data.k_test", "4"),
        ("data.trajectories", "20"),
        ("model.hidden_dim", "48"),
        ("train.steps", "300"),
        ("train.lr", "0.003"),
    ] {
        cfg.set(k, v)?;
    }
    let data = root.join("data");
    let manifest = pipeline::gen_data(&cfg, &data, true)?;
    println!("wrote {} datasets to {}", manifest.entries.len(), data.display());
    let out = pipeline::train(&cfg, &data.join(MANIFEST_FILE), &root.join("train"), true, false, |step, d| {
        if step % 50 == 0 {
            println!("step {step:4} loss {:.3} recon {:.3} z_kl {:.3} c_kl {:.3}", d.loss, d.recon, d.z_kl, d.c_kl);
        }
    })?;
    println!("checkpoint {}", out.checkpoint.display());
    Ok(())
}
