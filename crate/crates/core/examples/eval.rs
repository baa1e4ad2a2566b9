//! Best-of-K prediction quality of a trained model on held-out objects with
//! matched, mismatched and zero context.
//!
//! cargo run --release --example eval -- [run-dir]

use std::path::PathBuf;

use evf::metrics::{best_of_k_eval, paired_t_test, ContextMode, EvalConfig};
use evf::pushworld::dataset::{Manifest, Split};
use evf::training::load_checkpoint;

fn main() -> evf::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-run".into()));
    let evf = load_checkpoint(&root.join("train/model.evfp"))?;
    let held_out = Manifest::load_split(&root.join("data/manifest.txt"), Split::Test)?;
    let cfg = EvalConfig {
        k: 5,
        max_trajectories: 10,
        ..Default::default()
    };
    let matched = best_of_k_eval(&evf, &held_out, &cfg, ContextMode::Matched)?;
    for mode in [ContextMode::Mismatched, ContextMode::Zero] {
        let other = best_of_k_eval(&evf, &held_out, &cfg, mode)?;
        let t = paired_t_test(&matched.trajectory_ssim(), &other.trajectory_ssim())?;
        println!(
            "matched SSIM {:.4} vs {} {:.4}: gap {:+.4}, one-sided p {:.3}",
            matched.mean_ssim(),
            mode.name(),
            other.mean_ssim(),
            t.mean_diff,
            t.p_greater
        );
    }
    println!("\n{}", matched.summary());
    Ok(())
}
