//! Visual MPC on one repositioning task per controller: the simulator as an
//! oracle model, the learned model with and without object context, and no
//! motion at all.
//!
//! cargo run --release --example plan -- [run-dir]

use std::path::PathBuf;

use evf::planner::mpc::object_context;
use evf::planner::{make_task, mpc_run, Controller, LearnedDynamics, ObjectSplit, PlanConfig, SimDynamics, TaskKind};
use evf::pushworld::dataset::{Manifest, Split};
use evf::training::load_checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> evf::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-run".into()));
    let evf = load_checkpoint(&root.join("train/model.evfp"))?;
    let held_out = Manifest::load_split(&root.join("data/manifest.txt"), Split::Test)?;
    let ds = &held_out[0];
    let task = make_task(TaskKind::Reposition, &ds.spec, ds.object_id, ObjectSplit::Unseen, 8, &mut ChaCha8Rng::seed_from_u64(1))?;
    let cfg = PlanConfig {
        candidates: 100,
        ..Default::default()
    };
    let sim = SimDynamics { spec: ds.spec };
    let context = object_context(&evf, ds, 5, &mut ChaCha8Rng::seed_from_u64(2))?;
    let adapted = LearnedDynamics {
        evf: &evf,
        context,
        samples: 1,
    };
    let blind = LearnedDynamics {
        evf: &evf,
        context: vec![0.0; evf.cfg.context_dim],
        samples: 1,
    };
    let controllers = [
        ("simulator", Controller::Planner(&sim)),
        ("evf", Controller::Planner(&adapted)),
        ("no-context", Controller::Planner(&blind)),
        ("no-motion", Controller::NoMotion),
    ];
    for (name, c) in &controllers {
        let rec = mpc_run(c, name, &task, &cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
        println!(
            "{name:>10}: pose error {:.1} -> {:.1} over {} steps",
            rec.initial_error,
            rec.final_error(),
            rec.steps.len()
        );
    }
    Ok(())
}
