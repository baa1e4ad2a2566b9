//! Samples objects from the catalog, pushes each one with a random script
//! and writes the rendered frames as PNG strips.

use std::path::PathBuf;

use evf::pipeline::write_strip_png;
use evf::pushworld::dataset::{rollout_trajectory, total_displacement, trajectory_rng, PushScript};
use evf::pushworld::sample_object_catalog;

fn main() -> evf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pushworld-frames".into()));
    std::fs::create_dir_all(&out)?;
    for (i, spec) in sample_object_catalog(0, 4)?.iter().enumerate() {
        let script = PushScript::sample(&mut trajectory_rng(7, i));
        let moved = total_displacement(&script.run(spec, 12));
        let traj = rollout_trajectory(spec, i as u32, &script, 12);
        let frames: Vec<_> = traj.frames.iter().collect();
        let path = out.join(format!("object_{i}.png"));
        write_strip_png(&frames, 4, &path)?;
        println!(
            "object {i}: shape {} mass {:.2} friction {:.2}, moved {moved:.3} -> {}",
            spec.shape_id,
            spec.mass,
            spec.friction,
            path.display()
        );
    }
    Ok(())
}
