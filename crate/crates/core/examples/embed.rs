//! Context embeddings of held-out objects: separation statistics and a 2-D
//! PCA projection of the posterior means.
//!
//! cargo run --release --example embed -- [run-dir]

use std::path::PathBuf;

use evf::metrics::{embedding_separation, pca_project};
use evf::pushworld::dataset::{Manifest, Split};
use evf::training::load_checkpoint;

fn main() -> evf::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-run".into()));
    let evf = load_checkpoint(&root.join("train/model.evfp"))?;
    let held_out = Manifest::load_split(&root.join("data/manifest.txt"), Split::Test)?;
    let (points, stats) = embedding_separation(&evf, &held_out, 6, 5, 0)?;
    print!("{}", stats.summary());
    let means: Vec<Vec<f32>> = points.iter().map(|p| p.mean.clone()).collect();
    let pca = pca_project(&means, 2)?;
    println!("explained variance {:?}", pca.explained_variance);
    for (p, xy) in points.iter().zip(&pca.coords).step_by(3) {
        println!("object {} draw {}: ({:+.3}, {:+.3})", p.object_id, p.draw, xy[0], xy[1]);
    }
    Ok(())
}
