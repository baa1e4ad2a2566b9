//! Synthetic pushing world: object catalog, quasi-static push physics,
//! rasterization and the per-object dataset files.

pub mod dataset;
pub mod object;
pub mod render;
pub mod sim;

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, DatasetFile, Manifest, PushScript, Split, Trajectory,
};
pub use object::{sample_object_catalog, ObjectSpec};
pub use render::{render, Frame, FRAME_SIZE};
pub use sim::{step, Action, WorldState, A_MAX};
