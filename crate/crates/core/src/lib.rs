//! Experience-embedded visual foresight at desk scale.
//!
//! A hierarchical latent-variable video predictor adapts to a new object by
//! embedding a handful of action-free videos of it into a context vector,
//! and a cross-entropy-method planner uses the adapted predictor for visual
//! model-predictive control in a synthetic pushing world.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod pushworld;
pub mod tensor;
pub mod training;

pub use error::{EvfError, Result};
pub use tensor::Tensor;
