use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frame_dim: usize,
    pub action_dim: usize,
    pub context_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Weight on the per-step latent KL.
    pub beta: f32,
    /// Weight on the context KL.
    pub gamma: f32,
    pub context_frames: usize,
    pub predict_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_dim: 256,
            action_dim: 2,
            context_dim: 8,
            latent_dim: 8,
            hidden_dim: 128,
            beta: 0.1,
            gamma: 0.1,
            context_frames: 2,
            predict_frames: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.frame_dim,
            self.action_dim,
            self.context_dim,
            self.latent_dim,
            self.hidden_dim,
            self.context_frames,
            self.predict_frames,
        ];
        if dims.contains(&0) {
            return Err(invalid("model dimensions must be positive"));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(invalid("beta and gamma must be non-negative"));
        }
        Ok(())
    }

    /// Sequence length the model trains on.
    pub fn sequence_len(&self) -> usize {
        self.context_frames + self.predict_frames
    }

    /// Generator input width: previous frame, action, z and c.
    pub fn generator_input(&self) -> usize {
        self.frame_dim + self.action_dim + self.latent_dim + self.context_dim
    }
}
