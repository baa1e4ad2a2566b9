use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Evf;
use crate::pushworld::{render, step, Action, DatasetFile, Frame};
use crate::training::sample_support_set;

use super::task::{ObjectSplit, TaskKind, TaskSpec};
use super::{cem_plan, cost_masked_l2, Dynamics, Goals, Observation, PlanConfig};

/// Scale from world units to the reported pose-error units.
pub const POSE_ERROR_SCALE: f64 = 1000.0;

pub enum Controller<'a> {
    Planner(&'a dyn Dynamics),
    /// Executes zero actions.
    NoMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub action: Action,
    pub cost: f64,
    /// Centroid distance to the goal, world units times 1000.
    pub pose_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub method: String,
    pub object_id: u32,
    pub split: ObjectSplit,
    pub kind: TaskKind,
    pub initial_error: f64,
    pub steps: Vec<StepRecord>,
    /// Observed frames, starting with the initial one.
    pub frames: Vec<Frame>,
    pub planning_calls: usize,
}

impl EpisodeRecord {
    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(self.initial_error, |s| s.pose_error)
    }

    pub fn mean_error(&self) -> f64 {
        if self.steps.is_empty() {
            return self.initial_error;
        }
        self.steps.iter().map(|s| s.pose_error).sum::<f64>() / self.steps.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,dx,dy,cost,pose_error\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{},{},{}", r.step, r.action.dx, r.action.dy, r.cost, r.pose_error);
        }
        s
    }
}

/// Posterior mean of `c` from a support set drawn from `dataset`.
pub fn object_context(evf: &Evf, dataset: &DatasetFile, support_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let draw = sample_support_set(dataset, support_size, rng)?;
    Ok(evf.context_posterior(&draw.support)?.0)
}

/// Plans, executes the first `replan_every` actions in the simulator,
/// observes and repeats until the episode ends.
pub fn mpc_run(
    controller: &Controller,
    method: &str,
    task: &TaskSpec,
    cfg: &PlanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    task.validate()?;
    cfg.validate()?;
    let mut state = task.initial;
    let mut frames = vec![render(&state, &task.spec)];
    let mut actions: Vec<Action> = Vec::new();
    let mut steps = Vec::with_capacity(task.episode_len);
    let mut queue: Vec<Action> = Vec::new();
    let mut planning_calls = 0;
    let initial_error = task.goal_state_at(task.episode_len).distance_to(&state) as f64 * POSE_ERROR_SCALE;
    for k in 0..task.episode_len {
        let action = match controller {
            Controller::NoMotion => Action::ZERO,
            Controller::Planner(dynamics) => {
                if queue.is_empty() {
                    let obs = Observation {
                        frames: &frames,
                        actions: &actions,
                        state,
                    };
                    let goals = match task.kind {
                        TaskKind::Reposition => Goals::Reposition(&task.goal_frames[0]),
                        TaskKind::Track => Goals::Track(&task.goal_frames[k..]),
                    };
                    let plan = cem_plan(*dynamics, &obs, goals, cfg, rng)?;
                    planning_calls += 1;
                    queue = plan.actions.into_iter().take(cfg.replan_every).rev().collect();
                }
                queue.pop().expect("plan is non-empty")
            }
        };
        state = step(&state, &task.spec, action);
        let frame = render(&state, &task.spec);
        let t = k + 1;
        steps.push(StepRecord {
            step: t,
            action,
            cost: cost_masked_l2(&frame, task.goal_frame_at(t))?,
            pose_error: task.goal_state_at(t).distance_to(&state) as f64 * POSE_ERROR_SCALE,
        });
        frames.push(frame);
        actions.push(action);
    }
    Ok(EpisodeRecord {
        method: method.to_string(),
        object_id: task.object_id,
        split: task.split,
        kind: task.kind,
        initial_error,
        steps,
        frames,
        planning_calls,
    })
}
