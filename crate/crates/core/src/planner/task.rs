//! Control benchmarks: push the object to a goal pose (reposition) or follow
//! a demonstrated push frame by frame (track).

use std::f32::consts::PI;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::pushworld::sim::{find_contact, PUSHER_RADIUS};
use crate::pushworld::{render, step, Action, Frame, ObjectSpec, WorldState};

/// Free pusher motion, in steps, before the demonstration push reaches the
/// object.
pub const APPROACH_STEPS: f32 = 1.0;
/// Smallest goal offset accepted when sampling a demonstration.
pub const MIN_GOAL_OFFSET: f32 = 0.04;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Reposition,
    Track,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reposition => "reposition",
            Self::Track => "track",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reposition" => Ok(Self::Reposition),
            "track" => Ok(Self::Track),
            _ => Err(invalid(format!("unknown task {s:?}"))),
        }
    }
}

/// Whether the object was in the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectSplit {
    Seen,
    Unseen,
}

impl ObjectSplit {
    pub fn name(self) -> &'static str {
        match self {
            Self::Seen => "seen",
            Self::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Self::Seen),
            "unseen" => Ok(Self::Unseen),
            _ => Err(invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub object_id: u32,
    pub split: ObjectSplit,
    pub spec: ObjectSpec,
    pub initial: WorldState,
    /// One goal for reposition; one per control step for track.
    pub goal_states: Vec<WorldState>,
    pub goal_frames: Vec<Frame>,
    pub episode_len: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            TaskKind::Reposition => 1,
            TaskKind::Track => self.episode_len,
        };
        if self.goal_states.len() != want || self.goal_frames.len() != want {
            return Err(invalid(format!(
                "{} task needs {want} goals, has {}",
                self.kind.name(),
                self.goal_frames.len()
            )));
        }
        Ok(())
    }

    /// Goal state that step `t` (1-based, after `t` actions) is judged against.
    pub fn goal_state_at(&self, t: usize) -> &WorldState {
        match self.kind {
            TaskKind::Reposition => &self.goal_states[0],
            TaskKind::Track => &self.goal_states[(t.max(1) - 1).min(self.goal_states.len() - 1)],
        }
    }

    pub fn goal_frame_at(&self, t: usize) -> &Frame {
        match self.kind {
            TaskKind::Reposition => &self.goal_frames[0],
            TaskKind::Track => &self.goal_frames[(t.max(1) - 1).min(self.goal_frames.len() - 1)],
        }
    }
}

/// Samples a start configuration and a straight demonstration push of
/// `episode_len` steps; the demonstration defines the goal(s). Draws are
/// repeated until the object moves by [`MIN_GOAL_OFFSET`], keeping the
/// largest displacement seen if no draw gets there.
pub fn make_task(
    kind: TaskKind,
    spec: &ObjectSpec,
    object_id: u32,
    split: ObjectSplit,
    episode_len: usize,
    rng: &mut impl Rng,
) -> Result<TaskSpec> {
    spec.validate()?;
    if episode_len == 0 && kind == TaskKind::Track {
        return Err(invalid("a tracking task needs at least one step"));
    }
    let mut best: Option<(f32, Vec<WorldState>)> = None;
    for _ in 0..MAX_ATTEMPTS {
        let x = 0.5 + rng.random_range(-0.06..0.06);
        let y = 0.5 + rng.random_range(-0.06..0.06);
        let theta = rng.random_range(-PI..PI);
        let ray = rng.random_range(0.0..2.0 * PI);
        let lateral = rng.random_range(-0.04..0.04);
        let speed = rng.random_range(0.03..0.06);
        let (s, c) = ray.sin_cos();
        let at = |d: f32| WorldState::new(x, y, theta, x + c * d - s * lateral, y + s * d + c * lateral);
        let mut d = PUSHER_RADIUS;
        while find_contact(spec, at(d).to_local([at(d).px, at(d).py])).is_some() {
            d += 0.005;
        }
        let action = Action::new(-c * speed, -s * speed);
        let mut states = vec![at(d + APPROACH_STEPS * speed)];
        for _ in 0..episode_len {
            let next = step(states.last().unwrap(), spec, action);
            states.push(next);
        }
        let offset = states.last().unwrap().distance_to(&states[0]);
        if best.as_ref().is_none_or(|b| offset > b.0) {
            best = Some((offset, states));
        }
        if episode_len == 0 || offset >= MIN_GOAL_OFFSET {
            break;
        }
    }
    let (offset, states) = best.expect("at least one attempt");
    if episode_len > 0 && offset <= 0.0 {
        return Err(invalid(format!("could not sample a task that moves object {object_id}")));
    }
    let goal_states = match kind {
        TaskKind::Reposition => vec![*states.last().unwrap()],
        TaskKind::Track => states[1..].to_vec(),
    };
    let goal_frames = goal_states.iter().map(|g| render(g, spec)).collect();
    Ok(TaskSpec {
        kind,
        object_id,
        split,
        spec: *spec,
        initial: states[0],
        goal_states,
        goal_frames,
        episode_len,
    })
}
