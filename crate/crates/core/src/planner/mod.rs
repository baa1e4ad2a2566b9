//! Cross-entropy-method planning over a dynamics model, the MPC loop and the
//! two control benchmarks.

pub mod mpc;
pub mod report;
pub mod task;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::model::{actions_tensor, frame_from_row, frames_tensor, standard_normal, Evf};
use crate::pushworld::render::pusher_mask;
use crate::pushworld::sim::{PUSHER_MAX, PUSHER_MIN};
use crate::pushworld::{render, step, Action, Frame, ObjectSpec, WorldState, A_MAX};
use crate::tensor::Tensor;

pub use mpc::{mpc_run, Controller, EpisodeRecord, StepRecord};
pub use report::{episodes_csv, parse_episodes_csv, report_control, summarize, ControlRow, ControlSummary, EpisodeSummary};
pub use task::{make_task, ObjectSplit, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub horizon: usize,
    pub candidates: usize,
    pub elites: usize,
    pub cem_iters: usize,
    /// Per-dimension action bound.
    pub a_max: f32,
    pub replan_every: usize,
    /// Stochastic rollouts averaged per candidate.
    pub samples_per_candidate: usize,
    /// Standard deviation of the initial action distribution.
    pub init_std: f32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            candidates: 200,
            elites: 10,
            cem_iters: 3,
            a_max: A_MAX,
            replan_every: 1,
            samples_per_candidate: 1,
            init_std: A_MAX / 2.0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.horizon,
            self.candidates,
            self.elites,
            self.cem_iters,
            self.replan_every,
            self.samples_per_candidate,
        ];
        if counts.contains(&0) {
            return Err(invalid("planner counts must be at least 1"));
        }
        if self.elites > self.candidates {
            return Err(invalid("elites must not exceed candidates"));
        }
        if !(self.a_max > 0.0 && self.init_std > 0.0) {
            return Err(invalid("action bound and initial spread must be positive"));
        }
        Ok(())
    }
}

/// Mean squared difference over pixels that are not pusher pixels in
/// either frame.
pub fn cost_masked_l2(pred: &Frame, goal: &Frame) -> Result<f64> {
    if pred.pixels.len() != goal.pixels.len() || (pred.height, pred.width) != (goal.height, goal.width) {
        return Err(invalid("cost frames differ in size"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.pixels.len() {
        if pred.pusher_mask[i] || goal.pusher_mask[i] {
            continue;
        }
        let d = pred.pixels[i] as f64 - goal.pixels[i] as f64;
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(invalid("every pixel is masked"));
    }
    Ok(sum / count as f64)
}

/// What the planner knows at decision time.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    /// Observed frames, oldest first; the last one is current.
    pub frames: &'a [Frame],
    /// Executed actions; `actions[k]` led from `frames[k]` to `frames[k+1]`.
    pub actions: &'a [Action],
    /// Simulator state. Only the pusher position is used by learned models.
    pub state: WorldState,
}

/// Predicts frames for candidate action sequences. `seed` fixes any
/// stochasticity: equal seeds and equal candidates give equal predictions.
pub trait Dynamics: Sync {
    fn predict(&self, obs: &Observation, candidates: &[Vec<Action>], seed: u64) -> Result<Vec<Vec<Frame>>>;
}

/// Ground-truth simulator as a model.
#[derive(Debug, Clone, Copy)]
pub struct SimDynamics {
    pub spec: ObjectSpec,
}

impl Dynamics for SimDynamics {
    fn predict(&self, obs: &Observation, candidates: &[Vec<Action>], _seed: u64) -> Result<Vec<Vec<Frame>>> {
        Ok(candidates
            .par_iter()
            .map(|seq| {
                let mut s = obs.state;
                seq.iter()
                    .map(|&a| {
                        s = step(&s, &self.spec, a);
                        render(&s, &self.spec)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Learned predictor with a fixed context vector; `z` comes from the prior.
#[derive(Debug, Clone)]
pub struct LearnedDynamics<'a> {
    pub evf: &'a Evf,
    pub context: Vec<f32>,
    pub samples: usize,
}

/// Pusher pixels along the commanded path from `(px, py)`.
pub fn commanded_masks(px: f32, py: f32, seq: &[Action], size: usize) -> Vec<Vec<bool>> {
    let (mut x, mut y) = (px, py);
    seq.iter()
        .map(|a| {
            let a = a.clamped();
            x = (x + a.dx).clamp(PUSHER_MIN, PUSHER_MAX);
            y = (y + a.dy).clamp(PUSHER_MIN, PUSHER_MAX);
            pusher_mask(x, y, size)
        })
        .collect()
}

impl Dynamics for LearnedDynamics<'_> {
    fn predict(&self, obs: &Observation, candidates: &[Vec<Action>], seed: u64) -> Result<Vec<Vec<Frame>>> {
        let horizon = candidates.first().map_or(0, Vec::len);
        if horizon == 0 || candidates.iter().any(|c| c.len() != horizon) {
            return Err(invalid("candidates must share a positive length"));
        }
        let current = obs.frames.last().ok_or_else(|| invalid("no observed frame"))?;
        let (h, w) = (current.height, current.width);
        let n_ctx = obs.frames.len().min(self.evf.cfg.context_frames).min(obs.actions.len() + 1);
        let ctx_frames = &obs.frames[obs.frames.len() - n_ctx..];
        let ctx_actions = &obs.actions[obs.actions.len() + 1 - n_ctx..];
        let s = self.samples.max(1);
        let b = candidates.len() * s;
        let context: Vec<Tensor> = ctx_frames.iter().map(|f| frames_tensor(&vec![f; b])).collect::<Result<_>>()?;
        let mut actions: Vec<Tensor> = ctx_actions.iter().map(|a| actions_tensor(&vec![*a; b])).collect::<Result<_>>()?;
        for t in 0..horizon {
            let col: Vec<Action> = candidates.iter().flat_map(|c| std::iter::repeat_n(c[t], s)).collect();
            actions.push(actions_tensor(&col)?);
        }
        let steps = n_ctx - 1 + horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<Tensor> = (0..steps)
            .map(|_| standard_normal(&[b, self.evf.cfg.latent_dim], &mut rng))
            .collect();
        let c = Tensor::matrix(1, self.evf.cfg.context_dim, self.context.clone())?;
        let c = Tensor::stack_rows(&vec![c.data(); b])?;
        let preds = self.evf.rollout_predict_batch(&context, &actions, &c, horizon, &noise)?;
        let mut out = Vec::with_capacity(candidates.len());
        for (i, seq) in candidates.iter().enumerate() {
            let masks = commanded_masks(obs.state.px, obs.state.py, seq, h);
            let frames = (0..horizon)
                .map(|t| {
                    // Average the stochastic samples of this candidate.
                    let mut px = vec![0.0f32; h * w];
                    for k in 0..s {
                        for (acc, v) in px.iter_mut().zip(preds[t].row(i * s + k)) {
                            *acc += v / s as f32;
                        }
                    }
                    let mut f = frame_from_row(&px, h, w);
                    f.pusher_mask = masks[t].clone();
                    f
                })
                .collect();
            out.push(frames);
        }
        Ok(out)
    }
}

/// Goal frames for a plan. Reposition scores every step against the final
/// goal plus an extra terminal term; track scores step `t` against
/// `goals[t]` (the last goal repeats past the end).
#[derive(Debug, Clone, Copy)]
pub enum Goals<'a> {
    Reposition(&'a Frame),
    Track(&'a [Frame]),
}

pub fn sequence_cost(pred: &[Frame], goals: Goals) -> Result<f64> {
    let mut total = 0.0;
    for (t, f) in pred.iter().enumerate() {
        let g = match goals {
            Goals::Reposition(g) => g,
            Goals::Track(gs) => gs.get(t).or(gs.last()).ok_or_else(|| invalid("empty goal sequence"))?,
        };
        total += cost_masked_l2(f, g)?;
    }
    if let (Goals::Reposition(g), Some(last)) = (goals, pred.last()) {
        total += cost_masked_l2(last, g)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemOutcome {
    /// Final elite mean, or the incumbent best when it scores lower.
    pub actions: Vec<Action>,
    pub cost: f64,
    /// Best candidate cost at each iteration.
    pub best_costs: Vec<f64>,
    /// Elite mean and standard deviation after the last refit.
    pub mean: Vec<[f32; 2]>,
    pub std: Vec<[f32; 2]>,
}

fn to_actions(v: &[[f32; 2]], a_max: f32) -> Vec<Action> {
    v.iter()
        .map(|a| Action {
            dx: a[0].clamp(-a_max, a_max),
            dy: a[1].clamp(-a_max, a_max),
        })
        .collect()
}

/// CEM over action sequences. Each iteration re-injects the previous elite
/// mean and the incumbent best sequence (in its original slot, so a model
/// evaluated with the same seed reproduces its cost); the best cost is
/// therefore non-increasing across iterations.
pub fn cem_plan(dynamics: &dyn Dynamics, obs: &Observation, goals: Goals, cfg: &PlanConfig, rng: &mut ChaCha8Rng) -> Result<CemOutcome> {
    cfg.validate()?;
    let h = cfg.horizon;
    let model_seed: u64 = rand::Rng::random(rng);
    let mut mean = vec![[0.0f32; 2]; h];
    let mut std = vec![[cfg.init_std; 2]; h];
    let mut incumbent: Option<(usize, Vec<Action>, f64)> = None;
    let mut best_costs = Vec::with_capacity(cfg.cem_iters);
    for _ in 0..cfg.cem_iters {
        let mut cands: Vec<Vec<Action>> = (0..cfg.candidates)
            .map(|_| {
                let v: Vec<[f32; 2]> = (0..h)
                    .map(|t| {
                        let e: [f32; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
                        [mean[t][0] + std[t][0] * e[0], mean[t][1] + std[t][1] * e[1]]
                    })
                    .collect();
                to_actions(&v, cfg.a_max)
            })
            .collect();
        let mean_slot = match &incumbent {
            Some((0, _, _)) if cfg.candidates > 1 => 1,
            _ => 0,
        };
        cands[mean_slot] = to_actions(&mean, cfg.a_max);
        if let Some((slot, seq, _)) = &incumbent {
            cands[*slot] = seq.clone();
        }
        let preds = dynamics.predict(obs, &cands, model_seed)?;
        let mut scored: Vec<(usize, f64)> = preds
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match sequence_cost(p, goals) {
                Ok(c) if c.is_finite() => Some((i, c)),
                _ => None,
            })
            .collect();
        if scored.is_empty() {
            return Err(invalid("every CEM candidate had a non-finite cost"));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (bi, bc) = scored[0];
        best_costs.push(bc);
        incumbent = Some((bi, cands[bi].clone(), bc));
        let elites = &scored[..cfg.elites.min(scored.len())];
        let n = elites.len() as f32;
        for t in 0..h {
            for d in 0..2 {
                let get = |i: usize| if d == 0 { cands[i][t].dx } else { cands[i][t].dy };
                let m = elites.iter().map(|&(i, _)| get(i)).sum::<f32>() / n;
                let v = elites.iter().map(|&(i, _)| (get(i) - m).powi(2)).sum::<f32>() / n;
                mean[t][d] = m;
                std[t][d] = v.sqrt();
            }
        }
    }
    let (_, best_seq, best_cost) = incumbent.expect("at least one iteration ran");
    let final_mean = to_actions(&mean, cfg.a_max);
    let mean_cost = dynamics
        .predict(obs, std::slice::from_ref(&final_mean), model_seed)
        .and_then(|p| sequence_cost(&p[0], goals))
        .unwrap_or(f64::INFINITY);
    let (actions, cost) = if mean_cost <= best_cost {
        (final_mean, mean_cost)
    } else {
        (best_seq, best_cost)
    };
    Ok(CemOutcome {
        actions,
        cost,
        best_costs,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(px: Vec<f32>, mask: Vec<bool>) -> Frame {
        Frame {
            height: 4,
            width: 4,
            pixels: px,
            pusher_mask: mask,
        }
    }

    #[test]
    fn cost_identity_and_hand_value() {
        let a = frame(vec![0.2; 16], vec![false; 16]);
        assert_eq!(cost_masked_l2(&a, &a).unwrap(), 0.0);
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[1] = true;
        let mut b = frame(vec![0.2; 16], mask);
        b.pixels[5] = 0.7;
        b.pixels[9] = 0.7;
        let expected = 2.0 * 0.25 / 14.0;
        assert!((cost_masked_l2(&a, &b).unwrap() - expected).abs() < 1e-7);
    }

    #[test]
    fn cost_ignores_masked_pixels() {
        let mut mask = vec![false; 16];
        mask[3] = true;
        let a = frame(vec![0.1; 16], mask.clone());
        let mut b = frame(vec![0.1; 16], vec![false; 16]);
        b.pixels[3] = 0.9;
        assert_eq!(cost_masked_l2(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn all_masked_is_error() {
        let a = frame(vec![0.0; 16], vec![true; 16]);
        assert!(cost_masked_l2(&a, &a).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = PlanConfig {
            elites: 300,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PlanConfig::default().validate().is_ok());
    }
}
