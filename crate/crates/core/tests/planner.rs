use evf::planner::mpc::object_context;
use evf::planner::report::median;
use evf::planner::{
    cem_plan, make_task, mpc_run, report_control, sequence_cost, Controller, Dynamics, EpisodeRecord, Goals, LearnedDynamics,
    ObjectSplit, Observation, PlanConfig, SimDynamics, StepRecord, TaskKind,
};
use evf::model::{Evf, ModelConfig};
use evf::pushworld::{generate_dataset, render, sample_object_catalog, step, Action, ObjectSpec, WorldState, A_MAX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(i: usize) -> ObjectSpec {
    sample_object_catalog(2, 8).unwrap()[i]
}

fn random_state(rng: &mut ChaCha8Rng) -> WorldState {
    let x = rng.random_range(0.4..0.6);
    let y = rng.random_range(0.4..0.6);
    let ang: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let r = rng.random_range(0.12..0.2);
    WorldState::new(x, y, rng.random_range(-3.0..3.0), x + r * ang.cos(), y + r * ang.sin())
}

fn one_step_cost(spec: &ObjectSpec, s: &WorldState, a: Action, goal: &evf::pushworld::Frame) -> f64 {
    let f = render(&step(s, spec, a), spec);
    sequence_cost(&[f], Goals::Reposition(goal)).unwrap()
}

#[test]
fn one_step_cem_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = PlanConfig {
        horizon: 1,
        ..Default::default()
    };
    let grid: Vec<Action> = [-A_MAX, 0.0, A_MAX]
        .iter()
        .flat_map(|&dx| [-A_MAX, 0.0, A_MAX].map(|dy| Action::new(dx, dy)))
        .collect();
    for trial in 0..100 {
        let sp = spec(trial % 8);
        let s = random_state(&mut rng);
        let target = Action::new(rng.random_range(-A_MAX..A_MAX), rng.random_range(-A_MAX..A_MAX));
        let goal = render(&step(&s, &sp, target), &sp);
        let frames = [render(&s, &sp)];
        let obs = Observation {
            frames: &frames,
            actions: &[],
            state: s,
        };
        let out = cem_plan(&SimDynamics { spec: sp }, &obs, Goals::Reposition(&goal), &cfg, &mut rng).unwrap();
        let chosen = one_step_cost(&sp, &s, out.actions[0], &goal);
        assert!((chosen - out.cost).abs() < 1e-12);
        let best = grid.iter().map(|&a| one_step_cost(&sp, &s, a, &goal)).fold(f64::INFINITY, f64::min);
        assert!(chosen <= 1.05 * best + 1e-12, "trial {trial}: cem {chosen} grid {best}");
    }
}

fn learned_setup() -> (Evf, ObjectSpec, WorldState) {
    let evf = Evf::init(
        ModelConfig {
            hidden_dim: 16,
            ..Default::default()
        },
        4,
    )
    .unwrap();
    let sp = spec(1);
    (evf, sp, WorldState::new(0.5, 0.5, 0.3, 0.68, 0.5))
}

#[test]
fn best_cost_is_monotone_with_learned_model() {
    let (evf, sp, s) = learned_setup();
    let dyn_ = LearnedDynamics {
        evf: &evf,
        context: vec![0.1; evf.cfg.context_dim],
        samples: 1,
    };
    let goal = render(&WorldState::new(0.45, 0.5, 0.3, 0.6, 0.5), &sp);
    let frames = [render(&s, &sp)];
    let obs = Observation {
        frames: &frames,
        actions: &[],
        state: s,
    };
    for seed in 0..5 {
        let cfg = PlanConfig {
            candidates: 30,
            elites: 5,
            cem_iters: 6,
            ..Default::default()
        };
        let out = cem_plan(&dyn_, &obs, Goals::Reposition(&goal), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(out.best_costs.len(), 6);
        for w in out.best_costs.windows(2) {
            assert!(w[1] <= w[0], "{:?}", out.best_costs);
        }
        assert!(out.cost <= *out.best_costs.last().unwrap());
        assert_eq!(out.actions.len(), 5);
        assert!(out.actions.iter().all(|a| a.dx.abs() <= A_MAX && a.dy.abs() <= A_MAX));
    }
}

#[test]
fn planning_is_deterministic_and_leaves_the_model_alone() {
    let (evf, sp, s) = learned_setup();
    let before = evf.params.clone();
    let dyn_ = LearnedDynamics {
        evf: &evf,
        context: vec![0.0; evf.cfg.context_dim],
        samples: 2,
    };
    let goal = render(&WorldState::new(0.45, 0.52, 0.3, 0.6, 0.5), &sp);
    let frames = [render(&s, &sp)];
    let obs = Observation {
        frames: &frames,
        actions: &[],
        state: s,
    };
    let cfg = PlanConfig {
        candidates: 20,
        elites: 4,
        ..Default::default()
    };
    let a = cem_plan(&dyn_, &obs, Goals::Reposition(&goal), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = cem_plan(&dyn_, &obs, Goals::Reposition(&goal), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(evf.params, before);
}

#[test]
fn all_candidates_as_elites_refits_to_the_sample_moments() {
    // With elites == candidates the refit is the plain sample mean, so a
    // symmetric quadratic pull toward one corner moves the mean that way.
    struct Probe;
    impl Dynamics for Probe {
        fn predict(&self, _obs: &Observation, candidates: &[Vec<Action>], _seed: u64) -> evf::Result<Vec<Vec<evf::pushworld::Frame>>> {
            Ok(candidates
                .iter()
                .map(|seq| {
                    seq.iter()
                        .map(|a| {
                            let mut f = evf::pushworld::Frame::blank(4, 4);
                            f.pixels[0] = a.dx;
                            f.pixels[1] = a.dy;
                            f
                        })
                        .collect()
                })
                .collect())
        }
    }
    let goal = evf::pushworld::Frame::blank(4, 4);
    let frames = [goal.clone()];
    let obs = Observation {
        frames: &frames,
        actions: &[],
        state: WorldState::new(0.5, 0.5, 0.0, 0.7, 0.5),
    };
    let cfg = PlanConfig {
        horizon: 2,
        candidates: 12,
        elites: 12,
        cem_iters: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = cem_plan(&Probe, &obs, Goals::Reposition(&goal), &cfg, &mut rng).unwrap();
    // Replay the sampler: slot 0 holds the initial mean (zero).
    let mut replay = ChaCha8Rng::seed_from_u64(1);
    let _: u64 = replay.random();
    let mut sum = [[0.0f32; 2]; 2];
    for i in 0..12 {
        for t in 0..2 {
            let e: [f32; 2] = [
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut replay),
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut replay),
            ];
            if i > 0 {
                for d in 0..2 {
                    sum[t][d] += (cfg.init_std * e[d]).clamp(-A_MAX, A_MAX);
                }
            }
        }
    }
    for t in 0..2 {
        for d in 0..2 {
            assert!((out.mean[t][d] - sum[t][d] / 12.0).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_length_episode_and_no_motion() {
    let sp = spec(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let task = make_task(TaskKind::Reposition, &sp, 0, ObjectSplit::Seen, 0, &mut rng).unwrap();
    let dyn_ = SimDynamics { spec: sp };
    let rec = mpc_run(&Controller::Planner(&dyn_), "sim", &task, &PlanConfig::default(), &mut rng).unwrap();
    assert!(rec.steps.is_empty());
    assert_eq!(rec.planning_calls, 0);
    assert_eq!(rec.frames.len(), 1);
    assert_eq!(rec.final_error(), rec.initial_error);
    assert!(make_task(TaskKind::Track, &sp, 0, ObjectSplit::Seen, 0, &mut rng).is_err());

    for kind in [TaskKind::Reposition, TaskKind::Track] {
        let task = make_task(kind, &sp, 0, ObjectSplit::Unseen, 6, &mut rng).unwrap();
        let rec = mpc_run(&Controller::NoMotion, "no-motion", &task, &PlanConfig::default(), &mut rng).unwrap();
        assert_eq!(rec.steps.len(), 6);
        assert_eq!(rec.planning_calls, 0);
        let want = task.goal_state_at(6).distance_to(&task.initial) as f64 * 1000.0;
        assert!((rec.final_error() - want).abs() < 1e-9);
        if kind == TaskKind::Reposition {
            assert_eq!(rec.final_error(), rec.initial_error);
        }
    }
}

#[test]
fn sim_planner_beats_no_motion_on_reposition() {
    let sp = spec(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = PlanConfig {
        candidates: 60,
        elites: 6,
        ..Default::default()
    };
    let dyn_ = SimDynamics { spec: sp };
    let mut wins = 0;
    for _ in 0..4 {
        let task = make_task(TaskKind::Reposition, &sp, 3, ObjectSplit::Seen, 8, &mut rng).unwrap();
        let rec = mpc_run(&Controller::Planner(&dyn_), "sim", &task, &cfg, &mut rng).unwrap();
        assert_eq!(rec.planning_calls, 8);
        assert_eq!(rec.to_csv().lines().count(), 9);
        if rec.final_error() < rec.initial_error {
            wins += 1;
        }
    }
    assert!(wins >= 3, "{wins}");
}

#[test]
fn replanning_interval_controls_call_count() {
    let sp = spec(2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let task = make_task(TaskKind::Track, &sp, 2, ObjectSplit::Seen, 7, &mut rng).unwrap();
    let cfg = PlanConfig {
        candidates: 10,
        elites: 2,
        replan_every: 3,
        ..Default::default()
    };
    let rec = mpc_run(&Controller::Planner(&SimDynamics { spec: sp }), "sim", &task, &cfg, &mut rng).unwrap();
    assert_eq!(rec.planning_calls, 3);
}

fn record(method: &str, split: ObjectSplit, final_err: f64, errs: &[f64]) -> EpisodeRecord {
    let mut steps: Vec<StepRecord> = errs
        .iter()
        .enumerate()
        .map(|(i, &e)| StepRecord {
            step: i + 1,
            action: Action::ZERO,
            cost: 0.0,
            pose_error: e,
        })
        .collect();
    steps.last_mut().unwrap().pose_error = final_err;
    EpisodeRecord {
        method: method.to_string(),
        object_id: 0,
        split,
        kind: TaskKind::Reposition,
        initial_error: 99.0,
        steps,
        frames: Vec::new(),
        planning_calls: 0,
    }
}

#[test]
fn single_record_summary_equals_the_record() {
    let r = record("evf", ObjectSplit::Seen, 12.5, &[30.0, 20.0, 12.5]);
    let s = report_control(std::slice::from_ref(&r));
    assert_eq!(s.rows.len(), 1);
    let row = &s.rows[0];
    assert_eq!(row.episodes, 1);
    assert_eq!(row.mean_final, 12.5);
    assert_eq!(row.median_final, 12.5);
    assert!((row.mean_over_time - r.mean_error()).abs() < 1e-12);
    assert!((r.mean_error() - (30.0 + 20.0 + 12.5) / 3.0).abs() < 1e-12);
}

#[test]
fn summary_matches_independent_recomputation() {
    let finals_seen = [4.0, 9.0, 1.0, 7.0];
    let finals_unseen = [10.0, 2.0, 6.0];
    let mut recs = Vec::new();
    for &f in &finals_seen {
        recs.push(record("evf", ObjectSplit::Seen, f, &[f + 3.0, f]));
    }
    for &f in &finals_unseen {
        recs.push(record("evf", ObjectSplit::Unseen, f, &[f + 1.0, f]));
    }
    recs.push(record("no-motion", ObjectSplit::Unseen, 50.0, &[50.0, 50.0]));
    let s = report_control(&recs);
    let seen = s.find("evf", TaskKind::Reposition, ObjectSplit::Seen).unwrap();
    assert_eq!(seen.episodes, 4);
    assert!((seen.mean_final - 21.0 / 4.0).abs() < 1e-12);
    assert!((seen.median_final - 5.5).abs() < 1e-12);
    assert!((seen.mean_over_time - (21.0 + 1.5 * 4.0) / 4.0).abs() < 1e-12);
    let unseen = s.find("evf", TaskKind::Reposition, ObjectSplit::Unseen).unwrap();
    assert!((unseen.mean_final - 6.0).abs() < 1e-12);
    assert!((unseen.median_final - 6.0).abs() < 1e-12);
    assert!(s.find("no-motion", TaskKind::Reposition, ObjectSplit::Seen).is_none());
    let text = s.to_text();
    assert!(text.contains("seen") && text.contains("unseen"));
    assert_eq!(s.to_csv().lines().count(), 4);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert!(median(&[]).is_nan());
}

#[test]
fn object_context_is_the_posterior_mean() {
    let (evf, sp, _) = learned_setup();
    let ds = generate_dataset(&sp, 1, 6, 12, 3).unwrap();
    let a = object_context(&evf, &ds, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = object_context(&evf, &ds, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), evf.cfg.context_dim);
}
