use std::collections::BTreeSet;
use std::fs;

use evf::autodiff::{checkpoint, Graph};
use evf::model::{ElboNoise, Evf, ModelConfig};
use evf::pushworld::{generate_dataset, sample_object_catalog, write_dataset, DatasetFile, Manifest, Split, Trajectory};
use evf::tensor::Tensor;
use evf::training::{
    full_gradients, load_checkpoint, meta_batch_loss, sample_support_set, split_support_targets, train_loop, TrainConfig,
    LOG_HEADER,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(objects: usize, n: usize) -> Vec<DatasetFile> {
    sample_object_catalog(8, objects)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| generate_dataset(s, i as u32, n, 12, 70 + i as u64).unwrap())
        .collect()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        ..Default::default()
    }
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        meta_batch_objects: 2,
        trajectories_per_object: 2,
        support_size: 3,
        checkpoint_every: 2,
        ..Default::default()
    }
}

#[test]
fn support_of_five_distinct_trajectories() {
    let ds = &corpus(1, 50)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = sample_support_set(ds, 5, &mut rng).unwrap();
    let unique: BTreeSet<usize> = d.indices.iter().copied().collect();
    assert_eq!(unique.len(), 5);
    assert_eq!(d.support.len(), 5);
    assert!(d.warning.is_none());
}

#[test]
fn small_dataset_uses_everything_and_warns() {
    let ds = &corpus(1, 3)[0];
    let d = sample_support_set(ds, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(d.support.len(), 3);
    assert!(d.warning.is_some());
}

#[test]
fn support_sampling_is_deterministic() {
    let ds = &corpus(1, 20)[0];
    let a = sample_support_set(ds, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = sample_support_set(ds, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a.indices, b.indices);
}

#[test]
fn empty_dataset_is_an_error() {
    let mut ds = corpus(1, 1).remove(0);
    ds.trajectories.clear();
    assert!(sample_support_set(&ds, 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn support_and_targets_are_disjoint_when_possible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 9..60 {
        for _ in 0..20 {
            let (s, t) = split_support_targets(n, 5, 4, &mut rng);
            assert_eq!((s.len(), t.len()), (5, 4));
            assert!(s.iter().all(|i| !t.contains(i)));
        }
    }
}

#[test]
fn baseline_never_touches_the_experience_encoder() {
    let ds = corpus(2, 8);
    let evf = Evf::init(tiny_model(), 0).unwrap();
    let cfg = TrainConfig {
        baseline: true,
        ..tiny_train(1)
    };
    let (g, loss, _) = meta_batch_loss(&evf, &ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads = full_gradients(&evf, &g, loss).unwrap();
    for (name, grad) in &grads {
        if name.starts_with("phi/") {
            assert!(grad.data().iter().all(|&x| x == 0.0), "{name}");
        }
    }
    assert!(grads["theta/out/w"].data().iter().any(|&x| x != 0.0));
}

#[test]
fn diagnostics_add_up_to_the_loss() {
    let ds = corpus(3, 8);
    let cfg_m = ModelConfig {
        beta: 0.2,
        gamma: 3.0,
        ..tiny_model()
    };
    let evf = Evf::init(cfg_m.clone(), 1).unwrap();
    let (_, _, d) = meta_batch_loss(&evf, &ds, &tiny_train(1), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let total = d.recon + cfg_m.beta * d.z_kl + cfg_m.gamma * d.c_kl_scaled;
    assert!((total - d.loss).abs() <= 1e-6 * d.loss.abs().max(1.0), "{total} vs {}", d.loss);
}

#[test]
fn baseline_loss_equals_zero_context_terms() {
    let ds = &corpus(1, 6)[0];
    let evf = Evf::init(tiny_model(), 2).unwrap();
    let batch: Vec<&Trajectory> = ds.trajectories[..3].iter().collect();
    let noise = ElboNoise::sample(&evf, 3, 12, &mut ChaCha8Rng::seed_from_u64(6));
    let mut g = Graph::new();
    let base = evf.elbo_loss(&mut g, None, &batch, 6, &noise).unwrap().values(&g);
    let mut g2 = Graph::new();
    let c = g2.constant(Tensor::zeros(&[1, 8]));
    let r = evf.rollout_train(&mut g2, &batch, c, &noise.z).unwrap();
    assert_eq!(base.recon, g2.value(r.recon).item());
    assert_eq!(base.z_kl, g2.value(r.z_kl).item());
    assert_eq!(base.c_kl, 0.0);
    assert_eq!(base.loss, base.recon + evf.cfg.beta * base.z_kl);
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_loop(&tiny_model(), &tiny_train(0), &corpus(2, 6), dir.path(), false, |_, _| {}).unwrap();
    assert!(out.checkpoint.exists());
    assert_eq!(fs::read_to_string(&out.log).unwrap(), format!("{LOG_HEADER}\n"));
    assert_eq!(out.final_step, 0);
    let evf = load_checkpoint(&out.checkpoint).unwrap();
    assert_eq!(evf, Evf::init(tiny_model(), 0).unwrap());
}

fn log_losses(text: &str) -> Vec<String> {
    text.lines()
        .skip(1)
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn resume_restores_step_and_moments_exactly() {
    let ds = corpus(2, 8);
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    let full = train_loop(&tiny_model(), &tiny_train(4), &ds, straight.path(), false, |_, _| {}).unwrap();
    train_loop(&tiny_model(), &tiny_train(2), &ds, resumed.path(), false, |_, _| {}).unwrap();
    let mid = checkpoint::load(&resumed.path().join("model.evfp")).unwrap();
    assert_eq!(mid.step(), 2);
    let again = train_loop(&tiny_model(), &tiny_train(4), &ds, resumed.path(), true, |_, _| {}).unwrap();
    assert_eq!(again.final_step, 4);
    let a = checkpoint::load(&full.checkpoint).unwrap();
    let b = checkpoint::load(&again.checkpoint).unwrap();
    assert_eq!(a, b);
    let la = log_losses(&fs::read_to_string(&full.log).unwrap());
    let lb = log_losses(&fs::read_to_string(&again.log).unwrap());
    assert_eq!(la, lb);
}

#[test]
fn same_seed_reproduces_loss_trace() {
    let ds = corpus(2, 8);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    train_loop(&tiny_model(), &tiny_train(3), &ds, a.path(), false, |_, d| ta.push(d.loss.to_bits())).unwrap();
    train_loop(&tiny_model(), &tiny_train(3), &ds, b.path(), false, |_, d| tb.push(d.loss.to_bits())).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn too_few_datasets_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        meta_batch_objects: 3,
        ..tiny_train(1)
    };
    assert!(train_loop(&tiny_model(), &cfg, &corpus(2, 4), dir.path(), false, |_, _| {}).is_err());
}

#[test]
fn unreadable_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus(2, 4);
    write_dataset(&ds[0], &dir.path().join("a.evfd")).unwrap();
    fs::write(dir.path().join("b.evfd"), b"EVFDjunk").unwrap();
    let manifest = Manifest {
        entries: vec![(Split::Train, "a.evfd".into()), (Split::Train, "b.evfd".into())],
    };
    let path = dir.path().join("manifest.txt");
    fs::write(&path, manifest.to_text()).unwrap();
    assert!(Manifest::load_split(&path, Split::Train).is_err());
}
