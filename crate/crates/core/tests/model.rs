use evf::autodiff::{kl_diag_gaussian, FiniteDiff, GaussianParams, Graph};
use evf::autodiff::relative_error;
use evf::model::{ElboNoise, Evf, ModelConfig, SupportSet};
use evf::pushworld::{generate_dataset, sample_object_catalog, DatasetFile, Trajectory};
use evf::tensor::Tensor;
use evf::training::{train_step, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(objects: usize, n: usize) -> Vec<DatasetFile> {
    sample_object_catalog(3, objects)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| generate_dataset(s, i as u32, n, 12, 40 + i as u64).unwrap())
        .collect()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 12,
        context_dim: 3,
        latent_dim: 2,
        ..Default::default()
    }
}

fn support(ds: &DatasetFile, idx: &[usize]) -> SupportSet {
    let refs: Vec<&Trajectory> = idx.iter().map(|&i| &ds.trajectories[i]).collect();
    SupportSet::from_trajectories(&refs).unwrap()
}

fn posterior_bits(evf: &Evf, s: &SupportSet) -> (Vec<u32>, Vec<u32>) {
    let (m, lv) = evf.context_posterior(s).unwrap();
    (m.iter().map(|x| x.to_bits()).collect(), lv.iter().map(|x| x.to_bits()).collect())
}

#[test]
fn encoder_is_permutation_invariant_bit_exact() {
    let ds = &corpus(1, 6)[0];
    let evf = Evf::init(ModelConfig::default(), 1).unwrap();
    let base = posterior_bits(&evf, &support(ds, &[0, 1, 2, 3, 4]));
    for perm in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 2, 3, 4, 0]] {
        assert_eq!(posterior_bits(&evf, &support(ds, &perm)), base);
    }
}

#[test]
fn duplicated_support_equals_single_trajectory() {
    let ds = &corpus(1, 3)[0];
    let evf = Evf::init(ModelConfig::default(), 2).unwrap();
    let one = posterior_bits(&evf, &support(ds, &[1]));
    for m in 2..=5 {
        assert_eq!(posterior_bits(&evf, &support(ds, &vec![1; m])), one);
    }
}

#[test]
fn initial_context_posterior_is_near_prior() {
    let ds = corpus(3, 5);
    for seed in 0..3 {
        let evf = Evf::init(ModelConfig::default(), seed).unwrap();
        for d in &ds {
            let mut g = Graph::new();
            let post = evf.encode_experience(&mut g, &support(d, &[0, 1, 2, 3, 4])).unwrap();
            let prior = GaussianParams::standard(&mut g, &[1, 8]);
            let kl = kl_diag_gaussian(&mut g, &post.gaussian, &prior).unwrap();
            assert!(g.value(kl).item() < 0.1, "KL {}", g.value(kl).item());
        }
    }
}

#[test]
fn closed_gate_returns_first_frame_exactly() {
    let ds = &corpus(1, 2)[0];
    let mut evf = Evf::init(ModelConfig::default(), 4).unwrap();
    let f = evf.cfg.frame_dim;
    let w = evf.params.get_mut("theta/out/w").unwrap();
    let cols = w.cols();
    for r in 0..w.rows() {
        for c in f..cols {
            w.data_mut()[r * cols + c] = 0.0;
        }
    }
    let b = evf.params.get_mut("theta/out/b").unwrap();
    for c in f..2 * f {
        b.data_mut()[c] = -200.0;
    }
    let tr = &ds.trajectories[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let preds = evf.rollout_predict(&tr.frames[..2], &tr.actions, &[0.3; 8], 10, &mut rng).unwrap();
    for p in preds {
        assert_eq!(p.pixels, tr.frames[0].pixels);
    }
}

#[test]
fn predictions_stay_in_unit_range_and_are_reproducible() {
    let ds = &corpus(1, 2)[0];
    let evf = Evf::init(ModelConfig::default(), 5).unwrap();
    let tr = &ds.trajectories[1];
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        evf.rollout_predict(&tr.frames[..2], &tr.actions, &[0.0; 8], 10, &mut rng).unwrap()
    };
    let a = run();
    assert_eq!(a.len(), 10);
    assert!(a.iter().all(|f| f.pixels.iter().all(|p| (0.0..=1.0).contains(p))));
    assert_eq!(a, run());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    assert!(evf.rollout_predict(&tr.frames[..2], &tr.actions, &[0.0; 8], 0, &mut rng).unwrap().is_empty());
}

#[test]
fn zeroed_frame_encoder_heads_give_zero_latent_kl() {
    let ds = &corpus(1, 4)[0];
    let mut evf = Evf::init(ModelConfig::default(), 6).unwrap();
    for name in ["psi/mean/w", "psi/mean/b", "psi/logvar/w", "psi/logvar/b"] {
        evf.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let batch: Vec<&Trajectory> = ds.trajectories.iter().take(3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = ElboNoise::sample(&evf, 3, 12, &mut rng);
    let mut g = Graph::new();
    let terms = evf.elbo_loss(&mut g, Some(&support(ds, &[3])), &batch, 4, &noise).unwrap();
    assert_eq!(g.value(terms.z_kl).item(), 0.0);
    assert_eq!(terms.rollout.predicted.len(), 11);
}

#[test]
fn zero_weights_isolate_reconstruction() {
    let ds = &corpus(1, 6)[0];
    let cfg = ModelConfig {
        beta: 0.0,
        gamma: 0.0,
        ..Default::default()
    };
    let evf = Evf::init(cfg, 7).unwrap();
    let batch: Vec<&Trajectory> = ds.trajectories[..2].iter().collect();
    let noise = ElboNoise::sample(&evf, 2, 12, &mut ChaCha8Rng::seed_from_u64(1));
    let mut g = Graph::new();
    let t = evf.elbo_loss(&mut g, Some(&support(ds, &[2, 3, 4])), &batch, 6, &noise).unwrap();
    let v = t.values(&g);
    assert_eq!(v.loss, v.recon);
    assert!(v.z_kl > 0.0 && v.c_kl > 0.0);
}

#[test]
fn mismatched_support_object_is_rejected() {
    let ds = corpus(2, 3);
    let evf = Evf::init(ModelConfig::default(), 8).unwrap();
    let batch = vec![&ds[0].trajectories[0]];
    let noise = ElboNoise::sample(&evf, 1, 12, &mut ChaCha8Rng::seed_from_u64(1));
    let mut g = Graph::new();
    assert!(evf.elbo_loss(&mut g, Some(&support(&ds[1], &[0])), &batch, 3, &noise).is_err());
}

#[test]
fn rescaled_losses_sum_to_the_dataset_bound() {
    // With one fixed support set and context sample, summing the per-trajectory
    // rescaled loss over the whole dataset gives sum(recon + beta Z) + gamma C.
    let ds = &corpus(1, 6)[0];
    let cfg = ModelConfig {
        beta: 0.3,
        gamma: 2.5,
        ..small_config()
    };
    let evf = Evf::init(cfg.clone(), 9).unwrap();
    let s = support(ds, &[0, 1, 2]);
    let all: Vec<&Trajectory> = ds.trajectories.iter().collect();
    let n = all.len();
    let noise = ElboNoise::sample(&evf, n, 12, &mut ChaCha8Rng::seed_from_u64(3));
    let mut summed = 0.0f64;
    let mut direct = 0.0f64;
    let mut c_kl = 0.0f64;
    for i in 0..n {
        let mut g = Graph::new();
        let t = evf.elbo_loss(&mut g, Some(&s), &all[i..=i], n, &noise.select_rows(&[i])).unwrap();
        let v = t.values(&g);
        summed += v.loss as f64;
        direct += v.recon as f64 + cfg.beta as f64 * v.z_kl as f64;
        c_kl = v.c_kl as f64;
    }
    let bound = direct + cfg.gamma as f64 * c_kl;
    assert!(relative_error(summed, bound, 1e-12) < 1e-5, "{summed} vs {bound}");
}

fn check_param_grads(g: &Graph, loss: evf::autodiff::NodeId, names: &[&str], per_param: usize, tol: f64, h: f64) {
    let grads = g.backward(loss).unwrap();
    let fd = FiniteDiff::new(g);
    let mut checked = 0;
    for &name in names {
        let (_, leaf) = g.param_ids().find(|(n, _)| *n == name).unwrap();
        let analytic = grads.node(leaf).unwrap();
        let len = analytic.len();
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
        for _ in 0..per_param {
            let i = rand::Rng::random_range(&mut rng, 0..len);
            let est = fd.component(loss, leaf, i, h).unwrap();
            if est.kink {
                continue;
            }
            let a = analytic.data()[i] as f64;
            let err = relative_error(a, est.value, 1e-3);
            assert!(err < tol, "{name}[{i}]: analytic {a} numeric {} err {err}", est.value);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn latent_kl_gradient_matches_finite_differences() {
    let ds = &corpus(1, 3)[0];
    let evf = Evf::init(small_config(), 10).unwrap();
    let mut g = Graph::new();
    let batch: Vec<&Trajectory> = ds.trajectories.iter().collect();
    let cur = g.input("cur", Tensor::stack_rows(&batch.iter().map(|t| t.frames[4].pixels.as_slice()).collect::<Vec<_>>()).unwrap());
    let prev = g.input("prev", Tensor::stack_rows(&batch.iter().map(|t| t.frames[3].pixels.as_slice()).collect::<Vec<_>>()).unwrap());
    let c = g.input("c", Tensor::full(&[3, 3], 0.2));
    let q = evf.encode_frame_posterior(&mut g, cur, prev, c).unwrap();
    let prior = GaussianParams::standard(&mut g, &[3, 2]);
    let kl = kl_diag_gaussian(&mut g, &q, &prior).unwrap();
    check_param_grads(&g, kl, &["psi/mean/w", "psi/mean/b", "psi/logvar/w", "psi/hidden/w"], 8, 1e-3, 1e-3);
}

#[test]
fn end_to_end_elbo_gradient_matches_finite_differences() {
    let ds = &corpus(1, 5)[0];
    let evf = Evf::init(small_config(), 12).unwrap();
    let batch: Vec<&Trajectory> = ds.trajectories[..2].iter().collect();
    let noise = ElboNoise::sample(&evf, 2, 12, &mut ChaCha8Rng::seed_from_u64(5));
    let mut g = Graph::new();
    let t = evf.elbo_loss(&mut g, Some(&support(ds, &[2, 3, 4])), &batch, 5, &noise).unwrap();
    let names = [
        "theta/gru/wx",
        "theta/gru/wh",
        "theta/out/w",
        "theta/out/b",
        "phi/embed/w",
        "phi/gru/wh",
        "phi/mean/w",
        "phi/logvar/b",
        "psi/hidden/w",
        "psi/logvar/w",
    ];
    check_param_grads(&g, t.loss, &names, 1, 1e-2, 1e-3);
}

#[test]
fn training_reduces_loss_on_two_objects() {
    let ds = corpus(2, 10);
    let mut evf = Evf::init(small_config(), 13).unwrap();
    let cfg = TrainConfig {
        meta_batch_objects: 2,
        trajectories_per_object: 2,
        support_size: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let window = 20;
    let mut first = 0.0;
    let mut recent = Vec::new();
    for step in 0..2000 {
        let d = train_step(&mut evf, &ds, &cfg, &mut rng).unwrap();
        if step < window {
            first += d.loss / window as f32;
        }
        recent.push(d.loss);
        if recent.len() > window {
            recent.remove(0);
        }
        if step >= window && recent.iter().sum::<f32>() / window as f32 <= 0.7 * first {
            return;
        }
    }
    panic!("loss did not fall by 30% (start {first})");
}
