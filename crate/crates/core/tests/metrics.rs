use evf::metrics::embedding::context_embeddings;
use evf::metrics::{
    best_of_k_eval, embedding_separation, pca_project, psnr, sample_rollouts, separation_stats, ssim, ContextMode, EmbeddingPoint,
    EvalConfig,
};
use evf::model::{Evf, ModelConfig};
use evf::pushworld::{generate_dataset, sample_object_catalog, DatasetFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(objects: usize, n: usize) -> Vec<DatasetFile> {
    sample_object_catalog(7, objects)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| generate_dataset(s, i as u32, n, 12, 70 + i as u64).unwrap())
        .collect()
}

fn model() -> Evf {
    let cfg = ModelConfig {
        hidden_dim: 16,
        ..Default::default()
    };
    Evf::init(cfg, 11).unwrap()
}

fn eval_cfg(k: usize) -> EvalConfig {
    EvalConfig {
        k,
        horizon: 6,
        support_size: 3,
        max_trajectories: 3,
        ..Default::default()
    }
}

#[test]
fn k_one_curve_is_the_single_sample_metric() {
    let ds = corpus(2, 5);
    let evf = model();
    let cfg = eval_cfg(1);
    let report = best_of_k_eval(&evf, &ds, &cfg, ContextMode::Matched).unwrap();
    assert_eq!(report.ssim.len(), 6);
    assert_eq!(report.psnr.len(), 6);
    let cf = evf.cfg.context_frames;
    let mut n = 0.0;
    let mut sums = [(0.0, 0.0); 6];
    for o in 0..ds.len() {
        for i in 0..3 {
            let samples = sample_rollouts(&evf, &ds, o, i, &cfg, ContextMode::Matched).unwrap();
            assert_eq!(samples.len(), 1);
            for (t, f) in samples[0].iter().enumerate() {
                let truth = &ds[o].trajectories[i].frames[cf + t];
                sums[t].0 += psnr(f, truth).unwrap();
                sums[t].1 += ssim(f, truth).unwrap();
            }
            n += 1.0;
        }
    }
    for t in 0..6 {
        assert!((report.psnr[t] - sums[t].0 / n).abs() < 1e-9);
        assert!((report.ssim[t] - sums[t].1 / n).abs() < 1e-12);
    }
}

#[test]
fn samples_do_not_depend_on_k() {
    let ds = corpus(2, 4);
    let evf = model();
    let one = sample_rollouts(&evf, &ds, 1, 2, &eval_cfg(1), ContextMode::Matched).unwrap();
    let four = sample_rollouts(&evf, &ds, 1, 2, &eval_cfg(4), ContextMode::Matched).unwrap();
    assert_eq!(one[0], four[0]);
    assert_ne!(four[0], four[1]);
}

#[test]
fn curves_are_monotone_in_k() {
    let ds = corpus(2, 5);
    let evf = model();
    let reports: Vec<_> = [1, 3, 6]
        .iter()
        .map(|&k| best_of_k_eval(&evf, &ds, &eval_cfg(k), ContextMode::Matched).unwrap())
        .collect();
    for w in reports.windows(2) {
        for (a, b) in w[0].trajectories.iter().zip(&w[1].trajectories) {
            for t in 0..a.ssim.len() {
                assert!(b.ssim[t] >= a.ssim[t]);
                assert!(b.psnr[t] >= a.psnr[t]);
            }
        }
    }
}

#[test]
fn eval_errors() {
    let evf = model();
    let ds = corpus(2, 5);
    assert!(best_of_k_eval(&evf, &ds, &eval_cfg(0), ContextMode::Matched).is_err());
    let single = corpus(1, 1);
    assert!(best_of_k_eval(&evf, &single, &eval_cfg(2), ContextMode::Matched).is_err());
    assert!(best_of_k_eval(&evf, &single, &eval_cfg(2), ContextMode::Zero).is_ok());
    assert!(best_of_k_eval(&evf, &ds[..1], &eval_cfg(2), ContextMode::Mismatched).is_err());
}

#[test]
fn eval_report_csv_shapes() {
    let ds = corpus(2, 4);
    let r = best_of_k_eval(&model(), &ds, &eval_cfg(2), ContextMode::Matched).unwrap();
    assert_eq!(r.curves_csv().lines().count(), 7);
    assert_eq!(r.objects_csv().lines().count(), 3);
    assert_eq!(r.objects.iter().map(|o| o.trajectories).sum::<usize>(), r.trajectories.len());
}

#[test]
fn separation_is_invariant_to_object_order() {
    let ds = corpus(3, 6);
    let evf = model();
    let (_, a) = embedding_separation(&evf, &ds, 4, 3, 5).unwrap();
    let rev: Vec<DatasetFile> = ds.iter().rev().cloned().collect();
    let (_, b) = embedding_separation(&evf, &rev, 4, 3, 5).unwrap();
    assert!((a.intra - b.intra).abs() < 1e-12);
    assert!((a.inter - b.inter).abs() < 1e-12);
    assert!((a.silhouette - b.silhouette).abs() < 1e-12);
}

#[test]
fn separation_errors_on_insufficient_draws() {
    let ds = corpus(2, 4);
    let evf = model();
    assert!(embedding_separation(&evf, &ds, 1, 3, 0).is_err());
    assert!(embedding_separation(&evf, &ds[..1], 3, 3, 0).is_err());
    let pts = context_embeddings(&evf, &ds, 3, 2, 0).unwrap();
    assert_eq!(pts.len(), 6);
    assert!(separation_stats(&pts[..4]).is_err());
}

#[test]
fn identical_embeddings_are_degenerate() {
    let pts: Vec<EmbeddingPoint> = (0..6)
        .map(|i| EmbeddingPoint {
            object_id: i / 3,
            draw: (i % 3) as usize,
            mean: vec![0.25; 4],
        })
        .collect();
    let s = separation_stats(&pts).unwrap();
    assert_eq!((s.intra, s.inter, s.silhouette), (0.0, 0.0, 0.0));
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn pca_explained_variance_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let d = 8;
        let n = 40;
        let scales: Vec<f32> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let points: Vec<Vec<f32>> = (0..n)
            .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let pca = pca_project(&points, 2).unwrap();
        let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j] as f64).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| points.iter().map(|p| (p[a] as f64 - mean[a]) * (p[b] as f64 - mean[b])).sum::<f64>() / n as f64)
                    .collect()
            })
            .collect();
        let ev = jacobi_eigenvalues(cov);
        for k in 0..2 {
            assert!((pca.explained_variance[k] - ev[k]).abs() < 1e-6, "{} vs {}", pca.explained_variance[k], ev[k]);
        }
        for (i, c) in pca.coords.iter().enumerate() {
            let proj: f64 = (0..d).map(|j| pca.components[0][j] * (points[i][j] as f64 - mean[j])).sum();
            assert!((c[0] - proj).abs() < 1e-9);
        }
    }
}
