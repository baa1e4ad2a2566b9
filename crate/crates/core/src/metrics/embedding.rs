//! Context-embedding geometry: separation statistics and PCA coordinates.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::model::Evf;
use crate::pushworld::DatasetFile;
use crate::training::sample_support_set;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub object_id: u32,
    pub draw: usize,
    pub mean: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationStats {
    /// Mean distance over same-object pairs.
    pub intra: f64,
    /// Mean distance over different-object pairs.
    pub inter: f64,
    pub silhouette: f64,
}

impl SeparationStats {
    /// `inter / intra`; infinite when draws of each object coincide.
    pub fn ratio(&self) -> f64 {
        if self.intra > 0.0 {
            self.inter / self.intra
        } else if self.inter > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "intra: {:.6}\ninter: {:.6}\nratio: {:.4}\nsilhouette: {:.6}\n",
            self.intra,
            self.inter,
            self.ratio(),
            self.silhouette
        )
    }
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Intra/inter distances and the silhouette score. A point whose
/// intra- and nearest-cluster distances are both zero scores 0.
pub fn separation_stats(points: &[EmbeddingPoint]) -> Result<SeparationStats> {
    let mut ids: Vec<u32> = points.iter().map(|p| p.object_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(invalid("separation needs at least two objects"));
    }
    for &id in &ids {
        if points.iter().filter(|p| p.object_id == id).count() < 2 {
            return Err(invalid(format!("object {id} has fewer than two embedding draws")));
        }
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d = dist(&p.mean, &q.mean);
            if p.object_id == q.object_id {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let mut sil = 0.0;
    for p in points {
        let mut per_cluster: Vec<(f64, usize)> = vec![(0.0, 0); ids.len()];
        for q in points {
            if std::ptr::eq(p, q) {
                continue;
            }
            let c = ids.binary_search(&q.object_id).expect("id collected above");
            per_cluster[c].0 += dist(&p.mean, &q.mean);
            per_cluster[c].1 += 1;
        }
        let own = ids.binary_search(&p.object_id).expect("id collected above");
        let a = per_cluster[own].0 / per_cluster[own].1 as f64;
        let b = per_cluster
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != own)
            .map(|(_, &(s, n))| s / n as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            sil += (b - a) / m;
        }
    }
    Ok(SeparationStats {
        intra: intra / n_intra as f64,
        inter: inter / n_inter as f64,
        silhouette: sil / points.len() as f64,
    })
}

/// Posterior means of `c` for `draws` independent support sets per object.
/// Draws are seeded by object id, so the result does not depend on order.
pub fn context_embeddings(evf: &Evf, datasets: &[DatasetFile], draws: usize, support_size: usize, seed: u64) -> Result<Vec<EmbeddingPoint>> {
    let mut out = Vec::with_capacity(datasets.len() * draws);
    for ds in datasets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ds.object_id as u64 + 1);
        for draw in 0..draws {
            let s = sample_support_set(ds, support_size, &mut rng)?;
            let (mean, _) = evf.context_posterior(&s.support)?;
            out.push(EmbeddingPoint {
                object_id: ds.object_id,
                draw,
                mean,
            });
        }
    }
    Ok(out)
}

pub fn embedding_separation(
    evf: &Evf,
    datasets: &[DatasetFile],
    draws: usize,
    support_size: usize,
    seed: u64,
) -> Result<(Vec<EmbeddingPoint>, SeparationStats)> {
    if datasets.len() < 2 || draws < 2 {
        return Err(invalid("separation needs at least two objects and two draws each"));
    }
    let points = context_embeddings(evf, datasets, draws, support_size, seed)?;
    let stats = separation_stats(&points)?;
    Ok((points, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// One row of `dims` coordinates per input point.
    pub coords: Vec<Vec<f64>>,
    /// Unit principal axes, one per output dimension.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis (eigenvalues of the covariance).
    pub explained_variance: Vec<f64>,
}

/// Projects onto the top `dims` principal components. Each axis is signed so
/// its largest-magnitude entry is positive; axes beyond the data dimension
/// are zero.
pub fn pca_project(points: &[Vec<f32>], dims: usize) -> Result<Pca> {
    if dims == 0 || points.len() < dims {
        return Err(invalid(format!("PCA to {dims} dims needs at least {dims} points")));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(invalid("PCA points must share a positive dimension"));
    }
    let n = points.len();
    let mut centroid = vec![0.0f64; d];
    for p in points {
        for (c, &x) in centroid.iter_mut().zip(p) {
            *c += x as f64;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] as f64 - centroid[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(dims);
    let mut explained = Vec::with_capacity(dims);
    for k in 0..dims {
        match order.get(k) {
            Some(&j) => {
                let mut axis: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
                let lead = axis.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if lead < 0.0 {
                    axis.iter_mut().for_each(|x| *x = -*x);
                }
                components.push(axis);
                explained.push(eig.eigenvalues[j].max(0.0));
            }
            None => {
                components.push(vec![0.0; d]);
                explained.push(0.0);
            }
        }
    }
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|axis| axis.iter().enumerate().map(|(j, a)| a * centered[(i, j)]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        coords,
        components,
        explained_variance: explained,
    })
}

/// CSV `object_id,draw,x,y` of a 2-D projection.
pub fn pca_csv(points: &[EmbeddingPoint], pca: &Pca) -> String {
    let mut s = String::from("object_id,draw,x,y\n");
    for (p, c) in points.iter().zip(&pca.coords) {
        let x = c.first().copied().unwrap_or(0.0);
        let y = c.get(1).copied().unwrap_or(0.0);
        let _ = writeln!(s, "{},{},{},{}", p.object_id, p.draw, x, y);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: u32, draw: usize, mean: Vec<f32>) -> EmbeddingPoint {
        EmbeddingPoint { object_id: id, draw, mean }
    }

    #[test]
    fn degenerate_embeddings() {
        let pts: Vec<_> = (0..6).map(|i| pt(i / 3, i as usize % 3, vec![0.5, -1.0])).collect();
        let s = separation_stats(&pts).unwrap();
        assert_eq!((s.intra, s.inter, s.silhouette), (0.0, 0.0, 0.0));
    }

    #[test]
    fn well_separated_clusters() {
        let pts = vec![
            pt(0, 0, vec![0.0]),
            pt(0, 1, vec![0.1]),
            pt(1, 0, vec![5.0]),
            pt(1, 1, vec![5.1]),
        ];
        let s = separation_stats(&pts).unwrap();
        assert!((s.intra - 0.1).abs() < 1e-6);
        assert!(s.silhouette > 0.95);
        assert!(s.ratio() > 40.0);
    }

    #[test]
    fn single_object_rejected() {
        let pts = vec![pt(0, 0, vec![0.0]), pt(0, 1, vec![1.0])];
        assert!(separation_stats(&pts).is_err());
    }

    #[test]
    fn collinear_points_have_zero_second_coordinate() {
        let pts: Vec<Vec<f32>> = (0..7).map(|i| vec![i as f32, 2.0 * i as f32, -(i as f32)]).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-6));
    }

    #[test]
    fn two_dim_projection_preserves_distances() {
        let pts: Vec<Vec<f32>> = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-3.0, 0.5], vec![2.0, -1.0]];
        let p = pca_project(&pts, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let a = dist(&pts[i], &pts[j]);
                let b = ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pads_missing_dimensions() {
        let pts = vec![vec![0.0f32], vec![1.0], vec![3.0]];
        let p = pca_project(&pts, 2).unwrap();
        assert_eq!(p.explained_variance[1], 0.0);
        assert!(p.coords.iter().all(|c| c[1] == 0.0));
    }

    #[test]
    fn sign_convention() {
        let pts: Vec<Vec<f32>> = (0..5).map(|i| vec![-(i as f32), 0.1 * (i % 2) as f32]).collect();
        let p = pca_project(&pts, 1).unwrap();
        let axis = &p.components[0];
        let lead = axis.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
    }
}
