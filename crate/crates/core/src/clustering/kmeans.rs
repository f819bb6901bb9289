use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterError;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Mean squared distance to the nearest centroid after each epoch.
    pub epoch_inertia: Vec<f64>,
    /// Clusters re-seeded because they ended up empty.
    pub reseeded: usize,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its distance.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq_dist(cent, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn assign(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (c, d) = nearest(centroids, p);
            total += d;
            c
        })
        .collect();
    (labels, total)
}

/// k-means++ seeding.
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Mini-batch k-means with per-centre learning rate `1 / count`.
///
/// Each epoch visits a fresh permutation of the points in batches of
/// `batch`; `iters` counts batches. After the last batch points are
/// assigned to their nearest centroid and every empty cluster is re-seeded
/// at the point farthest from its centroid.
pub fn minibatch_kmeans(points: &[Vec<f64>], k: usize, batch: usize, iters: usize, seed: u64) -> Result<KMeans, ClusterError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(ClusterError::Invalid(format!("k = {k} with {n} points")));
    }
    if batch == 0 {
        return Err(ClusterError::Invalid("batch must be positive".into()));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut counts = vec![0u64; k];
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut epoch_inertia = Vec::new();
    let batches_per_epoch = n.div_ceil(batch);
    let mut cached = Vec::with_capacity(batch);
    for it in 0..iters {
        if cursor >= n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch).min(n);
        let idx = &order[cursor..end];
        cursor = end;
        cached.clear();
        cached.extend(idx.iter().map(|&i| nearest(&centroids, &points[i]).0));
        for (&i, &c) in idx.iter().zip(&cached) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (a, &x) in centroids[c].iter_mut().zip(&points[i]) {
                *a = (1.0 - eta) * *a + eta * x;
            }
        }
        if (it + 1) % batches_per_epoch == 0 {
            epoch_inertia.push(assign(&centroids, points).1 / n as f64);
        }
    }
    let (mut labels, mut inertia) = assign(&centroids, points);
    let mut reseeded = 0;
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let (far, dist) = (0..n)
            .map(|i| (i, sq_dist(&points[i], &centroids[labels[i]])))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if dist <= 0.0 {
            break;
        }
        centroids[empty] = points[far].clone();
        reseeded += 1;
        (labels, inertia) = assign(&centroids, points);
    }
    Ok(KMeans {
        centroids,
        labels,
        inertia,
        epoch_inertia,
        reseeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = minibatch_kmeans(&pts, 1, 10, 1, 0).unwrap();
        assert!((km.centroids[0][0] - 4.5).abs() < 1e-12);
        assert!((km.centroids[0][1] - 28.5).abs() < 1e-12);
    }

    #[test]
    fn identical_points_have_zero_inertia() {
        let pts = vec![vec![1.0, 2.0]; 20];
        let km = minibatch_kmeans(&pts, 3, 5, 20, 1).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert!(km.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn rejects_bad_arguments() {
        let pts = vec![vec![0.0]; 3];
        assert!(minibatch_kmeans(&pts, 4, 1, 1, 0).is_err());
        assert!(minibatch_kmeans(&pts, 1, 0, 1, 0).is_err());
    }
}
