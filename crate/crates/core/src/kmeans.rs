//! Mini-batch k-means with k-means++ seeding.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::sq_dist;

pub(crate) struct KMeansFit {
    /// Row-major `k x d`.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
}

fn nearest(point: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.chunks(d).enumerate() {
        let dist = sq_dist(point, centre);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn kmeans_pp(points: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / d;
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut chosen = vec![rng.random_range(0..n)];
    let mut centroids = row(chosen[0]).to_vec();
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // Fewer distinct points than centres: take any unused row.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        centroids.extend_from_slice(row(next));
        let c = row(next).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, v)| {
            let nd = sq_dist(row(i), &c);
            if nd < *v {
                *v = nd;
            }
        });
    }
    centroids
}

/// Fits `k` clusters to `points` (row-major, `d` columns). Every cluster ends
/// up non-empty when there are at least `k` rows.
pub(crate) fn mini_batch_kmeans(
    points: &[f64],
    d: usize,
    k: usize,
    batch_size: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> KMeansFit {
    let n = points.len() / d;
    assert!(k >= 1 && n >= k, "need at least k rows");
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut centroids = kmeans_pp(points, d, k, rng);
    let mut counts = vec![0usize; k];
    let batch_size = batch_size.min(n);
    if k > 1 {
        for _ in 0..max_iter {
            let batch = index::sample(rng, n, batch_size).into_vec();
            let assigned: Vec<usize> = batch
                .par_iter()
                .map(|&i| nearest(row(i), &centroids, d).0)
                .collect();
            for (&i, &c) in batch.iter().zip(&assigned) {
                counts[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                let x = row(i);
                for (cv, xv) in centroids[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *cv += eta * (xv - *cv);
                }
            }
        }
    }
    let mut assigned: Vec<(usize, f64)> = (0..n).into_par_iter().map(|i| nearest(row(i), &centroids, d)).collect();

    // Re-seed empty clusters with the worst-fit point of a cluster that can spare one.
    let mut sizes = vec![0usize; k];
    for &(c, _) in &assigned {
        sizes[c] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let donor = (0..n)
            .filter(|&i| sizes[assigned[i].0] > 1)
            .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
            .expect("n >= k leaves a donor");
        sizes[assigned[donor].0] -= 1;
        sizes[c] = 1;
        assigned[donor] = (c, 0.0);
        centroids[c * d..(c + 1) * d].copy_from_slice(row(donor));
    }

    let labels: Vec<usize> = assigned.into_iter().map(|(c, _)| c).collect();
    let mut sums = vec![0.0; k * d];
    for (i, &c) in labels.iter().enumerate() {
        for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        for v in &mut sums[c * d..(c + 1) * d] {
            *v /= sizes[c] as f64;
        }
    }
    KMeansFit { centroids: sums, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;

    #[test]
    fn every_cluster_is_populated() {
        // Many duplicate points force the empty-cluster repair path.
        let mut pts = vec![0.0; 40];
        pts.extend_from_slice(&[5.0, 5.0, 6.0, 6.0]);
        let fit = mini_batch_kmeans(&pts, 2, 4, 8, 20, &mut keyed_rng(1, &[]));
        let mut seen = [false; 4];
        for &l in &fit.labels {
            seen[l] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [0.0, 2.0, 4.0];
        let fit = mini_batch_kmeans(&pts, 1, 1, 4, 10, &mut keyed_rng(1, &[]));
        assert_eq!(fit.labels, vec![0, 0, 0]);
        assert!((fit.centroids[0] - 2.0).abs() < 1e-12);
    }
}
