//! Brute-force reference implementations.

use std::collections::BTreeSet;

use pamcurate::WindowId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{spec_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LloydReference {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

fn closest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Textbook Lloyd iteration in `f64` with k-means++ seeding. Stops when
/// the assignment no longer changes or after `max_iter` rounds. An empty
/// cluster keeps its previous centroid.
pub fn lloyd_reference(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<LloydReference> {
    if k == 0 {
        return spec_err("k must be positive");
    }
    if points.len() < k {
        return spec_err(format!("{} points cannot form {k} clusters", points.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = closest(p, &centroids);
            objective += d;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        history.push(objective);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &j) in points.iter().zip(&labels) {
            sizes[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / sizes[j] as f64).collect();
            }
        }
    }
    Ok(LloydReference {
        centroids,
        labels,
        objective_history: history,
        iterations,
    })
}

/// Unit vector in the same arithmetic the pipeline uses: `f64` sum of
/// squares in index order, then each component divided and rounded to `f32`.
fn unit(v: &[f32]) -> Vec<f32> {
    let mut acc = 0.0f64;
    for &x in v {
        acc += (x as f64) * (x as f64);
    }
    let norm = acc.sqrt();
    v.iter().map(|&x| (x as f64 / norm) as f32).collect()
}

fn dist2_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc
}

/// Exact per-leaf selection: every record is normalized and assigned to
/// its nearest leaf centroid (lowest index on ties); each leaf then keeps
/// its `quotas[leaf]` closest records, ties broken by smaller window id.
pub fn exact_topn_per_cluster(
    records: &[(WindowId, Vec<f32>)],
    leaf_centroids: &[Vec<f32>],
    quotas: &[u64],
) -> BTreeSet<WindowId> {
    assert_eq!(leaf_centroids.len(), quotas.len());
    let mut buckets: Vec<Vec<(f64, WindowId)>> = vec![Vec::new(); quotas.len()];
    for (id, v) in records {
        let u = unit(v);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in leaf_centroids.iter().enumerate() {
            let d = dist2_f32(&u, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        buckets[best].push((best_d.sqrt(), *id));
    }
    let mut out = BTreeSet::new();
    for (bucket, &q) in buckets.iter_mut().zip(quotas) {
        bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(bucket.iter().take(q as usize).map(|&(_, id)| id));
    }
    out
}

/// Discrete power-law exponent estimate over counts `>= xmin`:
/// `1 + n / sum(ln(x / (xmin - 1/2)))`.
pub fn tail_exponent_mle(counts: &[u64], xmin: u64) -> f64 {
    let shift = xmin as f64 - 0.5;
    let tail: Vec<f64> = counts.iter().filter(|&&c| c >= xmin).map(|&c| c as f64).collect();
    let s: f64 = tail.iter().map(|x| (x / shift).ln()).sum();
    1.0 + tail.len() as f64 / s
}

/// Knee of a continuous descending curve `f` on `[0, ranks - 1]`, found by
/// evaluating the normalized distance to the chord on a grid of `grid`
/// points and rounding the maximizer to the nearest rank.
pub fn dense_knee_rank(f: impl Fn(f64) -> f64, ranks: usize, grid: usize) -> usize {
    let last = (ranks - 1) as f64;
    let (hi, lo) = (f(0.0), f(last));
    let mut best = (0.0, f64::NEG_INFINITY);
    for g in 0..grid {
        let x = last * g as f64 / (grid - 1) as f64;
        let chord = 1.0 - x / last;
        let y = (f(x) - lo) / (hi - lo);
        let gap = chord - y;
        if gap > best.1 {
            best = (x, gap);
        }
    }
    best.0.round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = [[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]];
        (0..300)
            .map(|i| {
                let c = centers[i % 3];
                vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]
            })
            .collect()
    }

    #[test]
    fn lloyd_objective_never_increases() {
        for seed in 0..20 {
            let r = lloyd_reference(&blobs(), 4, 100, seed).unwrap();
            for w in r.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.objective_history);
            }
        }
    }

    #[test]
    fn lloyd_recovers_blobs() {
        let r = lloyd_reference(&blobs(), 3, 100, 1).unwrap();
        let mut xs: Vec<_> = r.centroids.iter().map(|c| (c[0].round(), c[1].round())).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, vec![(-5.0, 5.0), (0.0, 0.0), (5.0, 5.0)]);
    }

    #[test]
    fn lloyd_needs_enough_points() {
        assert!(lloyd_reference(&blobs()[..2], 3, 10, 0).is_err());
        assert!(lloyd_reference(&blobs(), 0, 10, 0).is_err());
    }

    #[test]
    fn topn_by_hand() {
        let recs = vec![
            (WindowId(1), vec![1.0, 0.0]),
            (WindowId(2), vec![2.0, 0.1]),
            (WindowId(3), vec![0.0, 3.0]),
            (WindowId(4), vec![0.1, 1.0]),
            (WindowId(5), vec![5.0, 0.0]),
        ];
        let leaves = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let got = exact_topn_per_cluster(&recs, &leaves, &[2, 1]);
        // 1 and 5 are exactly on leaf 0 and beat 2; 3 beats 4 on leaf 1
        assert_eq!(got, [1, 5, 3].into_iter().map(WindowId).collect());
    }

    #[test]
    fn mle_on_exact_geometric_sum() {
        // all mass at xmin gives ln(xmin / (xmin - 1/2)) per point
        let a = tail_exponent_mle(&[10; 50], 10);
        assert!((a - (1.0 + 1.0 / (10.0f64 / 9.5).ln())).abs() < 1e-9);
    }

    #[test]
    fn dense_knee_of_hyperbola() {
        // 1/(x+1) normalized: maximum gap where (x+1)^2 = (n-1) / (1 - 1/n)
        let r = dense_knee_rank(|x| 1e4 / (x + 1.0), 1000, 200_001);
        let expect = (999.0f64 / 0.999).sqrt() - 1.0;
        assert!((r as f64 - expect).abs() <= 1.0, "{r} vs {expect}");
    }
}
