use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f32>>,
    /// Cluster of each input point. Labels are ordered by each cluster's
    /// lowest point index, so label 0 holds point 0.
    pub assignment: Vec<usize>,
}

pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f32], centroids: &[Vec<f32>]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct_count(points: &[&[f32]]) -> usize {
    let mut keys: Vec<Vec<u32>> = points.iter().map(|p| p.iter().map(|x| x.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Seeded k-means++ followed by Lloyd iterations. `k` is capped at the
/// number of distinct points, so the result may hold fewer clusters.
pub fn kmeans(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    assert!(!points.is_empty(), "kmeans needs at least one point");
    let k = k.min(distinct_count(points)).max(1);
    let mut centroids = init_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];

    for _ in 0..MAX_ITERATIONS {
        let next: Vec<(usize, f32)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next.iter().zip(&assignment).any(|(n, a)| n.0 != *a);
        assignment = next.iter().map(|n| n.0).collect();
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += *x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..points.len())
                    .max_by(|&i, &j| next[i].1.total_cmp(&next[j].1).then(j.cmp(&i)))
                    .expect("nonempty");
                centroids[c] = points[far].to_vec();
                continue;
            }
            centroids[c] = sums[c].iter().map(|s| (*s / counts[c] as f64) as f32).collect();
        }
    }
    relabel(centroids, assignment)
}

fn init_plus_plus(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f32> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().map(|&d| d as f64).sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d as f64 {
                    idx = i;
                    break;
                }
                target -= d as f64;
            }
            // rounding can land on an already-chosen point; take the farthest instead
            if d2[idx] == 0.0 {
                idx = (0..points.len()).max_by(|&i, &j| d2[i].total_cmp(&d2[j])).expect("nonempty");
            }
            idx
        } else {
            break;
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn relabel(centroids: Vec<Vec<f32>>, assignment: Vec<usize>) -> Clustering {
    let mut first_seen = vec![usize::MAX; centroids.len()];
    for (i, &c) in assignment.iter().enumerate() {
        first_seen[c] = first_seen[c].min(i);
    }
    let mut order: Vec<usize> = (0..centroids.len()).filter(|&c| first_seen[c] != usize::MAX).collect();
    order.sort_by_key(|&c| first_seen[c]);
    let mut new_label = vec![usize::MAX; centroids.len()];
    for (new, &old) in order.iter().enumerate() {
        new_label[old] = new;
    }
    Clustering {
        centroids: order.iter().map(|&c| centroids[c].clone()).collect(),
        assignment: assignment.into_iter().map(|c| new_label[c]).collect(),
    }
}
