//! Lloyd k-means with k-means++ seeding: the shared kernel behind all three
//! quantizers.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::{Error, Result};

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Final sum of squared distances.
    pub objective: f64,
    /// Objective after each assignment pass; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// k-means++ seeding: first centroid uniform, the rest proportional to the
/// squared distance from the nearest chosen centroid.
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    assert!(k >= 1 && k <= points.len());
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..points.len());
    centroids.push(points[first].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with a centroid; any choice keeps
            // the objective at zero.
            d2.iter().position(|&w| w == 0.0).unwrap_or(0)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids until the relative objective
/// improvement drops below `tol` or `max_iter` passes run. Empty clusters are
/// re-seeded from the point currently farthest from its centroid.
pub fn lloyd_iterate(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> KmeansResult {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            objective += d;
        }
        trace.push(objective);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let j = assignments[i];
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed from the farthest point.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centroids[assignments[a]]);
                        let db = squared_distance(&points[b], &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[j] = points[far].clone();
            } else {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }

        let improved = prev_obj - objective;
        let converged = objective == 0.0
            || (prev_obj.is_finite() && improved <= tol * prev_obj.max(f64::MIN_POSITIVE));
        prev_obj = objective;
        if converged {
            break;
        }
    }

    // Final consistent assignment against the last centroid update.
    let mut objective = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, &centroids);
        assignments[i] = j;
        objective += d;
    }
    trace.push(objective);

    KmeansResult {
        centroids,
        assignments,
        objective,
        objective_trace: trace,
        iterations,
    }
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn lloyd_kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::Quantizer("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Quantizer(format!(
            "k = {k} exceeds point count {}",
            points.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(points, k, &mut rng);
    Ok(lloyd_iterate(points, init, max_iter, tol))
}
