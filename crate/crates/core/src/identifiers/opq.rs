//! Optimized product quantization: alternate per-subspace k-means on the
//! rotated data with an orthogonal Procrustes update of the rotation. Codes
//! factorize across subspaces, so tokens carry no cross-level dependence.

use nalgebra::DMatrix;

use crate::identifiers::codebook::{
    apply_rotation, Codebook, Quantizer, TrainStats, CODEBOOK_FORMAT_VERSION,
};
use crate::identifiers::kmeans::{lloyd_iterate, lloyd_kmeans};
use crate::identifiers::rq::TrainedCodebook;
use crate::{derive_seed, Error, Result};

const INNER_MAX_ITER: usize = 25;
const TOL: f64 = 1e-8;

pub fn train_opq(
    embeddings: &[Vec<f64>],
    m: usize,
    k: usize,
    seed: u64,
    outer_iters: usize,
) -> Result<TrainedCodebook> {
    if embeddings.is_empty() {
        return Err(Error::Quantizer("opq needs training embeddings".into()));
    }
    let dim = embeddings[0].len();
    if m == 0 || dim % m != 0 {
        return Err(Error::Quantizer(format!(
            "dimension {dim} not divisible into {m} subspaces"
        )));
    }
    if k < 2 {
        return Err(Error::Quantizer("opq needs k >= 2".into()));
    }
    if k > embeddings.len() {
        return Err(Error::Quantizer(format!(
            "k = {k} exceeds point count {}",
            embeddings.len()
        )));
    }
    let ds = dim / m;
    let n = embeddings.len();

    let mut rotation: Vec<Vec<f64>> = identity(dim);
    let mut subspaces: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut codes: Vec<Vec<usize>> = vec![vec![0; m]; n];
    let mut distortion_trace = Vec::with_capacity(outer_iters.max(1));
    let mut iterations = 0;

    for outer in 0..outer_iters.max(1) {
        let rotated: Vec<Vec<f64>> = embeddings.iter().map(|v| apply_rotation(&rotation, v)).collect();

        let mut distortion = 0.0;
        for s in 0..m {
            let chunk: Vec<Vec<f64>> = rotated.iter().map(|z| z[s * ds..(s + 1) * ds].to_vec()).collect();
            let result = if outer == 0 {
                lloyd_kmeans(
                    &chunk,
                    k,
                    derive_seed(seed, &format!("opq-subspace-{s}")),
                    INNER_MAX_ITER,
                    TOL,
                )?
            } else {
                // Warm start: continuing from the previous centroids keeps
                // the total distortion non-increasing across outer rounds.
                lloyd_iterate(&chunk, subspaces[s].clone(), INNER_MAX_ITER, TOL)
            };
            for (i, &j) in result.assignments.iter().enumerate() {
                codes[i][s] = j;
            }
            distortion += result.objective;
            iterations += result.iterations;
            if outer == 0 {
                subspaces.push(result.centroids);
            } else {
                subspaces[s] = result.centroids;
            }
        }
        distortion_trace.push(distortion);

        if outer + 1 < outer_iters {
            // Reconstructions under the current assignment.
            let mut recon = vec![vec![0.0; dim]; n];
            for (i, code) in codes.iter().enumerate() {
                for (s, &j) in code.iter().enumerate() {
                    recon[i][s * ds..(s + 1) * ds].copy_from_slice(&subspaces[s][j]);
                }
            }
            rotation = procrustes_rotation(embeddings, &recon, dim);
        }
    }

    let objective = *distortion_trace.last().unwrap();
    Ok(TrainedCodebook {
        codebook: Codebook {
            format_version: CODEBOOK_FORMAT_VERSION,
            dim,
            k,
            levels: m,
            quantizer: Quantizer::Opq {
                rotation,
                subspaces,
                distortion_trace,
            },
            train_stats: TrainStats {
                objective,
                iterations,
            },
        },
        codes,
    })
}

/// Orthogonal R minimizing sum ||R x_i - y_i||^2: R = V U^T from the SVD
/// U S V^T of M = sum x_i y_i^T.
fn procrustes_rotation(xs: &[Vec<f64>], ys: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (x, y) in xs.iter().zip(ys) {
        for r in 0..dim {
            for c in 0..dim {
                m[(r, c)] += x[r] * y[c];
            }
        }
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    // R = V * U^T.
    let r = vt.transpose() * u.transpose();
    (0..dim)
        .map(|i| (0..dim).map(|j| r[(i, j)]).collect())
        .collect()
}

fn identity(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}
