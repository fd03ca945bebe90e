//! Residual quantization: level l clusters the residuals left by levels < l,
//! so codes read coarse-to-fine and later tokens depend on earlier ones.

use crate::identifiers::codebook::{Codebook, Quantizer, TrainStats, CODEBOOK_FORMAT_VERSION};
use crate::identifiers::kmeans::lloyd_kmeans;
use crate::{derive_seed, Error, Result};

const MAX_ITER: usize = 60;
const TOL: f64 = 1e-7;

/// A trained codebook plus the codes it assigned to its training embeddings
/// (aligned with the input order).
#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub codebook: Codebook,
    pub codes: Vec<Vec<usize>>,
}

pub fn train_rq(
    embeddings: &[Vec<f64>],
    levels: usize,
    k: usize,
    seed: u64,
) -> Result<TrainedCodebook> {
    if levels < 1 {
        return Err(Error::Quantizer("rq needs at least one level".into()));
    }
    if k < 2 {
        return Err(Error::Quantizer("rq needs k >= 2".into()));
    }
    if embeddings.is_empty() {
        return Err(Error::Quantizer("rq needs training embeddings".into()));
    }
    let dim = embeddings[0].len();
    let mut residuals: Vec<Vec<f64>> = embeddings.to_vec();
    let mut level_centroids = Vec::with_capacity(levels);
    let mut codes: Vec<Vec<usize>> = vec![Vec::with_capacity(levels); embeddings.len()];
    let mut objective = 0.0;
    let mut iterations = 0;

    for level in 0..levels {
        let result = lloyd_kmeans(
            &residuals,
            k,
            derive_seed(seed, &format!("rq-level-{level}")),
            MAX_ITER,
            TOL,
        )?;
        for (i, &j) in result.assignments.iter().enumerate() {
            codes[i].push(j);
            for (r, c) in residuals[i].iter_mut().zip(&result.centroids[j]) {
                *r -= c;
            }
        }
        objective = result.objective;
        iterations += result.iterations;
        level_centroids.push(result.centroids);
    }

    Ok(TrainedCodebook {
        codebook: Codebook {
            format_version: CODEBOOK_FORMAT_VERSION,
            dim,
            k,
            levels,
            quantizer: Quantizer::Rq {
                levels: level_centroids,
            },
            train_stats: TrainStats {
                objective,
                iterations,
            },
        },
        codes,
    })
}

/// Mean squared reconstruction error of a codebook over a set of embeddings.
pub fn mean_squared_error(codebook: &Codebook, embeddings: &[Vec<f64>]) -> Result<f64> {
    let mut acc = 0.0;
    for v in embeddings {
        let code = codebook.encode_vector(v)?;
        let rec = codebook.reconstruct(&code)?;
        acc += crate::identifiers::kmeans::squared_distance(v, &rec);
    }
    Ok(acc / embeddings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn exact_centroid_data_quantizes_losslessly() {
        // Data = 4 distinct points, K = 4, L = 1: zero residual error.
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend(pts.iter().cloned());
        }
        let trained = train_rq(&data, 1, 4, 7).unwrap();
        assert!(mean_squared_error(&trained.codebook, &data).unwrap() < 1e-20);
    }

    #[test]
    fn second_level_collapses_when_level_one_is_exact() {
        let pts = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0], vec![4.0, 4.0]];
        let mut data = Vec::new();
        for _ in 0..8 {
            data.extend(pts.iter().cloned());
        }
        let trained = train_rq(&data, 2, 4, 3).unwrap();
        if let Quantizer::Rq { levels } = &trained.codebook.quantizer {
            for c in &levels[1] {
                let norm: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm < 1e-9, "level-2 centroid norm {norm}");
            }
        } else {
            unreachable!()
        }
    }

    #[test]
    fn more_levels_never_hurt() {
        let data = random_embeddings(300, 8, 11);
        let one = train_rq(&data, 1, 8, 5).unwrap();
        let two = train_rq(&data, 2, 8, 5).unwrap();
        let mse1 = mean_squared_error(&one.codebook, &data).unwrap();
        let mse2 = mean_squared_error(&two.codebook, &data).unwrap();
        assert!(
            mse2 <= mse1 + 1e-12,
            "residual energy grew: L=1 {mse1}, L=2 {mse2}"
        );
    }

    #[test]
    fn stored_codes_match_encode() {
        let data = random_embeddings(120, 6, 2);
        let trained = train_rq(&data, 3, 5, 9).unwrap();
        for (v, code) in data.iter().zip(&trained.codes) {
            assert_eq!(&trained.codebook.encode_vector(v).unwrap(), code);
        }
    }
}
