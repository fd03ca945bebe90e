//! Balanced k-means tree: every node splits its points into groups whose
//! sizes differ by at most one, via capacity-constrained nearest-centroid
//! assignment. An item's code is its root-to-leaf branch path.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::identifiers::codebook::{
    BkmBranch, BkmNode, Codebook, Quantizer, TrainStats, CODEBOOK_FORMAT_VERSION, PAD_CODE,
};
use crate::identifiers::kmeans::{kmeans_pp_init, squared_distance};
use crate::identifiers::rq::TrainedCodebook;
use crate::{derive_seed, Error, Result};

const MAX_BALANCE_ITERS: usize = 12;

pub fn train_bkm(
    embeddings: &[Vec<f64>],
    depth: usize,
    k: usize,
    seed: u64,
) -> Result<TrainedCodebook> {
    if depth < 1 {
        return Err(Error::Quantizer("bkm needs depth >= 1".into()));
    }
    if k < 2 {
        return Err(Error::Quantizer("bkm needs k >= 2".into()));
    }
    if embeddings.is_empty() {
        return Err(Error::Quantizer("bkm needs training embeddings".into()));
    }
    let dim = embeddings[0].len();
    let mut builder = TreeBuilder {
        embeddings,
        k,
        seed,
        nodes: Vec::new(),
        codes: vec![Vec::with_capacity(depth); embeddings.len()],
        objective: 0.0,
        iterations: 0,
    };
    let all: Vec<usize> = (0..embeddings.len()).collect();
    builder.build_node(&all, depth);
    for code in &mut builder.codes {
        while code.len() < depth {
            code.push(PAD_CODE);
        }
    }
    let TreeBuilder {
        nodes,
        codes,
        objective,
        iterations,
        ..
    } = builder;
    Ok(TrainedCodebook {
        codebook: Codebook {
            format_version: CODEBOOK_FORMAT_VERSION,
            dim,
            k,
            levels: depth,
            quantizer: Quantizer::Bkm { nodes, depth },
            train_stats: TrainStats {
                objective,
                iterations,
            },
        },
        codes,
    })
}

struct TreeBuilder<'a> {
    embeddings: &'a [Vec<f64>],
    k: usize,
    seed: u64,
    nodes: Vec<BkmNode>,
    codes: Vec<Vec<usize>>,
    objective: f64,
    iterations: usize,
}

impl TreeBuilder<'_> {
    fn build_node(&mut self, members: &[usize], depth_left: usize) -> usize {
        let node_idx = self.nodes.len();
        self.nodes.push(BkmNode {
            branches: Vec::new(),
        });

        let groups = if members.len() <= self.k {
            // Fewer points than branches: singletons, sizes {1, .., 1}.
            members.iter().map(|&p| vec![p]).collect::<Vec<_>>()
        } else {
            self.balanced_groups(members, node_idx)
        };

        let mut branches = Vec::with_capacity(groups.len());
        for (branch_idx, group) in groups.iter().enumerate() {
            let centroid = mean_of(self.embeddings, group);
            for &p in group {
                self.codes[p].push(branch_idx);
            }
            let child = if depth_left > 1 && group.len() >= 2 {
                Some(self.build_node(group, depth_left - 1))
            } else {
                // Leaf: account the reconstruction error here.
                for &p in group {
                    self.objective += squared_distance(&self.embeddings[p], &centroid);
                }
                None
            };
            branches.push(BkmBranch {
                centroid,
                child,
                train_size: group.len(),
            });
        }
        self.nodes[node_idx].branches = branches;
        node_idx
    }

    /// Split `members` into k groups with sizes differing by at most one:
    /// greedy assignment over globally sorted (distance, point, branch)
    /// triples under per-branch quotas, alternated with centroid updates.
    fn balanced_groups(&mut self, members: &[usize], node_idx: usize) -> Vec<Vec<usize>> {
        let n = members.len();
        let k = self.k;
        let base = n / k;
        let extra = n % k;
        let points: Vec<&Vec<f64>> = members.iter().map(|&p| &self.embeddings[p]).collect();
        let owned: Vec<Vec<f64>> = points.iter().map(|p| (*p).clone()).collect();
        let mut rng =
            ChaCha20Rng::seed_from_u64(derive_seed(self.seed, &format!("bkm-node-{node_idx}")));
        let mut centroids = kmeans_pp_init(&owned, k, &mut rng);
        let mut assignment: Vec<usize> = vec![0; n];

        for _ in 0..MAX_BALANCE_ITERS {
            self.iterations += 1;
            let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k);
            for (i, p) in points.iter().enumerate() {
                for (b, c) in centroids.iter().enumerate() {
                    pairs.push((squared_distance(p, c), i, b));
                }
            }
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());

            let mut next = vec![usize::MAX; n];
            let mut counts = vec![0usize; k];
            let mut extras_used = 0usize;
            let mut placed = 0usize;
            for &(_, i, b) in &pairs {
                if next[i] != usize::MAX {
                    continue;
                }
                let open = counts[b] < base || (counts[b] == base && extras_used < extra);
                if open {
                    if counts[b] == base {
                        extras_used += 1;
                    }
                    counts[b] += 1;
                    next[i] = b;
                    placed += 1;
                    if placed == n {
                        break;
                    }
                }
            }
            debug_assert_eq!(placed, n);

            for (b, centroid) in centroids.iter_mut().enumerate() {
                let group: Vec<usize> = (0..n).filter(|&i| next[i] == b).map(|i| members[i]).collect();
                if !group.is_empty() {
                    *centroid = mean_of(self.embeddings, &group);
                }
            }
            if next == assignment {
                break;
            }
            assignment = next;
        }

        let mut groups = vec![Vec::new(); k];
        for (i, &b) in assignment.iter().enumerate() {
            groups[b].push(members[i]);
        }
        groups
    }
}

fn mean_of(embeddings: &[Vec<f64>], group: &[usize]) -> Vec<f64> {
    let dim = embeddings[group[0]].len();
    let mut m = vec![0.0; dim];
    for &p in group {
        for (a, b) in m.iter_mut().zip(&embeddings[p]) {
            *a += b;
        }
    }
    for a in &mut m {
        *a /= group.len() as f64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn four_points_split_two_and_two() {
        let data = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let trained = train_bkm(&data, 1, 2, 1).unwrap();
        if let Quantizer::Bkm { nodes, .. } = &trained.codebook.quantizer {
            let sizes: Vec<usize> = nodes[0].branches.iter().map(|b| b.train_size).collect();
            assert_eq!(sizes, vec![2, 2]);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn nine_points_split_five_and_four() {
        let data: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let trained = train_bkm(&data, 1, 2, 4).unwrap();
        if let Quantizer::Bkm { nodes, .. } = &trained.codebook.quantizer {
            let mut sizes: Vec<usize> = nodes[0].branches.iter().map(|b| b.train_size).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![4, 5]);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn separated_pairs_land_in_distinct_cells() {
        // Four well-separated pairs; depth 2, branching 2 puts each pair in
        // its own leaf cell, so the path codes form 4 groups of 2.
        let mut data = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (0.0, 50.0), (50.0, 0.0), (50.0, 50.0)] {
            data.push(vec![cx + 0.1, cy]);
            data.push(vec![cx - 0.1, cy]);
        }
        let trained = train_bkm(&data, 2, 2, 7).unwrap();
        let mut cells: std::collections::BTreeMap<Vec<usize>, Vec<usize>> = Default::default();
        for (i, code) in trained.codes.iter().enumerate() {
            cells.entry(code.clone()).or_default().push(i);
        }
        assert_eq!(cells.len(), 4, "expected 4 leaf cells, got {cells:?}");
        for members in cells.values() {
            assert_eq!(members.len(), 2);
            // Pair mates are consecutive indices by construction.
            assert_eq!(members[0] / 2, members[1] / 2);
        }
    }

    #[test]
    fn fewer_points_than_branching_yields_singletons() {
        let data = vec![vec![1.0], vec![2.0], vec![3.0]];
        let trained = train_bkm(&data, 2, 5, 3).unwrap();
        if let Quantizer::Bkm { nodes, .. } = &trained.codebook.quantizer {
            assert_eq!(nodes[0].branches.len(), 3);
            for b in &nodes[0].branches {
                assert_eq!(b.train_size, 1);
                assert!(b.child.is_none());
            }
        } else {
            unreachable!()
        }
        // Codes padded to depth with the reserved sentinel.
        for code in &trained.codes {
            assert_eq!(code.len(), 2);
            assert_eq!(code[1], PAD_CODE);
        }
    }

    #[test]
    fn balance_holds_on_random_data() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..137)
            .map(|_| (0..6).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let trained = train_bkm(&data, 3, 4, 2).unwrap();
        assert!(trained.codebook.validate().is_empty());
    }
}
