//! Trained quantizer state: residual levels, a balanced tree, or an OPQ
//! rotation with per-subspace centroids. A codebook encodes an embedding to a
//! fixed-length sequence of code indices; cold items reuse the frozen state.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::identifiers::kmeans::squared_distance;
use crate::{Error, Result};

pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// Sentinel code index for levels below an early leaf in the balanced tree;
/// maps to the reserved padding token.
pub const PAD_CODE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Rq,
    Bkm,
    Opq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    /// Final value of the scheme's training objective (sum of squared errors).
    pub objective: f64,
    pub iterations: usize,
}

/// One branch of a balanced-tree node: its centroid and an optional child
/// node for further splitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BkmBranch {
    pub centroid: Vec<f64>,
    pub child: Option<usize>,
    /// Number of training points routed through this branch.
    pub train_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BkmNode {
    pub branches: Vec<BkmBranch>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantizer {
    /// Residual quantization: level l holds K centroids over the residuals
    /// left by levels < l.
    Rq { levels: Vec<Vec<Vec<f64>>> },
    /// Balanced k-means tree; node 0 is the root.
    Bkm { nodes: Vec<BkmNode>, depth: usize },
    /// Optimized product quantization: rotation applied to the input, then
    /// independent centroids per subspace chunk.
    Opq {
        rotation: Vec<Vec<f64>>,
        subspaces: Vec<Vec<Vec<f64>>>,
        /// Total distortion after each outer alternation; non-increasing.
        distortion_trace: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub format_version: u32,
    pub dim: usize,
    /// Codes per level / subspace / branching factor.
    pub k: usize,
    /// Number of levels (rq), tree depth (bkm), or subspaces (opq).
    pub levels: usize,
    pub quantizer: Quantizer,
    pub train_stats: TrainStats,
}

impl Codebook {
    pub fn kind(&self) -> CodebookKind {
        match self.quantizer {
            Quantizer::Rq { .. } => CodebookKind::Rq,
            Quantizer::Bkm { .. } => CodebookKind::Bkm,
            Quantizer::Opq { .. } => CodebookKind::Opq,
        }
    }

    /// Code length every identifier of this codebook has (before any
    /// disambiguation suffix).
    pub fn code_len(&self) -> usize {
        self.levels
    }

    /// Quantize one embedding to per-level code indices. `PAD_CODE` fills
    /// levels below an early leaf of the balanced tree.
    pub fn encode_vector(&self, v: &[f64]) -> Result<Vec<usize>> {
        if v.len() != self.dim {
            return Err(Error::Quantizer(format!(
                "embedding dimension {} does not match codebook dimension {}",
                v.len(),
                self.dim
            )));
        }
        match &self.quantizer {
            Quantizer::Rq { levels } => {
                let mut residual = v.to_vec();
                let mut code = Vec::with_capacity(levels.len());
                for level in levels {
                    let j = nearest_index(&residual, level);
                    for (r, c) in residual.iter_mut().zip(&level[j]) {
                        *r -= c;
                    }
                    code.push(j);
                }
                Ok(code)
            }
            Quantizer::Bkm { nodes, depth } => {
                let mut code = Vec::with_capacity(*depth);
                let mut node = Some(0usize);
                while let Some(idx) = node {
                    let branches = &nodes[idx].branches;
                    let j = nearest_branch(v, branches);
                    code.push(j);
                    node = branches[j].child;
                }
                while code.len() < *depth {
                    code.push(PAD_CODE);
                }
                Ok(code)
            }
            Quantizer::Opq {
                rotation,
                subspaces,
                ..
            } => {
                let z = apply_rotation(rotation, v);
                let ds = self.dim / subspaces.len();
                let mut code = Vec::with_capacity(subspaces.len());
                for (s, centroids) in subspaces.iter().enumerate() {
                    let chunk = &z[s * ds..(s + 1) * ds];
                    code.push(nearest_index(chunk, centroids));
                }
                Ok(code)
            }
        }
    }

    /// Reconstruct the embedding a code stands for (sum of residual
    /// centroids, concatenation of subspace centroids under the inverse
    /// rotation, or the leaf centroid for the tree).
    pub fn reconstruct(&self, code: &[usize]) -> Result<Vec<f64>> {
        match &self.quantizer {
            Quantizer::Rq { levels } => {
                let mut out = vec![0.0; self.dim];
                for (level, &j) in levels.iter().zip(code) {
                    for (o, c) in out.iter_mut().zip(&level[j]) {
                        *o += c;
                    }
                }
                Ok(out)
            }
            Quantizer::Bkm { nodes, .. } => {
                let mut node = 0usize;
                let mut last = None;
                for &j in code {
                    if j == PAD_CODE {
                        break;
                    }
                    let branch = &nodes[node].branches[j];
                    last = Some(branch.centroid.clone());
                    match branch.child {
                        Some(next) => node = next,
                        None => break,
                    }
                }
                last.ok_or_else(|| Error::Quantizer("empty tree code".into()))
            }
            Quantizer::Opq {
                rotation,
                subspaces,
                ..
            } => {
                let ds = self.dim / subspaces.len();
                let mut z = vec![0.0; self.dim];
                for (s, (&j, centroids)) in code.iter().zip(subspaces).enumerate() {
                    z[s * ds..(s + 1) * ds].copy_from_slice(&centroids[j]);
                }
                // Rotation is orthogonal, so the inverse is the transpose.
                let mut out = vec![0.0; self.dim];
                for (r, row) in rotation.iter().enumerate() {
                    for (c, val) in row.iter().enumerate() {
                        out[c] += val * z[r];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Shape and orthogonality checks; violations as data.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        match &self.quantizer {
            Quantizer::Rq { levels } => {
                if levels.len() != self.levels {
                    violations.push("level count mismatch".into());
                }
                for (l, level) in levels.iter().enumerate() {
                    if level.len() != self.k {
                        violations.push(format!("level {l} has {} centroids", level.len()));
                    }
                    for c in level {
                        if c.len() != self.dim {
                            violations.push(format!("level {l} centroid dimension {}", c.len()));
                        }
                    }
                }
            }
            Quantizer::Bkm { nodes, depth } => {
                if *depth != self.levels {
                    violations.push("depth mismatch".into());
                }
                for (n, node) in nodes.iter().enumerate() {
                    if node.branches.is_empty() || node.branches.len() > self.k {
                        violations.push(format!("node {n} has {} branches", node.branches.len()));
                    }
                    let sizes: Vec<usize> = node.branches.iter().map(|b| b.train_size).collect();
                    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                    if hi - lo > 1 {
                        violations.push(format!("node {n} sizes unbalanced: {sizes:?}"));
                    }
                }
            }
            Quantizer::Opq {
                rotation,
                subspaces,
                ..
            } => {
                if subspaces.len() != self.levels {
                    violations.push("subspace count mismatch".into());
                }
                let err = rotation_orthogonality_error(rotation);
                if err > 1e-6 {
                    violations.push(format!("rotation orthogonality error {err:e}"));
                }
                let ds = self.dim / subspaces.len().max(1);
                for (s, centroids) in subspaces.iter().enumerate() {
                    if centroids.len() != self.k {
                        violations.push(format!("subspace {s} has {} centroids", centroids.len()));
                    }
                    for c in centroids {
                        if c.len() != ds {
                            violations.push(format!("subspace {s} centroid dimension {}", c.len()));
                        }
                    }
                }
            }
        }
        violations
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// SHA-256 over the serialized codebook; used to assert frozenness.
    pub fn digest(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json()?.as_bytes());
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

fn nearest_index(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = squared_distance(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn nearest_branch(point: &[f64], branches: &[BkmBranch]) -> usize {
    let mut best = 0;
    let mut best_d = squared_distance(point, &branches[0].centroid);
    for (j, b) in branches.iter().enumerate().skip(1) {
        let d = squared_distance(point, &b.centroid);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

pub fn apply_rotation(rotation: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rotation.len()];
    for (r, row) in rotation.iter().enumerate() {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        out[r] = acc;
    }
    out
}

/// Max-norm of R^T R - I.
pub fn rotation_orthogonality_error(rotation: &[Vec<f64>]) -> f64 {
    let d = rotation.len();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for row in rotation {
                acc += row[i] * row[j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
    }
    worst
}
