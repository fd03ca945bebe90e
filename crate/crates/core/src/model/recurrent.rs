//! Single-layer gated recurrent network with exact hand-written
//! backpropagation through time.
//!
//! Cell convention:
//!   z = sigmoid(Wz x + Uz h + bz)          (update gate)
//!   r = sigmoid(Wr x + Ur h + br)          (reset gate)
//!   c = tanh(Wh x + Uh (r . h) + bh)       (candidate)
//!   h' = (1 - z) . h + z . c
//! with x the embedding of the consumed token and logits = Wo h' + bo.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::identifiers::TokenId;
use crate::model::{SequenceModel, LN_PROB_FLOOR};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Batch elements are processed in fixed chunks so the parallel gradient
/// reduction has a machine-independent summation order.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub emb: Vec<f64>,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Params {
    pub fn zeros(vocab: usize, hidden: usize) -> Self {
        Params {
            emb: vec![0.0; vocab * hidden],
            w_z: vec![0.0; hidden * hidden],
            w_r: vec![0.0; hidden * hidden],
            w_h: vec![0.0; hidden * hidden],
            u_z: vec![0.0; hidden * hidden],
            u_r: vec![0.0; hidden * hidden],
            u_h: vec![0.0; hidden * hidden],
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            w_out: vec![0.0; vocab * hidden],
            b_out: vec![0.0; vocab],
        }
    }

    pub const TENSOR_NAMES: [&'static str; 12] = [
        "emb", "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "w_out", "b_out",
    ];

    pub fn tensor(&self, name: &str) -> &Vec<f64> {
        match name {
            "emb" => &self.emb,
            "w_z" => &self.w_z,
            "w_r" => &self.w_r,
            "w_h" => &self.w_h,
            "u_z" => &self.u_z,
            "u_r" => &self.u_r,
            "u_h" => &self.u_h,
            "b_z" => &self.b_z,
            "b_r" => &self.b_r,
            "b_h" => &self.b_h,
            "w_out" => &self.w_out,
            "b_out" => &self.b_out,
            other => panic!("unknown tensor {other}"),
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "emb" => &mut self.emb,
            "w_z" => &mut self.w_z,
            "w_r" => &mut self.w_r,
            "w_h" => &mut self.w_h,
            "u_z" => &mut self.u_z,
            "u_r" => &mut self.u_r,
            "u_h" => &mut self.u_h,
            "b_z" => &mut self.b_z,
            "b_r" => &mut self.b_r,
            "b_h" => &mut self.b_h,
            "w_out" => &mut self.w_out,
            "b_out" => &mut self.b_out,
            other => panic!("unknown tensor {other}"),
        }
    }

    /// self += scale * other.
    pub fn axpy(&mut self, scale: f64, other: &Params) {
        for name in Self::TENSOR_NAMES {
            let src = other.tensor(name);
            let dst = self.tensor_mut(name);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        Self::TENSOR_NAMES
            .iter()
            .flat_map(|name| self.tensor(name).iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    fn le_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for name in Self::TENSOR_NAMES {
            for v in self.tensor(name) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrentModel {
    vocab: usize,
    hidden: usize,
    pub params: Params,
}

/// Uniform init in [-0.1, 0.1], deterministic per seed.
pub fn init_recurrent(vocab: usize, hidden: usize, seed: u64) -> Result<RecurrentModel> {
    if vocab < 2 {
        return Err(Error::Model("vocab must be at least 2".into()));
    }
    if hidden < 4 {
        return Err(Error::Model("hidden width must be at least 4".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = Params::zeros(vocab, hidden);
    for name in Params::TENSOR_NAMES {
        for v in params.tensor_mut(name).iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    Ok(RecurrentModel {
        vocab,
        hidden,
        params,
    })
}

/// One training example with a gradient weight. SFT uses weight 1/n; the
/// policy-gradient stage uses (reward - baseline)/n.
#[derive(Debug, Clone, Copy)]
pub struct WeightedExample<'a> {
    pub context: &'a [TokenId],
    pub target: &'a [TokenId],
    pub weight: f64,
}

struct StepCache {
    token: TokenId,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl RecurrentModel {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn cell(&self, h_prev: &[f64], token: TokenId) -> StepCache {
        let h = self.hidden;
        let p = &self.params;
        let x = &p.emb[token as usize * h..(token as usize + 1) * h];

        let mut az = p.b_z.clone();
        matvec_add(&mut az, &p.w_z, x);
        matvec_add(&mut az, &p.u_z, h_prev);
        let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();

        let mut ar = p.b_r.clone();
        matvec_add(&mut ar, &p.w_r, x);
        matvec_add(&mut ar, &p.u_r, h_prev);
        let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
        let mut ac = p.b_h.clone();
        matvec_add(&mut ac, &p.w_h, x);
        matvec_add(&mut ac, &p.u_h, &rh);
        let c: Vec<f64> = ac.iter().map(|&a| a.tanh()).collect();

        let h_new: Vec<f64> = (0..h)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i])
            .collect();
        StepCache {
            token,
            h_prev: h_prev.to_vec(),
            z,
            r,
            c,
            h: h_new,
        }
    }

    fn logits(&self, state: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let p = &self.params;
        let mut out = p.b_out.clone();
        for v in 0..self.vocab {
            let row = &p.w_out[v * h..(v + 1) * h];
            let mut acc = 0.0;
            for (w, s) in row.iter().zip(state) {
                acc += w * s;
            }
            out[v] += acc;
        }
        out
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        for &t in tokens {
            if t as usize >= self.vocab {
                return Err(Error::Model(format!(
                    "token {t} out of range {}",
                    self.vocab
                )));
            }
        }
        Ok(())
    }

    /// Weighted-sum NLL over the batch and its exact gradient via BPTT.
    /// Returns (sum_i weight_i * NLL_i, gradient of that sum).
    pub fn weighted_nll_grad(&self, examples: &[WeightedExample]) -> Result<(f64, Params)> {
        if examples.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        for ex in examples {
            self.check_tokens(ex.context)?;
            self.check_tokens(ex.target)?;
            if ex.context.is_empty() || ex.target.is_empty() {
                return Err(Error::Training("empty context or target".into()));
            }
        }
        let chunks: Vec<&[WeightedExample]> = examples.chunks(GRAD_CHUNK).collect();
        let partials: Vec<(f64, Params)> = chunks
            .par_iter()
            .map(|chunk| {
                let mut grad = Params::zeros(self.vocab, self.hidden);
                let mut loss = 0.0;
                for ex in *chunk {
                    if ex.weight != 0.0 {
                        loss += ex.weight * self.example_backward(ex, &mut grad);
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut grad = Params::zeros(self.vocab, self.hidden);
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grad.axpy(1.0, &g);
        }
        Ok((loss, grad))
    }

    /// Forward + backward for one example; accumulates weight * dNLL into
    /// `grad` and returns the raw NLL.
    fn example_backward(&self, ex: &WeightedExample, grad: &mut Params) -> f64 {
        let h = self.hidden;
        let m = ex.context.len();
        let full: Vec<TokenId> = ex.context.iter().chain(ex.target).copied().collect();
        let steps = full.len() - 1; // last target token is consumed by nobody

        let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
        let mut state = vec![0.0; h];
        for &tok in &full[..steps] {
            let cache = self.cell(&state, tok);
            state = cache.h.clone();
            caches.push(cache);
        }

        // Loss terms: step t predicts full[t + 1] for t in m-1 .. steps.
        let mut nll = 0.0;
        let mut dlogits_at: Vec<Option<Vec<f64>>> = vec![None; steps];
        for (t, cache) in caches.iter().enumerate().take(steps).skip(m - 1) {
            let target = full[t + 1] as usize;
            let logits = self.logits(&cache.h);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
            nll -= logits[target] - logsum;
            let mut dl: Vec<f64> = logits.iter().map(|l| (l - logsum).exp()).collect();
            dl[target] -= 1.0;
            // Fold the example weight into the logit gradient; everything
            // downstream is linear in it.
            for v in dl.iter_mut() {
                *v *= ex.weight;
            }
            dlogits_at[t] = Some(dl);
        }

        let p = &self.params;
        let mut dh = vec![0.0; h];
        for t in (0..steps).rev() {
            let cache = &caches[t];
            if let Some(dl) = &dlogits_at[t] {
                for v in 0..self.vocab {
                    let dv = dl[v];
                    if dv != 0.0 {
                        grad.b_out[v] += dv;
                        let row = &mut grad.w_out[v * h..(v + 1) * h];
                        let prow = &p.w_out[v * h..(v + 1) * h];
                        for i in 0..h {
                            row[i] += dv * cache.h[i];
                            dh[i] += dv * prow[i];
                        }
                    }
                }
            }

            // Backward through the cell.
            let x_idx = cache.token as usize;
            let x = &p.emb[x_idx * h..(x_idx + 1) * h];
            let mut dhp = vec![0.0; h];
            let mut dc = vec![0.0; h];
            let mut dz = vec![0.0; h];
            for i in 0..h {
                dc[i] = dh[i] * cache.z[i];
                dz[i] = dh[i] * (cache.c[i] - cache.h_prev[i]);
                dhp[i] = dh[i] * (1.0 - cache.z[i]);
            }
            let dac: Vec<f64> = (0..h).map(|i| dc[i] * (1.0 - cache.c[i] * cache.c[i])).collect();
            let rh: Vec<f64> = (0..h).map(|i| cache.r[i] * cache.h_prev[i]).collect();
            outer_add(&mut grad.w_h, &dac, x);
            outer_add(&mut grad.u_h, &dac, &rh);
            vec_add(&mut grad.b_h, &dac);
            let mut tmp = vec![0.0; h];
            matvec_t_add(&mut tmp, &p.u_h, &dac);
            let dr: Vec<f64> = (0..h).map(|i| tmp[i] * cache.h_prev[i]).collect();
            for i in 0..h {
                dhp[i] += tmp[i] * cache.r[i];
            }

            let daz: Vec<f64> = (0..h).map(|i| dz[i] * cache.z[i] * (1.0 - cache.z[i])).collect();
            outer_add(&mut grad.w_z, &daz, x);
            outer_add(&mut grad.u_z, &daz, &cache.h_prev);
            vec_add(&mut grad.b_z, &daz);
            matvec_t_add(&mut dhp, &p.u_z, &daz);

            let dar: Vec<f64> = (0..h).map(|i| dr[i] * cache.r[i] * (1.0 - cache.r[i])).collect();
            outer_add(&mut grad.w_r, &dar, x);
            outer_add(&mut grad.u_r, &dar, &cache.h_prev);
            vec_add(&mut grad.b_r, &dar);
            matvec_t_add(&mut dhp, &p.u_r, &dar);

            let dx_slice = &mut grad.emb[x_idx * h..(x_idx + 1) * h];
            matvec_t_add(dx_slice, &p.w_z, &daz);
            matvec_t_add(dx_slice, &p.w_r, &dar);
            matvec_t_add(dx_slice, &p.w_h, &dac);

            dh = dhp;
        }
        nll
    }

    /// NLL of one example at the current parameters (no gradient).
    pub fn example_nll(&self, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
        self.check_tokens(context)?;
        self.check_tokens(target)?;
        let m = context.len();
        let full: Vec<TokenId> = context.iter().chain(target).copied().collect();
        let steps = full.len() - 1;
        let mut state = vec![0.0; self.hidden];
        let mut nll = 0.0;
        for (t, &tok) in full[..steps].iter().enumerate() {
            let cache = self.cell(&state, tok);
            state = cache.h;
            if t + 1 >= m {
                let logits = self.logits(&state);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let logsum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
                nll -= logits[full[t + 1] as usize] - logsum;
            }
        }
        Ok(nll)
    }

    /// Gradient-descent step: params -= lr * grad.
    pub fn apply_update(&mut self, lr: f64, grad: &Params) {
        self.params.axpy(-lr, grad);
    }

    pub fn params_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.params.le_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Write `<stem>.json` (shape header + blob digest) and `<stem>.bin`
    /// (little-endian f64 parameters).
    pub fn save_checkpoint(&self, dir: &Path, stem: &str) -> Result<()> {
        let blob = self.params.le_bytes();
        let mut hasher = Sha256::new();
        hasher.update(&blob);
        let digest: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "recurrent".into(),
            vocab: self.vocab,
            hidden: self.hidden,
            tensors: Params::TENSOR_NAMES
                .iter()
                .map(|&name| TensorSpec {
                    name: name.into(),
                    len: self.params.tensor(name).len(),
                })
                .collect(),
            blob_digest: digest,
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&header)?,
        )?;
        std::fs::write(dir.join(format!("{stem}.bin")), blob)?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<RecurrentModel> {
        let header: CheckpointHeader =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let blob = std::fs::read(dir.join(format!("{stem}.bin")))?;
        let mut hasher = Sha256::new();
        hasher.update(&blob);
        let digest: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        if digest != header.blob_digest {
            return Err(Error::Checkpoint("blob digest mismatch".into()));
        }
        let expected: usize = header.tensors.iter().map(|t| t.len).sum();
        if blob.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "blob holds {} bytes, shapes demand {}",
                blob.len(),
                expected * 8
            )));
        }
        let mut params = Params::zeros(header.vocab, header.hidden);
        let mut offset = 0;
        for spec in &header.tensors {
            let dst = params.tensor_mut(&spec.name);
            if dst.len() != spec.len {
                return Err(Error::Checkpoint(format!(
                    "tensor {} length {} does not match shape header {}",
                    spec.name,
                    dst.len(),
                    spec.len
                )));
            }
            for v in dst.iter_mut() {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&blob[offset..offset + 8]);
                *v = f64::from_le_bytes(buf);
                offset += 8;
            }
        }
        Ok(RecurrentModel {
            vocab: header.vocab,
            hidden: header.hidden,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    kind: String,
    vocab: usize,
    hidden: usize,
    tensors: Vec<TensorSpec>,
    blob_digest: String,
}

impl SequenceModel for RecurrentModel {
    type State = Vec<f64>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn initial_state(&self) -> Self::State {
        vec![0.0; self.hidden]
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State> {
        if token as usize >= self.vocab {
            return Err(Error::Model(format!(
                "token {token} out of range {}",
                self.vocab
            )));
        }
        Ok(self.cell(state, token).h)
    }

    fn step_logprobs(&self, state: &Self::State) -> Vec<f64> {
        let logits = self.logits(state);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logsum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits
            .iter()
            .map(|l| (l - logsum).max(LN_PROB_FLOOR))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out[i] += sum_j m[i*n + j] * x[j]
fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// out[j] += sum_i m[i*n + j] * y[i]
fn matvec_t_add(out: &mut [f64], m: &[f64], y: &[f64]) {
    let n = out.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi != 0.0 {
            let row = &m[i * n..(i + 1) * n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += yi * a;
            }
        }
    }
}

/// m[i*n + j] += y[i] * x[j]
fn outer_add(m: &mut [f64], y: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi != 0.0 {
            let row = &mut m[i * n..(i + 1) * n];
            for (r, &xj) in row.iter_mut().zip(x) {
                *r += yi * xj;
            }
        }
    }
}

fn vec_add(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiers::special;
    use crate::model::{next_token_logprobs, TokenSequence};

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_recurrent(12, 8, 7).unwrap();
        let b = init_recurrent(12, 8, 7).unwrap();
        let c = init_recurrent(12, 8, 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert_eq!(a.params.emb.len(), 12 * 8);
        assert_eq!(a.params.w_out.len(), 12 * 8);
        assert!(a.params.max_abs() <= 0.1);
    }

    #[test]
    fn distributions_normalize() {
        let model = init_recurrent(12, 8, 3).unwrap();
        let ctx = TokenSequence::new(vec![special::BOS, 4, 5, 9]).unwrap();
        let lp = next_token_logprobs(&model, &ctx).unwrap();
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_output_projection_gives_uniform() {
        let mut model = init_recurrent(10, 8, 3).unwrap();
        model.params.w_out.iter_mut().for_each(|v| *v = 0.0);
        model.params.b_out.iter_mut().for_each(|v| *v = 0.0);
        let ctx = TokenSequence::new(vec![special::BOS, 4]).unwrap();
        let lp = next_token_logprobs(&model, &ctx).unwrap();
        for &l in &lp {
            assert!((l - (0.1f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let model = init_recurrent(12, 8, 1).unwrap();
        assert!(model.weighted_nll_grad(&[]).is_err());
    }

    #[test]
    fn duplicated_example_matches_single_under_mean_weights() {
        let model = init_recurrent(12, 8, 5).unwrap();
        let ctx = [special::BOS, 4, 5];
        let tgt = [6, special::EOS];
        let single = model
            .weighted_nll_grad(&[WeightedExample {
                context: &ctx,
                target: &tgt,
                weight: 1.0,
            }])
            .unwrap();
        let dup = model
            .weighted_nll_grad(&[
                WeightedExample {
                    context: &ctx,
                    target: &tgt,
                    weight: 0.5,
                },
                WeightedExample {
                    context: &ctx,
                    target: &tgt,
                    weight: 0.5,
                },
            ])
            .unwrap();
        assert!((single.0 - dup.0).abs() < 1e-12);
        for name in Params::TENSOR_NAMES {
            for (a, b) in single.1.tensor(name).iter().zip(dup.1.tensor(name)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut model = init_recurrent(12, 8, 11).unwrap();
        let ctx_a = [special::BOS, 4, 5, 9];
        let tgt_a = [6, 7, special::EOS];
        let ctx_b = [special::BOS, 8];
        let tgt_b = [10, special::EOS];
        let examples = [
            WeightedExample {
                context: &ctx_a,
                target: &tgt_a,
                weight: 0.5,
            },
            WeightedExample {
                context: &ctx_b,
                target: &tgt_b,
                weight: 0.5,
            },
        ];
        let (_, grad) = model.weighted_nll_grad(&examples).unwrap();

        // Central differences carry ~1e-10 absolute round-off (f ~ 10,
        // eps = 1e-5), so near-zero entries need an absolute floor in the
        // denominator; the directional check below covers them tightly.
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for name in Params::TENSOR_NAMES {
            let len = model.params.tensor(name).len();
            for idx in 0..len {
                let orig = model.params.tensor(name)[idx];
                model.params.tensor_mut(name)[idx] = orig + eps;
                let up: f64 = 0.5 * model.example_nll(&ctx_a, &tgt_a).unwrap()
                    + 0.5 * model.example_nll(&ctx_b, &tgt_b).unwrap();
                model.params.tensor_mut(name)[idx] = orig - eps;
                let down: f64 = 0.5 * model.example_nll(&ctx_a, &tgt_a).unwrap()
                    + 0.5 * model.example_nll(&ctx_b, &tgt_b).unwrap();
                model.params.tensor_mut(name)[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grad.tensor(name)[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                if rel > worst {
                    worst = rel;
                }
                assert!(
                    rel <= 1e-4,
                    "{name}[{idx}]: analytic {analytic} vs numeric {numeric} (rel {rel:e})"
                );
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst:e}");

        // Directional derivative along a fixed dense direction: an O(1)
        // quantity, so no floor is needed and the match must be tight.
        let mut direction = Params::zeros(12, 8);
        let mut mix: u64 = 0x9e3779b97f4a7c15;
        let mut dot = 0.0;
        for name in Params::TENSOR_NAMES {
            let d = direction.tensor_mut(name);
            for (i, v) in d.iter_mut().enumerate() {
                mix = mix.wrapping_mul(6364136223846793005).wrapping_add(i as u64 | 1);
                *v = ((mix >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            }
            for (dv, gv) in direction.tensor(name).iter().zip(grad.tensor(name)) {
                dot += dv * gv;
            }
        }
        let loss_at = |m: &RecurrentModel| -> f64 {
            0.5 * m.example_nll(&ctx_a, &tgt_a).unwrap()
                + 0.5 * m.example_nll(&ctx_b, &tgt_b).unwrap()
        };
        let mut shifted = model.clone();
        shifted.params.axpy(eps, &direction);
        let up = loss_at(&shifted);
        let mut shifted = model.clone();
        shifted.params.axpy(-eps, &direction);
        let down = loss_at(&shifted);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (dot - numeric).abs() / dot.abs().max(numeric.abs());
        assert!(
            rel <= 1e-6,
            "directional derivative mismatch: {dot} vs {numeric} (rel {rel:e})"
        );
    }

    #[test]
    fn checkpoint_roundtrip_preserves_bits() {
        let model = init_recurrent(9, 6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save_checkpoint(dir.path(), "ckpt").unwrap();
        let loaded = RecurrentModel::load_checkpoint(dir.path(), "ckpt").unwrap();
        assert_eq!(model.params, loaded.params);
        assert_eq!(model.params_digest(), loaded.params_digest());
    }

    #[test]
    fn corrupted_checkpoint_blob_is_rejected() {
        let model = init_recurrent(9, 6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save_checkpoint(dir.path(), "ckpt").unwrap();
        let bin = dir.path().join("ckpt.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&bin, bytes).unwrap();
        assert!(RecurrentModel::load_checkpoint(dir.path(), "ckpt").is_err());
    }
}
