//! Smoothed back-off Markov model: the cheap reference implementation of the
//! scoring interface.
//!
//! Prediction interpolates counts from order n down to the unigram with a
//! uniform base: P_l(tok | ctx_l) = (c(ctx_l, tok) + beta * P_{l-1}(tok)) /
//! (c(ctx_l, .) + beta) with beta = alpha * V, and P_{-1} uniform. Unseen
//! contexts therefore back off one level; alpha -> 0 recovers raw counts and
//! large alpha flattens toward uniform.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::identifiers::TokenId;
use crate::model::{SequenceModel, TokenSequence, LN_PROB_FLOOR};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovModel {
    vocab: usize,
    order: usize,
    alpha: f64,
    #[serde(with = "context_table")]
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

/// Serialize the count table as a sorted list so JSON keys stay strings and
/// output bytes stay deterministic.
mod context_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        counts: &HashMap<Vec<TokenId>, ContextCounts>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut rows: Vec<(&Vec<TokenId>, Vec<(TokenId, u64)>)> = counts
            .iter()
            .map(|(ctx, cc)| {
                let mut next: Vec<(TokenId, u64)> = cc.next.iter().map(|(&t, &c)| (t, c)).collect();
                next.sort_unstable();
                (ctx, next)
            })
            .collect();
        rows.sort();
        serde::Serialize::serialize(&rows, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<HashMap<Vec<TokenId>, ContextCounts>, D::Error> {
        let rows: Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)> = serde::Deserialize::deserialize(de)?;
        Ok(rows
            .into_iter()
            .map(|(ctx, next)| {
                let total = next.iter().map(|(_, c)| c).sum();
                (
                    ctx,
                    ContextCounts {
                        total,
                        next: next.into_iter().collect(),
                    },
                )
            })
            .collect())
    }
}

/// Count all (context suffix of length <= order, next token) pairs.
pub fn fit_markov(
    sequences: &[TokenSequence],
    vocab: usize,
    order: usize,
    alpha: f64,
) -> Result<MarkovModel> {
    if sequences.is_empty() {
        return Err(Error::Model("markov fit needs a non-empty corpus".into()));
    }
    if order < 1 {
        return Err(Error::Model("markov order must be at least 1".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::Model("markov smoothing must be positive".into()));
    }
    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for seq in sequences {
        let tokens = seq.tokens();
        for &tok in tokens {
            if tok as usize >= vocab {
                return Err(Error::Model(format!("token {tok} out of range {vocab}")));
            }
        }
        for i in 1..tokens.len() {
            let target = tokens[i];
            for l in 0..=order.min(i) {
                let ctx = tokens[i - l..i].to_vec();
                let entry = counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(target).or_insert(0) += 1;
            }
        }
    }
    Ok(MarkovModel {
        vocab,
        order,
        alpha,
        counts,
    })
}

impl MarkovModel {
    pub fn order(&self) -> usize {
        self.order
    }
}

impl SequenceModel for MarkovModel {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn initial_state(&self) -> Self::State {
        Vec::new()
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State> {
        if token as usize >= self.vocab {
            return Err(Error::Model(format!(
                "token {token} out of range {}",
                self.vocab
            )));
        }
        let mut next = state.clone();
        next.push(token);
        if next.len() > self.order {
            next.remove(0);
        }
        Ok(next)
    }

    fn step_logprobs(&self, state: &Self::State) -> Vec<f64> {
        let v = self.vocab;
        let beta = self.alpha * v as f64;
        let mut probs = vec![1.0 / v as f64; v];
        for l in 0..=self.order.min(state.len()) {
            let ctx = &state[state.len() - l..];
            if let Some(cc) = self.counts.get(ctx) {
                let denom = cc.total as f64 + beta;
                for p in probs.iter_mut() {
                    *p *= beta / denom;
                }
                for (&tok, &c) in &cc.next {
                    probs[tok as usize] += c as f64 / denom;
                }
            }
        }
        probs
            .into_iter()
            .map(|p| p.ln().max(LN_PROB_FLOOR))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiers::special;
    use crate::model::next_token_logprobs;

    fn seq(tokens: &[TokenId]) -> TokenSequence {
        TokenSequence::new(tokens.to_vec()).unwrap()
    }

    // Corpus [BOS, a, b, a, b, EOS] with a = 4, b = 5.
    fn toy_corpus() -> Vec<TokenSequence> {
        vec![seq(&[special::BOS, 4, 5, 4, 5, special::EOS])]
    }

    #[test]
    fn deterministic_bigram_forces_next_token() {
        let model = fit_markov(&toy_corpus(), 6, 1, 1e-9).unwrap();
        let lp = next_token_logprobs(&model, &seq(&[special::BOS, 4])).unwrap();
        // "a" is always followed by "b".
        assert!(lp[5].exp() > 0.999, "P(b|a) = {}", lp[5].exp());
    }

    #[test]
    fn huge_alpha_flattens_to_uniform() {
        let model = fit_markov(&toy_corpus(), 6, 1, 1e9).unwrap();
        let lp = next_token_logprobs(&model, &seq(&[special::BOS, 4])).unwrap();
        for &l in &lp {
            assert!((l.exp() - 1.0 / 6.0).abs() < 1e-6);
        }
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let model = fit_markov(&toy_corpus(), 6, 2, 0.01).unwrap();
        // Token 3 never appears, so the length-1 and length-2 suffixes are
        // unseen and prediction falls back to the unigram distribution.
        let from_unseen = next_token_logprobs(&model, &seq(&[special::BOS, 3])).unwrap();
        let state: Vec<TokenId> = Vec::new();
        let unigram = model.step_logprobs(&state);
        for (a, b) in from_unseen.iter().zip(&unigram) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalize() {
        let model = fit_markov(&toy_corpus(), 6, 2, 0.3).unwrap();
        for ctx in [vec![special::BOS], vec![special::BOS, 4], vec![4, 5]] {
            let lp = next_token_logprobs(&model, &seq(&ctx)).unwrap();
            let total: f64 = lp.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
        }
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let model = fit_markov(&toy_corpus(), 6, 1, 0.1).unwrap();
        assert!(crate::model::context_state(&model, &seq(&[special::BOS, 99])).is_err());
        assert!(fit_markov(&[seq(&[special::BOS, 99])], 6, 1, 0.1).is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(fit_markov(&[], 6, 1, 0.1).is_err());
    }
}
