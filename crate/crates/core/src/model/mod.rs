//! Pluggable autoregressive token-sequence models.
//!
//! Both the smoothed back-off Markov model and the gated recurrent network
//! expose the same incremental scoring interface: fold tokens into a state,
//! read a normalized next-token log-distribution. Decoding and evaluation are
//! generic over that trait, so the two are interchangeable everywhere.

pub mod markov;
pub mod recurrent;

pub use markov::{fit_markov, MarkovModel};
pub use recurrent::{init_recurrent, RecurrentModel};

use serde::{Deserialize, Serialize};

use crate::identifiers::{special, TokenId};
use crate::{Error, Result};

/// Probabilities are floored at 1e-12 before taking logs on evaluation
/// paths (never in training).
pub const LN_PROB_FLOOR: f64 = -27.631021115928547; // ln(1e-12)

/// A token sequence; reserved BOS/EOS/SEP tokens included. BOS may only
/// appear at position 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.iter().skip(1).any(|&t| t == special::BOS) {
            return Err(Error::Model("BOS may only appear at position 0".into()));
        }
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Serialize a user history: BOS, then each item's identifier tokens
    /// followed by SEP. The trailing SEP marks "predict the next item".
    pub fn from_context_items<'a, I>(item_tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut tokens = vec![special::BOS];
        for seq in item_tokens {
            tokens.extend_from_slice(seq);
            tokens.push(special::SEP);
        }
        TokenSequence(tokens)
    }
}

/// Incremental next-token scorer over a fixed vocabulary.
pub trait SequenceModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    /// Consume one token.
    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State>;
    /// Normalized log-distribution over the next token.
    fn step_logprobs(&self, state: &Self::State) -> Vec<f64>;
}

/// Fold a full context into a model state.
pub fn context_state<M: SequenceModel>(model: &M, context: &TokenSequence) -> Result<M::State> {
    if context.is_empty() {
        return Err(Error::Model("context must be non-empty".into()));
    }
    let mut state = model.initial_state();
    for &tok in context.tokens() {
        state = model.advance(&state, tok)?;
    }
    Ok(state)
}

/// log P(next token | context), normalized over the vocabulary.
pub fn next_token_logprobs<M: SequenceModel>(
    model: &M,
    context: &TokenSequence,
) -> Result<Vec<f64>> {
    let state = context_state(model, context)?;
    Ok(model.step_logprobs(&state))
}

/// Sum of per-step log-probabilities of `target` continuing `state`.
/// Returns the accumulated log-probability and the advanced state.
pub fn extend_logprob<M: SequenceModel>(
    model: &M,
    state: &M::State,
    target: &[TokenId],
) -> Result<(f64, M::State)> {
    let mut state = state.clone();
    let mut total = 0.0;
    for &tok in target {
        let logprobs = model.step_logprobs(&state);
        let lp = *logprobs
            .get(tok as usize)
            .ok_or_else(|| Error::Model(format!("token {tok} out of range")))?;
        total += lp;
        state = model.advance(&state, tok)?;
    }
    Ok((total, state))
}

/// Chain-rule sequence log-probability: sum over t of
/// log P(target_t | context + target_{<t}).
pub fn sequence_logprob<M: SequenceModel>(
    model: &M,
    context: &TokenSequence,
    target: &[TokenId],
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Model("target must be non-empty".into()));
    }
    let state = context_state(model, context)?;
    let (total, _) = extend_logprob(model, &state, target)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bos_only_at_front() {
        assert!(TokenSequence::new(vec![special::BOS, 5, 6]).is_ok());
        assert!(TokenSequence::new(vec![special::BOS, special::BOS]).is_err());
        assert!(TokenSequence::new(vec![5, special::BOS]).is_err());
    }

    #[test]
    fn context_serialization_shape() {
        let a: Vec<TokenId> = vec![10, 11];
        let b: Vec<TokenId> = vec![12];
        let seq = TokenSequence::from_context_items([a.as_slice(), b.as_slice()]);
        assert_eq!(
            seq.tokens(),
            &[special::BOS, 10, 11, special::SEP, 12, special::SEP]
        );
    }
}
