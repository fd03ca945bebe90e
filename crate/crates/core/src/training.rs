//! Supervised fine-tuning (mini-batch gradient descent on identifier NLL)
//! and an optional REINFORCE stage with a mean-reward baseline.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionLog, ItemId};
use crate::decode::IdTrie;
use crate::identifiers::{special, IdentifierMap, TokenId};
use crate::model::recurrent::{RecurrentModel, WeightedExample};
use crate::model::{SequenceModel, TokenSequence};
use crate::protocol::SplitManifest;
use crate::{derive_seed, Error, Result};

/// One supervised example: serialized context, the target identifier, and
/// the item it names (used by the RL stage for reward checks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub context: TokenSequence,
    pub target: Vec<TokenId>,
    pub target_item: ItemId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rl_iters: usize,
    pub rl_samples_per_context: usize,
    pub rl_learning_rate: f64,
    pub reward_k: usize,
    pub seed: u64,
    /// Deterministic subsample cap on the example list (None = use all).
    pub max_train_examples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 64,
            learning_rate: 0.4,
            rl_iters: 0,
            rl_samples_per_context: 8,
            rl_learning_rate: 0.05,
            reward_k: 10,
            seed: 0,
            max_train_examples: None,
        }
    }
}

/// All-prefix expansion over warm users' train-period histories: position
/// t >= 1 yields (items < t, item t), with the context tail-truncated to
/// `max_context_items`. Holdout-period events and cold users contribute
/// nothing.
pub fn make_training_examples(
    manifest: &SplitManifest,
    log: &InteractionLog,
    id_map: &IdentifierMap,
    max_context_items: usize,
) -> Result<Vec<TrainExample>> {
    if max_context_items == 0 {
        return Err(Error::Training("max_context_items must be positive".into()));
    }
    let train_set: HashSet<usize> = manifest.train_interactions.iter().copied().collect();
    let mut examples = Vec::new();
    for user in manifest.warm_users.iter() {
        let items: Vec<&ItemId> = log
            .user_positions(user)
            .iter()
            .filter(|p| train_set.contains(p))
            .map(|&p| &log.interactions()[p].item)
            .collect();
        for t in 1..items.len() {
            let start = t.saturating_sub(max_context_items);
            let mut slices: Vec<&[TokenId]> = Vec::with_capacity(t - start);
            for item in &items[start..t] {
                slices.push(id_map.tokens_of(item).ok_or_else(|| {
                    Error::Training(format!("item {item} missing from identifier map"))
                })?);
            }
            let target = id_map
                .tokens_of(items[t])
                .ok_or_else(|| {
                    Error::Training(format!("item {} missing from identifier map", items[t]))
                })?
                .to_vec();
            examples.push(TrainExample {
                context: TokenSequence::from_context_items(slices),
                target,
                target_item: items[t].clone(),
            });
        }
    }
    Ok(examples)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftOutcome {
    /// Mean NLL per epoch, measured at the parameters each batch saw.
    pub loss_trace: Vec<f64>,
    pub examples_used: usize,
}

/// Mini-batch gradient descent (fixed learning rate, seeded shuffling) on
/// the mean sequence NLL; targets are scored through their EOS token.
pub fn sft_train(
    model: &mut RecurrentModel,
    examples: &[TrainExample],
    config: &TrainConfig,
) -> Result<SftOutcome> {
    if examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Training("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(cap) = config.max_train_examples {
        if examples.len() > cap {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, "sft-subsample"));
            order.shuffle(&mut rng);
            order.truncate(cap);
            order.sort_unstable();
        }
    }
    let targets_with_eos: Vec<Vec<TokenId>> = examples
        .iter()
        .map(|ex| {
            let mut t = ex.target.clone();
            t.push(special::EOS);
            t
        })
        .collect();

    let n = order.len();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
            config.seed,
            &format!("sft-epoch-{epoch}"),
        ));
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        for batch in order.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let refs: Vec<WeightedExample> = batch
                .iter()
                .map(|&i| WeightedExample {
                    context: examples[i].context.tokens(),
                    target: &targets_with_eos[i],
                    weight,
                })
                .collect();
            let (mean_nll, grad) = model.weighted_nll_grad(&refs)?;
            if !mean_nll.is_finite() {
                return Err(Error::Training(format!(
                    "training diverged (non-finite loss) at epoch {epoch}"
                )));
            }
            epoch_nll += mean_nll * batch.len() as f64;
            model.apply_update(config.learning_rate, &grad);
        }
        loss_trace.push(epoch_nll / n as f64);
    }
    Ok(SftOutcome {
        loss_trace,
        examples_used: n,
    })
}

/// Write a `epoch,loss` / `iter,mean_reward` CSV trace.
pub fn trace_csv(header: (&str, &str), values: &[f64]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RlOutcome {
    /// Mean sample reward per iteration.
    pub reward_trace: Vec<f64>,
}

/// One RL task: a serialized context and the item the sampled identifier
/// should resolve to.
#[derive(Debug, Clone)]
pub struct RlTask {
    pub context: TokenSequence,
    pub target: ItemId,
}

/// REINFORCE with a per-context mean-reward baseline. For every task,
/// `rl_samples_per_context` identifier sequences are drawn by
/// trie-constrained ancestral sampling; a sample's reward is
/// 1/log2(rank + 1) when it resolves to the target, where rank orders the
/// sampled items by their sequence log-probability. The update averages
/// (reward - baseline) * grad log P over samples and tasks.
pub fn rl_finetune(
    model: &mut RecurrentModel,
    tasks: &[RlTask],
    trie: &IdTrie,
    config: &TrainConfig,
) -> Result<RlOutcome> {
    if trie.terminal_count() == 0 {
        return Err(Error::Training("empty trie".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Training("no RL tasks".into()));
    }
    if config.rl_samples_per_context == 0 {
        return Err(Error::Training("rl_samples_per_context must be positive".into()));
    }
    let s = config.rl_samples_per_context;
    let mut reward_trace = Vec::with_capacity(config.rl_iters);

    for iter in 0..config.rl_iters {
        let mut weighted: Vec<(Vec<TokenId>, Vec<TokenId>, f64)> = Vec::new();
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for (task_idx, task) in tasks.iter().enumerate() {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                config.seed,
                &format!("rl-{iter}-{task_idx}"),
            ));
            let state = crate::model::context_state(model, &task.context)?;
            let mut samples: Vec<(Vec<TokenId>, ItemId, f64)> = Vec::with_capacity(s);
            for _ in 0..s {
                samples.push(sample_from_trie(model, trie, &state, &mut rng)?);
            }
            // Rank distinct sampled items by sequence log-probability.
            let mut distinct: Vec<(&ItemId, f64)> = Vec::new();
            for (_, item, lp) in &samples {
                if !distinct.iter().any(|(i, _)| *i == item) {
                    distinct.push((item, *lp));
                }
            }
            distinct.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("scores are finite")
                    .then_with(|| a.0.cmp(b.0))
            });
            let rank_of_target = distinct
                .iter()
                .position(|(i, _)| **i == task.target)
                .map(|p| p + 1);
            let rewards: Vec<f64> = samples
                .iter()
                .map(|(_, item, _)| match rank_of_target {
                    Some(rank) if *item == task.target => 1.0 / ((rank + 1) as f64).log2(),
                    _ => 0.0,
                })
                .collect();
            let baseline = rewards.iter().sum::<f64>() / s as f64;
            reward_sum += rewards.iter().sum::<f64>();
            reward_count += s;
            for ((tokens, _, _), reward) in samples.into_iter().zip(&rewards) {
                // Descent on weight * NLL realizes ascent on
                // (reward - baseline) * log P.
                let weight = (reward - baseline) / (s * tasks.len()) as f64;
                weighted.push((task.context.tokens().to_vec(), tokens, weight));
            }
        }
        let refs: Vec<WeightedExample> = weighted
            .iter()
            .map(|(ctx, tgt, w)| WeightedExample {
                context: ctx,
                target: tgt,
                weight: *w,
            })
            .collect();
        let (_, grad) = model.weighted_nll_grad(&refs)?;
        model.apply_update(config.rl_learning_rate, &grad);
        reward_trace.push(reward_sum / reward_count as f64);
    }
    Ok(RlOutcome { reward_trace })
}

/// Ancestral sampling constrained to trie paths. At a terminal node that
/// still has children, finishing competes with the children under the
/// model's EOS probability. Returns (tokens, resolved item, raw sequence
/// log-probability).
fn sample_from_trie<M: SequenceModel>(
    model: &M,
    trie: &IdTrie,
    context_state: &M::State,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<TokenId>, ItemId, f64)> {
    let mut state = context_state.clone();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    let mut node = trie.root();
    loop {
        let children = trie.children(node);
        let terminal = trie.terminal(node);
        if children.is_empty() {
            let item = terminal.expect("leaf nodes are terminal").clone();
            return Ok((tokens, item, logprob));
        }
        let logprobs = model.step_logprobs(&state);
        // Candidate actions: each child token, plus "finish" when terminal.
        let mut actions: Vec<(Option<(TokenId, usize)>, f64)> = children
            .iter()
            .map(|&(tok, child)| (Some((tok, child)), logprobs[tok as usize].exp()))
            .collect();
        if terminal.is_some() {
            actions.push((None, logprobs[special::EOS as usize].exp()));
        }
        let total: f64 = actions.iter().map(|(_, w)| w).sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = actions.len() - 1;
        for (i, (_, w)) in actions.iter().enumerate() {
            draw -= w;
            if draw <= 0.0 {
                chosen = i;
                break;
            }
        }
        match actions[chosen].0 {
            None => {
                let item = terminal.expect("finish action only at terminals").clone();
                return Ok((tokens, item, logprob));
            }
            Some((tok, child)) => {
                logprob += logprobs[tok as usize];
                state = model.advance(&state, tok)?;
                tokens.push(tok);
                node = child;
            }
        }
    }
}
