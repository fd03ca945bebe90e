//! Prefix-trie over valid identifier sequences and constrained decoding.
//!
//! Beam search restricts each step's successor tokens to the current trie
//! node's children and scores finished hypotheses by raw sequence
//! log-probability (no length normalization). With a beam at least as wide
//! as the candidate set it is exhaustive; [`rank_items_exhaustive`] is the
//! oracle that guards it.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::ItemId;
use crate::identifiers::{IdentifierMap, TokenId};
use crate::model::{context_state, SequenceModel, TokenSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<ItemId>,
}

/// Prefix tree whose terminal paths are exactly the identifier sequences of
/// the candidate items.
#[derive(Debug, Clone)]
pub struct IdTrie {
    nodes: Vec<TrieNode>,
    terminals: usize,
}

impl IdTrie {
    fn empty() -> Self {
        IdTrie {
            nodes: vec![TrieNode::default()],
            terminals: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals
    }

    pub fn root(&self) -> usize {
        0
    }

    /// (token, child node) pairs in ascending token order.
    pub fn children(&self, node: usize) -> Vec<(TokenId, usize)> {
        self.nodes[node]
            .children
            .iter()
            .map(|(&t, &c)| (t, c))
            .collect()
    }

    pub fn terminal(&self, node: usize) -> Option<&ItemId> {
        self.nodes[node].terminal.as_ref()
    }

    fn insert(&mut self, tokens: &[TokenId], item: &ItemId) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Decode(format!("item {item} has an empty identifier")));
        }
        let mut node = 0usize;
        for &tok in tokens {
            let next = match self.nodes[node].children.get(&tok) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(tok, n);
                    n
                }
            };
            node = next;
        }
        if let Some(existing) = &self.nodes[node].terminal {
            return Err(Error::Decode(format!(
                "identifier collision: items {existing} and {item} share a full sequence"
            )));
        }
        self.nodes[node].terminal = Some(item.clone());
        self.terminals += 1;
        Ok(())
    }

    /// Exact-path lookup: the terminal item for `tokens`, if any.
    pub fn resolve(&self, tokens: &[TokenId]) -> Option<&ItemId> {
        let mut node = 0usize;
        for tok in tokens {
            node = *self.nodes[node].children.get(tok)?;
        }
        self.nodes[node].terminal.as_ref()
    }

    /// All (sequence, item) pairs in token-lexicographic order.
    pub fn enumerate(&self) -> Vec<(Vec<TokenId>, ItemId)> {
        let mut out = Vec::with_capacity(self.terminals);
        let mut stack: Vec<(usize, Vec<TokenId>)> = vec![(0, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(item) = &self.nodes[node].terminal {
                out.push((path.clone(), item.clone()));
            }
            // Reverse order so the stack pops children in ascending order.
            for (&tok, &child) in self.nodes[node].children.iter().rev() {
                let mut next = path.clone();
                next.push(tok);
                stack.push((child, next));
            }
        }
        out.sort();
        out
    }
}

/// Build a trie over the identifier sequences of `candidates`.
pub fn build_trie(id_map: &IdentifierMap, candidates: &BTreeSet<ItemId>) -> Result<IdTrie> {
    if candidates.is_empty() {
        return Err(Error::Decode("empty candidate set".into()));
    }
    let mut trie = IdTrie::empty();
    for item in candidates {
        let tokens = id_map
            .tokens_of(item)
            .ok_or_else(|| Error::Decode(format!("candidate {item} missing from identifier map")))?;
        trie.insert(tokens, item)?;
    }
    Ok(trie)
}

/// Insert additional (disjoint) items; existing paths are untouched.
pub fn insert_items(
    trie: &mut IdTrie,
    id_map: &IdentifierMap,
    new_items: &BTreeSet<ItemId>,
) -> Result<()> {
    for item in new_items {
        let tokens = id_map
            .tokens_of(item)
            .ok_or_else(|| Error::Decode(format!("item {item} missing from identifier map")))?;
        trie.insert(tokens, item)?;
    }
    Ok(())
}

/// Ranked (item, sequence log-probability) pairs, best first. Ties break by
/// item id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(ItemId, f64)>,
    /// Set when fewer reachable items than requested existed.
    pub flagged_short: bool,
}

impl RankedList {
    pub fn rank_of(&self, item: &ItemId) -> Option<usize> {
        self.entries
            .iter()
            .position(|(i, _)| i == item)
            .map(|p| p + 1)
    }

    /// Audit rows: `case_id,rank,item_id,logprob`.
    pub fn csv_rows(&self, case_id: usize) -> String {
        let mut out = String::new();
        for (rank, (item, lp)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{case_id},{},{item},{lp}\n", rank + 1));
        }
        out
    }
}

fn sort_ranked(entries: &mut [(ItemId, f64)]) {
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
}

struct Hypothesis<S> {
    node: usize,
    state: S,
    logprob: f64,
}

/// Length-complete trie-constrained beam search returning the top `k`
/// resolved items. Hypotheses finish only at terminal nodes; a terminal
/// node that still has children both finishes and keeps extending.
pub fn beam_search<M: SequenceModel>(
    model: &M,
    context: &TokenSequence,
    trie: &IdTrie,
    beam_width: usize,
    k: usize,
) -> Result<RankedList> {
    if k == 0 || beam_width < k {
        return Err(Error::Decode(format!(
            "need beam_width >= k >= 1, got beam_width {beam_width}, k {k}"
        )));
    }
    if trie.terminal_count() == 0 {
        return Err(Error::Decode("trie has no terminal paths".into()));
    }
    let root_state = context_state(model, context)?;
    let mut finished: Vec<(ItemId, f64)> = Vec::new();
    let mut active = vec![Hypothesis {
        node: 0,
        state: root_state,
        logprob: 0.0,
    }];
    if let Some(item) = &trie.nodes[0].terminal {
        // Zero-length identifiers are forbidden upstream; defensive only.
        finished.push((item.clone(), 0.0));
    }

    while !active.is_empty() {
        // Score all children of all live hypotheses, then keep the best
        // `beam_width` before advancing any model state.
        let mut expansions: Vec<(f64, usize, usize, TokenId)> = Vec::new();
        for (h_idx, hyp) in active.iter().enumerate() {
            let logprobs = model.step_logprobs(&hyp.state);
            for (&tok, &child) in &trie.nodes[hyp.node].children {
                let lp = *logprobs.get(tok as usize).ok_or_else(|| {
                    Error::Model(format!("token {tok} out of model range"))
                })?;
                expansions.push((hyp.logprob + lp, h_idx, child, tok));
            }
        }
        expansions.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("scores are finite")
                .then_with(|| a.2.cmp(&b.2))
        });
        expansions.truncate(beam_width);

        let mut next_active = Vec::with_capacity(expansions.len());
        for (score, h_idx, child, tok) in expansions {
            let state = model.advance(&active[h_idx].state, tok)?;
            if let Some(item) = &trie.nodes[child].terminal {
                finished.push((item.clone(), score));
            }
            if !trie.nodes[child].children.is_empty() {
                next_active.push(Hypothesis {
                    node: child,
                    state,
                    logprob: score,
                });
            }
        }
        active = next_active;
    }

    sort_ranked(&mut finished);
    let flagged_short = finished.len() < k;
    finished.truncate(k);
    Ok(RankedList {
        entries: finished,
        flagged_short,
    })
}

/// Score every candidate's full identifier by sequence log-probability.
/// The exhaustive oracle for [`beam_search`].
pub fn rank_items_exhaustive<M: SequenceModel>(
    model: &M,
    context: &TokenSequence,
    id_map: &IdentifierMap,
    candidates: &BTreeSet<ItemId>,
) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(Error::Decode("empty candidate set".into()));
    }
    let root_state = context_state(model, context)?;
    let mut entries = Vec::with_capacity(candidates.len());
    for item in candidates {
        let tokens = id_map
            .tokens_of(item)
            .ok_or_else(|| Error::Decode(format!("candidate {item} missing from identifier map")))?;
        let (lp, _) = crate::model::extend_logprob(model, &root_state, tokens)?;
        entries.push((item.clone(), lp));
    }
    sort_ranked(&mut entries);
    Ok(RankedList {
        entries,
        flagged_short: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ItemCatalog, ItemMeta};
    use crate::identifiers::{special, Scheme};
    use crate::model::{fit_markov, sequence_logprob};

    fn catalog(titles: &[(&str, &str)]) -> ItemCatalog {
        let mut c = ItemCatalog::default();
        for (id, title) in titles {
            c.items.insert(
                ItemId((*id).into()),
                ItemMeta {
                    item_id: ItemId((*id).into()),
                    title: (*title).into(),
                    categories: vec![],
                },
            );
        }
        c
    }

    fn set(ids: &[&str]) -> BTreeSet<ItemId> {
        ids.iter().map(|i| ItemId((*i).into())).collect()
    }

    #[test]
    fn trie_structure_for_three_two_token_codes() {
        let c = catalog(&[("a", "red ball"), ("b", "red cube"), ("c", "blue cube")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let trie = build_trie(&map, &set(&["a", "b", "c"])).unwrap();
        assert_eq!(trie.terminal_count(), 3);
        assert!(trie.node_count() <= 7, "nodes: {}", trie.node_count());
        let listed = trie.enumerate();
        assert_eq!(listed.len(), 3);
        for (seq, item) in &listed {
            assert_eq!(map.tokens_of(item).unwrap(), seq.as_slice());
        }
    }

    #[test]
    fn empty_candidates_and_missing_items_error() {
        let c = catalog(&[("a", "x")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        assert!(build_trie(&map, &BTreeSet::new()).is_err());
        assert!(build_trie(&map, &set(&["nope"])).is_err());
    }

    #[test]
    fn insert_extends_and_rejects_duplicates() {
        let c = catalog(&[("a", "red ball"), ("b", "blue cube"), ("z", "green cone")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let mut trie = build_trie(&map, &set(&["a", "b"])).unwrap();
        let before = trie.terminal_count();
        insert_items(&mut trie, &map, &set(&["z"])).unwrap();
        assert_eq!(trie.terminal_count(), before + 1);
        let all: BTreeSet<ItemId> = trie.enumerate().into_iter().map(|(_, i)| i).collect();
        assert_eq!(all, set(&["a", "b", "z"]));
        // Re-inserting an existing sequence collides.
        assert!(insert_items(&mut trie, &map, &set(&["a"])).is_err());
    }

    #[test]
    fn resolve_exact_paths_only() {
        let c = catalog(&[("a", "red ball"), ("b", "red cube")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let trie = build_trie(&map, &set(&["a", "b"])).unwrap();
        let a_tokens = map.tokens_of(&ItemId("a".into())).unwrap();
        assert_eq!(trie.resolve(a_tokens), Some(&ItemId("a".into())));
        assert_eq!(trie.resolve(&a_tokens[..1]), None); // prefix, non-terminal
        assert_eq!(trie.resolve(&[999]), None);
    }

    /// Markov model fit on a tiny corpus; vocab sized for the map.
    fn toy_model(map: &IdentifierMap, corpus: &[Vec<TokenId>], alpha: f64) -> crate::model::MarkovModel {
        let seqs: Vec<TokenSequence> = corpus
            .iter()
            .map(|t| TokenSequence::new(t.clone()).unwrap())
            .collect();
        fit_markov(&seqs, map.vocab_size(), 1, alpha).unwrap()
    }

    #[test]
    fn single_item_trie_always_ranks_it_first() {
        let c = catalog(&[("only", "lone widget")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let trie = build_trie(&map, &set(&["only"])).unwrap();
        let model = toy_model(&map, &[vec![special::BOS, special::SEP]], 1.0);
        let ctx = TokenSequence::new(vec![special::BOS]).unwrap();
        let ranked = beam_search(&model, &ctx, &trie, 4, 1).unwrap();
        assert_eq!(ranked.entries[0].0, ItemId("only".into()));
    }

    #[test]
    fn wide_beam_matches_exhaustive_ranking() {
        let c = catalog(&[
            ("a", "red ball"),
            ("b", "red cube"),
            ("c", "blue cube"),
            ("d", "green cone small"),
            ("e", "red"),
        ]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let candidates = set(&["a", "b", "c", "d", "e"]);
        let trie = build_trie(&map, &candidates).unwrap();
        // A corpus built from the identifiers themselves gives non-trivial,
        // non-uniform scores.
        let corpus: Vec<Vec<TokenId>> = candidates
            .iter()
            .map(|i| {
                let mut s = vec![special::BOS];
                s.extend_from_slice(map.tokens_of(i).unwrap());
                s.push(special::EOS);
                s
            })
            .collect();
        let model = toy_model(&map, &corpus, 0.2);
        let ctx = TokenSequence::new(vec![special::BOS]).unwrap();
        let beam = beam_search(&model, &ctx, &trie, candidates.len(), candidates.len()).unwrap();
        let oracle = rank_items_exhaustive(&model, &ctx, &map, &candidates).unwrap();
        assert_eq!(beam.entries, oracle.entries);
        // Scores equal sequence_logprob bit-for-bit.
        for (item, lp) in &beam.entries {
            let direct = sequence_logprob(&model, &ctx, map.tokens_of(item).unwrap()).unwrap();
            assert_eq!(*lp, direct);
        }
    }

    #[test]
    fn uniform_scores_break_ties_by_item_id() {
        // Equal-length distinct codes under a uniform model.
        let c = catalog(&[("m", "aa bb"), ("k", "aa cc"), ("z", "dd ee")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let candidates = set(&["m", "k", "z"]);
        let trie = build_trie(&map, &candidates).unwrap();
        // Huge smoothing flattens everything to uniform.
        let model = toy_model(&map, &[vec![special::BOS, special::EOS]], 1e9);
        let ctx = TokenSequence::new(vec![special::BOS]).unwrap();
        let ranked = beam_search(&model, &ctx, &trie, 8, 3).unwrap();
        let ids: Vec<&str> = ranked.entries.iter().map(|(i, _)| i.0.as_str()).collect();
        assert_eq!(ids, vec!["k", "m", "z"]);
    }

    #[test]
    fn exhaustive_matches_hand_chain_rule() {
        // Corpus [BOS, t4, EOS] with vocabulary size V = 6 and alpha = 0.5
        // (beta = 3). Unigram: P0(4) = (1 + 0.5)/(2 + 3) = 0.3,
        // P0(5) = 0.5/5 = 0.1. After [BOS]: P1(4) = (1 + 3*0.3)/(1 + 3)
        // = 0.475, P1(5) = (3*0.1)/4 = 0.075.
        let mut c = ItemCatalog::default();
        for (id, title) in [("x", "p"), ("y", "q")] {
            c.items.insert(
                ItemId(id.into()),
                ItemMeta {
                    item_id: ItemId(id.into()),
                    title: title.into(),
                    categories: vec![],
                },
            );
        }
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let x_tok = map.tokens_of(&ItemId("x".into())).unwrap()[0];
        let y_tok = map.tokens_of(&ItemId("y".into())).unwrap()[0];
        assert_eq!((x_tok, y_tok), (4, 5));
        let model = toy_model(
            &map,
            &[vec![special::BOS, x_tok, special::EOS]],
            0.5,
        );
        let ctx = TokenSequence::new(vec![special::BOS]).unwrap();
        let ranked = rank_items_exhaustive(&model, &ctx, &map, &set(&["x", "y"])).unwrap();
        assert_eq!(ranked.entries[0].0, ItemId("x".into()));
        assert!((ranked.entries[0].1 - (0.475f64).ln()).abs() < 1e-12);
        assert!((ranked.entries[1].1 - (0.075f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn adding_candidates_preserves_relative_order() {
        let c = catalog(&[("a", "red ball"), ("b", "blue cube"), ("c", "green cone")]);
        let map = IdentifierMap::assign_textual(&c, 16).unwrap();
        let model = toy_model(
            &map,
            &[{
                let mut s = vec![special::BOS];
                s.extend_from_slice(map.tokens_of(&ItemId("a".into())).unwrap());
                s.push(special::EOS);
                s
            }],
            0.3,
        );
        let ctx = TokenSequence::new(vec![special::BOS]).unwrap();
        let two = rank_items_exhaustive(&model, &ctx, &map, &set(&["a", "b"])).unwrap();
        let three = rank_items_exhaustive(&model, &ctx, &map, &set(&["a", "b", "c"])).unwrap();
        let pos = |r: &RankedList, id: &str| r.rank_of(&ItemId(id.into())).unwrap();
        assert!(
            (pos(&two, "a") < pos(&two, "b")) == (pos(&three, "a") < pos(&three, "b")),
            "relative order changed"
        );
    }

    #[test]
    fn csv_rows_roundtrip_numbers() {
        let ranked = RankedList {
            entries: vec![
                (ItemId("a".into()), -1.5),
                (ItemId("b".into()), -2.25),
            ],
            flagged_short: false,
        };
        let csv = ranked.csv_rows(7);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "7,1,a,-1.5");
        assert_eq!(lines[1], "7,2,b,-2.25");
    }
}
