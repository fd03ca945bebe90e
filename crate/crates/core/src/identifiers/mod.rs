//! Item identifier construction.
//!
//! Five schemes share one map type: `atomic` (one dedicated token per item),
//! `textual` (title words over a shared vocabulary), and three quantized
//! variants (`rq`, `bkm`, `opq`) that encode content embeddings with a
//! trained [`Codebook`]. Full token sequences are kept injective by a
//! dedicated suffix-token family; cold items are encoded under frozen
//! codebooks and continue the suffix counters.

pub mod bkm;
pub mod codebook;
pub mod kmeans;
pub mod opq;
pub mod rq;

pub use bkm::train_bkm;
pub use codebook::{Codebook, CodebookKind, Quantizer, PAD_CODE};
pub use kmeans::{lloyd_kmeans, KmeansResult};
pub use opq::train_opq;
pub use rq::{train_rq, TrainedCodebook};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ItemCatalog, ItemId, ItemMeta};
use crate::{derive_seed, Error, Result};

pub type TokenId = u32;

/// Reserved token ids shared by every scheme.
pub mod special {
    use super::TokenId;

    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const SEP: TokenId = 2;
    pub const PAD: TokenId = 3;
    pub const COUNT: TokenId = 4;

    pub const DISPLAY: [&str; 4] = ["<bos>", "<eos>", "<sep>", "<pad>"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Atomic,
    Textual,
    Rq,
    Bkm,
    Opq,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Atomic,
        Scheme::Textual,
        Scheme::Rq,
        Scheme::Bkm,
        Scheme::Opq,
    ];

    fn code_prefix(self) -> &'static str {
        match self {
            Scheme::Rq => "r",
            Scheme::Bkm => "b",
            Scheme::Opq => "s",
            _ => "?",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Atomic => "atomic",
            Scheme::Textual => "textual",
            Scheme::Rq => "rq",
            Scheme::Bkm => "bkm",
            Scheme::Opq => "opq",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(Scheme::Atomic),
            "textual" => Ok(Scheme::Textual),
            "rq" => Ok(Scheme::Rq),
            "bkm" => Ok(Scheme::Bkm),
            "opq" => Ok(Scheme::Opq),
            other => Err(Error::Identifier(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Lowercase word tokens: runs of alphanumeric characters.
pub fn text_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// L2-normalized signed-count feature hash of an item's title and category
/// words. Deterministic for a fixed seed; empty metadata yields a flagged
/// zero vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentEmbedding {
    pub item: ItemId,
    pub vector: Vec<f64>,
    pub empty: bool,
}

pub fn content_embedding(meta: &ItemMeta, dim: usize, seed: u64) -> ContentEmbedding {
    assert!(dim >= 8, "embedding dimension must be at least 8");
    let mut vector = vec![0.0f64; dim];
    let mut tokens = text_tokens(&meta.title);
    for cat in &meta.categories {
        tokens.extend(text_tokens(cat));
    }
    for token in &tokens {
        let h = derive_seed(seed, token);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { 1.0 } else { -1.0 };
        vector[bucket] += sign;
    }
    let norm: f64 = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return ContentEmbedding {
            item: meta.item_id.clone(),
            vector,
            empty: true,
        };
    }
    for x in &mut vector {
        *x /= norm;
    }
    ContentEmbedding {
        item: meta.item_id.clone(),
        vector,
        empty: false,
    }
}

/// Injective item -> token-sequence mapping plus the token vocabulary it
/// draws from.
#[derive(Debug, Clone)]
pub struct IdentifierMap {
    scheme: Scheme,
    max_len: usize,
    tokens: BTreeMap<ItemId, Vec<TokenId>>,
    vocab: Vec<String>,
    assigned: BTreeSet<Vec<TokenId>>,
    suffix_next: BTreeMap<Vec<TokenId>, u32>,
    suffix_tokens: BTreeMap<u32, TokenId>,
}

pub const IDENTIFIER_MAP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IdentifierMapFile {
    format_version: u32,
    scheme: Scheme,
    max_len: usize,
    vocab: Vec<String>,
    tokens: BTreeMap<ItemId, Vec<TokenId>>,
}

impl IdentifierMap {
    fn new(scheme: Scheme, max_len: usize) -> Self {
        IdentifierMap {
            scheme,
            max_len,
            tokens: BTreeMap::new(),
            vocab: special::DISPLAY.iter().map(|s| s.to_string()).collect(),
            assigned: BTreeSet::new(),
            suffix_next: BTreeMap::new(),
            suffix_tokens: BTreeMap::new(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn display(&self, token: TokenId) -> &str {
        &self.vocab[token as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens_of(&self, item: &ItemId) -> Option<&[TokenId]> {
        self.tokens.get(item).map(Vec::as_slice)
    }

    pub fn items(&self) -> impl Iterator<Item = (&ItemId, &[TokenId])> {
        self.tokens.iter().map(|(i, t)| (i, t.as_slice()))
    }

    /// One dedicated token per item; vocabulary size equals the catalog size
    /// plus the reserved tokens.
    pub fn assign_atomic(catalog: &ItemCatalog) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::Identifier("empty catalog".into()));
        }
        let mut map = IdentifierMap::new(Scheme::Atomic, 1);
        let items: Vec<ItemId> = catalog.items.keys().cloned().collect();
        map.extend_atomic(&items);
        Ok(map)
    }

    /// Append fresh dedicated tokens for items not yet mapped.
    pub fn extend_atomic(&mut self, items: &[ItemId]) {
        assert_eq!(self.scheme, Scheme::Atomic);
        for item in items {
            if self.tokens.contains_key(item) {
                continue;
            }
            let token = self.vocab.len() as TokenId;
            self.vocab.push(item.0.clone());
            self.tokens.insert(item.clone(), vec![token]);
            self.assigned.insert(vec![token]);
        }
    }

    /// Title-word sequences over a shared word vocabulary, truncated to
    /// `max_len` and disambiguated with suffix tokens when full sequences
    /// collide.
    pub fn assign_textual(catalog: &ItemCatalog, max_len: usize) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::Identifier("empty catalog".into()));
        }
        let mut map = IdentifierMap::new(Scheme::Textual, max_len);
        let mut word_ids: BTreeMap<String, TokenId> = BTreeMap::new();
        let mut raw: Vec<(ItemId, Vec<TokenId>)> = Vec::with_capacity(catalog.len());
        for (item, meta) in &catalog.items {
            let mut seq: Vec<TokenId> = Vec::new();
            for word in text_tokens(&meta.title).into_iter().take(max_len) {
                let next_id = map.vocab.len() as TokenId;
                let id = *word_ids.entry(word.clone()).or_insert_with(|| {
                    map.vocab.push(word);
                    next_id
                });
                seq.push(id);
            }
            raw.push((item.clone(), seq));
        }
        // Group identical sequences; groups of two or more are suffixed.
        let mut groups: BTreeMap<Vec<TokenId>, Vec<ItemId>> = BTreeMap::new();
        for (item, seq) in &raw {
            groups.entry(seq.clone()).or_default().push(item.clone());
        }
        for (item, seq) in raw {
            let group_size = groups[&seq].len();
            if group_size == 1 {
                map.allocate(item, seq);
            } else {
                map.allocate_suffixed(item, seq);
            }
        }
        Ok(map)
    }

    /// Build a map from trained quantizer codes (aligned item/code pairs).
    /// Tokens are (level, code) pairs laid out level-major in the vocabulary;
    /// identical full codes are disambiguated with suffix tokens.
    pub fn from_codes(
        scheme: Scheme,
        codebook: &Codebook,
        warm: &[(ItemId, Vec<usize>)],
    ) -> Result<Self> {
        if !matches!(scheme, Scheme::Rq | Scheme::Bkm | Scheme::Opq) {
            return Err(Error::Identifier(format!(
                "from_codes is for quantized schemes, got {scheme}"
            )));
        }
        let mut map = IdentifierMap::new(scheme, codebook.code_len() + 1);
        for level in 0..codebook.levels {
            for j in 0..codebook.k {
                map.vocab
                    .push(format!("{}{level}.{j}", scheme.code_prefix()));
            }
        }
        let mut pairs: Vec<(ItemId, Vec<TokenId>)> = warm
            .iter()
            .map(|(item, code)| (item.clone(), map.code_tokens(codebook, code)))
            .collect();
        pairs.sort();
        let mut groups: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
        for (_, seq) in &pairs {
            *groups.entry(seq.clone()).or_default() += 1;
        }
        for (item, seq) in pairs {
            if groups[&seq] == 1 {
                map.allocate(item, seq);
            } else {
                map.allocate_suffixed(item, seq);
            }
        }
        Ok(map)
    }

    fn code_tokens(&self, codebook: &Codebook, code: &[usize]) -> Vec<TokenId> {
        code.iter()
            .enumerate()
            .map(|(level, &j)| {
                if j == PAD_CODE {
                    special::PAD
                } else {
                    special::COUNT + (level * codebook.k + j) as TokenId
                }
            })
            .collect()
    }

    /// Encode one cold item under a frozen codebook. The base code follows
    /// the same nearest-centroid procedure as warm items; if it is already
    /// taken the next free suffix is appended.
    pub fn encode_cold_item(
        &mut self,
        codebook: &Codebook,
        embedding: &ContentEmbedding,
    ) -> Result<Vec<TokenId>> {
        if !matches!(self.scheme, Scheme::Rq | Scheme::Bkm | Scheme::Opq) {
            return Err(Error::Identifier(format!(
                "encode_cold_item is for quantized schemes, got {}",
                self.scheme
            )));
        }
        if self.tokens.contains_key(&embedding.item) {
            return Err(Error::Identifier(format!(
                "item {} already mapped",
                embedding.item
            )));
        }
        let code = codebook.encode_vector(&embedding.vector)?;
        let base = self.code_tokens(codebook, &code);
        let item = embedding.item.clone();
        let seq = if self.assigned.contains(&base) || self.suffix_next.contains_key(&base) {
            self.allocate_suffixed(item.clone(), base)
        } else {
            self.allocate(item.clone(), base)
        };
        Ok(seq)
    }

    /// Assign `seq` to `item` verbatim, falling back to a suffix if the
    /// sequence is already taken.
    fn allocate(&mut self, item: ItemId, seq: Vec<TokenId>) -> Vec<TokenId> {
        if self.assigned.contains(&seq) || self.suffix_next.contains_key(&seq) {
            return self.allocate_suffixed(item, seq);
        }
        self.assigned.insert(seq.clone());
        self.tokens.insert(item, seq.clone());
        seq
    }

    /// Assign `base` plus the next free suffix token. Bases already at
    /// `max_len` are cut by one word to make room.
    fn allocate_suffixed(&mut self, item: ItemId, mut base: Vec<TokenId>) -> Vec<TokenId> {
        if base.len() >= self.max_len {
            base.truncate(self.max_len.saturating_sub(1));
        }
        let ordinal = self.suffix_next.get(&base).copied().unwrap_or(1);
        self.suffix_next.insert(base.clone(), ordinal + 1);
        let token = self.suffix_token(ordinal);
        let mut seq = base;
        seq.push(token);
        // Distinct bases cannot produce equal suffixed sequences, so this
        // insert cannot clash.
        debug_assert!(!self.assigned.contains(&seq));
        self.assigned.insert(seq.clone());
        self.tokens.insert(item, seq.clone());
        seq
    }

    fn suffix_token(&mut self, ordinal: u32) -> TokenId {
        if let Some(&tok) = self.suffix_tokens.get(&ordinal) {
            return tok;
        }
        let tok = self.vocab.len() as TokenId;
        self.vocab.push(format!("#{ordinal}"));
        self.suffix_tokens.insert(ordinal, tok);
        tok
    }

    /// Injectivity, length, and vocabulary-range checks; violations as data.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut seen: BTreeMap<&[TokenId], &ItemId> = BTreeMap::new();
        for (item, seq) in &self.tokens {
            if seq.is_empty() {
                violations.push(format!("item {item} has an empty identifier"));
            }
            if seq.len() > self.max_len {
                violations.push(format!(
                    "item {item} identifier length {} exceeds max_len {}",
                    seq.len(),
                    self.max_len
                ));
            }
            for &tok in seq {
                if tok as usize >= self.vocab.len() {
                    violations.push(format!("item {item} uses out-of-range token {tok}"));
                }
            }
            if let Some(other) = seen.insert(seq.as_slice(), item) {
                violations.push(format!("items {other} and {item} share an identifier"));
            }
        }
        violations
    }

    pub fn to_json(&self) -> Result<String> {
        let file = IdentifierMapFile {
            format_version: IDENTIFIER_MAP_FORMAT_VERSION,
            scheme: self.scheme,
            max_len: self.max_len,
            vocab: self.vocab.clone(),
            tokens: self.tokens.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Load a map, rebuilding the suffix counters so cold encoding can
    /// continue where the warm allocation stopped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: IdentifierMapFile = serde_json::from_str(&text)?;
        let mut suffix_tokens = BTreeMap::new();
        if file.scheme != Scheme::Atomic {
            for (id, display) in file.vocab.iter().enumerate() {
                if let Some(rest) = display.strip_prefix('#') {
                    if let Ok(ordinal) = rest.parse::<u32>() {
                        suffix_tokens.insert(ordinal, id as TokenId);
                    }
                }
            }
        }
        let suffix_ids: BTreeMap<TokenId, u32> =
            suffix_tokens.iter().map(|(&o, &t)| (t, o)).collect();
        let mut assigned = BTreeSet::new();
        let mut suffix_next: BTreeMap<Vec<TokenId>, u32> = BTreeMap::new();
        for seq in file.tokens.values() {
            assigned.insert(seq.clone());
            if let Some(last) = seq.last() {
                if let Some(&ordinal) = suffix_ids.get(last) {
                    let base = seq[..seq.len() - 1].to_vec();
                    let next = suffix_next.entry(base).or_insert(1);
                    *next = (*next).max(ordinal + 1);
                }
            }
        }
        Ok(IdentifierMap {
            scheme: file.scheme,
            max_len: file.max_len,
            tokens: file.tokens,
            vocab: file.vocab,
            assigned,
            suffix_next,
            suffix_tokens,
        })
    }

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
