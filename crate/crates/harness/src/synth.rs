//! Synthetic interaction corpora with plantable content signal.
//!
//! Items carry a two-factor latent code: a topic cluster (`latent_dim` of
//! them) and one of a few orthogonal styles. Titles draw a `content_signal`
//! fraction of their words from the item's topic and style pools and the
//! rest from a shared pool, so hashed title embeddings expose exactly as
//! much latent structure as the knob allows, factored along independent
//! directions. Users prefer a topic and a style; interactions sample items
//! by popularity-weighted affinity over the preferred cells.
//!
//! A `cold_item_fraction` of items debuts only in the final 5% of the
//! timeline (safely inside the last tenth) with enough scheduled events to
//! survive 5-core filtering; cold items realize novel topic/style
//! combinations of words that all occur among warm items.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use coldrec_core::derive_seed;

pub const TIMELINE_TICKS: u64 = 1_000_000;
/// Cold items debut at or after this tick.
pub const COLD_DEBUT_START: u64 = 950_000;

pub const STYLE_COUNT: usize = 4;
const WORDS_PER_POOL: usize = 8;
const TITLE_WORDS: (usize, usize) = (4, 7);
const COLD_EVENTS_PER_ITEM: (usize, usize) = (10, 18);
const MIN_WARM_ITEM_EVENTS: usize = 6;
const GENERIC_TAGS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Number of latent topic clusters.
    pub latent_dim: usize,
    pub interactions_per_user: (usize, usize),
    /// Fraction of title words (and category tags) that carry the latent
    /// factors.
    pub content_signal: f64,
    pub cold_item_fraction: f64,
    /// Size of the shared (factor-agnostic) title word pool.
    pub title_vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2_000,
            n_items: 1_000,
            latent_dim: 16,
            interactions_per_user: (12, 26),
            content_signal: 0.8,
            cold_item_fraction: 0.05,
            title_vocab_size: 120,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_cold_items: usize,
    /// Topic cluster per item index.
    pub item_clusters: Vec<usize>,
    /// Style per item index.
    pub item_styles: Vec<usize>,
}

/// A generated corpus, ready to write or parse.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub interactions_tsv: String,
    pub items_jsonl: String,
    pub stats: SynthStats,
}

/// Deterministic pronounceable word: base-18 digits over syllables.
fn make_word(mut n: usize) -> String {
    const SYLLABLES: [&str; 18] = [
        "ka", "ri", "mo", "ta", "lu", "ne", "so", "vi", "pa", "ze", "du", "fi", "go", "he", "bi",
        "wa", "ku", "ry",
    ];
    let mut word = String::new();
    loop {
        word.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
    }
    while word.len() < 4 {
        word.push_str(SYLLABLES[7]);
    }
    word
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.cold_item_fraction >= 1.0 || cfg.cold_item_fraction < 0.0 {
        bail!("infeasible config: cold_item_fraction must lie in [0, 1)");
    }
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.latent_dim == 0 {
        bail!("infeasible config: sizes must be positive");
    }
    let (ipu_min, ipu_max) = cfg.interactions_per_user;
    if ipu_min == 0 || ipu_min > ipu_max {
        bail!("infeasible config: bad interactions_per_user range");
    }
    if !(0.0..=1.0).contains(&cfg.content_signal) {
        bail!("infeasible config: content_signal must lie in [0, 1]");
    }

    let topics = cfg.latent_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, "synth"));

    // Disjoint word pools: shared, then per-topic, then per-style.
    let shared_pool: Vec<String> = (0..cfg.title_vocab_size).map(make_word).collect();
    let topic_pools: Vec<Vec<String>> = (0..topics)
        .map(|z| {
            (0..WORDS_PER_POOL)
                .map(|j| make_word(cfg.title_vocab_size + z * WORDS_PER_POOL + j))
                .collect()
        })
        .collect();
    let style_pools: Vec<Vec<String>> = (0..STYLE_COUNT)
        .map(|s| {
            (0..WORDS_PER_POOL)
                .map(|j| {
                    make_word(cfg.title_vocab_size + (topics + s) * WORDS_PER_POOL + j)
                })
                .collect()
        })
        .collect();

    // Items: topic by round-robin, style at random; cold subset by shuffle.
    let item_topics: Vec<usize> = (0..cfg.n_items).map(|i| i % topics).collect();
    let item_styles: Vec<usize> = (0..cfg.n_items)
        .map(|_| rng.gen_range(0..STYLE_COUNT))
        .collect();
    let n_cold = ((cfg.n_items as f64) * cfg.cold_item_fraction).floor() as usize;
    let mut item_order: Vec<usize> = (0..cfg.n_items).collect();
    item_order.shuffle(&mut rng);
    let mut is_cold = vec![false; cfg.n_items];
    for &i in item_order.iter().take(n_cold) {
        is_cold[i] = true;
    }

    let mut items_jsonl = String::new();
    for i in 0..cfg.n_items {
        let (z, s) = (item_topics[i], item_styles[i]);
        let n_words = rng.gen_range(TITLE_WORDS.0..=TITLE_WORDS.1);
        let mut title_words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let word = if rng.gen::<f64>() < cfg.content_signal {
                if rng.gen::<bool>() {
                    topic_pools[z][rng.gen_range(0..WORDS_PER_POOL)].clone()
                } else {
                    style_pools[s][rng.gen_range(0..WORDS_PER_POOL)].clone()
                }
            } else {
                shared_pool[rng.gen_range(0..shared_pool.len())].clone()
            };
            title_words.push(word);
        }
        let mut categories = Vec::new();
        if rng.gen::<f64>() < cfg.content_signal {
            categories.push(format!("genre-{z}"));
            categories.push(format!("style-{s}"));
        } else {
            categories.push(format!("misc-{}", rng.gen_range(0..GENERIC_TAGS)));
        }
        let meta = serde_json::json!({
            "item_id": format!("i{i:04}"),
            "title": title_words.join(" "),
            "categories": categories,
        });
        writeln!(items_jsonl, "{meta}").expect("string write");
    }

    // Warm items per (topic, style) cell and per topic, with popularity
    // weights.
    let cell = |z: usize, s: usize| z * STYLE_COUNT + s;
    let mut cell_warm: Vec<Vec<usize>> = vec![Vec::new(); topics * STYLE_COUNT];
    let mut topic_warm: Vec<Vec<usize>> = vec![Vec::new(); topics];
    for i in 0..cfg.n_items {
        if !is_cold[i] {
            cell_warm[cell(item_topics[i], item_styles[i])].push(i);
            topic_warm[item_topics[i]].push(i);
        }
    }
    for members in &topic_warm {
        if members.is_empty() {
            bail!("infeasible config: a topic holds no warm items");
        }
    }
    let zipf = |members: &[usize]| -> Vec<f64> {
        (0..members.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(1.0))
            .collect()
    };
    let cell_weights: Vec<Vec<f64>> = cell_warm.iter().map(|m| zipf(m)).collect();
    let topic_weights: Vec<Vec<f64>> = topic_warm.iter().map(|m| zipf(m)).collect();

    // Users: primary/secondary topic plus a preferred style.
    let user_prefs: Vec<(usize, usize, usize)> = (0..cfg.n_users)
        .map(|_| {
            let primary = rng.gen_range(0..topics);
            let secondary = if topics > 1 {
                let mut s = rng.gen_range(0..topics - 1);
                if s >= primary {
                    s += 1;
                }
                s
            } else {
                primary
            };
            let style = rng.gen_range(0..STYLE_COUNT);
            (primary, secondary, style)
        })
        .collect();
    let mut users_by_topic: Vec<Vec<usize>> = vec![Vec::new(); topics];
    for (u, &(p, _, _)) in user_prefs.iter().enumerate() {
        users_by_topic[p].push(u);
    }

    let pick_weighted = |rng: &mut ChaCha20Rng, members: &[usize], weights: &[f64]| -> usize {
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut idx = weights.len() - 1;
        for (r, w) in weights.iter().enumerate() {
            draw -= w;
            if draw <= 0.0 {
                idx = r;
                break;
            }
        }
        members[idx]
    };

    // Main user-driven stream over warm items.
    let mut events: Vec<(u64, usize, usize)> = Vec::new(); // (tick, user, item)
    let mut item_counts = vec![0usize; cfg.n_items];
    for u in 0..cfg.n_users {
        let (primary, secondary, style) = user_prefs[u];
        let n_events = rng.gen_range(ipu_min..=ipu_max);
        for _ in 0..n_events {
            let tick = rng.gen_range(0..TIMELINE_TICKS);
            let roll = rng.gen::<f64>();
            let z = if roll < 0.7 {
                primary
            } else if roll < 0.9 {
                secondary
            } else {
                rng.gen_range(0..topics)
            };
            let s = if rng.gen::<f64>() < 0.7 {
                style
            } else {
                rng.gen_range(0..STYLE_COUNT)
            };
            let item = if cell_warm[cell(z, s)].is_empty() {
                pick_weighted(&mut rng, &topic_warm[z], &topic_weights[z])
            } else {
                pick_weighted(&mut rng, &cell_warm[cell(z, s)], &cell_weights[cell(z, s)])
            };
            item_counts[item] += 1;
            events.push((tick, u, item));
        }
    }

    // Scheduled cold-item events, all inside the debut window, from users
    // whose primary topic matches.
    for i in 0..cfg.n_items {
        if !is_cold[i] {
            continue;
        }
        let z = item_topics[i];
        let quota = rng.gen_range(COLD_EVENTS_PER_ITEM.0..=COLD_EVENTS_PER_ITEM.1);
        for _ in 0..quota {
            let tick = rng.gen_range(COLD_DEBUT_START..TIMELINE_TICKS);
            let user = if users_by_topic[z].is_empty() {
                rng.gen_range(0..cfg.n_users)
            } else {
                users_by_topic[z][rng.gen_range(0..users_by_topic[z].len())]
            };
            item_counts[i] += 1;
            events.push((tick, user, i));
        }
    }

    // Floor for warm items so every item appears and survives filtering.
    for i in 0..cfg.n_items {
        if is_cold[i] {
            continue;
        }
        let z = item_topics[i];
        while item_counts[i] < MIN_WARM_ITEM_EVENTS {
            let tick = rng.gen_range(0..COLD_DEBUT_START);
            let user = if users_by_topic[z].is_empty() {
                rng.gen_range(0..cfg.n_users)
            } else {
                users_by_topic[z][rng.gen_range(0..users_by_topic[z].len())]
            };
            item_counts[i] += 1;
            events.push((tick, user, i));
        }
    }

    // Stable sort by tick keeps generation order as the tie-break, so the
    // file bytes are a pure function of the config.
    events.sort_by_key(|&(tick, _, _)| tick);
    let mut interactions_tsv = String::with_capacity(events.len() * 24);
    for (tick, user, item) in &events {
        writeln!(interactions_tsv, "u{user:04}\ti{item:04}\t{tick}").expect("string write");
    }

    Ok(SyntheticCorpus {
        interactions_tsv,
        items_jsonl,
        stats: SynthStats {
            n_users: cfg.n_users,
            n_items: cfg.n_items,
            n_interactions: events.len(),
            n_cold_items: n_cold,
            item_clusters: item_topics,
            item_styles,
        },
    })
}

/// Generate and write `interactions.tsv` / `items.jsonl` under `dir`.
pub fn write_synthetic(cfg: &SynthConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let corpus = generate_synthetic(cfg)?;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating corpus directory {}", dir.display()))?;
    let interactions = dir.join("interactions.tsv");
    let items = dir.join("items.jsonl");
    std::fs::write(&interactions, &corpus.interactions_tsv)?;
    std::fs::write(&items, &corpus.items_jsonl)?;
    Ok((interactions, items))
}
