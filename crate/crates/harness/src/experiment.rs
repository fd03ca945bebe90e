//! End-to-end experiment execution: ingest -> filter -> split -> encode ->
//! train (SFT, optional RL) -> evaluate, with every artifact written under a
//! run directory named by the config digest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use coldrec_core::corpus::{
    build_user_histories, k_core_filter, load_interactions, load_item_metadata, InteractionLog,
    ItemCatalog, ItemId,
};
use coldrec_core::decode::build_trie;
use coldrec_core::derive_seed;
use coldrec_core::eval::{evaluate, EvalOptions, EvalReport, EvalSetting};
use coldrec_core::identifiers::{
    content_embedding, Codebook, ContentEmbedding, IdentifierMap, Scheme, TokenId,
};
use coldrec_core::model::{fit_markov, init_recurrent, MarkovModel, RecurrentModel, SequenceModel, TokenSequence};
use coldrec_core::protocol::{build_manifest, validate_manifest, ProtocolConfig, SplitManifest};
use coldrec_core::training::{
    make_training_examples, rl_finetune, sft_train, trace_csv, RlTask, TrainConfig, TrainExample,
};

use crate::config::{ExperimentConfig, ModelConfig};

/// Validation problems map to exit code 2.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failure: {}", self.0)
    }
}

impl std::error::Error for ValidationFailure {}

/// Either trained model behind the one scoring interface.
pub enum TrainedModel {
    Markov(MarkovModel),
    Recurrent(RecurrentModel),
}

#[derive(Clone)]
pub enum ModelState {
    Markov(Vec<TokenId>),
    Recurrent(Vec<f64>),
}

impl SequenceModel for TrainedModel {
    type State = ModelState;

    fn vocab_size(&self) -> usize {
        match self {
            TrainedModel::Markov(m) => m.vocab_size(),
            TrainedModel::Recurrent(m) => m.vocab_size(),
        }
    }

    fn initial_state(&self) -> ModelState {
        match self {
            TrainedModel::Markov(m) => ModelState::Markov(m.initial_state()),
            TrainedModel::Recurrent(m) => ModelState::Recurrent(m.initial_state()),
        }
    }

    fn advance(&self, state: &ModelState, token: TokenId) -> coldrec_core::Result<ModelState> {
        match (self, state) {
            (TrainedModel::Markov(m), ModelState::Markov(s)) => {
                Ok(ModelState::Markov(m.advance(s, token)?))
            }
            (TrainedModel::Recurrent(m), ModelState::Recurrent(s)) => {
                Ok(ModelState::Recurrent(m.advance(s, token)?))
            }
            _ => unreachable!("state kind matches model kind"),
        }
    }

    fn step_logprobs(&self, state: &ModelState) -> Vec<f64> {
        match (self, state) {
            (TrainedModel::Markov(m), ModelState::Markov(s)) => m.step_logprobs(s),
            (TrainedModel::Recurrent(m), ModelState::Recurrent(s)) => m.step_logprobs(s),
            _ => unreachable!("state kind matches model kind"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Split,
    Encode,
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub raw_interactions: usize,
    pub k_core_rounds: usize,
    pub synthesized_metadata: usize,
    pub warm_items: usize,
    pub cold_items: usize,
    pub warm_users: usize,
    pub cold_users: usize,
    pub eval_cases: usize,
}

#[derive(Serialize)]
struct Provenance<'a> {
    config: &'a ExperimentConfig,
    config_digest: String,
    crate_version: &'static str,
    format_versions: FormatVersions,
    dataset: &'a DatasetStats,
}

#[derive(Serialize)]
struct FormatVersions {
    identifier_map: u32,
    codebook: u32,
    checkpoint: u32,
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: Option<EvalReport>,
    pub stats: DatasetStats,
    pub cached: bool,
}

/// Full pipeline; `reuse` returns a cached report when the run directory
/// already holds one for this exact config.
pub fn run_experiment(cfg: &ExperimentConfig, run_root: &Path, reuse: bool) -> Result<RunOutcome> {
    run_until(cfg, run_root, Stage::Eval, reuse)
}

pub fn run_until(
    cfg: &ExperimentConfig,
    run_root: &Path,
    stage: Stage,
    reuse: bool,
) -> Result<RunOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        bail!(ValidationFailure(problems.join("; ")));
    }
    let run_dir = run_root.join(cfg.run_id());
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;
    std::fs::write(run_dir.join("config.json"), cfg.to_json()).context("stage: provenance")?;

    let report_path = run_dir.join("report.json");
    if reuse && stage == Stage::Eval && report_path.exists() {
        let report: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&report_path)?)
                .context("loading cached report")?;
        let stats: DatasetStats = serde_json::from_str(
            &std::fs::read_to_string(run_dir.join("stats.json"))
                .context("loading cached stats")?,
        )?;
        return Ok(RunOutcome {
            run_dir,
            report: Some(report),
            stats,
            cached: true,
        });
    }

    // Ingest.
    let raw_log = load_interactions(&cfg.interactions)
        .map_err(validation)
        .context("stage: ingest")?;
    let mut catalog = load_item_metadata(&cfg.items)
        .map_err(validation)
        .context("stage: ingest")?;
    let synthesized = catalog.cover_log(&raw_log);
    if !synthesized.is_empty() {
        eprintln!(
            "warning: synthesized metadata for {} item(s) missing from the catalog",
            synthesized.len()
        );
    }

    // Filter.
    let filtered = k_core_filter(&raw_log, cfg.k_core);
    if filtered.emptied {
        bail!(ValidationFailure(format!(
            "{}-core filtering removed every interaction",
            cfg.k_core
        )));
    }
    let log = filtered.log;

    // Split.
    let protocol = ProtocolConfig {
        train_fraction: cfg.train_fraction,
        user_fraction: cfg.user_fraction,
        val_fraction_of_holdout: cfg.val_fraction_of_holdout,
        cold_context_min: cfg.cold_context_min,
        cold_context_max: cfg.cold_context_max,
        seed: cfg.seed,
    };
    let manifest = build_manifest(&log, &protocol)
        .map_err(validation)
        .context("stage: split")?;
    let violations = validate_manifest(&manifest, &log);
    if !violations.is_empty() {
        bail!(ValidationFailure(format!(
            "manifest failed validation: {}",
            violations.join("; ")
        )));
    }
    manifest.save(&run_dir.join("manifest.json")).context("stage: split")?;

    let mut stats = DatasetStats {
        users: log.n_users(),
        items: log.n_items(),
        interactions: log.len(),
        raw_interactions: raw_log.len(),
        k_core_rounds: filtered.rounds,
        synthesized_metadata: synthesized.len(),
        warm_items: manifest.warm_items.len(),
        cold_items: manifest.cold_items.len(),
        warm_users: manifest.warm_users.len(),
        cold_users: manifest.cold_users.len(),
        eval_cases: manifest.eval_cases.len(),
    };
    std::fs::write(run_dir.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    write_provenance(cfg, &stats, &run_dir)?;
    if stage == Stage::Split {
        return Ok(RunOutcome {
            run_dir,
            report: None,
            stats,
            cached: false,
        });
    }

    // Encode identifiers.
    let (id_map, codebook) =
        build_identifiers(cfg, &catalog, &manifest).context("stage: encode")?;
    let map_problems = id_map.validate();
    if !map_problems.is_empty() {
        bail!(ValidationFailure(format!(
            "identifier map invalid: {}",
            map_problems.join("; ")
        )));
    }
    id_map.save(&run_dir.join("id_map.json")).context("stage: encode")?;
    if let Some(cb) = &codebook {
        cb.save(&run_dir.join("codebook.json")).context("stage: encode")?;
    }
    if stage == Stage::Encode {
        return Ok(RunOutcome {
            run_dir,
            report: None,
            stats,
            cached: false,
        });
    }

    // Train.
    let examples =
        make_training_examples(&manifest, &log, &id_map, cfg.train.max_context_items)
            .context("stage: train")?;
    if examples.is_empty() {
        bail!(ValidationFailure(
            "no training examples; corpus too small for the split".into()
        ));
    }
    let with_rl = cfg.rl.is_some();
    let model = train_model(cfg, &examples, &manifest, &id_map, &run_dir)
        .context("stage: train")?;
    if stage == Stage::Train {
        return Ok(RunOutcome {
            run_dir,
            report: None,
            stats,
            cached: false,
        });
    }

    // Evaluate both protocols.
    let opts = EvalOptions {
        k: cfg.eval_k,
        beam_width: cfg.beam_width,
        max_context_items: cfg.eval_max_context_items,
    };
    let item_cold = evaluate(&model, &manifest, &id_map, EvalSetting::ItemColdProtocol, &opts)
        .context("stage: eval (item-cold)")?;
    let user_cold = evaluate(&model, &manifest, &id_map, EvalSetting::UserColdProtocol, &opts)
        .context("stage: eval (user-cold)")?;
    let report = EvalReport {
        scheme: cfg.scheme.to_string(),
        model: cfg.model.descriptor(with_rl),
        k: cfg.eval_k,
        config_digest: cfg.digest(),
        protocols: vec![item_cold, user_cold],
    };
    std::fs::write(&report_path, report.to_json().map_err(|e| anyhow!(e))?)
        .context("stage: eval")?;
    std::fs::write(run_dir.join("report.csv"), report.to_csv()).context("stage: eval")?;
    stats.eval_cases = manifest.eval_cases.len();

    Ok(RunOutcome {
        run_dir,
        report: Some(report),
        stats,
        cached: false,
    })
}

fn validation(err: coldrec_core::Error) -> anyhow::Error {
    use coldrec_core::Error as E;
    match &err {
        E::Parse { .. } | E::EmptyLog(_) | E::Catalog(_) | E::Protocol(_) | E::Split(_) => {
            anyhow!(ValidationFailure(err.to_string()))
        }
        _ => anyhow!(err),
    }
}

/// Content embeddings for a sorted set of items.
fn embed_items<'a, I>(items: I, catalog: &ItemCatalog, dim: usize, seed: u64) -> Result<Vec<ContentEmbedding>>
where
    I: IntoIterator<Item = &'a ItemId>,
{
    items
        .into_iter()
        .map(|item| {
            let meta = catalog
                .get(item)
                .ok_or_else(|| anyhow!("item {item} missing from catalog"))?;
            Ok(content_embedding(meta, dim, seed))
        })
        .collect()
}

fn build_identifiers(
    cfg: &ExperimentConfig,
    catalog: &ItemCatalog,
    manifest: &SplitManifest,
) -> Result<(IdentifierMap, Option<Codebook>)> {
    match cfg.scheme {
        Scheme::Atomic => Ok((IdentifierMap::assign_atomic(catalog)?, None)),
        Scheme::Textual => Ok((
            IdentifierMap::assign_textual(catalog, cfg.textual_max_len)?,
            None,
        )),
        scheme => {
            let q = &cfg.quantizer;
            let embed_seed = derive_seed(cfg.seed, "embed");
            let warm_items: Vec<&ItemId> = manifest.warm_items.iter().collect();
            let warm_embeddings = embed_items(
                warm_items.iter().copied(),
                catalog,
                q.dim,
                embed_seed,
            )?;
            let vectors: Vec<Vec<f64>> =
                warm_embeddings.iter().map(|e| e.vector.clone()).collect();
            let quant_seed = derive_seed(cfg.seed, "quantizer");
            let trained = match scheme {
                Scheme::Rq => {
                    coldrec_core::identifiers::train_rq(&vectors, q.rq_levels, q.codes_per_level, quant_seed)?
                }
                Scheme::Bkm => {
                    coldrec_core::identifiers::train_bkm(&vectors, q.bkm_depth, q.codes_per_level, quant_seed)?
                }
                Scheme::Opq => coldrec_core::identifiers::train_opq(
                    &vectors,
                    q.opq_subspaces,
                    q.codes_per_level,
                    quant_seed,
                    q.opq_outer_iters,
                )?,
                _ => unreachable!(),
            };
            let warm_pairs: Vec<(ItemId, Vec<usize>)> = warm_items
                .iter()
                .map(|item| (*item).clone())
                .zip(trained.codes.iter().cloned())
                .collect();
            let mut id_map = IdentifierMap::from_codes(scheme, &trained.codebook, &warm_pairs)?;
            // Cold items receive codes from the frozen codebook.
            for item in &manifest.cold_items {
                let embedding = embed_items([item], catalog, q.dim, embed_seed)?
                    .pop()
                    .expect("one embedding");
                id_map.encode_cold_item(&trained.codebook, &embedding)?;
            }
            Ok((id_map, Some(trained.codebook)))
        }
    }
}

fn train_model(
    cfg: &ExperimentConfig,
    examples: &[TrainExample],
    manifest: &SplitManifest,
    id_map: &IdentifierMap,
    run_dir: &Path,
) -> Result<TrainedModel> {
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        rl_iters: cfg.rl.as_ref().map(|r| r.iters).unwrap_or(0),
        rl_samples_per_context: cfg.rl.as_ref().map(|r| r.samples_per_context).unwrap_or(8),
        rl_learning_rate: cfg.rl.as_ref().map(|r| r.learning_rate).unwrap_or(0.0),
        reward_k: cfg.eval_k,
        seed: derive_seed(cfg.seed, "train"),
        max_train_examples: cfg.train.max_train_examples,
    };
    match &cfg.model {
        ModelConfig::Markov { order, alpha } => {
            if cfg.rl.is_some() {
                bail!(coldrec_core::Error::Unsupported(
                    "policy-gradient fine-tuning needs the recurrent model"
                ));
            }
            let subsampled = subsample_indices(
                examples.len(),
                cfg.train.max_train_examples,
                derive_seed(train_cfg.seed, "markov-subsample"),
            );
            let sequences: Vec<TokenSequence> = subsampled
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let mut tokens = ex.context.tokens().to_vec();
                    tokens.extend_from_slice(&ex.target);
                    tokens.push(coldrec_core::identifiers::special::EOS);
                    TokenSequence::new(tokens).expect("BOS stays at front")
                })
                .collect::<Vec<_>>();
            let model = fit_markov(&sequences, id_map.vocab_size(), *order, *alpha)?;
            std::fs::write(
                run_dir.join("model.json"),
                serde_json::to_string(&model)?,
            )?;
            Ok(TrainedModel::Markov(model))
        }
        ModelConfig::Recurrent { hidden } => {
            let mut model = init_recurrent(
                id_map.vocab_size(),
                *hidden,
                derive_seed(cfg.seed, "init"),
            )?;
            let outcome = sft_train(&mut model, examples, &train_cfg)?;
            std::fs::write(
                run_dir.join("loss_trace.csv"),
                trace_csv(("epoch", "loss"), &outcome.loss_trace),
            )?;
            if let Some(rl) = &cfg.rl {
                let trie = build_trie(id_map, &manifest.warm_items)?;
                let picked = subsample_indices(
                    examples.len(),
                    Some(rl.max_contexts),
                    derive_seed(train_cfg.seed, "rl-contexts"),
                );
                let tasks: Vec<RlTask> = picked
                    .iter()
                    .map(|&i| RlTask {
                        context: examples[i].context.clone(),
                        target: examples[i].target_item.clone(),
                    })
                    .collect();
                let rl_outcome = rl_finetune(&mut model, &tasks, &trie, &train_cfg)?;
                std::fs::write(
                    run_dir.join("reward_trace.csv"),
                    trace_csv(("iter", "mean_reward"), &rl_outcome.reward_trace),
                )?;
            }
            model.save_checkpoint(run_dir, "checkpoint")?;
            Ok(TrainedModel::Recurrent(model))
        }
    }
}

/// Deterministic subsample of 0..n (sorted), capped at `cap`.
fn subsample_indices(n: usize, cap: Option<usize>, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    if let Some(cap) = cap {
        if n > cap {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            indices.shuffle(&mut rng);
            indices.truncate(cap);
            indices.sort_unstable();
        }
    }
    indices
}

fn write_provenance(cfg: &ExperimentConfig, stats: &DatasetStats, run_dir: &Path) -> Result<()> {
    let provenance = Provenance {
        config: cfg,
        config_digest: cfg.digest(),
        crate_version: env!("CARGO_PKG_VERSION"),
        format_versions: FormatVersions {
            identifier_map: coldrec_core::identifiers::IDENTIFIER_MAP_FORMAT_VERSION,
            codebook: coldrec_core::identifiers::codebook::CODEBOOK_FORMAT_VERSION,
            checkpoint: coldrec_core::model::recurrent::CHECKPOINT_FORMAT_VERSION,
        },
        dataset: stats,
    };
    std::fs::write(
        run_dir.join("provenance.json"),
        serde_json::to_string_pretty(&provenance)?,
    )?;
    Ok(())
}

/// Dataset statistics for the `ingest` subcommand.
pub fn ingest_stats(
    interactions: &Path,
    items: &Path,
    k_core: usize,
) -> Result<(InteractionLog, ItemCatalog, usize)> {
    let log = load_interactions(interactions).map_err(validation)?;
    let mut catalog = load_item_metadata(items).map_err(validation)?;
    let synthesized = catalog.cover_log(&log).len();
    let filtered = k_core_filter(&log, k_core);
    let _ = build_user_histories(&filtered.log);
    Ok((filtered.log, catalog, synthesized))
}

/// Items reachable in training: used by subcommands needing a quick trie.
pub fn warm_item_set(manifest: &SplitManifest) -> BTreeSet<ItemId> {
    manifest.warm_items.clone()
}
