//! Experiment configuration: one JSON document drives the whole pipeline,
//! and its digest content-addresses the run directory.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use coldrec_core::identifiers::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Markov { order: usize, alpha: f64 },
    Recurrent { hidden: usize },
}

impl ModelConfig {
    pub fn descriptor(&self, with_rl: bool) -> String {
        let base = match self {
            ModelConfig::Markov { order, .. } => format!("markov-o{order}"),
            ModelConfig::Recurrent { hidden } => format!("recurrent-h{hidden}"),
        };
        if with_rl {
            format!("{base}+rl")
        } else {
            base
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Recurrent { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training contexts are tail-truncated to this many items.
    pub max_context_items: usize,
    /// Deterministic cap on the number of training examples.
    pub max_train_examples: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 3,
            batch_size: 64,
            learning_rate: 0.4,
            max_context_items: 8,
            max_train_examples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlParams {
    pub iters: usize,
    pub samples_per_context: usize,
    pub learning_rate: f64,
    /// Deterministic cap on the number of RL contexts.
    pub max_contexts: usize,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            iters: 20,
            samples_per_context: 8,
            learning_rate: 0.05,
            max_contexts: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerParams {
    pub dim: usize,
    pub rq_levels: usize,
    pub codes_per_level: usize,
    pub opq_subspaces: usize,
    pub opq_outer_iters: usize,
    pub bkm_depth: usize,
}

impl Default for QuantizerParams {
    fn default() -> Self {
        QuantizerParams {
            dim: 64,
            rq_levels: 3,
            codes_per_level: 32,
            opq_subspaces: 4,
            opq_outer_iters: 8,
            bkm_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub k_core: usize,
    pub train_fraction: f64,
    pub user_fraction: f64,
    pub val_fraction_of_holdout: f64,
    pub cold_context_min: usize,
    pub cold_context_max: usize,
    pub scheme: Scheme,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub rl: Option<RlParams>,
    pub quantizer: QuantizerParams,
    pub textual_max_len: usize,
    pub eval_k: usize,
    pub beam_width: usize,
    /// Evaluation contexts are tail-truncated to this many items
    /// (None = the full prior history, the protocol default).
    pub eval_max_context_items: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            interactions: PathBuf::new(),
            items: PathBuf::new(),
            k_core: 5,
            train_fraction: 0.9,
            user_fraction: 0.1,
            val_fraction_of_holdout: 0.5,
            cold_context_min: 1,
            cold_context_max: 10,
            scheme: Scheme::Rq,
            model: ModelConfig::default(),
            train: TrainParams::default(),
            rl: None,
            quantizer: QuantizerParams::default(),
            textual_max_len: 16,
            eval_k: 10,
            beam_width: 64,
            eval_max_context_items: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(self).expect("config serializes"));
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Short digest used as the run-directory name.
    pub fn run_id(&self) -> String {
        self.digest()[..16].to_string()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.interactions.as_os_str().is_empty() {
            problems.push("interactions path is empty".into());
        }
        if self.items.as_os_str().is_empty() {
            problems.push("items path is empty".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push("train_fraction must lie in (0,1)".into());
        }
        if !(self.user_fraction > 0.0 && self.user_fraction < 1.0) {
            problems.push("user_fraction must lie in (0,1)".into());
        }
        if self.k_core == 0 {
            problems.push("k_core must be at least 1".into());
        }
        if self.eval_k == 0 || self.beam_width < self.eval_k {
            problems.push("need beam_width >= eval_k >= 1".into());
        }
        if self.quantizer.dim % self.quantizer.opq_subspaces != 0 {
            problems.push("quantizer dim must divide into opq_subspaces".into());
        }
        if let ModelConfig::Markov { order, alpha } = &self.model {
            if *order == 0 || *alpha <= 0.0 {
                problems.push("markov model needs order >= 1 and alpha > 0".into());
            }
        }
        problems
    }
}
