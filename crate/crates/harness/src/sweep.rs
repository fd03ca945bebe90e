//! Experiment sweeps over scheme x model-width x training-strategy x seed.
//! Runs are content-addressed, so re-running a sweep resumes where it
//! stopped.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use coldrec_core::eval::EvalReport;

use crate::config::{ExperimentConfig, ModelConfig, RlParams};
use crate::experiment::run_experiment;
use crate::report::emit_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sft,
    SftRl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    /// Axis values; empty means "keep the base setting".
    pub schemes: Vec<coldrec_core::identifiers::Scheme>,
    pub hidden_widths: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base: ExperimentConfig::default(),
            schemes: Vec::new(),
            hidden_widths: Vec::new(),
            strategies: Vec::new(),
            seeds: Vec::new(),
        }
    }
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading sweep config {}", path.display()))?;
        Ok(serde_json::from_str(&text)
            .with_context(|| format!("parsing sweep config {}", path.display()))?)
    }

    /// Cross product of all configured axes.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let schemes: Vec<_> = if self.schemes.is_empty() {
            vec![self.base.scheme]
        } else {
            self.schemes.clone()
        };
        let widths: Vec<Option<usize>> = if self.hidden_widths.is_empty() {
            vec![None]
        } else {
            self.hidden_widths.iter().map(|&w| Some(w)).collect()
        };
        let strategies: Vec<_> = if self.strategies.is_empty() {
            vec![match self.base.rl {
                Some(_) => Strategy::SftRl,
                None => Strategy::Sft,
            }]
        } else {
            self.strategies.clone()
        };
        let seeds: Vec<_> = if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        };

        let mut configs = Vec::new();
        for &scheme in &schemes {
            for &width in &widths {
                for &strategy in &strategies {
                    for &seed in &seeds {
                        let mut cfg = self.base.clone();
                        cfg.scheme = scheme;
                        if let Some(w) = width {
                            cfg.model = ModelConfig::Recurrent { hidden: w };
                        }
                        cfg.rl = match strategy {
                            Strategy::Sft => None,
                            Strategy::SftRl => {
                                Some(self.base.rl.clone().unwrap_or_else(RlParams::default))
                            }
                        };
                        cfg.seed = seed;
                        configs.push(cfg);
                    }
                }
            }
        }
        configs
    }
}

pub struct SweepOutcome {
    pub reports: Vec<EvalReport>,
    pub report_dir: PathBuf,
    pub run_dirs: Vec<PathBuf>,
}

/// Run every combination (reusing cached runs) and emit the combined report
/// under `<run_root>/sweep-<n>` artifacts.
pub fn run_sweep(sweep: &SweepConfig, run_root: &Path) -> Result<SweepOutcome> {
    let configs = sweep.expand();
    if configs.is_empty() {
        bail!("sweep expands to no runs");
    }
    let mut reports = Vec::with_capacity(configs.len());
    let mut run_dirs = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        eprintln!(
            "[sweep {}/{}] scheme={} model={} seed={}",
            i + 1,
            configs.len(),
            cfg.scheme,
            cfg.model.descriptor(cfg.rl.is_some()),
            cfg.seed
        );
        let outcome = run_experiment(cfg, run_root, true)?;
        reports.push(outcome.report.expect("full run returns a report"));
        run_dirs.push(outcome.run_dir);
    }
    let report_dir = run_root.join("sweep-report");
    emit_report(&reports, &report_dir)?;
    Ok(SweepOutcome {
        reports,
        report_dir,
        run_dirs,
    })
}
