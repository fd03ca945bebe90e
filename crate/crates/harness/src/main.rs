//! `coldrec` — benchmark generative recommenders under cold-start protocols.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use coldrec::config::{ExperimentConfig, ModelConfig};
use coldrec::experiment::{ingest_stats, run_until, Stage, ValidationFailure};
use coldrec::report::emit_report;
use coldrec::sweep::{run_sweep, SweepConfig};
use coldrec::synth::{write_synthetic, SynthConfig};
use coldrec_core::identifiers::Scheme;

/// Root directory for run artifacts: `--run-root`, else $COLDREC_RUN_ROOT,
/// else ./runs.
const RUN_ROOT_ENV: &str = "COLDREC_RUN_ROOT";

#[derive(Parser)]
#[command(name = "coldrec", about = "Cold-start benchmarks for generative recommendation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    interactions: Option<PathBuf>,

    #[arg(long)]
    items: Option<PathBuf>,

    /// Identifier scheme: atomic | textual | rq | bkm | opq.
    #[arg(long)]
    scheme: Option<String>,

    /// Recurrent hidden width (selects the recurrent model).
    #[arg(long)]
    hidden: Option<usize>,

    /// Markov order (selects the Markov model).
    #[arg(long)]
    markov_order: Option<usize>,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    k_core: Option<usize>,

    #[arg(long)]
    eval_k: Option<usize>,

    #[arg(long)]
    beam_width: Option<usize>,

    /// Attach a REINFORCE stage after SFT with this many iterations.
    #[arg(long)]
    rl_iters: Option<usize>,

    #[arg(long)]
    run_root: Option<PathBuf>,

    /// Recompute even when the run directory holds a cached report.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn build_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.interactions {
            cfg.interactions = p.clone();
        }
        if let Some(p) = &self.items {
            cfg.items = p.clone();
        }
        if let Some(s) = &self.scheme {
            cfg.scheme = s
                .parse::<Scheme>()
                .map_err(|e| anyhow::anyhow!(ValidationFailure(e.to_string())))?;
        }
        if let Some(h) = self.hidden {
            cfg.model = ModelConfig::Recurrent { hidden: h };
        }
        if let Some(order) = self.markov_order {
            cfg.model = ModelConfig::Markov { order, alpha: 0.1 };
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k_core {
            cfg.k_core = k;
        }
        if let Some(k) = self.eval_k {
            cfg.eval_k = k;
        }
        if let Some(b) = self.beam_width {
            cfg.beam_width = b;
        }
        if let Some(iters) = self.rl_iters {
            let mut rl = cfg.rl.unwrap_or_default();
            rl.iters = iters;
            cfg.rl = Some(rl);
        }
        Ok(cfg)
    }

    fn run_root(&self) -> PathBuf {
        self.run_root
            .clone()
            .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (interactions.tsv + items.jsonl).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 1000)]
        items: usize,
        #[arg(long, default_value_t = 16)]
        clusters: usize,
        #[arg(long, default_value_t = 12)]
        ipu_min: usize,
        #[arg(long, default_value_t = 26)]
        ipu_max: usize,
        #[arg(long, default_value_t = 0.8)]
        content_signal: f64,
        #[arg(long, default_value_t = 0.05)]
        cold_fraction: f64,
        #[arg(long, default_value_t = 120)]
        title_vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load, validate, and summarize a corpus.
    Ingest {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long, default_value_t = 5)]
        k_core: usize,
    },
    /// Build and validate the split manifest.
    Split(RunArgs),
    /// Construct identifiers (and codebooks) for the configured scheme.
    Encode(RunArgs),
    /// Train the configured model (SFT, optional RL).
    Train(RunArgs),
    /// Run the full pipeline and evaluate both protocols.
    Eval(RunArgs),
    /// Run a sweep config (scheme x width x strategy x seed).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_root: Option<PathBuf>,
    },
    /// Combine run-directory reports into CSV/JSON/SVG artifacts.
    Report {
        /// Run directories containing report.json files.
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .any(|cause| cause.downcast_ref::<ValidationFailure>().is_some());
            if validation {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            users,
            items,
            clusters,
            ipu_min,
            ipu_max,
            content_signal,
            cold_fraction,
            title_vocab,
            seed,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                latent_dim: clusters,
                interactions_per_user: (ipu_min, ipu_max),
                content_signal,
                cold_item_fraction: cold_fraction,
                title_vocab_size: title_vocab,
                seed,
            };
            let (inter, meta) = write_synthetic(&cfg, &out)
                .map_err(|e| anyhow::anyhow!(ValidationFailure(e.to_string())))?;
            println!("wrote {} and {}", inter.display(), meta.display());
            Ok(())
        }
        Command::Ingest {
            interactions,
            items,
            k_core,
        } => {
            let (log, catalog, synthesized) = ingest_stats(&interactions, &items, k_core)?;
            println!("users: {}", log.n_users());
            println!("items: {}", log.n_items());
            println!("interactions (after {k_core}-core): {}", log.len());
            println!("catalog entries: {}", catalog.len());
            println!("synthesized metadata: {synthesized}");
            Ok(())
        }
        Command::Split(args) => run_stage(args, Stage::Split),
        Command::Encode(args) => run_stage(args, Stage::Encode),
        Command::Train(args) => run_stage(args, Stage::Train),
        Command::Eval(args) => run_stage(args, Stage::Eval),
        Command::Sweep { config, run_root } => {
            let sweep = SweepConfig::from_file(&config)?;
            let root = run_root
                .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let outcome = run_sweep(&sweep, &root)?;
            println!(
                "sweep complete: {} runs, report under {}",
                outcome.reports.len(),
                outcome.report_dir.display()
            );
            Ok(())
        }
        Command::Report { runs, out } => {
            if runs.is_empty() {
                anyhow::bail!(ValidationFailure("no run directories given".into()));
            }
            let mut reports = Vec::new();
            for dir in &runs {
                let path = dir.join("report.json");
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                reports.push(serde_json::from_str(&text)?);
            }
            let written = emit_report(&reports, &out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn run_stage(args: RunArgs, stage: Stage) -> Result<()> {
    let cfg = args.build_config()?;
    let root = args.run_root();
    let outcome = run_until(&cfg, &root, stage, !args.force)?;
    println!("run directory: {}", outcome.run_dir.display());
    if let Some(report) = &outcome.report {
        if outcome.cached {
            println!("(cached)");
        }
        for proto in &report.protocols {
            for part in [&proto.warm_test, &proto.cold_test] {
                println!(
                    "{} {:>9}: R@{} {}  N@{} {}  (n={}, excluded={})",
                    proto.setting,
                    part.partition,
                    report.k,
                    part.recall_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                    report.k,
                    part.ndcg_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                    part.n,
                    part.excluded
                );
            }
        }
    }
    Ok(())
}
