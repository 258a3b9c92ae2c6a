//! Command-line front end for the claimopt pipeline.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod stats;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use claimopt::corpus::ContextMode;
use claimopt::evalstats::{MaceConfig, Scale, ZeroPolicy};
use claimopt::metrics::{BleuMode, MetricOptions, SariVariant};
use claimopt::Strategy;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "claimopt", version, about = "Revise argumentative claims and evaluate the revisions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// none, previous, topic or both.
    #[arg(long)]
    pub context: Option<ContextMode>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Precomputed weights.json.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(
            self.config.as_deref(),
            &Overrides {
                seed: self.seed,
                out_dir: self.out.clone(),
                context: self.context,
                strategies: self.strategies.clone(),
                n_candidates: self.n_candidates,
                weights: self.weights.clone(),
            },
        )
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive, filter and split optimization pairs from revision chains.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Revision chains (JSONL); overrides `data.chains`.
        #[arg(long)]
        chains: Option<PathBuf>,
    },
    /// Generate candidates, select with every strategy and evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// Directory with train/validation/test.jsonl; overrides `data.prepared`.
        #[arg(long)]
        prepared: Option<PathBuf>,
    },
    /// Fit AutoScore weights on validation chains.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Use these revision chains instead of the validation pairs.
        #[arg(long)]
        chains: Option<PathBuf>,
        #[arg(long)]
        prepared: Option<PathBuf>,
    },
    /// Aggregate human annotations and test for significance.
    Stats {
        /// Annotation records (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        scale_min: i64,
        #[arg(long, default_value_t = 5)]
        scale_max: i64,
        /// Treat labels as unordered categories.
        #[arg(long)]
        categorical: bool,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        /// Drop workers below this MACE competence before agreement; negative disables.
        #[arg(long, default_value_t = 0.3)]
        competence_threshold: f64,
        /// Keep zero differences in the ranking (Pratt) instead of dropping them.
        #[arg(long)]
        pratt: bool,
    },
    /// Recompute the metric report of a finished run.
    Report {
        /// Run output directory.
        #[arg(long)]
        run: PathBuf,
        /// Test pairs the run was evaluated on.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value = "sentence")]
        bleu_mode: BleuModeArg,
        #[arg(long, value_enum, default_value = "canonical")]
        sari_variant: SariVariantArg,
    },
    /// Write synthetic revision chains for testing.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BleuModeArg {
    Sentence,
    Corpus,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SariVariantArg {
    Canonical,
    AllF1,
}

/// Process exit status: 0 on success, 2 when a run finished with failed instances.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Prepare { common, chains } => {
            let mut config = common.resolve()?;
            if chains.is_some() {
                config.data.chains = chains;
            }
            let s = pipeline::cmd_prepare(&config)?;
            println!(
                "{} chains, {} pairs, {} on task: train {} / validation {} / test {} ({} dropped)",
                s.chains, s.pairs, s.filtered, s.train, s.validation, s.test, s.dropped
            );
            Ok(0)
        }
        Command::Run { common, prepared } => {
            let mut config = common.resolve()?;
            if prepared.is_some() {
                config.data.prepared = prepared;
            }
            let s = pipeline::cmd_run(&config)?;
            print!("{}", claimopt::metrics::to_csv(&s.report.strategies));
            if s.n_failed > 0 {
                eprintln!(
                    "{} of {} instances failed; see {}",
                    s.n_failed,
                    s.n_instances,
                    s.out_dir.join("errors.jsonl").display()
                );
                return Ok(2);
            }
            Ok(0)
        }
        Command::Calibrate {
            common,
            chains,
            prepared,
        } => {
            let mut config = common.resolve()?;
            if prepared.is_some() {
                config.data.prepared = prepared;
            }
            let r = pipeline::cmd_calibrate(&config, chains.as_deref())?;
            println!(
                "alpha={:.2} beta={:.2} gamma={:.2} r={:.4} ({} grid points)",
                r.weights.alpha, r.weights.beta, r.weights.gamma, r.pearson_r, r.evaluated_points
            );
            Ok(0)
        }
        Command::Stats {
            annotations,
            out,
            seed,
            scale_min,
            scale_max,
            categorical,
            restarts,
            iterations,
            competence_threshold,
            pratt,
        } => {
            let opts = stats::StatsOptions {
                scale: if categorical {
                    Scale::Categorical
                } else {
                    Scale::Ordinal {
                        min: scale_min,
                        max: scale_max,
                    }
                },
                mace: MaceConfig {
                    iterations,
                    restarts,
                    seed,
                    ..Default::default()
                },
                competence_threshold: (competence_threshold >= 0.0).then_some(competence_threshold),
                zero_policy: if pratt { ZeroPolicy::Pratt } else { ZeroPolicy::Drop },
            };
            let r = stats::cmd_stats(&annotations, &out, &opts)?;
            println!(
                "{} fields, {} ranking annotations -> {}",
                r.fields.len(),
                r.rankings.as_ref().map_or(0, |x| x.n_annotations),
                out.join("stats_report.json").display()
            );
            Ok(0)
        }
        Command::Report {
            run,
            test,
            bleu_mode,
            sari_variant,
        } => {
            let opts = MetricOptions {
                bleu_mode: match bleu_mode {
                    BleuModeArg::Sentence => BleuMode::Sentence,
                    BleuModeArg::Corpus => BleuMode::Corpus,
                },
                sari_variant: match sari_variant {
                    SariVariantArg::Canonical => SariVariant::Canonical,
                    SariVariantArg::AllF1 => SariVariant::AllF1,
                },
            };
            let r = report::cmd_report(&run, &test, opts)?;
            print!("{}", claimopt::metrics::to_csv(&r.strategies));
            Ok(0)
        }
        Command::Synth { out, n_chains, seed } => {
            let n = pipeline::cmd_synth(&out, n_chains, seed)?;
            println!("{n} chains -> {}", out.display());
            Ok(0)
        }
    }
}
