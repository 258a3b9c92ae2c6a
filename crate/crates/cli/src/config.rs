//! Run configuration: a TOML file plus command-line and environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use claimopt::corpus::{ContextMode, Delimiters, SplitGranularity};
use claimopt::metrics::MetricOptions;
use claimopt::scoring::{CalibrationConfig, Normalization};
use claimopt::selection::{RankerHyperparams, Strategy};
use claimopt::GenerationConfig;

/// Where a model component comes from: a built-in name or an external command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdapterSpec {
    Builtin(String),
    Command {
        command: Vec<String>,
        /// Declared raw score range of an external scorer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<[f64; 2]>,
    },
}

impl AdapterSpec {
    fn builtin(name: &str) -> Self {
        AdapterSpec::Builtin(name.to_string())
    }

    /// Parse an override such as `python3 scorer.py --fast`. Arguments are split
    /// on whitespace.
    pub fn from_command_line(line: &str) -> Result<Self> {
        let command: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            bail!("empty adapter command");
        }
        Ok(AdapterSpec::Command { command, range: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adapters {
    pub generator: AdapterSpec,
    pub fluency: AdapterSpec,
    pub meaning: AdapterSpec,
    pub argument: AdapterSpec,
    /// Processes per external adapter.
    pub pool_size: usize,
}

impl Default for Adapters {
    fn default() -> Self {
        Self {
            generator: AdapterSpec::builtin("mock"),
            fluency: AdapterSpec::builtin("heuristic"),
            meaning: AdapterSpec::builtin("heuristic"),
            argument: AdapterSpec::builtin("heuristic"),
            pool_size: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Revision chains, input of `prepare`.
    pub chains: Option<PathBuf>,
    /// Directory holding `train.jsonl`, `validation.jsonl` and `test.jsonl`.
    pub prepared: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMode {
    #[default]
    None,
    /// Unlabeled pairs get the most frequent label among labeled ones.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub per_label_test: usize,
    pub train_fraction: f64,
    pub granularity: SplitGranularity,
    pub relabel: RelabelMode,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            per_label_test: 200,
            train_fraction: 0.9,
            granularity: SplitGranularity::Chain,
            relabel: RelabelMode::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub embedding_dim: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        let h = RankerHyperparams::default();
        Self {
            lambda: h.lambda,
            iterations: h.iterations,
            embedding_dim: 256,
        }
    }
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub context: ContextMode,
    pub delimiters: Delimiters,
    pub strategies: Vec<Strategy>,
    /// Worker threads for instance-level parallelism; all cores when absent.
    pub workers: Option<usize>,
    /// Evaluate only the first N test pairs.
    pub max_instances: Option<usize>,
    /// Precomputed `weights.json`; weights are calibrated when absent.
    pub weights: Option<PathBuf>,
    pub normalization: Normalization,
    pub data: DataPaths,
    pub prepare: PrepareConfig,
    pub generation: GenerationConfig,
    pub adapters: Adapters,
    pub calibration: CalibrationConfig,
    pub ranker: RankerConfig,
    pub metrics: MetricOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: None,
            context: ContextMode::ClaimOnly,
            delimiters: Delimiters::default(),
            strategies: default_strategies(),
            workers: None,
            max_instances: None,
            weights: None,
            normalization: Normalization::Declared,
            data: DataPaths::default(),
            prepare: PrepareConfig::default(),
            generation: GenerationConfig::default(),
            adapters: Adapters::default(),
            calibration: CalibrationConfig::default(),
            ranker: RankerConfig::default(),
            metrics: MetricOptions::default(),
        }
    }
}

/// Values given on the command line; each replaces the config value when set.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub context: Option<ContextMode>,
    pub strategies: Option<Vec<Strategy>>,
    pub n_candidates: Option<usize>,
    pub weights: Option<PathBuf>,
}

pub const ENV_OVERRIDES: [(&str, &str); 4] = [
    ("generator", "CLAIMOPT_GENERATOR_CMD"),
    ("fluency", "CLAIMOPT_FLUENCY_CMD"),
    ("meaning", "CLAIMOPT_MEANING_CMD"),
    ("argument", "CLAIMOPT_ARGUMENT_CMD"),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Optional config file, then command-line values, then adapter commands
    /// from the environment.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        config.apply(overrides);
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        if let Some(c) = o.context {
            self.context = c;
        }
        if let Some(s) = &o.strategies {
            self.strategies = s.clone();
        }
        if let Some(n) = o.n_candidates {
            self.generation.n_candidates = n;
        }
        if let Some(w) = &o.weights {
            self.weights = Some(w.clone());
        }
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for (slot, var) in ENV_OVERRIDES {
            if let Some(line) = lookup(var) {
                let spec = AdapterSpec::from_command_line(&line).with_context(|| format!("in ${var}"))?;
                let target = match slot {
                    "generator" => &mut self.adapters.generator,
                    "fluency" => &mut self.adapters.fluency,
                    "meaning" => &mut self.adapters.meaning,
                    _ => &mut self.adapters.argument,
                };
                // keep a declared range when only the command changes
                let range = match target {
                    AdapterSpec::Command { range, .. } => *range,
                    AdapterSpec::Builtin(_) => None,
                };
                *target = match spec {
                    AdapterSpec::Command { command, .. } => AdapterSpec::Command { command, range },
                    other => other,
                };
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("a seed is required: set `seed` in the config or pass --seed")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .context("an output directory is required: set `out_dir` or pass --out")
    }

    fn split_path(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.data.prepared.as_ref().map(|d| d.join(format!("{name}.jsonl"))))
    }

    pub fn train_path(&self) -> Option<PathBuf> {
        self.split_path(&self.data.train, "train")
    }

    pub fn validation_path(&self) -> Option<PathBuf> {
        self.split_path(&self.data.validation, "validation")
    }

    pub fn test_path(&self) -> Option<PathBuf> {
        self.split_path(&self.data.test, "test")
    }

    /// SHA-256 of the resolved configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let c = RunConfig::from_toml(
            r#"
            seed = 7
            out_dir = "runs/x"
            context = "both"
            strategies = ["unedited", "autoscore"]

            [data]
            prepared = "runs/prep"

            [generation]
            n_candidates = 4

            [adapters]
            generator = "mock"
            meaning = { command = ["python3", "sim.py"], range = [-1.0, 1.0] }

            [metrics]
            bleu_mode = "corpus"
            sari_variant = "all_f1"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.context, ContextMode::WithBoth);
        assert_eq!(c.strategies, vec![Strategy::Unedited, Strategy::Autoscore]);
        assert_eq!(c.generation.n_candidates, 4);
        assert_eq!(c.generation.min_length, 7);
        assert_eq!(
            c.adapters.meaning,
            AdapterSpec::Command {
                command: vec!["python3".into(), "sim.py".into()],
                range: Some([-1.0, 1.0])
            }
        );
        assert_eq!(c.test_path().unwrap(), PathBuf::from("runs/prep/test.jsonl"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sead = 1").is_err());
    }

    #[test]
    fn overrides_and_env() {
        let mut c = RunConfig::from_toml(
            "seed = 1\n[adapters]\nmeaning = { command = [\"old\"], range = [-1.0, 1.0] }",
        )
        .unwrap();
        let before = c.hash();
        c.apply(&Overrides {
            seed: Some(9),
            n_candidates: Some(3),
            ..Default::default()
        });
        c.apply_env(|k| (k == "CLAIMOPT_MEANING_CMD").then(|| "new --flag".to_string()))
            .unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        assert_eq!(c.generation.n_candidates, 3);
        assert_eq!(
            c.adapters.meaning,
            AdapterSpec::Command {
                command: vec!["new".into(), "--flag".into()],
                range: Some([-1.0, 1.0])
            }
        );
        assert_ne!(before, c.hash());
        let h = c.hash();
        c.out_dir = Some("elsewhere".into());
        assert_eq!(h, c.hash());
        assert!(RunConfig::default().seed().is_err());
    }
}
