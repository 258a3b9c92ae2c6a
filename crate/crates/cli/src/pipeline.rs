//! The `synth`, `prepare`, `calibrate` and `run` commands.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use claimopt::adapter::{ProcessGenerator, ProcessScorer};
use claimopt::corpus::{
    derive_all_pairs, filter_by_intent, load_chains, load_pairs, relabel_pairs, serialize_input, split_dataset,
    write_chains, write_jsonl, write_pairs, IntentLabel, MajorityLabeler, OptimizationPair, RevisionChain,
    SplitConfig,
};
use claimopt::embed::{Embedder, HashingEmbedder};
use claimopt::genkit::{dedup, generate_candidates, make_schedule, EchoGenerator, Generator, MockGenerator, SkippedStep};
use claimopt::metrics::{evaluate_run, to_csv, EvalTarget, RunReport};
use claimopt::scoring::{
    calibrate_weights, normalize_set, score_candidate, CalibrationResult, CosineMeaning, HeuristicArgument,
    HeuristicFluency, Scorer, ScorerRegistry, TokenJaccardMeaning, WeightsFile,
};
use claimopt::selection::{select, train_pairwise_ranker, PairwiseRanker, RankerHyperparams, SelectionInputs};
use claimopt::synthetic::{synthetic_chains, SyntheticConfig};
use claimopt::{Candidate, ContextBundle, Strategy, Weights};

use crate::config::{AdapterSpec, RelabelMode, RunConfig};
use crate::manifest::{sha256_file, write_json, RunManifest};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} not found: {}", path.display());
    Ok(())
}

/// Write synthetic revision chains to `path`.
pub fn cmd_synth(path: &Path, n_chains: usize, seed: u64) -> Result<usize> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let chains = synthetic_chains(&SyntheticConfig {
        n_chains,
        seed,
        ..Default::default()
    });
    write_chains(path, &chains).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(chains.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub chains: usize,
    pub pairs: usize,
    pub relabeled: usize,
    pub relabel_failures: usize,
    pub filtered: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Residual pairs dropped to keep chains inside one partition.
    pub dropped: usize,
}

/// Load chains, derive and filter pairs, split, and write the partitions.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareSummary> {
    let seed = config.seed()?;
    let out = config.out_dir()?;
    let chains_path = config.data.chains.as_deref().context("`data.chains` is required for prepare")?;
    require_file(chains_path, "chains file")?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("prepare", config.hash(), Some(seed));
    manifest.input(chains_path)?;

    let chains = load_chains(chains_path)?;
    let pairs = derive_all_pairs(&chains);
    let n_pairs = pairs.len();
    let (pairs, relabeled, relabel_failures) = match config.prepare.relabel {
        RelabelMode::None => (pairs, 0, 0),
        RelabelMode::Majority => match MajorityLabeler::fit(&pairs) {
            Some(labeler) => {
                let outcome = relabel_pairs(pairs, &labeler);
                (outcome.pairs, outcome.relabeled, outcome.failures.len())
            }
            None => (pairs, 0, 0),
        },
    };
    let filtered = filter_by_intent(&pairs, &IntentLabel::task_set())?;
    let split = split_dataset(
        &filtered,
        &SplitConfig {
            per_label_test: config.prepare.per_label_test,
            train_fraction: config.prepare.train_fraction,
            seed,
            granularity: config.prepare.granularity,
        },
    )?;

    let outputs = [
        ("pairs.jsonl", &pairs),
        ("train.jsonl", &split.train),
        ("validation.jsonl", &split.validation),
        ("test.jsonl", &split.test),
    ];
    for (name, list) in outputs {
        let path = out.join(name);
        write_pairs(&path, list).with_context(|| format!("cannot write {}", path.display()))?;
        manifest.artifact(&path)?;
    }
    let summary = PrepareSummary {
        chains: chains.len(),
        pairs: n_pairs,
        relabeled,
        relabel_failures,
        filtered: filtered.len(),
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        dropped: split.dropped,
    };
    let summary_path = out.join("prepare_summary.json");
    write_json(&summary_path, &summary)?;
    manifest.artifact(&summary_path)?;
    manifest.finish(out)?;
    Ok(summary)
}

fn pair_position(pair_id: &str) -> Option<usize> {
    pair_id.rsplit_once('/').and_then(|(_, i)| i.parse().ok())
}

/// Rebuild revision chains from pairs. Pairs of one chain are ordered by their
/// position suffix and cut wherever a reference does not continue into the next
/// source, so only verified consecutive versions end up in one chain.
pub fn chains_from_pairs(pairs: &[OptimizationPair]) -> Result<Vec<RevisionChain>> {
    let mut groups: BTreeMap<&str, Vec<(usize, &OptimizationPair)>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.chain_id.as_str()).or_default().push((i, p));
    }
    let mut chains = Vec::new();
    for (chain_id, mut members) in groups {
        members.sort_by_key(|(i, p)| (pair_position(&p.pair_id).unwrap_or(*i), *i));
        let mut segments: Vec<Vec<&OptimizationPair>> = Vec::new();
        let mut prev: Option<(&OptimizationPair, Option<usize>)> = None;
        for (_, p) in members {
            let pos = pair_position(&p.pair_id);
            let continues = prev.is_some_and(|(q, qpos)| {
                q.reference.text == p.source.text && matches!((qpos, pos), (Some(a), Some(b)) if b == a + 1)
            });
            if continues {
                segments.last_mut().expect("segment open").push(p);
            } else {
                segments.push(vec![p]);
            }
            prev = Some((p, pos));
        }
        let many = segments.len() > 1;
        for (k, seg) in segments.into_iter().enumerate() {
            let id = if many { format!("{chain_id}#{k}") } else { chain_id.to_string() };
            let mut claims = vec![(format!("{id}-v0"), seg[0].source.text.clone())];
            claims.extend(
                seg.iter()
                    .enumerate()
                    .map(|(j, p)| (format!("{id}-v{}", j + 1), p.reference.text.clone())),
            );
            let intents = seg.iter().map(|p| p.intent).collect();
            chains.push(RevisionChain::new(
                id,
                seg[0].source.debate_id.clone(),
                seg[0].context.clone(),
                claims,
                intents,
            )?);
        }
    }
    Ok(chains)
}

fn build_scorer(role: &str, spec: &AdapterSpec, pool_size: usize) -> Result<Box<dyn Scorer>> {
    Ok(match spec {
        AdapterSpec::Builtin(name) => match (role, name.as_str()) {
            ("fluency", "heuristic") => Box::new(HeuristicFluency),
            ("meaning", "heuristic" | "jaccard") => Box::new(TokenJaccardMeaning),
            ("meaning", "cosine") => Box::new(CosineMeaning {
                embedder: HashingEmbedder::default(),
            }),
            ("argument", "heuristic") => Box::new(HeuristicArgument),
            _ => bail!("unknown built-in {role} scorer `{name}`"),
        },
        AdapterSpec::Command { command, range } => {
            let [lo, hi] = range.unwrap_or([0.0, 1.0]);
            Box::new(
                ProcessScorer::new(format!("{role}:{}", command.join(" ")), (lo, hi), command.clone(), pool_size)
                    .map_err(anyhow::Error::msg)?,
            )
        }
    })
}

pub fn build_registry(config: &RunConfig) -> Result<ScorerRegistry> {
    let a = &config.adapters;
    Ok(ScorerRegistry::new(
        build_scorer("fluency", &a.fluency, a.pool_size)?,
        build_scorer("meaning", &a.meaning, a.pool_size)?,
        build_scorer("argument", &a.argument, a.pool_size)?,
    )?)
}

pub fn build_generator(config: &RunConfig) -> Result<(Box<dyn Generator>, String)> {
    let delimiters = config.delimiters.clone();
    Ok(match &config.adapters.generator {
        AdapterSpec::Builtin(name) => match name.as_str() {
            "mock" => (Box::new(MockGenerator { delimiters }), "mock".into()),
            "echo" => (Box::new(EchoGenerator { delimiters }), "echo".into()),
            other => bail!("unknown built-in generator `{other}`"),
        },
        AdapterSpec::Command { command, .. } => (
            Box::new(ProcessGenerator::new(command.clone(), config.adapters.pool_size).map_err(anyhow::Error::msg)?),
            command.join(" "),
        ),
    })
}

fn calibration_chains(config: &RunConfig, chains_path: Option<&Path>) -> Result<(Vec<RevisionChain>, PathBuf)> {
    let (chains, path) = match chains_path {
        Some(p) => {
            require_file(p, "chains file")?;
            (load_chains(p)?, p.to_path_buf())
        }
        None => {
            let p = config
                .validation_path()
                .context("calibration needs validation pairs: set `data.validation` or `data.prepared`")?;
            require_file(&p, "validation pairs")?;
            (chains_from_pairs(&load_pairs(&p)?)?, p)
        }
    };
    let usable: Vec<RevisionChain> = chains.into_iter().filter(|c| c.len() >= 2).collect();
    ensure!(!usable.is_empty(), "no chain with at least two versions in {}", path.display());
    Ok((usable, path))
}

fn calibrate(config: &RunConfig, chains_path: Option<&Path>, manifest: &mut RunManifest) -> Result<CalibrationResult> {
    let (chains, path) = calibration_chains(config, chains_path)?;
    manifest.input(&path)?;
    let registry = build_registry(config)?;
    info!("calibrating on {} chains", chains.len());
    Ok(calibrate_weights(&chains, &registry, &config.calibration)?)
}

/// Grid-search AutoScore weights on validation chains and write `weights.json`.
pub fn cmd_calibrate(config: &RunConfig, chains_path: Option<&Path>) -> Result<CalibrationResult> {
    let out = config.out_dir()?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("calibrate", config.hash(), config.seed);
    let result = calibrate(config, chains_path, &mut manifest)?;
    let path = out.join("weights.json");
    write_json(&path, &WeightsFile::from(&result))?;
    manifest.artifact(&path)?;
    manifest.finish(out)?;
    Ok(result)
}

/// Per-instance seed, independent of processing order.
pub fn instance_seed(run_seed: u64, pair_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// A line of `candidates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesLine {
    pub pair_id: String,
    pub source: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub text: String,
    pub fluency: f64,
    pub meaning: f64,
    pub argument: f64,
    pub combined: Option<f64>,
}

/// A line of `selections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLine {
    pub pair_id: String,
    pub strategy: Strategy,
    pub chosen: String,
    pub edited: bool,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub candidates: Vec<Candidate>,
    pub skipped: Vec<SkippedStep>,
    pub selections: Vec<SelectionLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok(InstanceResult),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    config_hash: String,
    n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointLine {
    index: usize,
    pair_id: String,
    outcome: Outcome,
}

struct RunContext<'a> {
    config: &'a RunConfig,
    seed: u64,
    generator: &'a dyn Generator,
    registry: &'a ScorerRegistry,
    weights: Option<Weights>,
    ranker: Option<PairwiseRanker>,
}

fn process_instance(ctx: &RunContext<'_>, pair: &OptimizationPair) -> Result<InstanceResult> {
    let config = ctx.config;
    let seed = instance_seed(ctx.seed, &pair.pair_id);
    let input = serialize_input(pair, config.context, &config.delimiters)?;
    let schedule = make_schedule(config.generation.n_candidates)?;
    let generation = generate_candidates(ctx.generator, &input, &config.generation, &schedule, seed)?;
    let set = dedup(&generation.set)?;
    let raw = set
        .candidates
        .iter()
        .map(|c| score_candidate(ctx.registry, &pair.source.text, &c.text, &pair.context))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = normalize_set(&raw, config.normalization);
    let inputs = SelectionInputs {
        weights: ctx.weights.as_ref(),
        ranker: ctx.ranker.as_ref(),
        seed: Some(seed),
    };
    let mut selections = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let r = select(strategy, &pair.source.text, &set, &scores, inputs)
            .with_context(|| format!("strategy {strategy}"))?;
        selections.push(SelectionLine {
            pair_id: pair.pair_id.clone(),
            strategy,
            chosen: r.chosen.text().to_string(),
            edited: r.edited,
            scores: r
                .per_candidate_scores
                .iter()
                .map(|s| ScoreRecord {
                    text: s.candidate.text.clone(),
                    fluency: s.scores.fluency,
                    meaning: s.scores.meaning,
                    argument: s.scores.argument,
                    combined: s.combined,
                })
                .collect(),
        });
    }
    Ok(InstanceResult {
        candidates: set.candidates,
        skipped: generation.skipped,
        selections,
    })
}

/// Completed outcomes from an earlier run with the same configuration. A torn
/// last line is cut off; failed instances are retried.
fn load_checkpoint(path: &Path, header: &CheckpointHeader) -> Result<Option<BTreeMap<usize, Outcome>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.split_inclusive('\n');
    let Some(first) = lines.next() else {
        return Ok(None);
    };
    match serde_json::from_str::<CheckpointHeader>(first.trim_end()) {
        Ok(h) if h == *header => {}
        _ => {
            warn!("checkpoint {} belongs to another configuration; starting over", path.display());
            return Ok(None);
        }
    }
    let mut done = BTreeMap::new();
    let mut valid = first.len();
    for line in lines {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<CheckpointLine>(line.trim_end()) {
            Ok(l) => {
                if matches!(l.outcome, Outcome::Ok(_)) && l.index < header.n_instances {
                    done.insert(l.index, l.outcome);
                }
                valid += line.len();
            }
            Err(_) => break,
        }
    }
    if valid < text.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(valid as u64)?;
    }
    Ok(Some(done))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n_instances: usize,
    pub n_failed: usize,
    pub resumed: usize,
    pub report: RunReport,
    pub out_dir: PathBuf,
}

fn load_weights(path: &Path) -> Result<Weights> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: WeightsFile =
        serde_json::from_str(&text).with_context(|| format!("invalid weights file {}", path.display()))?;
    Ok(file.weights()?)
}

/// Generate, score, select and evaluate every test pair.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    let seed = config.seed()?;
    let out = config.out_dir()?.to_path_buf();
    ensure!(!config.strategies.is_empty(), "no strategies configured");
    config.generation.validate()?;
    let test_path = config
        .test_path()
        .context("test pairs are required: set `data.test` or `data.prepared`")?;
    require_file(&test_path, "test pairs")?;
    if let Some(w) = &config.weights {
        require_file(w, "weights file")?;
    }
    create_dir(&out)?;

    let config_hash = config.hash();
    let mut manifest = RunManifest::start("run", config_hash.clone(), Some(seed));
    manifest.input(&test_path)?;
    let mut pairs = load_pairs(&test_path)?;
    if let Some(max) = config.max_instances {
        pairs.truncate(max);
    }
    ensure!(!pairs.is_empty(), "no test pairs in {}", test_path.display());

    let (generator, generator_name) = build_generator(config)?;
    let registry = build_registry(config)?;
    manifest.component("generator", generator_name);
    for (role, name) in ["fluency", "meaning", "argument"].into_iter().zip(registry.names()) {
        manifest.component(role, name);
    }

    let weights = match &config.weights {
        Some(path) => {
            manifest.input(path)?;
            Some(load_weights(path)?)
        }
        None if config.strategies.contains(&Strategy::Autoscore) => {
            let result = calibrate(config, None, &mut manifest)?;
            let path = out.join("weights.json");
            write_json(&path, &WeightsFile::from(&result))?;
            manifest.artifact(&path)?;
            Some(result.weights)
        }
        None => None,
    };

    let ranker = if config.strategies.contains(&Strategy::PairwiseRank) {
        let train_path = config
            .train_path()
            .context("pairwise_rank needs training pairs: set `data.train` or `data.prepared`")?;
        require_file(&train_path, "training pairs")?;
        manifest.input(&train_path)?;
        let train = load_pairs(&train_path)?;
        let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(config.ranker.embedding_dim));
        let params = RankerHyperparams {
            lambda: config.ranker.lambda,
            iterations: config.ranker.iterations,
            seed,
        };
        let ranker = train_pairwise_ranker(&train, embedder, &params)?;
        let path = out.join("ranker.json");
        write_json(&path, ranker.model())?;
        manifest.artifact(&path)?;
        Some(ranker)
    } else {
        None
    };

    let ctx = RunContext {
        config,
        seed,
        generator: generator.as_ref(),
        registry: &registry,
        weights,
        ranker,
    };

    let header = CheckpointHeader {
        config_hash: config_hash.clone(),
        n_instances: pairs.len(),
    };
    let checkpoint_path = out.join("checkpoint.jsonl");
    let mut outcomes = load_checkpoint(&checkpoint_path, &header)?;
    let mut checkpoint = match &outcomes {
        Some(_) => OpenOptions::new().append(true).open(&checkpoint_path)?,
        None => {
            let mut f = File::create(&checkpoint_path)?;
            writeln!(f, "{}", serde_json::to_string(&header)?)?;
            f
        }
    };
    let outcomes = outcomes.get_or_insert_with(BTreeMap::new);
    let resumed = outcomes.len();
    if resumed > 0 {
        info!("resuming: {resumed} of {} instances already done", pairs.len());
    }

    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let todo: Vec<usize> = (0..pairs.len()).filter(|i| !outcomes.contains_key(i)).collect();
    for chunk in todo.chunks(workers * 8) {
        let results: Vec<(usize, Outcome)> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| {
                    let outcome = match process_instance(&ctx, &pairs[i]) {
                        Ok(r) => Outcome::Ok(r),
                        Err(e) => Outcome::Error(format!("{e:#}")),
                    };
                    (i, outcome)
                })
                .collect()
        });
        for (i, outcome) in results {
            let line = CheckpointLine {
                index: i,
                pair_id: pairs[i].pair_id.clone(),
                outcome,
            };
            writeln!(checkpoint, "{}", serde_json::to_string(&line)?)?;
            outcomes.insert(i, line.outcome);
        }
        checkpoint.flush()?;
    }
    drop(checkpoint);

    // outputs in instance order
    let mut cand_lines = Vec::new();
    let mut sel_lines = Vec::new();
    let mut failures = Vec::new();
    let mut ok_indices = Vec::new();
    for (&i, outcome) in outcomes.iter() {
        let pair = &pairs[i];
        match outcome {
            Outcome::Ok(r) => {
                ok_indices.push(i);
                cand_lines.push(CandidatesLine {
                    pair_id: pair.pair_id.clone(),
                    source: pair.source.text.clone(),
                    candidates: r.candidates.clone(),
                });
                sel_lines.extend(r.selections.iter().cloned());
            }
            Outcome::Error(e) => failures.push(serde_json::json!({"pair_id": pair.pair_id, "error": e})),
        }
    }
    let write = |name: &str, items: Vec<serde_json::Value>, manifest: &mut RunManifest| -> Result<()> {
        let path = out.join(name);
        write_jsonl(&path, items).with_context(|| format!("cannot write {}", path.display()))?;
        manifest.artifact(&path)
    };
    write(
        "candidates.jsonl",
        cand_lines.iter().map(serde_json::to_value).collect::<Result<_, _>>()?,
        &mut manifest,
    )?;
    write(
        "selections.jsonl",
        sel_lines.iter().map(serde_json::to_value).collect::<Result<_, _>>()?,
        &mut manifest,
    )?;
    write("errors.jsonl", failures.clone(), &mut manifest)?;
    for f in &failures {
        warn!("instance failed: {f}");
    }

    ensure!(!ok_indices.is_empty(), "every instance failed; see {}", out.join("errors.jsonl").display());
    let targets: Vec<EvalTarget> = ok_indices
        .iter()
        .map(|&i| eval_target(&pairs[i]))
        .collect();
    let outputs: Vec<(String, Vec<String>)> = config
        .strategies
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let texts = ok_indices
                .iter()
                .map(|i| match &outcomes[i] {
                    Outcome::Ok(r) => r.selections[k].chosen.clone(),
                    Outcome::Error(_) => unreachable!("only successful instances"),
                })
                .collect();
            (s.to_string(), texts)
        })
        .collect();
    let embedder = HashingEmbedder::default();
    let strategies = evaluate_run(&targets, &outputs, config.metrics, &embedder)?;
    let report = RunReport {
        seed,
        config_hash,
        dataset_fingerprint: sha256_file(&test_path)?,
        options: config.metrics,
        strategies,
    };
    write_report(&out, &report, &mut manifest)?;
    manifest.finish(&out)?;
    Ok(RunSummary {
        n_instances: pairs.len(),
        n_failed: failures.len(),
        resumed,
        report,
        out_dir: out,
    })
}

pub fn eval_target(pair: &OptimizationPair) -> EvalTarget {
    EvalTarget {
        source: pair.source.text.clone(),
        references: vec![pair.reference.text.clone()],
        context: ContextBundle::clone(&pair.context),
    }
}

/// Write `report.json` and `report.csv` into `out`.
pub fn write_report(out: &Path, report: &RunReport, manifest: &mut RunManifest) -> Result<()> {
    let json_path = out.join("report.json");
    write_json(&json_path, report)?;
    manifest.artifact(&json_path)?;
    let csv_path = out.join("report.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    w.write_all(to_csv(&report.strategies).as_bytes())?;
    w.flush()?;
    drop(w);
    manifest.artifact(&csv_path)?;
    Ok(())
}
