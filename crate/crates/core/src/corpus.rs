//! Revision-history corpus handling.
//!
//! A revision chain is the ordered version history `c1..cm` of one claim. Every
//! adjacent pair `(c[i-1], c[i])` becomes an [`OptimizationPair`] whose source is
//! the earlier version and whose reference is the later one. Pairs are filtered by
//! the editor-declared intent, optionally relabeled, and split into
//! train/validation/test partitions with a fixed seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid line(s) in {path}: {}", errors.len(), format_line_errors(errors))]
    InvalidLines {
        path: PathBuf,
        errors: Vec<LineError>,
    },
    #[error("invalid revision chain: {0}")]
    InvalidChain(String),
    #[error("the set of allowed intents is empty")]
    EmptyAllowedSet,
    #[error("intent {label} has {available} pairs, {needed} required for the test set")]
    InsufficientPairs {
        label: IntentLabel,
        needed: usize,
        available: usize,
    },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidTrainFraction(f64),
    #[error("pair {pair_id}: context mode requires the {field} field")]
    MissingContext { pair_id: String, field: &'static str },
}

/// A parse or validation failure tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

fn format_line_errors(errors: &[LineError]) -> String {
    errors
        .iter()
        .take(5)
        .map(|e| format!("line {}: {}", e.line, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Editor-declared purpose of a revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentLabel {
    Clarification,
    TypoGrammar,
    Links,
    MeaningChange,
    Split,
    Merge,
    Unlabeled,
}

impl IntentLabel {
    /// The six labels an intent labeler may assign.
    pub const LABELED: [IntentLabel; 6] = [
        IntentLabel::Clarification,
        IntentLabel::TypoGrammar,
        IntentLabel::Links,
        IntentLabel::MeaningChange,
        IntentLabel::Split,
        IntentLabel::Merge,
    ];

    /// Labels kept for the revision task.
    pub const TASK: [IntentLabel; 3] = [
        IntentLabel::Clarification,
        IntentLabel::TypoGrammar,
        IntentLabel::Links,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::Clarification => "clarification",
            IntentLabel::TypoGrammar => "typo_grammar",
            IntentLabel::Links => "links",
            IntentLabel::MeaningChange => "meaning_change",
            IntentLabel::Split => "split",
            IntentLabel::Merge => "merge",
            IntentLabel::Unlabeled => "unlabeled",
        }
    }

    pub fn task_set() -> BTreeSet<IntentLabel> {
        Self::TASK.into_iter().collect()
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntentLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::LABELED
            .into_iter()
            .chain([IntentLabel::Unlabeled])
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown intent label `{s}`"))
    }
}

/// Fine-grained revision category used in taxonomy annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationType {
    Specification,
    Simplification,
    Reframing,
    Elaboration,
    Corroboration,
    Neutralization,
    Disambiguation,
    CopyEditing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub debate_id: String,
}

/// Debate context of a claim: the thesis and the parent claim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub topic: Option<String>,
    pub previous_claim: Option<String>,
}

impl ContextBundle {
    pub fn new(topic: Option<String>, previous_claim: Option<String>) -> Self {
        Self {
            topic,
            previous_claim,
        }
    }

    fn validate(&self) -> Result<(), String> {
        for (name, field) in [("topic", &self.topic), ("previous_claim", &self.previous_claim)] {
            if matches!(field, Some(v) if v.trim().is_empty()) {
                return Err(format!("{name} is present but empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisionChain {
    pub chain_id: String,
    pub debate_id: String,
    pub context: ContextBundle,
    pub claims: Vec<Claim>,
    /// `intents[i]` labels the edit from `claims[i]` to `claims[i + 1]`.
    pub intents: Vec<IntentLabel>,
}

impl RevisionChain {
    pub fn new(
        chain_id: impl Into<String>,
        debate_id: impl Into<String>,
        context: ContextBundle,
        claims: Vec<(String, String)>,
        intents: Vec<IntentLabel>,
    ) -> Result<Self, CorpusError> {
        let chain_id = chain_id.into();
        let debate_id = debate_id.into();
        let claims = claims
            .into_iter()
            .map(|(id, text)| Claim {
                id,
                text,
                debate_id: debate_id.clone(),
            })
            .collect();
        let chain = Self {
            chain_id,
            debate_id,
            context,
            claims,
            intents,
        };
        chain.validate().map_err(CorpusError::InvalidChain)?;
        Ok(chain)
    }

    fn validate(&self) -> Result<(), String> {
        if self.claims.is_empty() {
            return Err(format!("chain {} has no claims", self.chain_id));
        }
        if self.intents.len() + 1 != self.claims.len() {
            return Err(format!(
                "chain {} has {} claims but {} intents (expected {})",
                self.chain_id,
                self.claims.len(),
                self.intents.len(),
                self.claims.len() - 1
            ));
        }
        if let Some(c) = self.claims.iter().find(|c| c.text.trim().is_empty()) {
            return Err(format!("claim {} has empty text", c.id));
        }
        self.context.validate()
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }
}

/// One line of `chains.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_id: String,
    pub debate_id: String,
    pub topic: Option<String>,
    pub previous_claim: Option<String>,
    pub claims: Vec<ClaimRecord>,
    pub intents: Vec<IntentLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
}

impl From<&RevisionChain> for ChainRecord {
    fn from(chain: &RevisionChain) -> Self {
        Self {
            chain_id: chain.chain_id.clone(),
            debate_id: chain.debate_id.clone(),
            topic: chain.context.topic.clone(),
            previous_claim: chain.context.previous_claim.clone(),
            claims: chain
                .claims
                .iter()
                .map(|c| ClaimRecord {
                    id: c.id.clone(),
                    text: c.text.clone(),
                })
                .collect(),
            intents: chain.intents.clone(),
        }
    }
}

impl TryFrom<ChainRecord> for RevisionChain {
    type Error = CorpusError;

    fn try_from(r: ChainRecord) -> Result<Self, Self::Error> {
        RevisionChain::new(
            r.chain_id,
            r.debate_id,
            ContextBundle::new(r.topic, r.previous_claim),
            r.claims.into_iter().map(|c| (c.id, c.text)).collect(),
            r.intents,
        )
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Load and validate `chains.jsonl`. Every invalid line is reported.
pub fn load_chains(path: impl AsRef<Path>) -> Result<Vec<RevisionChain>, CorpusError> {
    let path = path.as_ref();
    read_chains(open(path)?, path)
}

pub fn read_chains(reader: impl BufRead, origin: &Path) -> Result<Vec<RevisionChain>, CorpusError> {
    let mut chains = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ChainRecord>(&line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|r| RevisionChain::try_from(r).map_err(|e| e.to_string()));
        match parsed {
            Ok(chain) => {
                if let Some(dup) = chain.claims.iter().find(|c| !seen_ids.insert(c.id.clone())) {
                    errors.push(LineError {
                        line: line_no,
                        message: format!("duplicate claim id {}", dup.id),
                    });
                } else {
                    chains.push(chain);
                }
            }
            Err(message) => errors.push(LineError {
                line: line_no,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(chains)
    } else {
        Err(CorpusError::InvalidLines {
            path: origin.to_path_buf(),
            errors,
        })
    }
}

pub fn write_chains(path: impl AsRef<Path>, chains: &[RevisionChain]) -> std::io::Result<()> {
    write_jsonl(path, chains.iter().map(ChainRecord::from))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationPair {
    pub pair_id: String,
    pub chain_id: String,
    pub source: Claim,
    pub reference: Claim,
    pub intent: IntentLabel,
    pub context: ContextBundle,
}

/// Adjacent version pairs of a chain, `m - 1` of them, in chain order.
pub fn derive_pairs(chain: &RevisionChain) -> Vec<OptimizationPair> {
    chain
        .claims
        .windows(2)
        .zip(&chain.intents)
        .enumerate()
        .map(|(i, (w, intent))| OptimizationPair {
            pair_id: format!("{}/{}", chain.chain_id, i),
            chain_id: chain.chain_id.clone(),
            source: w[0].clone(),
            reference: w[1].clone(),
            intent: *intent,
            context: chain.context.clone(),
        })
        .collect()
}

/// Derive pairs for many chains, ordered by chain id then position.
pub fn derive_all_pairs(chains: &[RevisionChain]) -> Vec<OptimizationPair> {
    let mut sorted: Vec<&RevisionChain> = chains.iter().collect();
    sorted.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
    sorted.into_iter().flat_map(derive_pairs).collect()
}

/// Assigns an intent to a pair whose revision carries no label.
pub trait IntentLabeler {
    fn label(&self, source: &str, reference: &str) -> Result<IntentLabel, String>;
}

/// Always answers with the same label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLabeler(pub IntentLabel);

impl IntentLabeler for ConstantLabeler {
    fn label(&self, _: &str, _: &str) -> Result<IntentLabel, String> {
        Ok(self.0)
    }
}

/// Fallback labeler answering with the most frequent label of a labeled sample.
#[derive(Debug, Clone, Copy)]
pub struct MajorityLabeler {
    label: IntentLabel,
}

impl MajorityLabeler {
    /// `None` if no pair carries a label. Ties go to the earlier label in declaration order.
    pub fn fit(pairs: &[OptimizationPair]) -> Option<Self> {
        let mut counts: BTreeMap<IntentLabel, usize> = BTreeMap::new();
        for p in pairs.iter().filter(|p| p.intent != IntentLabel::Unlabeled) {
            *counts.entry(p.intent).or_default() += 1;
        }
        let max = *counts.values().max()?;
        counts
            .into_iter()
            .find(|(_, c)| *c == max)
            .map(|(label, _)| Self { label })
    }

    pub fn label(&self) -> IntentLabel {
        self.label
    }
}

impl IntentLabeler for MajorityLabeler {
    fn label(&self, _: &str, _: &str) -> Result<IntentLabel, String> {
        Ok(self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelabelFailure {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RelabelOutcome {
    pub pairs: Vec<OptimizationPair>,
    pub relabeled: usize,
    pub failures: Vec<RelabelFailure>,
}

/// Give every unlabeled pair a label from `labeler`. Labeled pairs and all text
/// fields are left untouched; a pair the labeler cannot handle stays unlabeled
/// and is reported.
pub fn relabel_pairs(pairs: Vec<OptimizationPair>, labeler: &dyn IntentLabeler) -> RelabelOutcome {
    let mut failures = Vec::new();
    let mut relabeled = 0;
    let pairs = pairs
        .into_iter()
        .map(|mut p| {
            if p.intent != IntentLabel::Unlabeled {
                return p;
            }
            match labeler.label(&p.source.text, &p.reference.text) {
                Ok(IntentLabel::Unlabeled) => failures.push(RelabelFailure {
                    pair_id: p.pair_id.clone(),
                    reason: "labeler returned `unlabeled`".into(),
                }),
                Ok(label) => {
                    p.intent = label;
                    relabeled += 1;
                }
                Err(reason) => failures.push(RelabelFailure {
                    pair_id: p.pair_id.clone(),
                    reason,
                }),
            }
            p
        })
        .collect();
    RelabelOutcome {
        pairs,
        relabeled,
        failures,
    }
}

/// Keep the pairs whose intent is in `allowed`, preserving order.
pub fn filter_by_intent(
    pairs: &[OptimizationPair],
    allowed: &BTreeSet<IntentLabel>,
) -> Result<Vec<OptimizationPair>, CorpusError> {
    if allowed.is_empty() {
        return Err(CorpusError::EmptyAllowedSet);
    }
    Ok(pairs
        .iter()
        .filter(|p| allowed.contains(&p.intent))
        .cloned()
        .collect())
}

/// Unit at which the residual (non-test) pairs are split into train and validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGranularity {
    /// All pairs of a chain land in the same partition.
    #[default]
    Chain,
    Pair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub per_label_test: usize,
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub granularity: SplitGranularity,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            per_label_test: 200,
            train_fraction: 0.9,
            seed: 0,
            granularity: SplitGranularity::Chain,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<OptimizationPair>,
    pub validation: Vec<OptimizationPair>,
    pub test: Vec<OptimizationPair>,
    pub seed: u64,
    /// Residual pairs discarded because their chain already contributes to the test set.
    pub dropped: usize,
}

/// Sample `per_label_test` test pairs per intent label, then split the rest into
/// train and validation.
///
/// In chain granularity no chain contributes to two partitions: residual pairs from
/// chains that supplied a test pair are dropped, and the remaining chains are
/// shuffled and cut at `train_fraction`. Output lists keep the input order.
pub fn split_dataset(
    pairs: &[OptimizationPair],
    config: &SplitConfig,
) -> Result<DatasetSplit, CorpusError> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(CorpusError::InvalidTrainFraction(config.train_fraction));
    }
    let mut by_label: BTreeMap<IntentLabel, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_label.entry(p.intent).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut in_test = vec![false; pairs.len()];
    for (label, indices) in &by_label {
        if indices.len() < config.per_label_test {
            return Err(CorpusError::InsufficientPairs {
                label: *label,
                needed: config.per_label_test,
                available: indices.len(),
            });
        }
        for &i in indices.choose_multiple(&mut rng, config.per_label_test) {
            in_test[i] = true;
        }
    }

    let test_chains: HashSet<&str> = pairs
        .iter()
        .zip(&in_test)
        .filter(|(_, t)| **t)
        .map(|(p, _)| p.chain_id.as_str())
        .collect();

    let mut dropped = 0;
    let mut residual = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if in_test[i] {
            continue;
        }
        if config.granularity == SplitGranularity::Chain && test_chains.contains(p.chain_id.as_str())
        {
            dropped += 1;
        } else {
            residual.push(i);
        }
    }

    let mut in_train = vec![false; pairs.len()];
    match config.granularity {
        SplitGranularity::Chain => {
            let chains: BTreeSet<&str> = residual.iter().map(|&i| pairs[i].chain_id.as_str()).collect();
            let mut chains: Vec<&str> = chains.into_iter().collect();
            chains.shuffle(&mut rng);
            let n_train = train_count(chains.len(), config.train_fraction);
            let train_chains: HashSet<&str> = chains[..n_train].iter().copied().collect();
            for &i in &residual {
                in_train[i] = train_chains.contains(pairs[i].chain_id.as_str());
            }
        }
        SplitGranularity::Pair => {
            let mut order = residual.clone();
            order.shuffle(&mut rng);
            let n_train = train_count(order.len(), config.train_fraction);
            for &i in &order[..n_train] {
                in_train[i] = true;
            }
        }
    }

    let pick = |f: &dyn Fn(usize) -> bool| -> Vec<OptimizationPair> {
        (0..pairs.len()).filter(|&i| f(i)).map(|i| pairs[i].clone()).collect()
    };
    let residual_set: HashSet<usize> = residual.iter().copied().collect();
    Ok(DatasetSplit {
        test: pick(&|i| in_test[i]),
        train: pick(&|i| in_train[i]),
        validation: pick(&|i| residual_set.contains(&i) && !in_train[i]),
        seed: config.seed,
        dropped,
    })
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round().min(n as f64) as usize
}

/// Which context fields accompany the source claim on the generator input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    #[serde(rename = "none")]
    ClaimOnly,
    #[serde(rename = "previous")]
    WithPrevious,
    #[serde(rename = "topic")]
    WithTopic,
    #[serde(rename = "both")]
    WithBoth,
}

impl ContextMode {
    pub fn uses_previous(self) -> bool {
        matches!(self, ContextMode::WithPrevious | ContextMode::WithBoth)
    }

    pub fn uses_topic(self) -> bool {
        matches!(self, ContextMode::WithTopic | ContextMode::WithBoth)
    }
}

impl FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ContextMode::ClaimOnly),
            "previous" => Ok(ContextMode::WithPrevious),
            "topic" => Ok(ContextMode::WithTopic),
            "both" => Ok(ContextMode::WithBoth),
            other => Err(format!("unknown context mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delimiters {
    pub previous: String,
    pub topic: String,
}

impl Default for Delimiters {
    fn default() -> Self {
        Self {
            previous: "<PREV>".into(),
            topic: "<TOPIC>".into(),
        }
    }
}

impl Delimiters {
    /// The source part of a serialized input: everything before the first delimiter.
    pub fn strip_context<'a>(&self, serialized: &'a str) -> &'a str {
        [&self.previous, &self.topic]
            .iter()
            .filter_map(|d| serialized.find(&format!(" {d} ")))
            .min()
            .map_or(serialized, |cut| &serialized[..cut])
    }
}

/// Serialize the generator input: `SOURCE [" " PREV " " previous] [" " TOPIC " " topic]`.
pub fn serialize_input(
    pair: &OptimizationPair,
    mode: ContextMode,
    delimiters: &Delimiters,
) -> Result<String, CorpusError> {
    let mut out = pair.source.text.clone();
    let missing = |field| CorpusError::MissingContext {
        pair_id: pair.pair_id.clone(),
        field,
    };
    if mode.uses_previous() {
        let prev = pair
            .context
            .previous_claim
            .as_deref()
            .ok_or_else(|| missing("previous_claim"))?;
        out.push(' ');
        out.push_str(&delimiters.previous);
        out.push(' ');
        out.push_str(prev);
    }
    if mode.uses_topic() {
        let topic = pair.context.topic.as_deref().ok_or_else(|| missing("topic"))?;
        out.push(' ');
        out.push_str(&delimiters.topic);
        out.push(' ');
        out.push_str(topic);
    }
    Ok(out)
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub source: String,
    pub reference: String,
    pub intent: IntentLabel,
    pub topic: Option<String>,
    pub previous_claim: Option<String>,
}

impl From<&OptimizationPair> for PairRecord {
    fn from(p: &OptimizationPair) -> Self {
        Self {
            pair_id: p.pair_id.clone(),
            source: p.source.text.clone(),
            reference: p.reference.text.clone(),
            intent: p.intent,
            topic: p.context.topic.clone(),
            previous_claim: p.context.previous_claim.clone(),
        }
    }
}

impl PairRecord {
    /// Rebuild a pair. The chain id is the pair id up to its last `/`, or the pair
    /// id itself for externally produced files.
    pub fn into_pair(self) -> Result<OptimizationPair, String> {
        if self.source.trim().is_empty() || self.reference.trim().is_empty() {
            return Err(format!("pair {} has empty text", self.pair_id));
        }
        let context = ContextBundle::new(self.topic, self.previous_claim);
        context.validate()?;
        let chain_id = self
            .pair_id
            .rsplit_once('/')
            .map_or(self.pair_id.as_str(), |(c, _)| c)
            .to_string();
        let claim = |suffix: &str, text: String| Claim {
            id: format!("{}#{suffix}", self.pair_id),
            text,
            debate_id: String::new(),
        };
        Ok(OptimizationPair {
            source: claim("source", self.source),
            reference: claim("reference", self.reference),
            pair_id: self.pair_id.clone(),
            chain_id,
            intent: self.intent,
            context,
        })
    }
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<OptimizationPair>, CorpusError> {
    let path = path.as_ref();
    let records: Vec<PairRecord> = read_jsonl(path)?;
    let mut errors = Vec::new();
    let mut pairs = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        match r.into_pair() {
            Ok(p) => pairs.push(p),
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(CorpusError::InvalidLines {
            path: path.to_path_buf(),
            errors,
        })
    }
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[OptimizationPair]) -> std::io::Result<()> {
    write_jsonl(path, pairs.iter().map(PairRecord::from))
}

/// One line of `types.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAnnotation {
    pub pair_id: String,
    pub annotator: String,
    pub types: BTreeSet<OptimizationType>,
}

pub fn load_type_annotations(path: impl AsRef<Path>) -> Result<Vec<TypeAnnotation>, CorpusError> {
    let path = path.as_ref();
    let records: Vec<TypeAnnotation> = read_jsonl(path)?;
    let errors: Vec<LineError> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.types.is_empty())
        .map(|(i, r)| LineError {
            line: i + 1,
            message: format!("annotation of {} by {} has no types", r.pair_id, r.annotator),
        })
        .collect();
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(CorpusError::InvalidLines {
            path: path.to_path_buf(),
            errors,
        })
    }
}

/// Read a JSONL file, skipping blank lines. Parse failures carry line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => errors.push(LineError {
                line: idx + 1,
                message: format!("malformed JSON: {e}"),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(CorpusError::InvalidLines {
            path: path.to_path_buf(),
            errors,
        })
    }
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn chain(id: &str, texts: &[&str], intents: &[IntentLabel]) -> RevisionChain {
        RevisionChain::new(
            id,
            "d1",
            ContextBundle::new(Some("Topic".into()), Some("Parent".into())),
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("{id}-{i}"), t.to_string()))
                .collect(),
            intents.to_vec(),
        )
        .unwrap()
    }

    fn parse(src: &str) -> Result<Vec<RevisionChain>, CorpusError> {
        read_chains(Cursor::new(src), Path::new("mem.jsonl"))
    }

    #[test]
    fn loads_valid_chains() {
        let src = r#"{"chain_id":"c1","debate_id":"d","topic":"T","previous_claim":null,"claims":[{"id":"a","text":"A"},{"id":"b","text":"B"}],"intents":["clarification"]}
{"chain_id":"c2","debate_id":"d","topic":null,"previous_claim":null,"claims":[{"id":"c","text":"C"}],"intents":[]}
"#;
        let chains = parse(src).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[1].len(), 1);
        assert!(derive_pairs(&chains[1]).is_empty());
    }

    #[test]
    fn reports_every_bad_line() {
        let src = r#"{"chain_id":"c1","debate_id":"d","topic":null,"previous_claim":null,"claims":[{"id":"a","text":"A"},{"id":"b","text":"B"}],"intents":[]}
not json
{"chain_id":"c3","debate_id":"d","topic":null,"previous_claim":null,"claims":[{"id":"x","text":"  "}],"intents":[]}
"#;
        match parse(src) {
            Err(CorpusError::InvalidLines { errors, .. }) => {
                let lines: Vec<usize> = errors.iter().map(|e| e.line).collect();
                assert_eq!(lines, vec![1, 2, 3]);
                assert!(errors[0].message.contains("intents"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_claim_ids_rejected() {
        let src = r#"{"chain_id":"c1","debate_id":"d","topic":null,"previous_claim":null,"claims":[{"id":"a","text":"A"}],"intents":[]}
{"chain_id":"c2","debate_id":"d","topic":null,"previous_claim":null,"claims":[{"id":"a","text":"B"}],"intents":[]}
"#;
        assert!(matches!(parse(src), Err(CorpusError::InvalidLines { errors, .. }) if errors[0].line == 2));
    }

    #[test]
    fn missing_file() {
        let err = load_chains("/nonexistent/chains.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/chains.jsonl"));
    }

    #[test]
    fn adjacent_pairs() {
        let c = chain(
            "c",
            &["A", "B", "C"],
            &[IntentLabel::Clarification, IntentLabel::Links],
        );
        let pairs = derive_pairs(&c);
        let texts: Vec<(&str, &str)> = pairs
            .iter()
            .map(|p| (p.source.text.as_str(), p.reference.text.as_str()))
            .collect();
        assert_eq!(texts, vec![("A", "B"), ("B", "C")]);
        assert_eq!(pairs[1].intent, IntentLabel::Links);
        assert_eq!(pairs[0].pair_id, "c/0");
    }

    fn pair(id: &str, intent: IntentLabel) -> OptimizationPair {
        OptimizationPair {
            pair_id: format!("{id}/0"),
            chain_id: id.into(),
            source: Claim {
                id: format!("{id}s"),
                text: format!("source {id}"),
                debate_id: "d".into(),
            },
            reference: Claim {
                id: format!("{id}r"),
                text: format!("reference {id}"),
                debate_id: "d".into(),
            },
            intent,
            context: ContextBundle::default(),
        }
    }

    #[test]
    fn relabel_counts() {
        use IntentLabel::*;
        let intents = [
            Clarification, Unlabeled, Links, Unlabeled, TypoGrammar, Merge, Unlabeled, Links,
            Clarification, Split,
        ];
        let pairs: Vec<_> = intents
            .iter()
            .enumerate()
            .map(|(i, l)| pair(&i.to_string(), *l))
            .collect();
        let out = relabel_pairs(pairs.clone(), &ConstantLabeler(Clarification));
        let changed = pairs
            .iter()
            .zip(&out.pairs)
            .filter(|(a, b)| a.intent != b.intent)
            .count();
        assert_eq!(changed, 3);
        assert_eq!(out.relabeled, 3);
        assert!(out.failures.is_empty());
        for (a, b) in pairs.iter().zip(&out.pairs) {
            assert_eq!(a.source, b.source);
            assert_eq!(a.reference, b.reference);
        }
    }

    #[test]
    fn relabel_failure_keeps_unlabeled() {
        struct Failing;
        impl IntentLabeler for Failing {
            fn label(&self, _: &str, _: &str) -> Result<IntentLabel, String> {
                Err("model offline".into())
            }
        }
        let out = relabel_pairs(vec![pair("a", IntentLabel::Unlabeled)], &Failing);
        assert_eq!(out.pairs[0].intent, IntentLabel::Unlabeled);
        assert_eq!(out.failures[0].pair_id, "a/0");
    }

    #[test]
    fn majority_labeler() {
        let pairs = vec![
            pair("a", IntentLabel::Links),
            pair("b", IntentLabel::Links),
            pair("c", IntentLabel::Clarification),
            pair("d", IntentLabel::Unlabeled),
            pair("e", IntentLabel::Unlabeled),
        ];
        assert_eq!(MajorityLabeler::fit(&pairs).unwrap().label(), IntentLabel::Links);
        assert!(MajorityLabeler::fit(&[pair("x", IntentLabel::Unlabeled)]).is_none());
    }

    #[test]
    fn filter_keeps_allowed_in_order() {
        use IntentLabel::*;
        let pairs: Vec<_> = [Clarification, Merge, Clarification, Merge, Clarification]
            .iter()
            .enumerate()
            .map(|(i, l)| pair(&i.to_string(), *l))
            .collect();
        let kept = filter_by_intent(&pairs, &IntentLabel::task_set()).unwrap();
        let ids: Vec<&str> = kept.iter().map(|p| p.chain_id.as_str()).collect();
        assert_eq!(ids, vec!["0", "2", "4"]);
        assert!(matches!(
            filter_by_intent(&pairs, &BTreeSet::new()),
            Err(CorpusError::EmptyAllowedSet)
        ));
    }

    fn corpus(n_chains: usize, per_chain: usize) -> Vec<OptimizationPair> {
        let labels = IntentLabel::TASK;
        (0..n_chains)
            .flat_map(|c| {
                (0..per_chain).map(move |k| {
                    let mut p = pair(&format!("ch{c:04}"), labels[(c + k) % 3]);
                    p.pair_id = format!("ch{c:04}/{k}");
                    p
                })
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let pairs = corpus(1300, 1);
        let cfg = SplitConfig {
            per_label_test: 100,
            train_fraction: 0.9,
            seed: 7,
            granularity: SplitGranularity::Chain,
        };
        let split = split_dataset(&pairs, &cfg).unwrap();
        assert_eq!(split.test.len(), 300);
        for label in IntentLabel::TASK {
            assert_eq!(split.test.iter().filter(|p| p.intent == label).count(), 100);
        }
        assert_eq!(split.train.len(), 900);
        assert_eq!(split.validation.len(), 100);
        let again = split_dataset(&pairs, &cfg).unwrap();
        assert_eq!(split.train, again.train);
        assert_eq!(split.test, again.test);
    }

    #[test]
    fn chain_granularity_keeps_chains_whole() {
        let pairs = corpus(400, 3);
        let cfg = SplitConfig {
            per_label_test: 20,
            train_fraction: 0.8,
            seed: 3,
            granularity: SplitGranularity::Chain,
        };
        let split = split_dataset(&pairs, &cfg).unwrap();
        let ids = |v: &[OptimizationPair]| -> HashSet<String> {
            v.iter().map(|p| p.chain_id.clone()).collect()
        };
        let (tr, va, te) = (ids(&split.train), ids(&split.validation), ids(&split.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(
            split.train.len() + split.validation.len() + split.test.len() + split.dropped,
            pairs.len()
        );
    }

    #[test]
    fn split_insufficient_label() {
        let pairs = corpus(30, 1);
        let cfg = SplitConfig {
            per_label_test: 11,
            ..SplitConfig::default()
        };
        assert!(matches!(
            split_dataset(&pairs, &cfg),
            Err(CorpusError::InsufficientPairs { needed: 11, available: 10, .. })
        ));
        let bad = SplitConfig {
            train_fraction: 1.0,
            ..SplitConfig::default()
        };
        assert!(matches!(
            split_dataset(&pairs, &bad),
            Err(CorpusError::InvalidTrainFraction(_))
        ));
    }

    #[test]
    fn serialization_grammar() {
        let mut p = pair("x", IntentLabel::Clarification);
        p.source.text = "X".into();
        let d = Delimiters::default();
        assert_eq!(serialize_input(&p, ContextMode::ClaimOnly, &d).unwrap(), "X");
        assert!(matches!(
            serialize_input(&p, ContextMode::WithPrevious, &d),
            Err(CorpusError::MissingContext { field: "previous_claim", .. })
        ));
        p.context.previous_claim = Some("P".into());
        assert_eq!(
            serialize_input(&p, ContextMode::WithPrevious, &d).unwrap(),
            "X <PREV> P"
        );
        p.context.topic = Some("T".into());
        let both = serialize_input(&p, ContextMode::WithBoth, &d).unwrap();
        assert_eq!(both, "X <PREV> P <TOPIC> T");
        assert_eq!(serialize_input(&p, ContextMode::WithTopic, &d).unwrap(), "X <TOPIC> T");
        assert_eq!(d.strip_context(&both), "X");
    }

    #[test]
    fn pair_record_round_trip_recovers_chain() {
        let c = chain("deb-1", &["A", "B"], &[IntentLabel::TypoGrammar]);
        let p = &derive_pairs(&c)[0];
        let back = PairRecord::from(p).into_pair().unwrap();
        assert_eq!(back.chain_id, "deb-1");
        assert_eq!(back.source.text, "A");
        assert_eq!(back.context, p.context);
    }

    #[test]
    fn type_annotations_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("types.jsonl");
        std::fs::write(
            &path,
            r#"{"pair_id":"p1","annotator":"a","types":["specification","copy_editing"]}"#,
        )
        .unwrap();
        let anns = load_type_annotations(&path).unwrap();
        assert!(anns[0].types.contains(&OptimizationType::CopyEditing));
    }

    #[test]
    fn intent_names_round_trip() {
        for l in IntentLabel::LABELED {
            assert_eq!(l.as_str().parse::<IntentLabel>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
    }
}
