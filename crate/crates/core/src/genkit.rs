//! Candidate generation.
//!
//! A [`Generator`] turns a serialized input into one rewrite per
//! [`Directive`]. The default schedule asks for the most probable output first
//! and then for top-k samples with k = 5, 10, 15, ... so that the candidate set
//! covers a range of edit strengths. Identical candidates are removed before
//! scoring by [`dedup`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Delimiters;
use crate::text::whitespace_len;

#[derive(Debug, Error, PartialEq)]
pub enum GenerationError {
    #[error("candidate count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("invalid sampling schedule: {0}")]
    InvalidSchedule(String),
    #[error("every generation step failed ({} skipped)", skipped.len())]
    AllStepsFailed { skipped: Vec<SkippedStep> },
    #[error("candidate set is empty")]
    EmptySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub length_penalty: f64,
    pub temperature: f64,
    pub no_repeat_ngram: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub n_candidates: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            length_penalty: 1.0,
            temperature: 0.7,
            no_repeat_ngram: 3,
            min_length: 7,
            max_length: 256,
            n_candidates: 10,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(GenerationError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(GenerationError::InvalidConfig(format!(
                "need 0 < min_length <= max_length, got {} and {}",
                self.min_length, self.max_length
            )));
        }
        if self.n_candidates == 0 {
            return Err(GenerationError::InvalidCount(0));
        }
        Ok(())
    }
}

/// How a single candidate is decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Directive {
    Greedy,
    TopK(u32),
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Greedy => f.write_str("greedy"),
            Directive::TopK(k) => write!(f, "topk:{k}"),
        }
    }
}

impl FromStr for Directive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "greedy" {
            return Ok(Directive::Greedy);
        }
        s.strip_prefix("topk:")
            .and_then(|k| k.parse::<u32>().ok())
            .filter(|k| *k > 0)
            .map(Directive::TopK)
            .ok_or_else(|| format!("invalid directive `{s}`"))
    }
}

impl From<Directive> for String {
    fn from(d: Directive) -> Self {
        d.to_string()
    }
}

impl TryFrom<String> for Directive {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSchedule {
    steps: Vec<Directive>,
}

/// `[Greedy, TopK(5), TopK(10), ...]` with `n` steps in total.
pub fn make_schedule(n: usize) -> Result<SamplingSchedule, GenerationError> {
    if n == 0 {
        return Err(GenerationError::InvalidCount(n));
    }
    let steps = std::iter::once(Directive::Greedy)
        .chain((1..n).map(|i| Directive::TopK(5 * i as u32)))
        .collect();
    Ok(SamplingSchedule { steps })
}

impl SamplingSchedule {
    /// A user-supplied schedule. It must start with `Greedy`; repeated or
    /// irregular k values are allowed so several samples can be drawn per k.
    pub fn custom(steps: Vec<Directive>) -> Result<Self, GenerationError> {
        match steps.first() {
            None => Err(GenerationError::InvalidSchedule("schedule is empty".into())),
            Some(Directive::TopK(_)) => Err(GenerationError::InvalidSchedule(
                "first step must be greedy".into(),
            )),
            Some(Directive::Greedy) => Ok(Self { steps }),
        }
    }

    pub fn steps(&self) -> &[Directive] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub origin: Directive,
    /// Position of the producing step in the schedule.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Accepts inputs carrying delimiter-separated context.
    pub supports_context: bool,
    /// Output depends on the seed (and only on the seed for fixed inputs).
    pub supports_seeding: bool,
    /// Safe to call concurrently for the steps of one input.
    pub reentrant: bool,
}

/// A rewrite model. Same `(input, directive, config, seed)` must give the same text.
pub trait Generator: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn generate(
        &self,
        input: &str,
        directive: Directive,
        config: &GenerationConfig,
        seed: u64,
    ) -> Result<String, String>;

    /// Length in the generator's own tokens.
    fn token_count(&self, text: &str) -> usize {
        whitespace_len(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedStep {
    pub index: usize,
    pub directive: Directive,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub set: CandidateSet,
    pub skipped: Vec<SkippedStep>,
}

/// One candidate per schedule step, in schedule order.
///
/// Steps that fail, return blank text, or violate the configured token bounds are
/// skipped and reported; the call fails only when no step succeeds.
pub fn generate_candidates(
    generator: &dyn Generator,
    input: &str,
    config: &GenerationConfig,
    schedule: &SamplingSchedule,
    seed: u64,
) -> Result<Generation, GenerationError> {
    config.validate()?;
    let run_step = |(index, directive): (usize, &Directive)| {
        let directive = *directive;
        let outcome = generator
            .generate(input, directive, config, seed)
            .and_then(|text| {
                if text.trim().is_empty() {
                    return Err("generator returned empty text".to_string());
                }
                let len = generator.token_count(&text);
                if len < config.min_length || len > config.max_length {
                    return Err(format!(
                        "output has {len} tokens, outside [{}, {}]",
                        config.min_length, config.max_length
                    ));
                }
                Ok(text)
            });
        match outcome {
            Ok(text) => Ok(Candidate {
                text,
                origin: directive,
                index,
            }),
            Err(reason) => Err(SkippedStep {
                index,
                directive,
                reason,
            }),
        }
    };
    let outcomes: Vec<Result<Candidate, SkippedStep>> = if generator.capabilities().reentrant {
        schedule.steps.par_iter().enumerate().map(run_step).collect()
    } else {
        schedule.steps.iter().enumerate().map(run_step).collect()
    };

    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => candidates.push(c),
            Err(s) => skipped.push(s),
        }
    }
    if candidates.is_empty() {
        return Err(GenerationError::AllStepsFailed { skipped });
    }
    Ok(Generation {
        set: CandidateSet {
            source: input.to_string(),
            candidates,
        },
        skipped,
    })
}

/// Keep the first occurrence of each distinct text, preserving order.
pub fn dedup(set: &CandidateSet) -> Result<CandidateSet, GenerationError> {
    if set.is_empty() {
        return Err(GenerationError::EmptySet);
    }
    let mut seen = HashSet::new();
    Ok(CandidateSet {
        source: set.source.clone(),
        candidates: set
            .candidates
            .iter()
            .filter(|c| seen.insert(c.text.as_str()))
            .cloned()
            .collect(),
    })
}

/// Returns the source claim unchanged for every directive.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator {
    pub delimiters: Delimiters,
}

impl Generator for EchoGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_context: true,
            supports_seeding: false,
            reentrant: true,
        }
    }

    fn generate(&self, input: &str, _: Directive, _: &GenerationConfig, _: u64) -> Result<String, String> {
        Ok(self.delimiters.strip_context(input).to_string())
    }
}

/// Deterministic rule-based stand-in for a fine-tuned rewrite model.
///
/// Context after the delimiters is ignored. See [`mock_generate`] for the rules.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    pub delimiters: Delimiters,
}

impl Generator for MockGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_context: true,
            supports_seeding: true,
            reentrant: true,
        }
    }

    fn generate(
        &self,
        input: &str,
        directive: Directive,
        _: &GenerationConfig,
        seed: u64,
    ) -> Result<String, String> {
        Ok(mock_generate(self.delimiters.strip_context(input), directive, seed))
    }
}

const APOSTROPHE_FIXES: &[(&str, &str)] = &[
    ("dont", "don't"),
    ("doesnt", "doesn't"),
    ("didnt", "didn't"),
    ("cant", "can't"),
    ("wont", "won't"),
    ("isnt", "isn't"),
    ("arent", "aren't"),
    ("wasnt", "wasn't"),
    ("shouldnt", "shouldn't"),
    ("wouldnt", "wouldn't"),
    ("couldnt", "couldn't"),
    ("thats", "that's"),
    ("theyre", "they're"),
    ("youre", "you're"),
];

const CONTRACTIONS: &[(&str, &str)] = &[
    ("don't", "do not"),
    ("doesn't", "does not"),
    ("didn't", "did not"),
    ("can't", "cannot"),
    ("won't", "will not"),
    ("isn't", "is not"),
    ("aren't", "are not"),
    ("wasn't", "was not"),
    ("shouldn't", "should not"),
    ("wouldn't", "would not"),
    ("couldn't", "could not"),
    ("it's", "it is"),
    ("that's", "that is"),
    ("they're", "they are"),
    ("you're", "you are"),
    ("we're", "we are"),
    ("i'm", "I am"),
];

const SYNONYMS: &[(&str, &str)] = &[
    ("good", "beneficial"),
    ("bad", "harmful"),
    ("big", "large"),
    ("important", "crucial"),
    ("people", "individuals"),
    ("think", "believe"),
    ("help", "assist"),
    ("many", "numerous"),
    ("show", "demonstrate"),
    ("shows", "demonstrates"),
    ("use", "utilize"),
    ("get", "obtain"),
    ("very", "highly"),
    ("hard", "difficult"),
    ("often", "frequently"),
    ("need", "require"),
];

const HEDGES: &[&str] = &[
    "maybe", "perhaps", "probably", "possibly", "arguably", "somewhat", "basically", "really",
];

const ELABORATIONS: &[&str] = &[
    "This is supported by clear evidence.",
    "This has been shown in several studies.",
    "This matters for society as a whole.",
    "Experts in the field broadly agree on this.",
    "The long-term consequences make this especially relevant.",
    "Historical examples illustrate this point well.",
    "This applies in most countries today.",
    "Official statistics confirm this trend.",
];

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Splits a whitespace token into leading punctuation, word, trailing punctuation.
fn split_affixes(token: &str) -> (&str, &str, &str) {
    let is_core = |c: char| c.is_alphanumeric() || c == '\'';
    let start = token.find(is_core).unwrap_or(token.len());
    let end = token.rfind(is_core).map_or(start, |i| i + 1);
    (&token[..start], &token[start..end], &token[end..])
}

fn match_case(template: &str, replacement: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        capitalize_first(replacement)
    } else {
        replacement.to_string()
    }
}

fn capitalize_first(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut done = false;
    for ch in s.chars() {
        if !done && ch.is_alphabetic() {
            out.extend(ch.to_uppercase());
            done = true;
        } else {
            out.push(ch);
        }
    }
    out
}

fn lookup<'a>(table: &'a [(&str, &str)], word: &str) -> Option<&'a str> {
    let lower = word.to_lowercase();
    table.iter().find(|(k, _)| *k == lower).map(|(_, v)| *v)
}

/// Map every word through `f`, keeping surrounding punctuation.
fn map_words(text: &str, mut f: impl FnMut(usize, &str) -> Option<String>) -> String {
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            let (pre, core, post) = split_affixes(tok);
            match f(i, core) {
                Some(new) => format!("{pre}{new}{post}"),
                None => tok.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn remove_doubled_words(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        if let Some(prev) = out.last() {
            let (_, pc, ppost) = split_affixes(prev);
            let (_, c, _) = split_affixes(tok);
            if !c.is_empty() && ppost.is_empty() && pc.eq_ignore_ascii_case(c) {
                out.pop();
            }
        }
        out.push(tok);
    }
    out.join(" ")
}

fn ends_with_terminal(text: &str) -> bool {
    text.trim_end_matches(['"', '\'', ')', ']'])
        .ends_with(['.', '!', '?'])
}

/// The copy-editing pass applied for [`Directive::Greedy`].
///
/// Rules, in priority order, each applied when it matches:
/// 1. collapse whitespace and drop an immediately repeated word,
/// 2. restore missing apostrophes (`dont` becomes `don't`; a leading `its` becomes `it's`),
/// 3. capitalize the first letter and a standalone `i`,
/// 4. add a final period when terminal punctuation is missing.
pub fn copy_edit(text: &str) -> String {
    let text = remove_doubled_words(text);
    let text = map_words(&text, |i, w| {
        if i == 0 && w.eq_ignore_ascii_case("its") {
            return Some(match_case(w, "it's"));
        }
        lookup(APOSTROPHE_FIXES, w).map(|fix| match_case(w, fix))
    });
    let text = map_words(&text, |_, w| (w == "i").then(|| "I".to_string()));
    let mut text = capitalize_first(&text);
    if !text.is_empty() && !ends_with_terminal(&text) {
        text.push('.');
    }
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleRule {
    Elaborate,
    Synonym,
    DropHedge,
    ExpandContractions,
}

const SAMPLE_RULES: [SampleRule; 4] = [
    SampleRule::Elaborate,
    SampleRule::Synonym,
    SampleRule::DropHedge,
    SampleRule::ExpandContractions,
];

fn apply_rule(rule: SampleRule, text: &str, variant: usize) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().map(|t| split_affixes(t).1).collect();
    let hits = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
        words
            .iter()
            .enumerate()
            .filter(|(_, w)| pred(w))
            .map(|(i, _)| i)
            .collect()
    };
    match rule {
        SampleRule::Elaborate => {
            let sentence = ELABORATIONS[variant % ELABORATIONS.len()];
            Some(format!("{text} {sentence}"))
        }
        SampleRule::Synonym => {
            let idx = hits(&|w| lookup(SYNONYMS, w).is_some());
            let target = *idx.get(variant % idx.len().max(1))?;
            Some(map_words(text, |i, w| {
                (i == target).then(|| match_case(w, lookup(SYNONYMS, w).unwrap()))
            }))
        }
        SampleRule::DropHedge => {
            let idx = hits(&|w| HEDGES.contains(&w.to_lowercase().as_str()));
            let target = *idx.get(variant % idx.len().max(1))?;
            let kept: Vec<&str> = text
                .split_whitespace()
                .enumerate()
                .filter(|(i, _)| *i != target)
                .map(|(_, t)| t)
                .collect();
            if kept.is_empty() {
                return None;
            }
            let mut out = kept.join(" ");
            if target == 0 {
                out = capitalize_first(&out);
            }
            if !ends_with_terminal(&out) {
                out.push('.');
            }
            Some(out)
        }
        SampleRule::ExpandContractions => {
            let idx = hits(&|w| lookup(CONTRACTIONS, w).is_some());
            if idx.is_empty() {
                return None;
            }
            Some(map_words(text, |_, w| {
                lookup(CONTRACTIONS, w).map(|exp| match_case(w, exp))
            }))
        }
    }
}

/// Rule-based perturbation of a claim.
///
/// `Greedy` returns [`copy_edit`] of the input. `TopK(k)` copy-edits first and then
/// applies one sampling rule picked by hashing `(seed, k)`: append an elaboration
/// sentence, substitute a word from a synonym table, drop a hedge word, or expand
/// contractions. If the picked rule does not match the text, the next rule in that
/// order is tried; elaboration always matches.
pub fn mock_generate(input: &str, directive: Directive, seed: u64) -> String {
    let base = copy_edit(input);
    let k = match directive {
        Directive::Greedy => return base,
        Directive::TopK(k) => k,
    };
    let h = splitmix64(seed ^ splitmix64(u64::from(k)));
    let first = (h % SAMPLE_RULES.len() as u64) as usize;
    let variant = (h >> 16) as usize;
    (0..SAMPLE_RULES.len())
        .map(|off| SAMPLE_RULES[(first + off) % SAMPLE_RULES.len()])
        .find_map(|rule| apply_rule(rule, &base, variant))
        .unwrap_or(base)
}
