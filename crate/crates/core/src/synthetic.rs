//! Deterministic synthetic data for demos, benchmarks and tests.
//!
//! Chains start from a sloppy claim and are improved step by step with copy
//! edits, clarifications and added links, so pair statistics look roughly like a
//! real revision history while staying fully reproducible from a seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextBundle, IntentLabel, RevisionChain};
use crate::genkit::copy_edit;

const TOPICS: &[&str] = &[
    "Public transport should be free of charge",
    "Nuclear power is necessary to fight climate change",
    "Homework should be abolished in primary schools",
    "Social media does more harm than good",
    "The voting age should be lowered to sixteen",
    "Cities should ban private cars from their centers",
    "Universities should not charge tuition fees",
    "Remote work should become the default for office jobs",
];

const SUBJECTS: &[&str] = &[
    "free public transport",
    "nuclear energy",
    "daily homework",
    "social media use",
    "a lower voting age",
    "a car ban in the center",
    "free university education",
    "remote work",
    "this policy",
    "the proposed change",
];

const PREDICATES: &[&str] = &[
    "is good for people who live in big cities",
    "helps many families save money every month",
    "dont help the people who need support the most",
    "would reduce pollution in the long run",
    "makes it hard for small towns to keep up",
    "is an important step for the next generation",
    "shows that the current system is not working",
    "will cost the state a lot of money each year",
    "can make life better for students and workers",
    "isnt a good use of public money right now",
];

const HEDGES: &[&str] = &["maybe", "probably", "i think", "basically", "really"];

const GROUPS: &[&str] = &[
    "low-income households",
    "young people",
    "rural communities",
    "older citizens",
    "working parents",
];

const PARENTS: &[&str] = &[
    "This would be too expensive for the government.",
    "Most people already have good alternatives.",
    "The evidence on this question is mixed.",
    "Other countries have tried this with success.",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_chains: usize,
    pub seed: u64,
    pub min_versions: usize,
    pub max_versions: usize,
    /// Probability that a later revision carries an off-task intent.
    pub off_task_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_chains: 200,
            seed: 0,
            min_versions: 2,
            max_versions: 4,
            off_task_rate: 0.1,
        }
    }
}

fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A clean claim and a corrupted draft of it that copy editing can repair.
fn draft(rng: &mut impl Rng) -> String {
    let subject = SUBJECTS.choose(rng).expect("non-empty");
    let predicate = PREDICATES.choose(rng).expect("non-empty");
    let mut words: Vec<String> = Vec::new();
    if rng.gen_bool(0.4) {
        words.push(HEDGES.choose(rng).expect("non-empty").to_string());
    }
    words.extend(subject.split(' ').map(str::to_string));
    words.extend(predicate.split(' ').map(str::to_string));

    // at least one repairable defect
    let mut doubled = false;
    if rng.gen_bool(0.3) {
        let at = rng.gen_range(1..words.len());
        let w = words[at].clone();
        words.insert(at, w);
        doubled = true;
    }
    let mut text = words.join(" ");
    let drop_period = rng.gen_bool(0.6);
    let keep_case = rng.gen_bool(0.4) && (drop_period || doubled);
    if !keep_case {
        text = lowercase_first(&text);
    } else {
        text = capitalize(&text);
    }
    if !drop_period {
        text.push('.');
    }
    text
}

fn clarify(text: &str, rng: &mut impl Rng) -> String {
    let group = GROUPS.choose(rng).expect("non-empty");
    let body = text.trim_end_matches('.');
    format!("{body}, especially for {group}.")
}

fn add_link(text: &str, n: u32) -> String {
    format!("{text} See https://example.org/evidence/{n}.")
}

fn change_meaning(text: &str, rng: &mut impl Rng) -> String {
    let predicate = PREDICATES.choose(rng).expect("non-empty");
    format!("{} {predicate}.", text.split_whitespace().take(3).collect::<Vec<_>>().join(" "))
}

/// Generate revision chains. Every claim has at least seven whitespace tokens.
pub fn synthetic_chains(config: &SyntheticConfig) -> Vec<RevisionChain> {
    assert!(config.min_versions >= 1 && config.min_versions <= config.max_versions);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chains = Vec::with_capacity(config.n_chains);
    for c in 0..config.n_chains {
        let topic_ix = rng.gen_range(0..TOPICS.len());
        let versions = rng.gen_range(config.min_versions..=config.max_versions);
        let mut texts = vec![draft(&mut rng)];
        let mut intents = Vec::new();
        let mut clarified = false;
        while texts.len() < versions {
            let prev = texts.last().expect("non-empty").clone();
            let (intent, next) = if texts.len() == 1 {
                (IntentLabel::TypoGrammar, copy_edit(&prev))
            } else if rng.gen_bool(config.off_task_rate) {
                let label = *[
                    IntentLabel::MeaningChange,
                    IntentLabel::Split,
                    IntentLabel::Merge,
                    IntentLabel::Unlabeled,
                ]
                .choose(&mut rng)
                .expect("non-empty");
                (label, change_meaning(&prev, &mut rng))
            } else if !clarified && rng.gen_bool(0.6) {
                clarified = true;
                (IntentLabel::Clarification, clarify(&prev, &mut rng))
            } else {
                (IntentLabel::Links, add_link(&prev, rng.gen_range(1..1000)))
            };
            intents.push(intent);
            texts.push(next);
        }
        let chain_id = format!("syn-{c:05}");
        let claims = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("{chain_id}-v{i}"), t))
            .collect();
        let context = ContextBundle::new(
            Some(TOPICS[topic_ix].to_string()),
            Some(PARENTS[c % PARENTS.len()].to_string()),
        );
        let chain = RevisionChain::new(chain_id, format!("debate-{topic_ix}"), context, claims, intents)
            .expect("synthetic chains are valid");
        chains.push(chain);
    }
    chains
}

/// Simulated crowd labels with a known truth.
#[derive(Debug, Clone)]
pub struct PlantedAnnotations {
    pub triples: Vec<(String, String, i64)>,
    pub truth: BTreeMap<String, i64>,
    pub reliable: Vec<String>,
    pub spammers: Vec<String>,
}

/// Every item is labeled by every worker. Reliable workers always report the
/// truth; spammers answer uniformly at random. Labels are `0..n_labels`.
pub fn planted_annotations(
    n_items: usize,
    n_reliable: usize,
    n_spammers: usize,
    n_labels: i64,
    seed: u64,
) -> PlantedAnnotations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reliable: Vec<String> = (0..n_reliable).map(|j| format!("reliable{j}")).collect();
    let spammers: Vec<String> = (0..n_spammers).map(|j| format!("spammer{j}")).collect();
    let mut triples = Vec::new();
    let mut truth = BTreeMap::new();
    for i in 0..n_items {
        let item = format!("item{i:04}");
        let t = rng.gen_range(0..n_labels);
        truth.insert(item.clone(), t);
        for w in &reliable {
            triples.push((item.clone(), w.clone(), t));
        }
        for w in &spammers {
            triples.push((item.clone(), w.clone(), rng.gen_range(0..n_labels)));
        }
    }
    PlantedAnnotations {
        triples,
        truth,
        reliable,
        spammers,
    }
}
