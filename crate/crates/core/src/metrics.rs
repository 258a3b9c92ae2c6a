//! Automatic evaluation metrics for rewritten claims.
//!
//! All n-gram metrics share [`crate::text::tokenize`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ContextBundle;
use crate::embed::{cosine, Embedder};
use crate::text::{ngrams, normalize_whitespace, tokenize};

const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no instances to evaluate")]
    Empty,
    #[error("instance {index}: {reason}")]
    InvalidInstance { index: usize, reason: String },
    #[error("strategy {strategy}: {got} outputs for {expected} instances")]
    Misaligned {
        strategy: String,
        expected: usize,
        got: usize,
    },
    #[error("context field `{0}` is missing")]
    MissingContext(&'static str),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

/// One output with everything needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub source: String,
    pub output: String,
    pub references: Vec<String>,
    pub context: ContextBundle,
}

impl EvalInstance {
    pub fn new(
        source: impl Into<String>,
        output: impl Into<String>,
        references: Vec<String>,
        context: ContextBundle,
    ) -> Result<Self, String> {
        let inst = Self {
            source: source.into(),
            output: output.into(),
            references,
            context,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<(), String> {
        if self.references.is_empty() {
            return Err("no references".into());
        }
        if self.source.trim().is_empty() {
            return Err("empty source".into());
        }
        if self.output.trim().is_empty() {
            return Err("empty output".into());
        }
        if self.references.iter().any(|r| r.trim().is_empty()) {
            return Err("empty reference".into());
        }
        Ok(())
    }
}

/// An evaluation item before any system output is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTarget {
    pub source: String,
    pub references: Vec<String>,
    pub context: ContextBundle,
}

impl EvalTarget {
    pub fn with_output(&self, output: impl Into<String>) -> EvalInstance {
        EvalInstance {
            source: self.source.clone(),
            output: output.into(),
            references: self.references.clone(),
            context: self.context.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuMode {
    /// Mean of smoothed sentence-level scores.
    #[default]
    Sentence,
    /// Pooled n-gram statistics, unsmoothed.
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SariVariant {
    /// Keep and add by F1, delete by precision.
    #[default]
    Canonical,
    /// All three operations by F1.
    AllF1,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub bleu_mode: BleuMode,
    pub sari_variant: SariVariant,
}

fn counts(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram total for orders 1..=4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn bleu_stats(output: &str, references: &[String]) -> BleuStats {
    let hyp = tokenize(output);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut stats = BleuStats {
        hyp_len: hyp.len(),
        ..Default::default()
    };
    // closest reference length, shorter on ties
    stats.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
        .unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let hyp_counts = counts(&hyp, n);
        let mut max_ref: HashMap<&str, usize> = HashMap::new();
        let ref_counts: Vec<_> = refs.iter().map(|r| counts(r, n)).collect();
        for rc in &ref_counts {
            for (g, c) in rc {
                let e = max_ref.entry(g.as_str()).or_insert(0);
                *e = (*e).max(*c);
            }
        }
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g.as_str()).copied().unwrap_or(0)))
            .sum();
        stats.totals[n - 1] = hyp_counts.values().sum();
    }
    stats
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence BLEU-4 in [0, 1] with add-one smoothing on orders 2 to 4.
///
/// Unigram precision is left unsmoothed, so an output sharing no token with any
/// reference scores exactly 0.
pub fn sentence_bleu(output: &str, references: &[String]) -> f64 {
    let s = bleu_stats(output, references);
    if s.matches[0] == 0 || s.totals[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (s.matches[0] as f64 / s.totals[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_sum += ((s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64).ln();
    }
    brevity_penalty(s.hyp_len, s.ref_len) * (log_sum / MAX_ORDER as f64).exp()
}

/// BLEU over instances, scaled to 0..100.
pub fn bleu(instances: &[EvalInstance], mode: BleuMode) -> Result<f64, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    match mode {
        BleuMode::Sentence => {
            let scores: Vec<f64> = instances
                .par_iter()
                .map(|i| sentence_bleu(&i.output, &i.references))
                .collect();
            Ok(100.0 * mean(&scores))
        }
        BleuMode::Corpus => {
            let all: Vec<BleuStats> = instances
                .par_iter()
                .map(|i| bleu_stats(&i.output, &i.references))
                .collect();
            let mut total = BleuStats::default();
            for s in &all {
                for n in 0..MAX_ORDER {
                    total.matches[n] += s.matches[n];
                    total.totals[n] += s.totals[n];
                }
                total.hyp_len += s.hyp_len;
                total.ref_len += s.ref_len;
            }
            if total.matches.contains(&0) {
                return Ok(0.0);
            }
            let log_sum: f64 = (0..MAX_ORDER)
                .map(|n| (total.matches[n] as f64 / total.totals[n] as f64).ln())
                .sum();
            Ok(100.0 * brevity_penalty(total.hyp_len, total.ref_len) * (log_sum / MAX_ORDER as f64).exp())
        }
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure over tokens.
pub fn rouge_l(output: &str, reference: &str) -> f64 {
    let o = tokenize(output);
    let r = tokenize(reference);
    if o.is_empty() || r.is_empty() {
        return if o == r { 1.0 } else { 0.0 };
    }
    let lcs = lcs_len(&o, &r);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / o.len() as f64;
    let rec = lcs as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Best ROUGE-L over several references.
pub fn rouge_l_multi(output: &str, references: &[String]) -> f64 {
    references.iter().map(|r| rouge_l(output, r)).fold(0.0, f64::max)
}

/// Per-order SARI components, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SariComponents {
    pub keep: f64,
    pub delete: f64,
    pub add: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Multiset intersection keeping positive counts.
fn inter(a: &HashMap<String, usize>, b: &HashMap<String, usize>) -> HashMap<String, usize> {
    a.iter()
        .filter_map(|(g, c)| {
            let m = (*c).min(b.get(g).copied().unwrap_or(0));
            (m > 0).then(|| (g.clone(), m))
        })
        .collect()
}

/// Multiset difference keeping positive counts.
fn minus(a: &HashMap<String, usize>, b: &HashMap<String, usize>) -> HashMap<String, usize> {
    a.iter()
        .filter_map(|(g, c)| {
            let m = c.saturating_sub(b.get(g).copied().unwrap_or(0));
            (m > 0).then(|| (g.clone(), m))
        })
        .collect()
}

fn sari_order(
    src: &[String],
    out: &[String],
    refs: &[Vec<String>],
    n: usize,
    variant: SariVariant,
) -> SariComponents {
    let numref = refs.len();
    let mut r_counts: HashMap<String, usize> = HashMap::new();
    for r in refs {
        for g in ngrams(r, n) {
            *r_counts.entry(g).or_insert(0) += 1;
        }
    }
    let scale = |m: HashMap<String, usize>| -> HashMap<String, usize> {
        m.into_iter().map(|(g, c)| (g, c * numref)).collect()
    };
    let s_counts = counts(src, n);
    let o_counts = counts(out, n);
    let s_rep = scale(s_counts.clone());
    let o_rep = scale(o_counts.clone());

    let keep = inter(&s_rep, &o_rep);
    let keep_good = inter(&keep, &r_counts);
    let keep_all = inter(&s_rep, &r_counts);
    let (mut kp, mut kr) = (0.0, 0.0);
    for (g, good) in &keep_good {
        kp += *good as f64 / keep[g] as f64;
        kr += *good as f64 / keep_all[g] as f64;
    }
    let keep_p = ratio(kp, keep.len() as f64);
    let keep_r = ratio(kr, keep_all.len() as f64);

    let del = minus(&s_rep, &o_rep);
    let del_good = minus(&del, &r_counts);
    let del_all = minus(&s_rep, &r_counts);
    let (mut dp, mut dr) = (0.0, 0.0);
    for (g, good) in &del_good {
        dp += *good as f64 / del[g] as f64;
        dr += *good as f64 / del_all[g] as f64;
    }
    let del_p = ratio(dp, del.len() as f64);
    let del_r = ratio(dr, del_all.len() as f64);

    let s_set: HashSet<&String> = s_counts.keys().collect();
    let r_set: HashSet<&String> = r_counts.keys().collect();
    let add: HashSet<&String> = o_counts.keys().filter(|g| !s_set.contains(g)).collect();
    let add_good = add.iter().filter(|g| r_set.contains(**g)).count();
    let add_all = r_set.iter().filter(|g| !s_set.contains(**g)).count();
    let add_p = ratio(add_good as f64, add.len() as f64);
    let add_r = ratio(add_good as f64, add_all as f64);

    SariComponents {
        keep: f1(keep_p, keep_r),
        delete: match variant {
            SariVariant::Canonical => del_p,
            SariVariant::AllF1 => f1(del_p, del_r),
        },
        add: f1(add_p, add_r),
    }
}

/// SARI components averaged over n-gram orders 1 to 4. Duplicate references
/// are collapsed first.
pub fn sari_components(
    source: &str,
    output: &str,
    references: &[String],
    variant: SariVariant,
) -> SariComponents {
    let mut seen = HashSet::new();
    let refs: Vec<Vec<String>> = references
        .iter()
        .filter(|r| seen.insert(r.as_str()))
        .map(|r| tokenize(r))
        .collect();
    let src = tokenize(source);
    let out = tokenize(output);
    let mut acc = SariComponents {
        keep: 0.0,
        delete: 0.0,
        add: 0.0,
    };
    for n in 1..=MAX_ORDER {
        let c = sari_order(&src, &out, &refs, n, variant);
        acc.keep += c.keep;
        acc.delete += c.delete;
        acc.add += c.add;
    }
    let k = MAX_ORDER as f64;
    SariComponents {
        keep: acc.keep / k,
        delete: acc.delete / k,
        add: acc.add / k,
    }
}

/// SARI on a 0..100 scale.
pub fn sari(source: &str, output: &str, references: &[String], variant: SariVariant) -> f64 {
    let c = sari_components(source, output, references, variant);
    100.0 * (c.keep + c.delete + c.add) / 3.0
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fraction(instances: &[EvalInstance], pred: impl Fn(&EvalInstance) -> bool) -> Result<f64, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(instances.iter().filter(|i| pred(i)).count() as f64 / instances.len() as f64)
}

/// Share of outputs equal to some reference after whitespace normalization.
pub fn exact_match_ratio(instances: &[EvalInstance]) -> Result<f64, MetricsError> {
    fraction(instances, |i| {
        let o = normalize_whitespace(&i.output);
        i.references.iter().any(|r| normalize_whitespace(r) == o)
    })
}

/// Share of outputs byte-identical to their source.
pub fn no_edit_ratio(instances: &[EvalInstance]) -> Result<f64, MetricsError> {
    fraction(instances, |i| i.output == i.source)
}

/// Embedding cosine mapped from [-1, 1] to [0, 1].
///
/// A zero embedding has no direction; it is treated as orthogonal (0.5).
pub fn context_similarity(
    output: &str,
    context_field: Option<&str>,
    embedder: &dyn Embedder,
) -> Result<f64, MetricsError> {
    let field = context_field.ok_or(MetricsError::MissingContext("context"))?;
    let a = embedder.embed(output).map_err(MetricsError::Embedding)?;
    let b = embedder.embed(field).map_err(MetricsError::Embedding)?;
    Ok((cosine(&a, &b).unwrap_or(0.0) + 1.0) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub sari: f64,
    pub no_edit_ratio: f64,
    pub exact_match_ratio: f64,
    pub sim_original: f64,
    pub sim_previous: Option<f64>,
    pub sim_topic: Option<f64>,
    pub n_instances: usize,
}

struct InstanceScores {
    rouge: f64,
    sari: f64,
    sim_original: f64,
    sim_previous: Option<f64>,
    sim_topic: Option<f64>,
}

fn optional_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| mean(&present))
}

/// All metrics for one system output list.
///
/// Context similarities average over the instances that carry the field and are
/// `None` when no instance does.
pub fn compute_report(
    instances: &[EvalInstance],
    options: MetricOptions,
    embedder: &dyn Embedder,
) -> Result<MetricReport, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (index, inst) in instances.iter().enumerate() {
        inst.validate()
            .map_err(|reason| MetricsError::InvalidInstance { index, reason })?;
    }
    let per: Vec<InstanceScores> = instances
        .par_iter()
        .map(|i| {
            let sim = |field: Option<&String>| {
                field
                    .map(|f| context_similarity(&i.output, Some(f), embedder))
                    .transpose()
            };
            Ok(InstanceScores {
                rouge: rouge_l_multi(&i.output, &i.references),
                sari: sari(&i.source, &i.output, &i.references, options.sari_variant),
                sim_original: context_similarity(&i.output, Some(&i.source), embedder)?,
                sim_previous: sim(i.context.previous_claim.as_ref())?,
                sim_topic: sim(i.context.topic.as_ref())?,
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    let col = |f: fn(&InstanceScores) -> f64| mean(&per.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        bleu: bleu(instances, options.bleu_mode)?,
        rouge_l: col(|s| s.rouge),
        sari: col(|s| s.sari),
        no_edit_ratio: no_edit_ratio(instances)?,
        exact_match_ratio: exact_match_ratio(instances)?,
        sim_original: col(|s| s.sim_original),
        sim_previous: optional_mean(per.iter().map(|s| s.sim_previous)),
        sim_topic: optional_mean(per.iter().map(|s| s.sim_topic)),
        n_instances: instances.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// One report per named output list, in input order.
pub fn evaluate_run(
    targets: &[EvalTarget],
    outputs: &[(String, Vec<String>)],
    options: MetricOptions,
    embedder: &dyn Embedder,
) -> Result<Vec<StrategyReport>, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::Empty);
    }
    outputs
        .iter()
        .map(|(name, outs)| {
            if outs.len() != targets.len() {
                return Err(MetricsError::Misaligned {
                    strategy: name.clone(),
                    expected: targets.len(),
                    got: outs.len(),
                });
            }
            let instances: Vec<EvalInstance> = targets
                .iter()
                .zip(outs)
                .map(|(t, o)| t.with_output(o.clone()))
                .collect();
            Ok(StrategyReport {
                strategy: name.clone(),
                metrics: compute_report(&instances, options, embedder)?,
            })
        })
        .collect()
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub options: MetricOptions,
    pub strategies: Vec<StrategyReport>,
}

/// Table export: strategy, BLEU, RougeL, SARI, NoEd, ExM.
pub fn to_csv(reports: &[StrategyReport]) -> String {
    let mut out = String::from("strategy,BLEU,RougeL,SARI,NoEd,ExM\n");
    for r in reports {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{:.2},{:.4},{:.2},{:.4},{:.4}",
            r.strategy, m.bleu, m.rouge_l, m.sari, m.no_edit_ratio, m.exact_match_ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    fn inst(src: &str, out: &str, refs: &[&str]) -> EvalInstance {
        EvalInstance::new(
            src,
            out,
            refs.iter().map(|r| r.to_string()).collect(),
            ContextBundle::default(),
        )
        .unwrap()
    }

    fn refs(r: &[&str]) -> Vec<String> {
        r.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let same = [inst("x y", "the cat sat on the mat", &["the cat sat on the mat"])];
        assert!((bleu(&same, BleuMode::Sentence).unwrap() - 100.0).abs() < 1e-9);
        assert!((bleu(&same, BleuMode::Corpus).unwrap() - 100.0).abs() < 1e-9);
        let short = [inst("x", "yes", &["yes"])];
        assert!((bleu(&short, BleuMode::Sentence).unwrap() - 100.0).abs() < 1e-9);
        let disjoint = [inst("x", "alpha beta", &["gamma delta"])];
        assert_eq!(bleu(&disjoint, BleuMode::Sentence).unwrap(), 0.0);
        assert_eq!(bleu(&[], BleuMode::Sentence), Err(MetricsError::Empty));
    }

    #[test]
    fn bleu_hand_trace() {
        // hyp: a b c d (4 tokens), ref: a b c e f (5 tokens)
        // p1 = 3/4, p2 = (2+1)/(3+1), p3 = (1+1)/(2+1), p4 = (0+1)/(1+1)
        // BP = exp(1 - 5/4)
        let got = sentence_bleu("a b c d", &refs(&["a b c e f"]));
        let geo = (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        let expected = (1.0f64 - 1.25).exp() * geo;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_closest_reference_length() {
        // hyp length 3; references of length 2 and 4 are equally close, the shorter wins
        let s = bleu_stats("a b c", &refs(&["a b", "a b c d"]));
        assert_eq!(s.ref_len, 2);
        assert_eq!(s.matches[0], 3);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        let f = rouge_l("a c d", "a b c d");
        assert!((f - 2.0 * 0.75 / 1.75).abs() < 1e-12);
        assert_eq!(rouge_l("x y", "a b"), 0.0);
        assert_eq!(rouge_l_multi("a b", &refs(&["x", "a b"])), 1.0);
    }

    #[test]
    fn sari_identity_is_100() {
        for v in [SariVariant::Canonical, SariVariant::AllF1] {
            let s = sari("taxes are too high", "taxes are too high", &refs(&["taxes are too high"]), v);
            assert!((s - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sari_perfect_deletion() {
        // every operation matches the reference exactly
        let c = sari_components("a b c", "a b", &refs(&["a b"]), SariVariant::Canonical);
        assert_eq!(c.keep, 1.0);
        assert_eq!(c.delete, 1.0);
        assert_eq!(c.add, 1.0);
    }

    #[test]
    fn sari_duplicate_references_ignored() {
        let one = sari("a b c d", "a b e", &refs(&["a b c e"]), SariVariant::Canonical);
        let dup = sari("a b c d", "a b e", &refs(&["a b c e", "a b c e"]), SariVariant::Canonical);
        assert_eq!(one, dup);
    }

    #[test]
    fn ratios() {
        let mut items: Vec<_> = (0..12).map(|i| inst("s", &format!("o{i}"), &["r"])).collect();
        items[0].output = "r".into();
        assert!((exact_match_ratio(&items).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        let mut edits: Vec<_> = (0..10).map(|_| inst("s", "o", &["r"])).collect();
        for e in edits.iter_mut().take(3) {
            e.output = "s".into();
        }
        assert!((no_edit_ratio(&edits).unwrap() - 0.3).abs() < 1e-15);
        let spaced = [inst("s", "  a   b ", &["a b"])];
        assert_eq!(exact_match_ratio(&spaced).unwrap(), 1.0);
    }

    struct Fixed;
    impl Embedder for Fixed {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
            Ok(if text == "x" { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
    }

    #[test]
    fn context_similarity_mapping() {
        assert_eq!(context_similarity("x", Some("y"), &Fixed).unwrap(), 0.5);
        assert_eq!(context_similarity("x", Some("x"), &Fixed).unwrap(), 1.0);
        assert_eq!(
            context_similarity("x", None, &Fixed),
            Err(MetricsError::MissingContext("context"))
        );
    }

    #[test]
    fn report_for_identity_runs() {
        let targets = vec![
            EvalTarget {
                source: "Taxes are bad".into(),
                references: refs(&["Taxes are bad for growth."]),
                context: ContextBundle::new(Some("Tax policy".into()), None),
            },
            EvalTarget {
                source: "cars pollute".into(),
                references: refs(&["Cars pollute cities."]),
                context: ContextBundle::default(),
            },
        ];
        let outputs = vec![
            ("unedited".to_string(), targets.iter().map(|t| t.source.clone()).collect()),
            (
                "oracle".to_string(),
                targets.iter().map(|t| t.references[0].clone()).collect(),
            ),
        ];
        let e = HashingEmbedder::default();
        let reports = evaluate_run(&targets, &outputs, MetricOptions::default(), &e).unwrap();
        assert_eq!(reports[0].metrics.no_edit_ratio, 1.0);
        assert!((reports[0].metrics.sim_original - 1.0).abs() < 1e-12);
        assert_eq!(reports[0].metrics.sim_previous, None);
        assert!(reports[0].metrics.sim_topic.is_some());
        assert_eq!(reports[1].metrics.exact_match_ratio, 1.0);
        assert!((reports[1].metrics.bleu - 100.0).abs() < 1e-9);
        let csv = to_csv(&reports);
        assert!(csv.starts_with("strategy,BLEU,RougeL,SARI,NoEd,ExM\nunedited,"));

        let bad = vec![("x".to_string(), vec!["only one".to_string()])];
        assert!(matches!(
            evaluate_run(&targets, &bad, MetricOptions::default(), &e),
            Err(MetricsError::Misaligned { .. })
        ));
    }
}
