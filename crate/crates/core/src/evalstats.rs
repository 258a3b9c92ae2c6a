//! Statistics for manual annotation studies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("annotation matrix is empty")]
    EmptyMatrix,
    #[error("item `{0}` has no labels")]
    UnlabeledItem(String),
    #[error("label {value} of item `{item}` is outside the scale {min}..={max}")]
    OutOfScale { item: String, value: i64, min: i64, max: i64 },
    #[error("duplicate label for item `{item}` by worker `{worker}`")]
    DuplicateLabel { item: String, worker: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("likelihood is not finite")]
    NonFiniteLikelihood,
    #[error("inputs have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("chance agreement is 1, kappa is undefined")]
    UndefinedKappa,
    #[error("no item has two or more labels")]
    NoPairableValues,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("ranking by `{worker}` on `{item}` is not a permutation")]
    InvalidRanking { item: String, worker: String },
    #[error("rankings cover different strategy sets")]
    InconsistentStrategies,
}

/// Label scale of an annotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scale {
    /// Unordered categories; the category set is whatever occurs.
    Categorical,
    /// Integer scale with inclusive bounds, e.g. a 1..5 Likert scale.
    Ordinal { min: i64, max: i64 },
}

/// Sparse item-by-worker label table.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    items: Vec<String>,
    workers: Vec<String>,
    labels: BTreeMap<(usize, usize), i64>,
    scale: Scale,
}

impl AnnotationMatrix {
    /// Build from `(item, worker, label)` triples. Items and workers keep
    /// first-appearance order.
    pub fn from_triples<I, S1, S2>(triples: I, scale: Scale) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = (S1, S2, i64)>,
        S1: Into<String>,
        S2: Into<String>,
    {
        if let Scale::Ordinal { min, max } = scale {
            if min > max {
                return Err(StatsError::InvalidParameter(format!("scale bounds {min} > {max}")));
            }
        }
        let mut items = Vec::new();
        let mut workers = Vec::new();
        let mut item_ix: HashMap<String, usize> = HashMap::new();
        let mut worker_ix: HashMap<String, usize> = HashMap::new();
        let mut labels = BTreeMap::new();
        for (item, worker, value) in triples {
            let (item, worker) = (item.into(), worker.into());
            if let Scale::Ordinal { min, max } = scale {
                if value < min || value > max {
                    return Err(StatsError::OutOfScale { item, value, min, max });
                }
            }
            let i = *item_ix.entry(item.clone()).or_insert_with(|| {
                items.push(item.clone());
                items.len() - 1
            });
            let w = *worker_ix.entry(worker.clone()).or_insert_with(|| {
                workers.push(worker.clone());
                workers.len() - 1
            });
            if labels.insert((i, w), value).is_some() {
                return Err(StatsError::DuplicateLabel { item, worker });
            }
        }
        if items.is_empty() {
            return Err(StatsError::EmptyMatrix);
        }
        Ok(Self {
            items,
            workers,
            labels,
            scale,
        })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn workers(&self) -> &[String] {
        &self.workers
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, item: usize, worker: usize) -> Option<i64> {
        self.labels.get(&(item, worker)).copied()
    }

    /// Labels grouped by item index.
    fn by_item(&self) -> Vec<Vec<(usize, i64)>> {
        let mut out = vec![Vec::new(); self.items.len()];
        for (&(i, w), &v) in &self.labels {
            out[i].push((w, v));
        }
        out
    }

    /// Ordered category values: the scale range, or the observed values.
    pub fn categories(&self) -> Vec<i64> {
        match self.scale {
            Scale::Ordinal { min, max } => (min..=max).collect(),
            Scale::Categorical => self
                .labels
                .values()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }

    /// Drop the given workers. Items left without labels are removed.
    pub fn without_workers(&self, drop: &BTreeSet<String>) -> Result<Self, StatsError> {
        let triples = self
            .labels
            .iter()
            .filter(|(&(_, w), _)| !drop.contains(&self.workers[w]))
            .map(|(&(i, w), &v)| (self.items[i].clone(), self.workers[w].clone(), v));
        Self::from_triples(triples, self.scale)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaceConfig {
    pub iterations: usize,
    pub restarts: usize,
    /// Add-k smoothing applied in every M-step.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for MaceConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            restarts: 10,
            smoothing: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaceResult {
    /// Probability that a worker reports the true label rather than guessing.
    pub competence: BTreeMap<String, f64>,
    pub posterior_labels: BTreeMap<String, i64>,
    pub log_likelihood: f64,
    /// Restart that produced the result.
    pub best_restart: usize,
}

struct MaceFit {
    competence: Vec<f64>,
    /// Per-worker spam distribution over categories.
    spam: Vec<Vec<f64>>,
    posteriors: Vec<Vec<f64>>,
    log_likelihood: f64,
}

fn mace_e_step(
    obs: &[Vec<(usize, usize)>],
    k: usize,
    competence: &[f64],
    spam: &[Vec<f64>],
) -> (Vec<Vec<f64>>, f64) {
    let mut ll = 0.0;
    let mut posteriors = Vec::with_capacity(obs.len());
    for labels in obs {
        // log-space to survive many annotators per item
        let mut logp = vec![-(k as f64).ln(); k];
        for (t, lp) in logp.iter_mut().enumerate() {
            for &(w, a) in labels {
                let hit = if a == t { competence[w] } else { 0.0 };
                *lp += (hit + (1.0 - competence[w]) * spam[w][a]).ln();
            }
        }
        let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logp.iter().map(|x| (x - m).exp()).sum();
        ll += m + z.ln();
        posteriors.push(logp.iter().map(|x| (x - m).exp() / z).collect());
    }
    (posteriors, ll)
}

fn mace_restart(
    obs: &[Vec<(usize, usize)>],
    n_workers: usize,
    k: usize,
    config: &MaceConfig,
    restart: usize,
) -> MaceFit {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let mut competence: Vec<f64> = (0..n_workers).map(|_| rng.gen_range(0.05..0.95)).collect();
    let mut spam: Vec<Vec<f64>> = (0..n_workers)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();

    let s = config.smoothing;
    for _ in 0..config.iterations {
        let (posteriors, _) = mace_e_step(obs, k, &competence, &spam);
        let mut known = vec![s; n_workers];
        let mut guessed = vec![s; n_workers];
        let mut spam_counts = vec![vec![s; k]; n_workers];
        for (labels, q) in obs.iter().zip(&posteriors) {
            for &(w, a) in labels {
                // P(true label = a and the worker did not guess)
                let p_true = q[a] * competence[w] / (competence[w] + (1.0 - competence[w]) * spam[w][a]);
                known[w] += p_true;
                guessed[w] += 1.0 - p_true;
                spam_counts[w][a] += 1.0 - p_true;
            }
        }
        for w in 0..n_workers {
            competence[w] = known[w] / (known[w] + guessed[w]);
            let z: f64 = spam_counts[w].iter().sum();
            spam[w] = spam_counts[w].iter().map(|c| c / z).collect();
        }
    }
    let (posteriors, log_likelihood) = mace_e_step(obs, k, &competence, &spam);
    MaceFit {
        competence,
        spam,
        posteriors,
        log_likelihood,
    }
}

/// Competence-weighted label aggregation fitted by EM.
///
/// Each annotation is the true label with worker probability `c`, otherwise a
/// draw from the worker's own guessing distribution. True labels have a uniform
/// prior. The restart with the highest log-likelihood wins; ties keep the lower
/// restart index. Posterior ties resolve to the smaller category.
pub fn mace_aggregate(matrix: &AnnotationMatrix, config: &MaceConfig) -> Result<MaceResult, StatsError> {
    if config.iterations == 0 || config.restarts == 0 {
        return Err(StatsError::InvalidParameter("iterations and restarts must be at least 1".into()));
    }
    if !config.smoothing.is_finite() || config.smoothing < 0.0 {
        return Err(StatsError::InvalidParameter(format!("smoothing {}", config.smoothing)));
    }
    let categories = matrix.categories();
    let cat_ix: HashMap<i64, usize> = categories.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let by_item = matrix.by_item();
    for (i, labels) in by_item.iter().enumerate() {
        if labels.is_empty() {
            return Err(StatsError::UnlabeledItem(matrix.items[i].clone()));
        }
    }
    let obs: Vec<Vec<(usize, usize)>> = by_item
        .iter()
        .map(|labels| labels.iter().map(|&(w, v)| (w, cat_ix[&v])).collect())
        .collect();
    let k = categories.len();
    let n_workers = matrix.workers.len();

    let fits: Vec<MaceFit> = (0..config.restarts)
        .into_par_iter()
        .map(|r| mace_restart(&obs, n_workers, k, config, r))
        .collect();
    let mut best: Option<usize> = None;
    for (r, fit) in fits.iter().enumerate() {
        if !fit.log_likelihood.is_finite() {
            continue;
        }
        if best.is_none_or(|b| fit.log_likelihood > fits[b].log_likelihood) {
            best = Some(r);
        }
    }
    let best = best.ok_or(StatsError::NonFiniteLikelihood)?;
    let fit = &fits[best];
    debug_assert_eq!(fit.spam.len(), n_workers);

    let posterior_labels = fit
        .posteriors
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut arg = 0;
            for (t, p) in q.iter().enumerate() {
                if *p > q[arg] {
                    arg = t;
                }
            }
            (matrix.items[i].clone(), categories[arg])
        })
        .collect();
    let competence = matrix
        .workers
        .iter()
        .cloned()
        .zip(fit.competence.iter().copied())
        .collect();
    Ok(MaceResult {
        competence,
        posterior_labels,
        log_likelihood: fit.log_likelihood,
        best_restart: best,
    })
}

/// Workers whose competence does not exceed `threshold`.
pub fn low_competence_workers(result: &MaceResult, threshold: f64) -> BTreeSet<String> {
    result
        .competence
        .iter()
        .filter(|(_, c)| **c <= threshold)
        .map(|(w, _)| w.clone())
        .collect()
}

/// Cohen's kappa for two raters.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: HashMap<&T, f64> = HashMap::new();
    let mut mb: HashMap<&T, f64> = HashMap::new();
    for x in a {
        *ma.entry(x).or_insert(0.0) += 1.0;
    }
    for y in b {
        *mb.entry(y).or_insert(0.0) += 1.0;
    }
    let p_e: f64 = ma
        .iter()
        .map(|(c, na)| na * mb.get(c).copied().unwrap_or(0.0))
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(StatsError::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaLevel {
    Nominal,
    /// Squared difference of category ranks.
    Ordinal,
    Interval,
}

/// Krippendorff's alpha over pairable values. Zero expected disagreement gives 1.
pub fn krippendorff_alpha(matrix: &AnnotationMatrix, level: AlphaLevel) -> Result<f64, StatsError> {
    let categories = matrix.categories();
    let rank: HashMap<i64, usize> = categories.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let k = categories.len();
    let mut o = vec![vec![0.0; k]; k];
    for labels in matrix.by_item() {
        let m = labels.len();
        if m < 2 {
            continue;
        }
        let weight = 1.0 / (m - 1) as f64;
        for (i, (_, vi)) in labels.iter().enumerate() {
            for (j, (_, vj)) in labels.iter().enumerate() {
                if i != j {
                    o[rank[vi]][rank[vj]] += weight;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    if n == 0.0 {
        return Err(StatsError::NoPairableValues);
    }
    let delta = |c: usize, d: usize| -> f64 {
        match level {
            AlphaLevel::Nominal => f64::from(u8::from(c != d)),
            AlphaLevel::Ordinal => (c as f64 - d as f64).powi(2),
            AlphaLevel::Interval => ((categories[c] - categories[d]) as f64).powi(2),
        }
    };
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dist = delta(c, d);
            observed += o[c][d] * dist;
            expected += n_c[c] * n_c[d] * dist;
        }
    }
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Share of agreeing label pairs among all same-item pairs of workers.
pub fn percent_agreement(matrix: &AnnotationMatrix) -> Result<f64, StatsError> {
    let mut agree = 0usize;
    let mut total = 0usize;
    for labels in matrix.by_item() {
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                total += 1;
                agree += usize::from(labels[i].1 == labels[j].1);
            }
        }
    }
    if total == 0 {
        return Err(StatsError::NoPairableValues);
    }
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Discard zero differences before ranking.
    #[default]
    Drop,
    /// Rank zero differences, then leave them out of both sums.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Differences that entered the ranking.
    pub n: usize,
    pub method: PValueMethod,
}

/// Largest sample size with an exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &ix in &order[i..=j] {
            ranks[ix] = r;
        }
        i = j + 1;
    }
    ranks
}

/// P(T+ <= t) under the null, enumerating sign assignments of the given ranks.
///
/// Ranks are doubled so that tied half-ranks become integers.
fn exact_lower_tail(ranks: &[f64], t: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0f64; total + 1];
    ways[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            ways[s] += ways[s - r];
        }
    }
    let limit = (t * 2.0).round() as usize;
    let hits: f64 = ways.iter().take(limit.min(total) + 1).sum();
    hits / 2f64.powi(doubled.len() as i32)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], zero_policy: ZeroPolicy) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let mut diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::InvalidParameter("non-finite difference".into()));
    }
    if zero_policy == ZeroPolicy::Drop {
        diffs.retain(|d| *d != 0.0);
    }
    if diffs.iter().all(|d| *d == 0.0) {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    let mut signed_ranks = Vec::new();
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            w_plus += r;
        } else if *d < 0.0 {
            w_minus += r;
        }
        if *d != 0.0 {
            signed_ranks.push(*r);
        }
    }
    let statistic = w_plus.min(w_minus);
    let n = diffs.len();
    let (p, method) = if n <= WILCOXON_EXACT_MAX {
        (2.0 * exact_lower_tail(&signed_ranks, statistic), PValueMethod::Exact)
    } else {
        let mu = signed_ranks.iter().sum::<f64>() / 2.0;
        let sigma = (signed_ranks.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt();
        let z = ((statistic - mu + 0.5) / sigma).min(0.0);
        let normal = Normal::standard();
        (2.0 * normal.cdf(z), PValueMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value: p.min(1.0),
        w_plus,
        w_minus,
        n,
        method,
    })
}

/// One worker's ordering of strategies for an item, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankAnnotation {
    pub item: String,
    pub worker: String,
    pub ranking: Vec<String>,
}

fn check_rankings(annotations: &[RankAnnotation]) -> Result<BTreeSet<String>, StatsError> {
    let first = annotations.first().ok_or(StatsError::EmptyInput)?;
    let universe: BTreeSet<String> = first.ranking.iter().cloned().collect();
    for a in annotations {
        let set: BTreeSet<String> = a.ranking.iter().cloned().collect();
        if set.len() != a.ranking.len() || set.is_empty() {
            return Err(StatsError::InvalidRanking {
                item: a.item.clone(),
                worker: a.worker.clone(),
            });
        }
        if set != universe {
            return Err(StatsError::InconsistentStrategies);
        }
    }
    Ok(universe)
}

/// Mean 1-based position of each strategy.
pub fn mean_rank(annotations: &[RankAnnotation]) -> Result<BTreeMap<String, f64>, StatsError> {
    let universe = check_rankings(annotations)?;
    let mut sums: BTreeMap<String, f64> = universe.into_iter().map(|s| (s, 0.0)).collect();
    for a in annotations {
        for (pos, s) in a.ranking.iter().enumerate() {
            *sums.get_mut(s).expect("checked universe") += (pos + 1) as f64;
        }
    }
    let n = annotations.len() as f64;
    Ok(sums.into_iter().map(|(s, v)| (s, v / n)).collect())
}

/// Paired rank positions of two strategies, one pair per annotation.
pub fn paired_ranks(annotations: &[RankAnnotation], a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    let universe = check_rankings(annotations)?;
    if !universe.contains(a) || !universe.contains(b) {
        return Err(StatsError::InconsistentStrategies);
    }
    let pos = |r: &RankAnnotation, s: &str| (r.ranking.iter().position(|x| x == s).expect("checked") + 1) as f64;
    Ok(annotations.iter().map(|r| (pos(r, a), pos(r, b))).unzip())
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn jaccard_types<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityField {
    Fluency,
    Meaning,
    Argument,
}

impl QualityField {
    pub const ALL: [QualityField; 3] = [QualityField::Fluency, QualityField::Meaning, QualityField::Argument];
}

/// A line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationRecord {
    Score {
        item: String,
        worker: String,
        field: QualityField,
        value: i64,
        /// Strategy that produced the rated output, when known.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<String>,
    },
    Ranking(RankAnnotation),
}

/// Score annotations of one field as a matrix.
pub fn field_matrix(
    records: &[AnnotationRecord],
    field: QualityField,
    scale: Scale,
) -> Result<Option<AnnotationMatrix>, StatsError> {
    let triples: Vec<(String, String, i64)> = records
        .iter()
        .filter_map(|r| match r {
            AnnotationRecord::Score {
                item,
                worker,
                field: f,
                value,
                ..
            } if *f == field => Some((item.clone(), worker.clone(), *value)),
            _ => None,
        })
        .collect();
    if triples.is_empty() {
        return Ok(None);
    }
    AnnotationMatrix::from_triples(triples, scale).map(Some)
}

pub fn rankings(records: &[AnnotationRecord]) -> Vec<RankAnnotation> {
    records
        .iter()
        .filter_map(|r| match r {
            AnnotationRecord::Ranking(a) => Some(a.clone()),
            _ => None,
        })
        .collect()
}
