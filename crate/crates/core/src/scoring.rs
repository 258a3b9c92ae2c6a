//! Candidate quality scoring and weight calibration.
//!
//! Each candidate receives a [`ScoreVector`] of fluency, meaning preservation and
//! argument quality, all in `[0, 1]`. [`autoscore`] combines them with simplex
//! [`Weights`]; [`calibrate_weights`] picks those weights by grid search so that the
//! combined score correlates best with the order of versions in revision chains.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContextBundle, RevisionChain};
use crate::embed::{cosine, Embedder};
use crate::text::{is_word, tokenize};

const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("score component {name} = {value} is not a finite value in [0, 1]")]
    InvalidComponent { name: &'static str, value: f64 },
    #[error("weights ({alpha}, {beta}, {gamma}) must be non-negative and sum to 1")]
    InvalidWeights { alpha: f64, beta: f64, gamma: f64 },
    #[error("{scorer} scorer failed: {reason}")]
    ScorerFailed { scorer: String, reason: String },
    #[error("{scorer} scorer returned {value}, outside its declared range [{lo}, {hi}]")]
    OutOfRange {
        scorer: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{scorer} scorer declares an invalid range [{lo}, {hi}]")]
    InvalidDeclaredRange { scorer: String, lo: f64, hi: f64 },
    #[error("cosine {0} lies outside [-1, 1]")]
    CosineOutOfRange(f64),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("a series has zero variance")]
    ZeroVariance,
    #[error("invalid calibration grid: {0}")]
    InvalidGrid(String),
    #[error("chain {0} has fewer than 2 versions")]
    ChainTooShort(String),
    #[error("no grid point yields a defined correlation")]
    NoValidGridPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub fluency: f64,
    pub meaning: f64,
    pub argument: f64,
}

impl ScoreVector {
    pub fn new(fluency: f64, meaning: f64, argument: f64) -> Result<Self, ScoringError> {
        for (name, value) in [("fluency", fluency), ("meaning", meaning), ("argument", argument)] {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(ScoringError::InvalidComponent { name, value });
            }
        }
        Ok(Self {
            fluency,
            meaning,
            argument,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fluency, self.meaning, self.argument]
    }
}

/// Non-negative weights for (fluency, meaning, argument) summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ScoringError> {
        Self::with_tolerance(alpha, beta, gamma, RANGE_TOLERANCE)
    }

    /// Like [`Weights::new`] but accepting a sum within `tol` of one, as for points
    /// of a calibration grid whose step does not divide one.
    pub fn with_tolerance(alpha: f64, beta: f64, gamma: f64, tol: f64) -> Result<Self, ScoringError> {
        let ok = [alpha, beta, gamma].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (alpha + beta + gamma - 1.0).abs() <= tol;
        if ok {
            Ok(Self { alpha, beta, gamma })
        } else {
            Err(ScoringError::InvalidWeights { alpha, beta, gamma })
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Weighted sum `alpha * fluency + beta * meaning + gamma * argument`.
pub fn autoscore(v: &ScoreVector, w: &Weights) -> f64 {
    w.alpha * v.fluency + w.beta * v.meaning + w.gamma * v.argument
}

/// Map a cosine similarity in `[-1, 1]` onto `[0, 1]` by `(s + 1) / 2`.
pub fn normalize_meaning(cosine: f64) -> Result<f64, ScoringError> {
    if !cosine.is_finite() || cosine.abs() > 1.0 + 1e-6 {
        return Err(ScoringError::CosineOutOfRange(cosine));
    }
    Ok(((cosine.clamp(-1.0, 1.0)) + 1.0) / 2.0)
}

/// Quality model for one dimension. Implementations must be deterministic.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    /// Closed interval the raw scores fall in.
    fn range(&self) -> (f64, f64);

    fn score(&self, source: &str, candidate: &str, context: &ContextBundle) -> Result<f64, String>;

    /// Serial scorers are never called concurrently.
    fn is_serial(&self) -> bool {
        false
    }
}

struct Slot {
    scorer: Box<dyn Scorer>,
    lock: Mutex<()>,
}

impl Slot {
    fn new(scorer: Box<dyn Scorer>) -> Result<Self, ScoringError> {
        let (lo, hi) = scorer.range();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ScoringError::InvalidDeclaredRange {
                scorer: scorer.name().to_string(),
                lo,
                hi,
            });
        }
        Ok(Self {
            scorer,
            lock: Mutex::new(()),
        })
    }

    /// Raw score mapped affinely from the declared range onto `[0, 1]`.
    fn normalized(&self, source: &str, candidate: &str, context: &ContextBundle) -> Result<f64, ScoringError> {
        let raw = {
            let _guard = self
                .scorer
                .is_serial()
                .then(|| self.lock.lock().unwrap_or_else(|e| e.into_inner()));
            self.scorer.score(source, candidate, context)
        }
        .map_err(|reason| ScoringError::ScorerFailed {
            scorer: self.scorer.name().to_string(),
            reason,
        })?;
        let (lo, hi) = self.scorer.range();
        if !raw.is_finite() || raw < lo - RANGE_TOLERANCE || raw > hi + RANGE_TOLERANCE {
            return Err(ScoringError::OutOfRange {
                scorer: self.scorer.name().to_string(),
                value: raw,
                lo,
                hi,
            });
        }
        Ok(((raw.clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0))
    }
}

/// The three scorers used by selection and calibration.
pub struct ScorerRegistry {
    fluency: Slot,
    meaning: Slot,
    argument: Slot,
}

impl ScorerRegistry {
    pub fn new(
        fluency: Box<dyn Scorer>,
        meaning: Box<dyn Scorer>,
        argument: Box<dyn Scorer>,
    ) -> Result<Self, ScoringError> {
        Ok(Self {
            fluency: Slot::new(fluency)?,
            meaning: Slot::new(meaning)?,
            argument: Slot::new(argument)?,
        })
    }

    /// Heuristic fluency, token-Jaccard meaning and heuristic argument scorers.
    pub fn heuristic() -> Self {
        Self::new(
            Box::new(HeuristicFluency),
            Box::new(TokenJaccardMeaning),
            Box::new(HeuristicArgument),
        )
        .expect("heuristic scorers declare valid ranges")
    }

    pub fn names(&self) -> [&str; 3] {
        [
            self.fluency.scorer.name(),
            self.meaning.scorer.name(),
            self.argument.scorer.name(),
        ]
    }
}

/// Score one candidate against its source. A meaning scorer declaring `[-1, 1]`
/// is rescaled exactly as [`normalize_meaning`] does.
pub fn score_candidate(
    registry: &ScorerRegistry,
    source: &str,
    candidate: &str,
    context: &ContextBundle,
) -> Result<ScoreVector, ScoringError> {
    ScoreVector::new(
        registry.fluency.normalized(source, candidate, context)?,
        registry.meaning.normalized(source, candidate, context)?,
        registry.argument.normalized(source, candidate, context)?,
    )
}

/// How vectors of one candidate set are brought onto a common scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Use the scorer-declared ranges only.
    #[default]
    Declared,
    /// Additionally min-max each component within the candidate set. A component
    /// that is constant over the set maps to 0.5.
    MinMaxPerSet,
}

pub fn normalize_set(vectors: &[ScoreVector], mode: Normalization) -> Vec<ScoreVector> {
    match mode {
        Normalization::Declared => vectors.to_vec(),
        Normalization::MinMaxPerSet => {
            let mut cols = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
            for v in vectors {
                for (c, x) in cols.iter_mut().zip(v.as_array()) {
                    c[0] = c[0].min(x);
                    c[1] = c[1].max(x);
                }
            }
            let scale = |i: usize, x: f64| {
                let [lo, hi] = cols[i];
                if hi > lo {
                    (x - lo) / (hi - lo)
                } else {
                    0.5
                }
            };
            vectors
                .iter()
                .map(|v| ScoreVector {
                    fluency: scale(0, v.fluency),
                    meaning: scale(1, v.meaning),
                    argument: scale(2, v.argument),
                })
                .collect()
        }
    }
}

/// Rule-based well-formedness: the share of three checks passed (first letter
/// capitalized, terminal punctuation present, no immediately repeated word).
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicFluency;

impl HeuristicFluency {
    pub fn checks(text: &str) -> [bool; 3] {
        let capitalized = text
            .chars()
            .find(|c| c.is_alphabetic())
            .is_some_and(char::is_uppercase);
        let terminal = text
            .trim_end()
            .trim_end_matches(['"', '\'', ')', ']'])
            .ends_with(['.', '!', '?']);
        let words: Vec<String> = tokenize(text).into_iter().filter(|t| is_word(t)).collect();
        let no_repeat = words.windows(2).all(|w| w[0] != w[1]);
        [capitalized, terminal, no_repeat]
    }
}

impl Scorer for HeuristicFluency {
    fn name(&self) -> &str {
        "heuristic-fluency"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, _: &str, candidate: &str, _: &ContextBundle) -> Result<f64, String> {
        let passed = Self::checks(candidate).iter().filter(|b| **b).count();
        Ok(passed as f64 / 3.0)
    }
}

/// Jaccard overlap of the token sets of source and candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJaccardMeaning;

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    use std::collections::HashSet;
    let a: HashSet<String> = tokenize(a).into_iter().collect();
    let b: HashSet<String> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

impl Scorer for TokenJaccardMeaning {
    fn name(&self) -> &str {
        "token-jaccard-meaning"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, source: &str, candidate: &str, _: &ContextBundle) -> Result<f64, String> {
        Ok(token_jaccard(source, candidate))
    }
}

/// Cosine similarity of embeddings; declares `[-1, 1]`.
pub struct CosineMeaning<E> {
    pub embedder: E,
}

impl<E: Embedder> Scorer for CosineMeaning<E> {
    fn name(&self) -> &str {
        "cosine-meaning"
    }

    fn range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn score(&self, source: &str, candidate: &str, _: &ContextBundle) -> Result<f64, String> {
        let a = self.embedder.embed(source)?;
        let b = self.embedder.embed(candidate)?;
        cosine(&a, &b).ok_or_else(|| "zero-norm embedding".to_string())
    }
}

/// Bounded length/specificity heuristic for the relative argument quality of a
/// candidate over its source.
///
/// - identical token sequence: 0.0
/// - otherwise 0.5, plus 0.1 per distinct new word (at most 4),
/// - minus 0.25 when the candidate is under half or over twice the source length,
///
/// clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicArgument;

impl HeuristicArgument {
    pub fn value(source: &str, candidate: &str) -> f64 {
        use std::collections::HashSet;
        let src = tokenize(source);
        let cand = tokenize(candidate);
        if src == cand {
            return 0.0;
        }
        let known: HashSet<&str> = src.iter().map(String::as_str).collect();
        let new_words: HashSet<&str> = cand
            .iter()
            .map(String::as_str)
            .filter(|t| is_word(t) && !known.contains(t))
            .collect();
        let mut score = 0.5 + 0.1 * new_words.len().min(4) as f64;
        let ratio = cand.len() as f64 / src.len().max(1) as f64;
        if !(0.5..=2.0).contains(&ratio) {
            score -= 0.25;
        }
        score.clamp(0.0, 1.0)
    }
}

impl Scorer for HeuristicArgument {
    fn name(&self) -> &str {
        "heuristic-argument"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, source: &str, candidate: &str, _: &ContextBundle) -> Result<f64, String> {
        Ok(Self::value(source, candidate))
    }
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ScoringError> {
    if xs.len() != ys.len() {
        return Err(ScoringError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(ScoringError::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(ScoringError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// What the grid search correlates with revision positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationTarget {
    /// One correlation over all scored versions of all chains.
    #[default]
    Pooled,
    /// Mean of per-chain correlations over chains where it is defined.
    PerChain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub grid_step: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub target: CorrelationTarget,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            range_lo: 0.01,
            range_hi: 0.98,
            target: CorrelationTarget::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub weights: Weights,
    pub pearson_r: f64,
    pub grid_step: f64,
    pub evaluated_points: usize,
}

/// A scored chain version: `position` is its index in the chain min-max
/// normalized over the whole chain, so the first revision of `c1..cm` sits at
/// `1 / (m - 1)` and the last at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainPoint {
    pub chain: usize,
    pub position: f64,
    pub scores: ScoreVector,
}

/// Score every version `c[i]`, `i >= 2`, against its predecessor.
pub fn score_chains(
    chains: &[RevisionChain],
    registry: &ScorerRegistry,
) -> Result<Vec<ChainPoint>, ScoringError> {
    if let Some(c) = chains.iter().find(|c| c.len() < 2) {
        return Err(ScoringError::ChainTooShort(c.chain_id.clone()));
    }
    let per_chain: Vec<Result<Vec<ChainPoint>, ScoringError>> = chains
        .par_iter()
        .enumerate()
        .map(|(ci, chain)| {
            let last = (chain.len() - 1) as f64;
            chain
                .claims
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    Ok(ChainPoint {
                        chain: ci,
                        position: (i + 1) as f64 / last,
                        scores: score_candidate(registry, &w[0].text, &w[1].text, &chain.context)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut points = Vec::new();
    for r in per_chain {
        points.extend(r?);
    }
    Ok(points)
}

/// Grid triples in lexicographic order: every component a multiple of `step`
/// within `[lo, hi]`, components summing to one within `step / 2`.
pub fn weight_grid(step: f64, lo: f64, hi: f64) -> Result<Vec<Weights>, ScoringError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(ScoringError::InvalidGrid(format!("step must be positive, got {step}")));
    }
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(ScoringError::InvalidGrid(format!(
            "need 0 < lo <= hi < 1, got [{lo}, {hi}]"
        )));
    }
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    let tol = step / 2.0 + 1e-12;
    let mut grid = Vec::new();
    for a in first..=last {
        for b in first..=last {
            let rest = 1.0 - (a + b) as f64 * step;
            let centre = (rest / step).round() as i64;
            for c in (centre - 1).max(first)..=(centre + 1).min(last) {
                let (wa, wb, wc) = (a as f64 * step, b as f64 * step, c as f64 * step);
                if (wa + wb + wc - 1.0).abs() <= tol {
                    grid.push(Weights {
                        alpha: wa,
                        beta: wb,
                        gamma: wc,
                    });
                }
            }
        }
    }
    Ok(grid)
}

/// Correlation between AutoScore under `weights` and chain positions.
pub fn calibration_objective(
    points: &[ChainPoint],
    weights: &Weights,
    target: CorrelationTarget,
) -> Result<f64, ScoringError> {
    match target {
        CorrelationTarget::Pooled => {
            let scores: Vec<f64> = points.iter().map(|p| autoscore(&p.scores, weights)).collect();
            let positions: Vec<f64> = points.iter().map(|p| p.position).collect();
            pearson(&scores, &positions)
        }
        CorrelationTarget::PerChain => {
            let mut rs = Vec::new();
            let mut start = 0;
            while start < points.len() {
                let chain = points[start].chain;
                let end = start + points[start..].iter().take_while(|p| p.chain == chain).count();
                let group = &points[start..end];
                let scores: Vec<f64> = group.iter().map(|p| autoscore(&p.scores, weights)).collect();
                let positions: Vec<f64> = group.iter().map(|p| p.position).collect();
                if let Ok(r) = pearson(&scores, &positions) {
                    rs.push(r);
                }
                start = end;
            }
            if rs.is_empty() {
                Err(ScoringError::ZeroVariance)
            } else {
                Ok(rs.iter().sum::<f64>() / rs.len() as f64)
            }
        }
    }
}

/// Grid search over pre-scored chain points. Ties keep the lexicographically
/// smallest `(alpha, beta, gamma)`.
pub fn calibrate_points(
    points: &[ChainPoint],
    config: &CalibrationConfig,
) -> Result<CalibrationResult, ScoringError> {
    if points.len() < 2 {
        return Err(ScoringError::TooFewPoints(points.len()));
    }
    let grid = weight_grid(config.grid_step, config.range_lo, config.range_hi)?;
    if grid.is_empty() {
        return Err(ScoringError::NoValidGridPoint);
    }
    let values: Vec<Option<f64>> = grid
        .par_iter()
        .map(|w| calibration_objective(points, w, config.target).ok())
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in values.iter().enumerate() {
        if let Some(r) = *r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    let (idx, r) = best.ok_or(ScoringError::NoValidGridPoint)?;
    Ok(CalibrationResult {
        weights: grid[idx],
        pearson_r: r,
        grid_step: config.grid_step,
        evaluated_points: grid.len(),
    })
}

/// Score validation chains and grid-search the AutoScore weights.
pub fn calibrate_weights(
    chains: &[RevisionChain],
    registry: &ScorerRegistry,
    config: &CalibrationConfig,
) -> Result<CalibrationResult, ScoringError> {
    weight_grid(config.grid_step, config.range_lo, config.range_hi)?;
    let points = score_chains(chains, registry)?;
    calibrate_points(&points, config)
}

/// Contents of `weights.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pearson_r: f64,
    pub grid_step: f64,
}

impl From<&CalibrationResult> for WeightsFile {
    fn from(r: &CalibrationResult) -> Self {
        Self {
            alpha: r.weights.alpha,
            beta: r.weights.beta,
            gamma: r.weights.gamma,
            pearson_r: r.pearson_r,
            grid_step: r.grid_step,
        }
    }
}

impl WeightsFile {
    pub fn weights(&self) -> Result<Weights, ScoringError> {
        Weights::with_tolerance(
            self.alpha,
            self.beta,
            self.gamma,
            (self.grid_step / 2.0).max(RANGE_TOLERANCE),
        )
    }
}
