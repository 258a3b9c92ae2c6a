//! Picking the output claim from a scored candidate set.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OptimizationPair;
use crate::embed::Embedder;
use crate::genkit::{Candidate, CandidateSet, Directive};
use crate::scoring::{autoscore, ScoreVector, Weights};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("candidate set is empty")]
    EmptySet,
    #[error("{scores} score vectors for {candidates} candidates")]
    Misaligned { candidates: usize, scores: usize },
    #[error("strategy {0} requires weights")]
    MissingWeights(Strategy),
    #[error("strategy {0} requires a seed")]
    MissingSeed(Strategy),
    #[error("strategy {0} requires a trained ranker")]
    MissingRanker(Strategy),
    #[error("no candidate was produced by the greedy step")]
    NoGreedyCandidate,
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("embedding has dimension {got}, ranker expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training pair has distinct worse and better features")]
    DegenerateTrainingSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid ranker hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Unedited,
    Top1,
    Random,
    MaxFluency,
    MaxArgument,
    MaxMeaning,
    Autoscore,
    PairwiseRank,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Unedited,
        Strategy::Top1,
        Strategy::Random,
        Strategy::MaxFluency,
        Strategy::MaxArgument,
        Strategy::MaxMeaning,
        Strategy::Autoscore,
        Strategy::PairwiseRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Unedited => "unedited",
            Strategy::Top1 => "top1",
            Strategy::Random => "random",
            Strategy::MaxFluency => "max_fluency",
            Strategy::MaxArgument => "max_argument",
            Strategy::MaxMeaning => "max_meaning",
            Strategy::Autoscore => "autoscore",
            Strategy::PairwiseRank => "pairwise_rank",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// What a strategy returned: the untouched source or one of the candidates.
#[derive(Debug, Clone, PartialEq)]
pub enum Chosen {
    Source(String),
    Candidate(Candidate),
}

impl Chosen {
    pub fn text(&self) -> &str {
        match self {
            Chosen::Source(s) => s,
            Chosen::Candidate(c) => &c.text,
        }
    }

    pub fn candidate(&self) -> Option<&Candidate> {
        match self {
            Chosen::Source(_) => None,
            Chosen::Candidate(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub scores: ScoreVector,
    /// Decision score of the strategy; `None` for strategies that do not score.
    pub combined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: Chosen,
    pub strategy: Strategy,
    pub per_candidate_scores: Vec<ScoredCandidate>,
    pub edited: bool,
}

/// Optional resources some strategies need.
#[derive(Clone, Copy, Default)]
pub struct SelectionInputs<'a> {
    pub weights: Option<&'a Weights>,
    pub ranker: Option<&'a PairwiseRanker>,
    pub seed: Option<u64>,
}

/// Index of the maximum; ties keep the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Choose the output under `strategy`. Argmax ties resolve to the lowest
/// candidate position.
pub fn select(
    strategy: Strategy,
    source: &str,
    set: &CandidateSet,
    scores: &[ScoreVector],
    inputs: SelectionInputs<'_>,
) -> Result<SelectionResult, SelectionError> {
    if set.is_empty() {
        return Err(SelectionError::EmptySet);
    }
    if scores.len() != set.len() {
        return Err(SelectionError::Misaligned {
            candidates: set.len(),
            scores: scores.len(),
        });
    }

    let decision: Option<Vec<f64>> = match strategy {
        Strategy::MaxFluency => Some(scores.iter().map(|s| s.fluency).collect()),
        Strategy::MaxMeaning => Some(scores.iter().map(|s| s.meaning).collect()),
        Strategy::MaxArgument => Some(scores.iter().map(|s| s.argument).collect()),
        Strategy::Autoscore => {
            let w = inputs.weights.ok_or(SelectionError::MissingWeights(strategy))?;
            Some(scores.iter().map(|s| autoscore(s, w)).collect())
        }
        Strategy::PairwiseRank => {
            let ranker = inputs.ranker.ok_or(SelectionError::MissingRanker(strategy))?;
            Some(
                set.candidates
                    .iter()
                    .map(|c| ranker.score(&c.text))
                    .collect::<Result<_, _>>()?,
            )
        }
        Strategy::Unedited | Strategy::Top1 | Strategy::Random => {
            inputs.weights.map(|w| scores.iter().map(|s| autoscore(s, w)).collect())
        }
    };

    let chosen = match strategy {
        Strategy::Unedited => Chosen::Source(source.to_string()),
        Strategy::Top1 => set
            .candidates
            .iter()
            .find(|c| c.origin == Directive::Greedy)
            .cloned()
            .map(Chosen::Candidate)
            .ok_or(SelectionError::NoGreedyCandidate)?,
        Strategy::Random => {
            let seed = inputs.seed.ok_or(SelectionError::MissingSeed(strategy))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Chosen::Candidate(set.candidates[rng.gen_range(0..set.len())].clone())
        }
        _ => {
            let values = decision.as_deref().expect("scoring strategies produce values");
            let i = argmax(values).expect("set is non-empty");
            Chosen::Candidate(set.candidates[i].clone())
        }
    };

    let per_candidate_scores = set
        .candidates
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (c, s))| ScoredCandidate {
            candidate: c.clone(),
            scores: *s,
            combined: decision.as_ref().map(|d| d[i]),
        })
        .collect();
    let edited = chosen.text() != source;
    Ok(SelectionResult {
        chosen,
        strategy,
        per_candidate_scores,
        edited,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
}

/// Serialized form of a trained ranker (`ranker.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub weights: Vec<f64>,
    pub feature_dim: usize,
    pub training_meta: TrainingMeta,
}

/// Linear scoring function over embedding features.
#[derive(Clone)]
pub struct PairwiseRanker {
    embedder: Arc<dyn Embedder>,
    model: RankerModel,
}

impl fmt::Debug for PairwiseRanker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairwiseRanker").field("model", &self.model).finish()
    }
}

impl PairwiseRanker {
    pub fn from_model(embedder: Arc<dyn Embedder>, model: RankerModel) -> Result<Self, SelectionError> {
        if model.weights.len() != model.feature_dim || embedder.dim() != model.feature_dim {
            return Err(SelectionError::DimensionMismatch {
                expected: model.feature_dim,
                got: embedder.dim().min(model.weights.len()),
            });
        }
        Ok(Self { embedder, model })
    }

    pub fn model(&self) -> &RankerModel {
        &self.model
    }

    fn features(&self, text: &str) -> Result<Vec<f64>, SelectionError> {
        let v = self.embedder.embed(text).map_err(SelectionError::Embedding)?;
        if v.len() != self.model.feature_dim {
            return Err(SelectionError::DimensionMismatch {
                expected: self.model.feature_dim,
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn score(&self, text: &str) -> Result<f64, SelectionError> {
        let x = self.features(text)?;
        Ok(dot(&self.model.weights, &x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankerHyperparams {
    /// L2 regularization strength.
    pub lambda: f64,
    /// Number of stochastic updates.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RankerHyperparams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            iterations: 20_000,
            seed: 0,
        }
    }
}

/// Train a linear ranker on `(worse = source, better = reference)` pairs.
///
/// Minimizes the pairwise hinge loss `max(0, 1 - w . (phi(better) - phi(worse)))`
/// plus `lambda / 2 * |w|^2` with Pegasos stochastic sub-gradient steps. Pairs
/// whose feature difference is zero carry no ordering signal and are skipped.
pub fn train_pairwise_ranker(
    pairs: &[OptimizationPair],
    embedder: Arc<dyn Embedder>,
    params: &RankerHyperparams,
) -> Result<PairwiseRanker, SelectionError> {
    if pairs.is_empty() {
        return Err(SelectionError::EmptyTrainingSet);
    }
    if params.lambda.is_nan() || params.lambda <= 0.0 || params.iterations == 0 {
        return Err(SelectionError::InvalidHyperparams(format!(
            "lambda {} and iterations {} must be positive",
            params.lambda, params.iterations
        )));
    }
    let dim = embedder.dim();
    let mut diffs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let worse = embedder.embed(&p.source.text).map_err(SelectionError::Embedding)?;
        let better = embedder.embed(&p.reference.text).map_err(SelectionError::Embedding)?;
        if worse.len() != dim || better.len() != dim {
            return Err(SelectionError::DimensionMismatch {
                expected: dim,
                got: worse.len().min(better.len()),
            });
        }
        let d: Vec<f64> = better.iter().zip(&worse).map(|(b, w)| b - w).collect();
        if d.iter().any(|x| *x != 0.0) {
            diffs.push(d);
        }
    }
    if diffs.is_empty() {
        return Err(SelectionError::DegenerateTrainingSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut w = vec![0.0; dim];
    let mut t = 0usize;
    'outer: loop {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (params.lambda * t as f64);
            let margin = dot(&w, &diffs[i]);
            let decay = 1.0 - eta * params.lambda;
            w.iter_mut().for_each(|x| *x *= decay);
            if margin < 1.0 {
                for (wj, dj) in w.iter_mut().zip(&diffs[i]) {
                    *wj += eta * dj;
                }
            }
            // projection onto the ball of radius 1/sqrt(lambda)
            let norm = dot(&w, &w).sqrt();
            let cap = 1.0 / params.lambda.sqrt();
            if norm > cap {
                w.iter_mut().for_each(|x| *x *= cap / norm);
            }
            if t >= params.iterations {
                break 'outer;
            }
        }
    }

    let model = RankerModel {
        weights: w,
        feature_dim: dim,
        training_meta: TrainingMeta {
            pairs_used: diffs.len(),
            pairs_skipped: pairs.len() - diffs.len(),
            iterations: params.iterations,
            lambda: params.lambda,
            seed: params.seed,
        },
    };
    Ok(PairwiseRanker { embedder, model })
}

/// Candidates by descending ranker score; equal scores keep generation order.
pub fn rank_candidates(ranker: &PairwiseRanker, set: &CandidateSet) -> Result<Vec<Candidate>, SelectionError> {
    if set.is_empty() {
        return Err(SelectionError::EmptySet);
    }
    let mut scored: Vec<(f64, &Candidate)> = set
        .candidates
        .iter()
        .map(|c| Ok((ranker.score(&c.text)?, c)))
        .collect::<Result<_, SelectionError>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, c)| c.clone()).collect())
}
