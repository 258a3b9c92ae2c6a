//! The `stats` command: annotation aggregation, agreement and significance.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use claimopt::corpus::read_jsonl;
use claimopt::evalstats::{
    field_matrix, krippendorff_alpha, low_competence_workers, mace_aggregate, mean_rank, paired_ranks,
    percent_agreement, rankings, wilcoxon_signed_rank, AlphaLevel, AnnotationRecord, MaceConfig, MaceResult,
    QualityField, Scale, WilcoxonResult, ZeroPolicy,
};

use crate::manifest::{sha256_file, write_json, RunManifest};

#[derive(Debug, Clone)]
pub struct StatsOptions {
    pub scale: Scale,
    pub mace: MaceConfig,
    /// Workers below this competence are dropped before agreement is computed.
    pub competence_threshold: Option<f64>,
    pub zero_policy: ZeroPolicy,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            scale: Scale::Ordinal { min: 1, max: 5 },
            mace: MaceConfig::default(),
            competence_threshold: Some(0.3),
            zero_policy: ZeroPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub alpha_ordinal: Option<f64>,
    pub alpha_interval: Option<f64>,
    pub percent_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub field: QualityField,
    pub n_items: usize,
    pub n_workers: usize,
    pub mace: MaceResult,
    pub dropped_workers: Vec<String>,
    pub agreement: Agreement,
    /// Mean raw score per strategy, for records that name one.
    pub strategy_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub result: Option<WilcoxonResult>,
    /// Why no test could be run, e.g. every paired difference is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStats {
    pub n_annotations: usize,
    pub mean_rank: BTreeMap<String, f64>,
    pub pairwise: Vec<PairTest>,
}

/// Contents of `stats_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub input: PathBuf,
    pub input_sha256: String,
    pub seed: u64,
    pub fields: Vec<FieldStats>,
    pub rankings: Option<RankingStats>,
}

fn optional(r: Result<f64, claimopt::evalstats::StatsError>) -> Option<f64> {
    r.ok().filter(|v| v.is_finite())
}

fn strategy_means(records: &[AnnotationRecord], field: QualityField) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        if let AnnotationRecord::Score {
            field: f,
            value,
            strategy: Some(s),
            ..
        } = r
        {
            if *f == field {
                let e = acc.entry(s.clone()).or_default();
                e.0 += *value as f64;
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
}

pub fn compute_stats(records: &[AnnotationRecord], opts: &StatsOptions) -> Result<(Vec<FieldStats>, Option<RankingStats>)> {
    let mut fields = Vec::new();
    for field in QualityField::ALL {
        let Some(matrix) = field_matrix(records, field, opts.scale)? else {
            continue;
        };
        let mace = mace_aggregate(&matrix, &opts.mace).with_context(|| format!("aggregating {field:?}"))?;
        let dropped: BTreeSet<String> = opts
            .competence_threshold
            .map(|t| low_competence_workers(&mace, t))
            .unwrap_or_default();
        // keep the full matrix if filtering would leave nothing
        let kept = if dropped.is_empty() {
            matrix.clone()
        } else {
            matrix.without_workers(&dropped).unwrap_or_else(|_| matrix.clone())
        };
        fields.push(FieldStats {
            field,
            n_items: matrix.items().len(),
            n_workers: matrix.workers().len(),
            mace,
            dropped_workers: dropped.into_iter().collect(),
            agreement: Agreement {
                alpha_ordinal: optional(krippendorff_alpha(&kept, AlphaLevel::Ordinal)),
                alpha_interval: optional(krippendorff_alpha(&kept, AlphaLevel::Interval)),
                percent_agreement: optional(percent_agreement(&kept)),
            },
            strategy_means: strategy_means(records, field),
        });
    }

    let ranks = rankings(records);
    let ranking_stats = if ranks.is_empty() {
        None
    } else {
        let means = mean_rank(&ranks)?;
        let names: Vec<&String> = means.keys().collect();
        let mut pairwise = Vec::new();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                let (x, y) = paired_ranks(&ranks, a, b)?;
                let (result, note) = match wilcoxon_signed_rank(&x, &y, opts.zero_policy) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                pairwise.push(PairTest {
                    a: a.to_string(),
                    b: b.to_string(),
                    result,
                    note,
                });
            }
        }
        Some(RankingStats {
            n_annotations: ranks.len(),
            mean_rank: means,
            pairwise,
        })
    };
    Ok((fields, ranking_stats))
}

/// Read `annotations`, compute every statistic and write `stats_report.json`.
pub fn cmd_stats(annotations: &Path, out: &Path, opts: &StatsOptions) -> Result<StatsReport> {
    anyhow::ensure!(annotations.is_file(), "annotations not found: {}", annotations.display());
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let records: Vec<AnnotationRecord> = read_jsonl(annotations)?;
    anyhow::ensure!(!records.is_empty(), "no annotations in {}", annotations.display());
    let mut manifest = RunManifest::start("stats", String::new(), Some(opts.mace.seed));
    manifest.input(annotations)?;
    let (fields, rankings) = compute_stats(&records, opts)?;
    let report = StatsReport {
        input: annotations.to_path_buf(),
        input_sha256: sha256_file(annotations)?,
        seed: opts.mace.seed,
        fields,
        rankings,
    };
    let path = out.join("stats_report.json");
    write_json(&path, &report)?;
    manifest.artifact(&path)?;
    manifest.finish(out)?;
    Ok(report)
}
