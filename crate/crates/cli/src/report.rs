//! The `report` command: re-evaluate stored selections under other metric options.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use claimopt::corpus::{load_pairs, read_jsonl};
use claimopt::embed::HashingEmbedder;
use claimopt::metrics::{evaluate_run, MetricOptions, RunReport};
use claimopt::Strategy;

use crate::manifest::{sha256_file, RunManifest};
use crate::pipeline::{eval_target, write_report, SelectionLine};

/// Recompute `report.json` and `report.csv` in `run_dir` from its
/// `selections.jsonl` and the test pairs.
pub fn cmd_report(run_dir: &Path, test_path: &Path, opts: MetricOptions) -> Result<RunReport> {
    let sel_path = run_dir.join("selections.jsonl");
    ensure!(sel_path.is_file(), "no selections in {}", run_dir.display());
    ensure!(test_path.is_file(), "test pairs not found: {}", test_path.display());
    let previous: Option<RunReport> = std::fs::read_to_string(run_dir.join("report.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());

    let lines: Vec<SelectionLine> = read_jsonl(&sel_path)?;
    let pairs = load_pairs(test_path)?;
    let by_id: HashMap<&str, usize> = pairs.iter().enumerate().map(|(i, p)| (p.pair_id.as_str(), i)).collect();

    // strategy order of first appearance; instance order of the test file
    let mut order: Vec<Strategy> = Vec::new();
    let mut chosen: BTreeMap<(usize, Strategy), String> = BTreeMap::new();
    for l in lines {
        let Some(&i) = by_id.get(l.pair_id.as_str()) else {
            bail!("selection for unknown pair `{}`", l.pair_id);
        };
        if !order.contains(&l.strategy) {
            order.push(l.strategy);
        }
        chosen.insert((i, l.strategy), l.chosen);
    }
    ensure!(!order.is_empty(), "no selections in {}", sel_path.display());
    let mut indices: Vec<usize> = chosen.keys().map(|(i, _)| *i).collect();
    indices.dedup();
    let targets: Vec<_> = indices.iter().map(|&i| eval_target(&pairs[i])).collect();
    let mut outputs = Vec::new();
    for s in &order {
        let texts = indices
            .iter()
            .map(|&i| {
                chosen
                    .get(&(i, *s))
                    .cloned()
                    .with_context(|| format!("no {s} selection for `{}`", pairs[i].pair_id))
            })
            .collect::<Result<Vec<_>>>()?;
        outputs.push((s.to_string(), texts));
    }
    let strategies = evaluate_run(&targets, &outputs, opts, &HashingEmbedder::default())?;
    let report = RunReport {
        seed: previous.as_ref().map_or(0, |r| r.seed),
        config_hash: previous.map(|r| r.config_hash).unwrap_or_default(),
        dataset_fingerprint: sha256_file(test_path)?,
        options: opts,
        strategies,
    };
    // the run's own manifest stays authoritative; this one is not written
    let mut scratch = RunManifest::start("report", report.config_hash.clone(), Some(report.seed));
    write_report(run_dir, &report, &mut scratch)?;
    Ok(report)
}
