//! Acceptance gate. Runs every criterion, prints one line each and exits
//! nonzero if any criterion fails. Criterion 8 needs the real revision corpus and
//! is skipped unless `CLAIMREV_CHAINS` points at it.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use claimopt::corpus::{derive_all_pairs, filter_by_intent, load_chains, split_dataset, SplitConfig};
use claimopt::embed::HashingEmbedder;
use claimopt::evalstats::{
    cohens_kappa, krippendorff_alpha, mace_aggregate, wilcoxon_signed_rank, AlphaLevel, AnnotationMatrix,
    MaceConfig, Scale, ZeroPolicy,
};
use claimopt::metrics::{compute_report, evaluate_run, sari_components, EvalInstance, MetricOptions, SariVariant};
use claimopt::scoring::{calibrate_weights, pearson, CalibrationConfig, Scorer, ScorerRegistry};
use claimopt::selection::{select, SelectionInputs};
use claimopt::synthetic::{planted_annotations, synthetic_chains, SyntheticConfig};
use claimopt::{
    Candidate, CandidateSet, ContextBundle, Directive, IntentLabel, RevisionChain, ScoreVector, Strategy, Weights,
};
use claimopt_cli::config::RunConfig;
use claimopt_cli::pipeline::{cmd_prepare, cmd_run, cmd_synth, eval_target};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn metric_identities() -> Outcome {
    let embedder = HashingEmbedder::default();
    for seed in [1, 2, 3] {
        let chains = synthetic_chains(&SyntheticConfig {
            n_chains: 150,
            seed,
            ..Default::default()
        });
        let targets: Vec<_> = derive_all_pairs(&chains).iter().map(eval_target).collect();
        let refs: Vec<String> = targets.iter().map(|t| t.references[0].clone()).collect();
        let srcs: Vec<String> = targets.iter().map(|t| t.source.clone()).collect();
        let reports = evaluate_run(
            &targets,
            &[("reference".into(), refs), ("unedited".into(), srcs)],
            MetricOptions::default(),
            &embedder,
        )
        .map_err(|e| e.to_string())?;
        let (r, u) = (&reports[0].metrics, &reports[1].metrics);
        check((r.bleu - 100.0).abs() <= 1e-6, format!("BLEU identity {}", r.bleu))?;
        check((r.rouge_l - 1.0).abs() <= 1e-12, format!("ROUGE-L identity {}", r.rouge_l))?;
        check(r.exact_match_ratio == 1.0, format!("ExM identity {}", r.exact_match_ratio))?;
        check(u.no_edit_ratio == 1.0, format!("Unedited NoEd {}", u.no_edit_ratio))?;
    }
    // corpus mode shares the identity
    let inst = vec![EvalInstance::new("a b c d", "x y z w v", vec!["x y z w v".into()], ContextBundle::default()).unwrap()];
    let opts = MetricOptions {
        bleu_mode: claimopt::metrics::BleuMode::Corpus,
        ..Default::default()
    };
    let r = compute_report(&inst, opts, &embedder).map_err(|e| e.to_string())?;
    check((r.bleu - 100.0).abs() <= 1e-6, format!("corpus BLEU identity {}", r.bleu))?;
    Ok("BLEU=100, ROUGE-L=1, ExM=1, Unedited NoEd=1 on 3 synthetic datasets".into())
}

// ---------------------------------------------------------------- 2

/// Brute-force SARI: walk the n-gram universe of all texts and apply the
/// component definitions gram by gram.
mod sari_oracle {
    fn grams(tokens: &[&str], n: usize) -> Vec<String> {
        if tokens.len() < n {
            return Vec::new();
        }
        (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
    }

    fn occurrences(list: &[String], g: &str) -> f64 {
        list.iter().filter(|x| x.as_str() == g).count() as f64
    }

    fn div(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            1.0
        } else {
            a / b
        }
    }

    fn f1(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// `(keep, delete, add)` averaged over orders 1..=4.
    pub fn components(src: &str, out: &str, refs: &[&str], all_f1: bool) -> [f64; 3] {
        let mut distinct: Vec<&str> = Vec::new();
        for r in refs {
            if !distinct.contains(r) {
                distinct.push(r);
            }
        }
        let (s_t, o_t) = (toks(src), toks(out));
        let r_t: Vec<Vec<&str>> = distinct.iter().map(|r| toks(r)).collect();
        let k = distinct.len() as f64;
        let mut acc = [0.0; 3];
        for n in 1..=4 {
            let s_g = grams(&s_t, n);
            let o_g = grams(&o_t, n);
            let r_g: Vec<Vec<String>> = r_t.iter().map(|r| grams(r, n)).collect();
            let mut universe: Vec<String> = s_g.iter().chain(&o_g).chain(r_g.iter().flatten()).cloned().collect();
            universe.sort();
            universe.dedup();

            let (mut kp, mut kp_n, mut kr, mut kr_n) = (0.0, 0.0, 0.0, 0.0);
            let (mut dp, mut dp_n, mut dr, mut dr_n) = (0.0, 0.0, 0.0, 0.0);
            let (mut a_sys, mut a_good, mut a_all) = (0.0, 0.0, 0.0);
            for g in &universe {
                let s = k * occurrences(&s_g, g);
                let o = k * occurrences(&o_g, g);
                let r: f64 = r_g.iter().map(|l| occurrences(l, g)).sum();

                let kept = s.min(o);
                let kept_good = kept.min(r);
                let keep_all = s.min(r);
                if kept > 0.0 {
                    kp += kept_good / kept;
                    kp_n += 1.0;
                }
                if keep_all > 0.0 {
                    kr += kept_good / keep_all;
                    kr_n += 1.0;
                }

                let deleted = (s - o).max(0.0);
                let deleted_good = (deleted - r).max(0.0);
                let del_all = (s - r).max(0.0);
                if deleted > 0.0 {
                    dp += deleted_good / deleted;
                    dp_n += 1.0;
                }
                if del_all > 0.0 {
                    dr += deleted_good / del_all;
                    dr_n += 1.0;
                }

                if s == 0.0 && o > 0.0 {
                    a_sys += 1.0;
                    if r > 0.0 {
                        a_good += 1.0;
                    }
                }
                if s == 0.0 && r > 0.0 {
                    a_all += 1.0;
                }
            }
            let keep = f1(div(kp, kp_n), div(kr, kr_n));
            let del = if all_f1 {
                f1(div(dp, dp_n), div(dr, dr_n))
            } else {
                div(dp, dp_n)
            };
            let add = f1(div(a_good, a_sys), div(a_good, a_all));
            acc[0] += keep;
            acc[1] += del;
            acc[2] += add;
        }
        acc.map(|v| v / 4.0)
    }
}

const SARI_FIXTURES: &[(&str, &str, &[&str])] = &[
    ("a b c", "a b c", &["a b c"]),
    ("a b c", "a b", &["a b"]),
    ("a b c", "a b c", &["a b"]),
    ("a b c d", "a c d", &["a b d"]),
    ("the tax is bad", "the tax is unfair", &["the tax is unfair"]),
    ("the tax is bad", "the tax is unfair", &["the levy is unfair"]),
    ("the tax is bad", "a tax", &["the tax is very bad"]),
    ("x y z", "p q r", &["x y z"]),
    ("x y z", "p q r", &["p q r"]),
    ("one two three four five", "one two four five", &["one three four five", "one two four five six"]),
    ("a a b b", "a b", &["a a b"]),
    ("a a a", "a", &["a a"]),
    ("a b a b a b", "a b a b", &["a b", "b a b a"]),
    ("cats chase mice", "cats chase mice daily", &["cats often chase mice"]),
    ("cats chase mice", "dogs chase mice", &["cats chase mice", "cats chase mice"]),
    ("it is good", "it is very good", &["it is good", "it is very good", "it really is good"]),
    ("long sentence with many words in it", "long sentence with words", &["a long sentence with many words"]),
    ("p", "q", &["r"]),
    ("p", "p", &["q"]),
    ("we should ban cars in cities", "we should ban cars in big cities now", &["we should ban private cars in cities"]),
    ("a b c d e f", "f e d c b a", &["a b c d e f"]),
    ("a b c d e f", "a b c", &["d e f"]),
    ("the same the same", "the same", &["the same the"]),
    ("see the link", "see the link at example org", &["see the link at example org evidence"]),
];

fn sari_oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for (src, out, refs) in SARI_FIXTURES {
        let owned: Vec<String> = refs.iter().map(|r| r.to_string()).collect();
        for (variant, all_f1) in [(SariVariant::Canonical, false), (SariVariant::AllF1, true)] {
            let got = sari_components(src, out, &owned, variant);
            let want = sari_oracle::components(src, out, refs, all_f1);
            for (g, w) in [got.keep, got.delete, got.add].iter().zip(want) {
                worst = worst.max((g - w).abs());
                check(
                    (g - w).abs() <= 1e-9,
                    format!("{variant:?} on ({src:?}, {out:?}): {g} vs oracle {w}"),
                )?;
            }
            let total = claimopt::metrics::sari(src, out, &owned, variant);
            let want_total = 100.0 * want.iter().sum::<f64>() / 3.0;
            check((total - want_total).abs() <= 1e-9, format!("total SARI on {src:?}"))?;
        }
    }
    Ok(format!(
        "{} fixtures x 2 variants, max component deviation {worst:.1e}",
        SARI_FIXTURES.len()
    ))
}

// ---------------------------------------------------------------- 3

fn autoscore_argmax_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240);
    let mut ties = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=10);
        let coarse = rng.gen_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| {
            if coarse {
                rng.gen_range(0..=4) as f64 / 4.0
            } else {
                rng.gen::<f64>()
            }
        };
        let vectors: Vec<ScoreVector> = (0..n)
            .map(|_| {
                let (f, m, a) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
                ScoreVector::new(f, m, a).unwrap()
            })
            .collect();
        let (u1, u2) = {
            let (x, y): (f64, f64) = (rng.gen(), rng.gen());
            (x.min(y), x.max(y))
        };
        let weights = Weights::new(u1, u2 - u1, 1.0 - u2).map_err(|e| e.to_string())?;
        let set = CandidateSet {
            source: "src".into(),
            candidates: (0..n)
                .map(|i| Candidate {
                    text: format!("candidate {i}"),
                    origin: if i == 0 { Directive::Greedy } else { Directive::TopK(5 * i as u32) },
                    index: i,
                })
                .collect(),
        };
        let inputs = SelectionInputs {
            weights: Some(&weights),
            ..Default::default()
        };
        let got = select(Strategy::Autoscore, "src", &set, &vectors, inputs).map_err(|e| e.to_string())?;
        let got_index = got.chosen.candidate().ok_or("autoscore returned the source")?.index;

        // exhaustive: the first candidate no other candidate beats
        let value = |v: &ScoreVector| weights.alpha * v.fluency + weights.beta * v.meaning + weights.gamma * v.argument;
        let values: Vec<f64> = vectors.iter().map(value).collect();
        let best = (0..n)
            .find(|&i| (0..n).all(|j| values[j] <= values[i]))
            .expect("a maximum exists");
        if (0..n).filter(|&j| values[j] == values[best]).count() > 1 {
            ties += 1;
        }
        check(got_index == best, format!("trial {trial}: chose {got_index}, oracle {best}"))?;
    }
    Ok(format!("1000/1000 sets agree ({ties} with tied maxima)"))
}

// ---------------------------------------------------------------- 4

struct Planted {
    name: &'static str,
    values: HashMap<String, f64>,
}

impl Scorer for Planted {
    fn name(&self) -> &str {
        self.name
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, _source: &str, candidate: &str, _context: &ContextBundle) -> Result<f64, String> {
        self.values.get(candidate).copied().ok_or_else(|| format!("unplanted text {candidate:?}"))
    }
}

fn calibration_recovery() -> Outcome {
    // independent count of (a, b, c) in hundredths, each in [1, 98], summing to 100
    let enumerated = (1..=98)
        .flat_map(|a| (1..=98).map(move |b| (a, b)))
        .filter(|(a, b)| (1..=98).contains(&(100 - a - b)))
        .count();
    let mut details = Vec::new();
    for (slot, name) in ["fluency", "meaning", "argument"].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + slot as u64);
        let mut chains = Vec::new();
        let mut planted: [HashMap<String, f64>; 3] = Default::default();
        for c in 0..300 {
            let m = rng.gen_range(3..=7);
            let texts: Vec<String> = (0..m).map(|i| format!("chain {c} version {i}")).collect();
            for (i, t) in texts.iter().enumerate().skip(1) {
                let position = i as f64 / (m - 1) as f64;
                for (k, table) in planted.iter_mut().enumerate() {
                    let v = if k == slot {
                        (position + rng.gen_range(-0.05..=0.05)).clamp(0.0, 1.0)
                    } else {
                        rng.gen::<f64>()
                    };
                    table.insert(t.clone(), v);
                }
            }
            chains.push(
                RevisionChain::new(
                    format!("c{c}"),
                    "d",
                    ContextBundle::default(),
                    texts.iter().enumerate().map(|(i, t)| (format!("c{c}v{i}"), t.clone())).collect(),
                    vec![IntentLabel::Clarification; m - 1],
                )
                .map_err(|e| e.to_string())?,
            );
        }
        let [f, me, a] = planted;
        let registry = ScorerRegistry::new(
            Box::new(Planted { name: "planted-f", values: f }),
            Box::new(Planted { name: "planted-m", values: me }),
            Box::new(Planted { name: "planted-a", values: a }),
        )
        .map_err(|e| e.to_string())?;
        let result = calibrate_weights(&chains, &registry, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
        let w = result.weights.as_array()[slot];
        check(w >= 0.90, format!("{name} planted, got weight {w}"))?;
        check(result.pearson_r >= 0.9, format!("{name} planted, r = {}", result.pearson_r))?;
        check(
            result.evaluated_points == enumerated,
            format!("grid has {} points, enumeration {enumerated}", result.evaluated_points),
        )?;
        details.push(format!("{name}: w={w:.2} r={:.3}", result.pearson_r));
    }
    Ok(format!("{}; grid {enumerated} points", details.join(", ")))
}

// ---------------------------------------------------------------- 5

#[allow(clippy::approx_constant)] // 3.14 is a measurement
fn statistics_correctness() -> Outcome {
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    check((r - 0.8).abs() <= 1e-12, format!("pearson {r}"))?;

    // [[20, 5], [10, 15]]: rows rater A, columns rater B
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (x, y, n) in [(1, 1, 20), (1, 0, 5), (0, 1, 10), (0, 0, 15)] {
        for _ in 0..n {
            a.push(x);
            b.push(y);
        }
    }
    let kappa = cohens_kappa(&a, &b).map_err(|e| e.to_string())?;
    check((kappa - 0.4).abs() <= 1e-9, format!("kappa {kappa}"))?;

    let scale = Scale::Ordinal { min: 1, max: 5 };
    let unanimous: Vec<(String, String, i64)> = (0..40)
        .flat_map(|i| (0..3).map(move |w| (format!("i{i}"), format!("w{w}"), 1 + (i % 5) as i64)))
        .collect();
    let m = AnnotationMatrix::from_triples(unanimous, scale).map_err(|e| e.to_string())?;
    for level in [AlphaLevel::Nominal, AlphaLevel::Ordinal, AlphaLevel::Interval] {
        let v = krippendorff_alpha(&m, level).map_err(|e| e.to_string())?;
        check((v - 1.0).abs() <= 1e-12, format!("unanimous alpha {level:?} = {v}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random: Vec<(String, String, i64)> = (0..2500)
        .flat_map(|i| (0..4).map(move |w| (format!("i{i}"), format!("w{w}"))))
        .map(|(i, w)| (i, w, rng.gen_range(1..=5)))
        .collect();
    let m = AnnotationMatrix::from_triples(random, scale).map_err(|e| e.to_string())?;
    let mut random_alphas = Vec::new();
    for level in [AlphaLevel::Nominal, AlphaLevel::Ordinal, AlphaLevel::Interval] {
        let v = krippendorff_alpha(&m, level).map_err(|e| e.to_string())?;
        check(v.abs() <= 0.05, format!("random alpha {level:?} = {v}"))?;
        random_alphas.push(format!("{v:+.4}"));
    }

    let zeros = [0.0; 5];
    let w = wilcoxon_signed_rank(&[1.0, -2.0, 3.0, 4.0, 5.0], &zeros, ZeroPolicy::Drop).map_err(|e| e.to_string())?;
    check(w.statistic == 2.0, format!("statistic {}", w.statistic))?;
    check((w.p_value - 0.1875).abs() <= 1e-12, format!("p {}", w.p_value))?;

    // Hollander and Wolfe, depression scale before and after treatment: V = 40, p = 0.0390625
    let x = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30];
    let y = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29];
    let hw = wilcoxon_signed_rank(&x, &y, ZeroPolicy::Drop).map_err(|e| e.to_string())?;
    check(hw.w_plus == 40.0 && hw.statistic == 5.0, format!("W+ {} T {}", hw.w_plus, hw.statistic))?;
    check((hw.p_value - 0.0390625).abs() <= 1e-12, format!("p {}", hw.p_value))?;

    // Darwin's Zea mays height differences (eighths of an inch): T = 24, p = 0.041259765625
    let d = [6.0, 8.0, 14.0, 16.0, 23.0, 24.0, 28.0, 29.0, 41.0, -48.0, 49.0, 56.0, 60.0, -67.0, 75.0];
    let dw = wilcoxon_signed_rank(&d, &[0.0; 15], ZeroPolicy::Drop).map_err(|e| e.to_string())?;
    check(dw.statistic == 24.0, format!("Darwin T {}", dw.statistic))?;
    check((dw.p_value - 0.041259765625).abs() <= 1e-12, format!("Darwin p {}", dw.p_value))?;

    Ok(format!(
        "r=0.8, kappa=0.4, alpha unanimous=1 random=[{}], Wilcoxon T=2 / T=5 p=0.0390625 / T=24 p=0.04126",
        random_alphas.join(", ")
    ))
}

// ---------------------------------------------------------------- 6

fn mace_recovery() -> Outcome {
    let mut worst_acc: f64 = 1.0;
    for seed in 0..5 {
        let planted = planted_annotations(200, 5, 5, 4, seed);
        let m = AnnotationMatrix::from_triples(planted.triples.clone(), Scale::Categorical).map_err(|e| e.to_string())?;
        let result = mace_aggregate(
            &m,
            &MaceConfig {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let correct = planted
            .truth
            .iter()
            .filter(|(item, label)| result.posterior_labels.get(*item) == Some(label))
            .count();
        let acc = correct as f64 / planted.truth.len() as f64;
        worst_acc = worst_acc.min(acc);
        check(acc >= 0.99, format!("seed {seed}: accuracy {acc}"))?;
        let min_reliable = planted
            .reliable
            .iter()
            .map(|w| result.competence[w])
            .fold(f64::INFINITY, f64::min);
        let max_spammer = planted
            .spammers
            .iter()
            .map(|w| result.competence[w])
            .fold(f64::NEG_INFINITY, f64::max);
        check(
            min_reliable > max_spammer,
            format!("seed {seed}: reliable min {min_reliable} vs spammer max {max_spammer}"),
        )?;
    }
    Ok(format!("5 seeds, worst accuracy {:.3}, cohorts separated", worst_acc))
}

// ---------------------------------------------------------------- 7 and 9

struct EndToEnd {
    seconds: [f64; 2],
    report: claimopt::metrics::RunReport,
    identical: Result<(), String>,
}

fn end_to_end(root: &Path) -> Result<EndToEnd, String> {
    let chains = root.join("chains.jsonl");
    cmd_synth(&chains, 1500, 42).map_err(|e| format!("{e:#}"))?;
    let mut seconds = [0.0; 2];
    let mut report = None;
    for (k, name) in ["a", "b"].iter().enumerate() {
        let start = Instant::now();
        let mut config = RunConfig {
            seed: Some(42),
            out_dir: Some(root.join(name).join("prep")),
            ..Default::default()
        };
        config.data.chains = Some(chains.clone());
        let summary = cmd_prepare(&config).map_err(|e| format!("{e:#}"))?;
        if summary.test != 600 {
            return Err(format!("expected 600 test instances, prepared {}", summary.test));
        }
        // both runs read the first preparation so their configurations agree
        config.data.prepared = Some(root.join("a").join("prep"));
        config.out_dir = Some(root.join(name).join("run"));
        let run = cmd_run(&config).map_err(|e| format!("{e:#}"))?;
        seconds[k] = start.elapsed().as_secs_f64();
        if run.n_failed > 0 {
            return Err(format!("{} instances failed", run.n_failed));
        }
        report = Some(run.report);
    }
    let mut identical = Ok(());
    for file in [
        "prep/train.jsonl",
        "prep/validation.jsonl",
        "prep/test.jsonl",
        "run/candidates.jsonl",
        "run/selections.jsonl",
        "run/weights.json",
        "run/ranker.json",
        "run/report.json",
        "run/report.csv",
        "run/errors.jsonl",
    ] {
        let a = fs::read(root.join("a").join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = fs::read(root.join("b").join(file)).map_err(|e| format!("{file}: {e}"))?;
        if a != b {
            identical = Err(format!("{file} differs between runs"));
            break;
        }
    }
    Ok(EndToEnd {
        seconds,
        report: report.expect("two runs"),
        identical,
    })
}

fn determinism_and_throughput(e2e: &Result<EndToEnd, String>) -> Outcome {
    let e = e2e.as_ref().map_err(Clone::clone)?;
    for s in e.seconds {
        check(s < 60.0, format!("run took {s:.1}s"))?;
    }
    let names: BTreeSet<&str> = e.report.strategies.iter().map(|r| r.strategy.as_str()).collect();
    for s in Strategy::ALL {
        check(names.contains(s.as_str()), format!("strategy {s} missing from report"))?;
    }
    let unedited = e.report.strategies.iter().find(|r| r.strategy == "unedited").expect("checked");
    check(unedited.metrics.no_edit_ratio == 1.0, "Unedited NoEd below 1")?;
    e.identical.clone()?;
    Ok(format!(
        "600 instances in {:.1}s / {:.1}s, {} strategies, outputs byte-identical",
        e.seconds[0],
        e.seconds[1],
        names.len()
    ))
}

fn selection_sanity(e2e: &Result<EndToEnd, String>) -> Outcome {
    let e = e2e.as_ref().map_err(Clone::clone)?;
    let noed = |s: &str| {
        e.report
            .strategies
            .iter()
            .find(|r| r.strategy == s)
            .map(|r| r.metrics.no_edit_ratio)
            .ok_or(format!("{s} missing"))
    };
    let (auto, top1) = (noed("autoscore")?, noed("top1")?);
    check(auto < top1, format!("AutoScore NoEd {auto} not below Top-1 NoEd {top1}"))?;
    Ok(format!("AutoScore NoEd {auto:.4} < Top-1 NoEd {top1:.4}"))
}

// ---------------------------------------------------------------- 8

fn corpus_reproduction(path: &Path) -> Outcome {
    let chains = load_chains(path).map_err(|e| e.to_string())?;
    let pairs = derive_all_pairs(&chains);
    let filtered = filter_by_intent(&pairs, &IntentLabel::task_set()).map_err(|e| e.to_string())?;
    let counts = (chains.len(), pairs.len(), filtered.len());
    check(
        counts == (124_312, 210_222, 198_089),
        format!("chains/pairs/filtered = {counts:?}, expected (124312, 210222, 198089)"),
    )?;
    let seed = std::env::var("CLAIMREV_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let split = split_dataset(
        &filtered,
        &SplitConfig {
            seed,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let targets: Vec<_> = split.test.iter().map(eval_target).collect();
    let sources = targets.iter().map(|t| t.source.clone()).collect();
    let report = evaluate_run(
        &targets,
        &[("unedited".into(), sources)],
        MetricOptions::default(),
        &HashingEmbedder::default(),
    )
    .map_err(|e| e.to_string())?;
    let m = &report[0].metrics;
    let row = format!(
        "Unedited BLEU {:.1} ROUGE-L {:.3} SARI {:.1} ExM {:.3}",
        m.bleu, m.rouge_l, m.sari, m.exact_match_ratio
    );
    check((m.bleu - 69.4).abs() <= 0.5, format!("{row}: BLEU off"))?;
    check((m.rouge_l - 0.87).abs() <= 0.01, format!("{row}: ROUGE-L off"))?;
    check((m.sari - 27.9).abs() <= 0.5, format!("{row}: SARI off"))?;
    check(m.exact_match_ratio == 0.0, format!("{row}: ExM off"))?;
    Ok(format!("counts exact; {row}"))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => Verdict::Pass(s),
        Ok(Err(s)) => Verdict::Fail(s),
        Err(p) => Verdict::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut rows: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        rows.push((id, name, v, start.elapsed().as_secs_f64()));
    };

    run(1, "metric identities", &mut || guarded(metric_identities));
    run(2, "SARI oracle equivalence", &mut || guarded(sari_oracle_equivalence));
    run(3, "AutoScore argmax oracle", &mut || guarded(autoscore_argmax_oracle));
    run(4, "calibration recovery", &mut || guarded(calibration_recovery));
    run(5, "Pearson, kappa, alpha, Wilcoxon", &mut || guarded(statistics_correctness));
    run(6, "MACE recovery", &mut || guarded(mace_recovery));
    let e2e = catch_unwind(AssertUnwindSafe(|| end_to_end(tmp.path())))
        .unwrap_or_else(|_| Err("end-to-end run panicked".into()));
    run(7, "end-to-end determinism and throughput", &mut || {
        guarded(|| determinism_and_throughput(&e2e))
    });
    run(8, "corpus counts and Unedited row", &mut || match std::env::var_os("CLAIMREV_CHAINS") {
        Some(p) => guarded(|| corpus_reproduction(Path::new(&p))),
        None => Verdict::Skip("CLAIMREV_CHAINS not set; the revision corpus is not available".into()),
    });
    run(9, "AutoScore edits more than Top-1", &mut || guarded(|| selection_sanity(&e2e)));

    let mut failed = 0;
    for (id, name, verdict, secs) in &rows {
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {id} {name} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all runnable criteria passed");
}
