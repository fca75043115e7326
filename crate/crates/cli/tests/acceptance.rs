//! Acceptance checks. Prints one PASS/FAIL line per criterion and a tally.
//! With `CIE_ACCEPTANCE_STRICT=1` it also exits nonzero if any fails.
//!
//! Criteria 4 through 9 run the standard desk experiment twice into the same
//! directory (about four minutes on one core).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cie_cli::experiment::{self, pruned_id, quant_id, ExperimentConfig, STANDARD_CONFIG};
use cie_core::divergence::{audit_count, jaccard, rank_scores, threshold_ranked};
use cie_core::trainer::population::train_members;
use cie_core::trainer::{generate_dataset, quantize_tensor, TrainConfig};
use cie_core::{normalized_difference, taxicab_distance, CieScore, LabelHistogram, QuantKind, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRS: usize = 10_000;
const MAX_N: u64 = 50;
const MAX_CLASSES: usize = 10;
const RUNTIME_LIMIT: Duration = Duration::from_secs(600);
const EVAL_SPARSITY: f64 = 0.9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Random histogram over `k` classes summing to `n`.
fn histogram(rng: &mut impl Rng, n: u64, k: usize) -> LabelHistogram {
    let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    LabelHistogram::from_labels(labels, k)
}

/// Multiset union and intersection sizes by matching elements one by one.
fn brute_force_jaccard(b: &LabelHistogram, v: &LabelHistogram) -> (u64, u64) {
    let expand = |h: &LabelHistogram| -> Vec<usize> {
        h.counts()
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n as usize))
            .collect()
    };
    let xs = expand(b);
    let mut ys = expand(v);
    let mut shared = 0;
    for x in &xs {
        if let Some(pos) = ys.iter().position(|y| y == x) {
            ys.swap_remove(pos);
            shared += 1;
        }
    }
    // unmatched elements of the second multiset join the first
    (shared, (xs.len() + ys.len()) as u64)
}

fn pair(rng: &mut impl Rng, n: u64, k: usize) -> (LabelHistogram, LabelHistogram) {
    (histogram(rng, n, k), histogram(rng, n, k))
}

fn jaccard_taxicab_order() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut disagreements, mut oracle_mismatch, mut strict) = (0, 0, 0);
    for _ in 0..PAIRS {
        let n = rng.random_range(1..=MAX_N);
        let k = rng.random_range(2..=MAX_CLASSES);
        let (bx, vx) = pair(&mut rng, n, k);
        let (by, vy) = pair(&mut rng, n, k);
        let (jx, jy) = (jaccard(&bx, &vx).unwrap(), jaccard(&by, &vy).unwrap());
        for (j, (b, v)) in [(jx, (&bx, &vx)), (jy, (&by, &vy))] {
            if brute_force_jaccard(b, v) != (j.shared, j.union) {
                oracle_mismatch += 1;
            }
        }
        let tx = taxicab_distance(&bx, &vx).unwrap();
        let ty = taxicab_distance(&by, &vy).unwrap();
        // exact rational comparison of 1 - s/u, independent of the library's Ord
        let jaccard_cmp = (jy.shared as u128 * jx.union as u128)
            .cmp(&(jx.shared as u128 * jy.union as u128));
        if jaccard_cmp != tx.cmp(&ty) {
            disagreements += 1;
        }
        if tx != ty {
            strict += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        disagreements == 0 && oracle_mismatch == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{PAIRS} pairs ({strict} strictly ordered), {disagreements} order disagreements, \
             {oracle_mismatch} oracle mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn union_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..PAIRS {
        let n = rng.random_range(1..=MAX_N);
        let k = rng.random_range(2..=MAX_CLASSES);
        let (b, v) = pair(&mut rng, n, k);
        let d = taxicab_distance(&b, &v).unwrap();
        let union: u64 = b.counts().iter().zip(v.counts()).map(|(x, y)| *x.max(y)).sum();
        if !d.is_multiple_of(2) || d > 2 * n || 2 * union != 2 * n + d {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{PAIRS} pairs, {violations} violations"))
}

fn arithmetic_fixtures() -> Outcome {
    let diff = normalized_difference(0.93, 1.39).unwrap_or(f64::NAN);
    // 1000 examples with heavy ties: the tie-broken ranking still cuts at exactly 100
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scores: Vec<CieScore> = (0..1000)
        .map(|i| CieScore {
            example_id: format!("ex{i:04}"),
            taxicab: 2 * rng.random_range(0..4u64),
            jaccard: 0.0,
            modal_baseline: 0,
            modal_variant: 0,
            modal_cie: false,
            rank: 0,
            percentile: 0.0,
            tie_flag: false,
        })
        .collect();
    rank_scores(&mut scores, 0);
    let at90 = threshold_ranked(&scores, 90.0).map(|a| a.len()).unwrap_or(0);
    let pass = (diff - 49.5).abs() <= 0.5 && at90 == 100 && audit_count(35_000, 90.0) == 3_500;
    outcome(
        pass,
        format!("normalized difference {diff:.2}%, p90 keeps {at90} of 1000"),
    )
}

struct Desk {
    config: ExperimentConfig,
    reports: BTreeMap<String, Report>,
    elapsed: Duration,
}

fn report<'a>(desk: &'a Desk, id: &str) -> &'a Report {
    desk.reports
        .get(id)
        .unwrap_or_else(|| panic!("no report for {id}"))
}

fn cie_hardness(desk: &Desk) -> Outcome {
    let r = report(desk, &pruned_id(EVAL_SPARSITY));
    let Some(acc) = &r.accuracy else {
        return outcome(false, "report has no accuracy section");
    };
    let (b, v) = (&acc.modal_cie.baseline, &acc.modal_cie.variant);
    let (Some(b_all), Some(v_all), Some(b_cie), Some(v_cie)) =
        (b.all_acc, v.all_acc, b.cie_acc, v.cie_acc)
    else {
        return outcome(false, "undefined accuracy");
    };
    let pass = b_all - b_cie >= 20.0
        && v_all - v_cie >= 20.0
        && (v_all - b_all).abs() <= 3.0
        && desk.elapsed < RUNTIME_LIMIT;
    outcome(
        pass,
        format!(
            "t={EVAL_SPARSITY}: baseline {b_all:.2}% overall / {b_cie:.2}% on Modal CIE, \
             pruned {v_all:.2}% / {v_cie:.2}%, run {:.0}s",
            desk.elapsed.as_secs_f64()
        ),
    )
}

/// `[all, p90, p95, p99]` per population, or None if a value is missing.
fn bucket_accuracy(r: &Report) -> Option<[[f64; 4]; 2]> {
    let acc = r.accuracy.as_ref()?;
    let mut out = [[0.0; 4]; 2];
    out[0][0] = acc.modal_cie.baseline.all_acc?;
    out[1][0] = acc.modal_cie.variant.all_acc?;
    for (i, p) in [90.0, 95.0, 99.0].into_iter().enumerate() {
        let t = acc.taxicab.iter().find(|t| t.percentile == p)?;
        out[0][i + 1] = t.accuracy.baseline.cie_acc?;
        out[1][i + 1] = t.accuracy.variant.cie_acc?;
    }
    Some(out)
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn fmt_buckets(b: &[f64; 4]) -> String {
    format!("{:.2}/{:.2}/{:.2}/{:.2}", b[0], b[1], b[2], b[3])
}

fn monotone_buckets(desk: &Desk) -> Outcome {
    let Some([base, var]) = bucket_accuracy(report(desk, &pruned_id(EVAL_SPARSITY))) else {
        return outcome(false, "missing bucket accuracy");
    };
    let mut detail = format!(
        "t={EVAL_SPARSITY} all/p90/p95/p99: baseline {}, pruned {}",
        fmt_buckets(&base),
        fmt_buckets(&var)
    );
    // other levels for context only
    let others: Vec<String> = desk
        .config
        .sparsities
        .iter()
        .filter(|&&t| t != EVAL_SPARSITY)
        .filter_map(|&t| {
            let [b, v] = bucket_accuracy(report(desk, &pruned_id(t)))?;
            Some(format!(
                "t={t} {}",
                if non_increasing(&b) && non_increasing(&v) { "ok" } else { "no" }
            ))
        })
        .collect();
    detail.push_str(&format!(" ({})", others.join(", ")));
    outcome(non_increasing(&base) && non_increasing(&var), detail)
}

/// Average ranks, 1-based, ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn growth_with_sparsity(desk: &Desk) -> Outcome {
    let levels = &desk.config.sparsities;
    let counts: Vec<f64> = levels
        .iter()
        .map(|&t| report(desk, &pruned_id(t)).divergence.modal_cie_count as f64)
        .collect();
    let rho = spearman(levels, &counts);
    outcome(
        rho > 0.7 && levels.len() == 6,
        format!(
            "counts {:?} over {:?}, rho {rho:.3}",
            counts.iter().map(|c| *c as u64).collect::<Vec<_>>(),
            levels
        ),
    )
}

fn overindexing(desk: &Desk) -> Outcome {
    let minority = &desk.config.dataset.attributes[0].name;
    let mut pass = true;
    let mut parts = Vec::new();
    for &t in desk.config.sparsities.iter().filter(|&&t| t >= 0.9) {
        let ratio = report(desk, &pruned_id(t))
            .overindex
            .as_ref()
            .and_then(|sets| sets.iter().find(|s| s.set == "modal_cie"))
            .and_then(|s| s.rows.as_ref())
            .and_then(|rows| rows.iter().find(|r| &r.attribute == minority))
            .and_then(|r| r.representation_ratio);
        match ratio {
            Some(r) => {
                pass &= r >= 1.5;
                parts.push(format!("t={t} {r:.2}x"));
            }
            None => {
                pass = false;
                parts.push(format!("t={t} undefined"));
            }
        }
    }
    outcome(pass, format!("{minority} on Modal CIE: {}", parts.join(", ")))
}

fn weight_roundtrip_violations(w: &[f32]) -> usize {
    let max = w.iter().fold(0f32, |m, x| m.max(x.abs()));
    let deq = quantize_tensor(w).dequantize();
    w.iter()
        .zip(&deq)
        .filter(|(x, y)| (*x - *y).abs() > max / 127.0)
        .count()
}

fn quantization_parity(desk: &Desk) -> Outcome {
    let hybrid = report(desk, &quant_id(QuantKind::HybridInt8)).divergence.modal_cie_count;
    let fixed = report(desk, &quant_id(QuantKind::FixedpointInt8)).divergence.modal_cie_count;
    let (lo, hi) = (hybrid.min(fixed), hybrid.max(fixed));
    let within = lo > 0 && hi <= 2 * lo;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut elements = 0;
    for _ in 0..2_000 {
        let len = rng.random_range(1..512);
        let scale = 10f32.powi(rng.random_range(-6..4));
        let w: Vec<f32> = (0..len)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(-1.0f32..1.0) * scale
                }
            })
            .collect();
        elements += w.len();
        violations += weight_roundtrip_violations(&w);
    }
    // trained weights from the desk config's architecture
    let data = generate_dataset(&desk.config.dataset).expect("dataset");
    let train = TrainConfig {
        steps: 200,
        ..desk.config.train.clone()
    };
    for m in train_members(&data, &train, None, &[1, 2], "roundtrip").expect("train") {
        for l in &m.model.layers {
            elements += l.weights.len();
            violations += weight_roundtrip_violations(&l.weights);
        }
    }
    outcome(
        within && violations == 0,
        format!(
            "modal CIEs hybrid {hybrid} vs fixed-point {fixed} ({:.2}x); \
             {violations} roundtrip violations over {elements} weights",
            hi as f64 / lo.max(1) as f64
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["scores", "reports"] {
        let mut entries: Vec<_> = std::fs::read_dir(dir.join(sub))
            .expect("output dir")
            .map(|e| e.expect("dir entry").path())
            .collect();
        entries.sort();
        for p in entries {
            let name = format!("{sub}/{}", p.file_name().unwrap().to_string_lossy());
            out.insert(name, std::fs::read(&p).expect("read output"));
        }
    }
    out
}

fn determinism(first: &BTreeMap<String, Vec<u8>>, second: &BTreeMap<String, Vec<u8>>) -> Outcome {
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same_set = first.keys().eq(second.keys());
    outcome(
        same_set && differing.is_empty() && !first.is_empty(),
        format!(
            "{} score and report files, {} differ{}",
            first.len(),
            differing.len(),
            if same_set { "" } else { ", file sets differ" }
        ),
    )
}

fn run_desk(config: &ExperimentConfig, out: &Path) -> Desk {
    let start = Instant::now();
    let result = experiment::run(config, STANDARD_CONFIG.as_bytes(), out).expect("desk experiment");
    Desk {
        config: config.clone(),
        reports: result.reports,
        elapsed: start.elapsed(),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "jaccard and taxicab rank identically", jaccard_taxicab_order()),
        (2, "union identity and taxicab parity", union_identity()),
        (3, "arithmetic fixtures", arithmetic_fixtures()),
    ];
    for (n, name, o) in &results {
        report_line(*n, name, o);
    }

    let config = ExperimentConfig::standard();
    let dir = tempfile::tempdir().expect("tempdir");
    let desk = run_desk(&config, dir.path());
    let first = snapshot(dir.path());
    let desk_results = [
        (4, "modal CIE hardness", cie_hardness(&desk)),
        (5, "accuracy falls with percentile", monotone_buckets(&desk)),
        (6, "modal CIEs grow with sparsity", growth_with_sparsity(&desk)),
        (7, "minority over-indexes", overindexing(&desk)),
        (8, "int8 modes agree", quantization_parity(&desk)),
    ];
    for (n, name, o) in desk_results {
        report_line(n, name, &o);
        results.push((n, name, o));
    }
    run_desk(&config, dir.path());
    let o = determinism(&first, &snapshot(dir.path()));
    report_line(9, "reruns are byte-identical", &o);
    results.push((9, "reruns are byte-identical", o));

    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    let strict = std::env::var("CIE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report_line(n: u32, name: &str, o: &Outcome) {
    println!(
        "{} criterion {n}: {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}
