use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use cie_core::divergence::{rank_scores, score_pairing};
use cie_core::{validate_pairing, Ledger, PairingMode, RunManifest, ScoreFile, ScoreFileMeta, TieRule};

use crate::inputs::LedgerArgs;
use crate::write_file;

#[derive(Debug, Clone, clap::Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub ledger: LedgerArgs,
    /// Baseline population; defaults to the one the header marks as baseline.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub variant: String,
    /// Seed for breaking ties in the taxicab ranking.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TieRule::LowestIndex)]
    pub tie_rule: TieRule,
    /// Require both populations to have the same model count. Without it,
    /// unequal counts are compared as label frequencies.
    #[arg(long)]
    pub strict_populations: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Scores `variant` against `baseline` and ranks the result.
pub fn score_ledger(
    ledger: &Ledger,
    baseline: &str,
    variant: &str,
    mode: PairingMode,
    tie_rule: TieRule,
    seed: u64,
    manifest_sha256: Option<String>,
) -> anyhow::Result<ScoreFile> {
    let pairing = validate_pairing(ledger, baseline, variant, mode)?;
    if !pairing.identical_coverage() {
        log::warn!(
            "{} examples only in {baseline:?}, {} only in {variant:?}; scoring the {} shared",
            pairing.baseline_only,
            pairing.variant_only,
            pairing.shared.len()
        );
    }
    let mut scores = score_pairing(ledger, &pairing, tie_rule)?;
    rank_scores(&mut scores, seed);
    Ok(ScoreFile {
        meta: ScoreFileMeta {
            baseline: baseline.to_string(),
            variant: variant.to_string(),
            tie_rule,
            rank_seed: seed,
            common_total: pairing.common_total(),
            manifest_sha256,
        },
        scores,
    })
}

/// Modal CIE count and the taxicab distribution, as printed after scoring.
pub fn summary(file: &ScoreFile) -> String {
    let mut hist: BTreeMap<u64, usize> = BTreeMap::new();
    for s in &file.scores {
        *hist.entry(s.taxicab).or_default() += 1;
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} vs {}: {} examples, {} modal CIEs, {} tie-flagged",
        file.meta.variant,
        file.meta.baseline,
        file.scores.len(),
        file.modal_cie_count(),
        file.scores.iter().filter(|s| s.tie_flag).count()
    );
    let _ = writeln!(out, "taxicab distance  examples");
    for (d, n) in hist {
        let _ = writeln!(out, "{d:>16}  {n}");
    }
    out
}

pub fn run(args: &ScoreArgs) -> anyhow::Result<PathBuf> {
    let ledger = args.ledger.load()?;
    let baseline = match &args.baseline {
        Some(b) => b.clone(),
        None => ledger
            .header()
            .baseline()
            .map(|p| p.id.clone())
            .context("ledger header declares no baseline population")?,
    };
    let mode = if args.strict_populations {
        PairingMode::Strict
    } else {
        PairingMode::Frequency
    };

    let mut manifest = RunManifest::new("score");
    manifest.add_input("header", &args.ledger.header)?;
    manifest.add_input("predictions", &args.ledger.predictions)?;
    manifest.baseline = Some(baseline.clone());
    manifest.variant = Some(args.variant.clone());
    manifest.seed = args.seed;
    manifest.output_dir = args.out.display().to_string();
    manifest
        .settings
        .insert("tie_rule".into(), args.tie_rule.to_string());
    manifest.settings.insert(
        "pairing".into(),
        if args.strict_populations { "strict" } else { "frequency" }.into(),
    );

    let file = score_ledger(
        &ledger,
        &baseline,
        &args.variant,
        mode,
        args.tie_rule,
        args.seed,
        Some(manifest.sha256()),
    )?;
    if file.scores.iter().all(|s| s.taxicab == 0) {
        log::warn!(
            "every example has zero divergence between {baseline:?} and {:?}",
            args.variant
        );
    }
    let path = args.out.join(format!("{}.csv", args.variant));
    write_file(&path, file.to_bytes())?;
    write_file(
        &args.out.join(format!("{}.manifest.json", args.variant)),
        manifest.to_json(),
    )?;
    print!("{}", summary(&file));
    println!("wrote {}", path.display());
    Ok(path)
}
