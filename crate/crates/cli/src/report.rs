use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cie_core::{build_report, AttributeTable, Ledger, Report, ReportInput, RunManifest, ScoreFile};

use crate::inputs::{load_attributes, load_scores, load_train_fractions, LedgerArgs};
use crate::write_file;

pub const DEFAULT_PERCENTILES: [f64; 3] = [90.0, 95.0, 99.0];

#[derive(Debug, Clone, clap::Args)]
pub struct ReportArgs {
    /// Score file written by `cie score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub ledger: LedgerArgs,
    /// Attribute table for the scored examples.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Attribute table of the training set, for over-index ratios.
    #[arg(long)]
    pub train_attributes: Option<PathBuf>,
    /// Taxicab percentile threshold; repeatable. Defaults to 90, 95 and 99.
    #[arg(long = "percentile")]
    pub percentiles: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub positive_class: u32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub struct ReportFiles {
    pub json: PathBuf,
    pub text: PathBuf,
}

/// Builds and writes a report as `<stem>.json`, `<stem>.txt` and the plot
/// data files beside them.
#[allow(clippy::too_many_arguments)]
pub fn write_report(
    out: &Path,
    stem: &str,
    ledger: &Ledger,
    scores: &ScoreFile,
    score_sha: String,
    attributes: Option<&AttributeTable>,
    train_fractions: Option<&BTreeMap<String, f64>>,
    percentiles: &[f64],
    positive_class: u32,
) -> anyhow::Result<(Report, ReportFiles)> {
    let report = build_report(&ReportInput {
        ledger,
        scores,
        score_file_sha256: score_sha,
        attributes,
        train_fractions,
        percentiles,
        positive_class,
    })?;
    let files = ReportFiles {
        json: out.join(format!("{stem}.json")),
        text: out.join(format!("{stem}.txt")),
    };
    write_file(&files.json, report.to_json())?;
    write_file(&files.text, report.render_text())?;
    if let Some(csv) = report.curve_csv() {
        write_file(&out.join(format!("{stem}.accuracy_curve.csv")), csv)?;
    }
    if let Some(csv) = report.overindex_csv() {
        write_file(&out.join(format!("{stem}.overindex.csv")), csv)?;
    }
    Ok((report, files))
}

pub fn percentiles_or_default(p: &[f64]) -> Vec<f64> {
    if p.is_empty() {
        DEFAULT_PERCENTILES.to_vec()
    } else {
        p.to_vec()
    }
}

pub fn run(args: &ReportArgs) -> anyhow::Result<Report> {
    let (scores, sha) = load_scores(&args.scores)?;
    let ledger = args.ledger.load()?;
    let attributes = load_attributes(args.attributes.as_deref())?;
    let train = load_train_fractions(args.train_attributes.as_deref())?;
    let percentiles = percentiles_or_default(&args.percentiles);

    let mut manifest = RunManifest::new("report");
    manifest.add_input("scores", &args.scores)?;
    manifest.add_input("header", &args.ledger.header)?;
    manifest.add_input("predictions", &args.ledger.predictions)?;
    if let Some(p) = &args.attributes {
        manifest.add_input("attributes", p)?;
    }
    if let Some(p) = &args.train_attributes {
        manifest.add_input("train_attributes", p)?;
    }
    manifest.baseline = Some(scores.meta.baseline.clone());
    manifest.variant = Some(scores.meta.variant.clone());
    manifest.percentiles = percentiles.clone();
    manifest.seed = scores.meta.rank_seed;
    manifest.output_dir = args.out.display().to_string();

    let stem = scores.meta.variant.clone();
    let (report, files) = write_report(
        &args.out,
        &stem,
        &ledger,
        &scores,
        sha,
        attributes.as_ref(),
        train.as_ref(),
        &percentiles,
        args.positive_class,
    )?;
    write_file(
        &args.out.join(format!("{stem}.report-manifest.json")),
        manifest.to_json(),
    )?;
    print!("{}", report.render_text());
    println!("wrote {} and {}", files.json.display(), files.text.display());
    Ok(report)
}
