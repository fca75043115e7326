//! The desk experiment: generate data, train a baseline population and its
//! compressed variants, score every variant against the baseline and report.
//!
//! Output layout under the run directory:
//!
//! ```text
//! manifest.json  summary.json
//! header.toml  predictions.csv  attributes.csv  train_attributes.csv  features.csv
//! scores/<variant>.csv
//! reports/<variant>.{json,txt,accuracy_curve.csv,overindex.csv}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cie_core::audit::FeatureTable;
use cie_core::ledger::write_predictions;
use cie_core::manifest::sha256_hex;
use cie_core::trainer::population::{population_from_models, train_members};
use cie_core::trainer::{
    generate_dataset, run_population, PopulationRun, ProtocolConfig, SyntheticDatasetSpec,
    TrainConfig,
};
use cie_core::{
    ingest_predictions, Compression, LedgerHeader, PairingMode, QuantKind, Report, RunManifest,
    TieRule,
};
use serde::{Deserialize, Serialize};

use crate::report::write_report;
use crate::score::score_ledger;
use crate::write_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sparsities: Vec<f64>,
    #[serde(default)]
    pub quantization: Vec<QuantKind>,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    #[serde(default)]
    pub rank_seed: u64,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default = "default_positive")]
    pub positive_class: u32,
    /// Recorded in the manifest. Falls back to `SOURCE_DATE_EPOCH`, then to
    /// a fixed placeholder, so reruns stay byte-identical.
    #[serde(default)]
    pub timestamp: Option<String>,
}

fn default_percentiles() -> Vec<f64> {
    vec![90.0, 95.0, 99.0]
}

fn default_positive() -> u32 {
    1
}

pub const BASELINE_ID: &str = "baseline";
const UNRECORDED: &str = "unrecorded";

pub fn pruned_id(t: f64) -> String {
    format!("pruned-{t}")
}

pub fn quant_id(q: QuantKind) -> String {
    format!("quant-{}", q.as_str())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The standard desk configuration.
    pub fn standard() -> Self {
        Self::from_toml_str(STANDARD_CONFIG).expect("bundled config parses")
    }
}

/// Standard desk configuration: 10 seeds, six sparsities, both int8 modes.
pub const STANDARD_CONFIG: &str = include_str!("../configs/standard.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub id: String,
    pub compression: Compression,
    pub mean_test_accuracy: f64,
    pub mean_sparsity: f64,
    pub member_accuracy: Vec<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub id: String,
    pub modal_cie_count: usize,
    pub score_file: String,
    pub score_file_sha256: String,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub manifest_sha256: String,
    pub test_examples: usize,
    pub train_examples: usize,
    pub populations: Vec<PopulationSummary>,
    pub variants: Vec<VariantSummary>,
}

pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub summary: ExperimentSummary,
    pub reports: BTreeMap<String, Report>,
}

fn stage<T, E: Into<anyhow::Error>>(name: &str, r: Result<T, E>) -> anyhow::Result<T> {
    r.map_err(|e| e.into().context(format!("stage {name}")))
}

pub fn run(config: &ExperimentConfig, config_bytes: &[u8], out: &Path) -> anyhow::Result<ExperimentOutput> {
    if config.seeds.len() < 2 {
        bail!(
            "stage train[{BASELINE_ID}]: population too small: {} seed(s), need at least 2",
            config.seeds.len()
        );
    }
    let mut manifest = RunManifest::new("experiment");
    manifest
        .inputs
        .insert("config".into(), sha256_hex(config_bytes));
    manifest.baseline = Some(BASELINE_ID.into());
    manifest.percentiles = config.percentiles.clone();
    manifest.seed = config.rank_seed;
    manifest.output_dir = out.display().to_string();
    manifest.timestamp = config
        .timestamp
        .clone()
        .or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok().map(|_| cie_core::manifest::timestamp_now()))
        .unwrap_or_else(|| UNRECORDED.into());
    let manifest_sha = manifest.sha256();

    log::info!("generating dataset");
    let data = stage("generate", generate_dataset(&config.dataset))?;

    let seeds = &config.seeds;
    let protocol = &config.protocol;
    let mut runs: Vec<PopulationRun> = Vec::new();
    log::info!("training {BASELINE_ID}");
    let base_models = stage(
        &format!("train[{BASELINE_ID}]"),
        train_members(&data, &config.train, None, seeds, BASELINE_ID),
    )?;
    runs.push(stage(
        &format!("train[{BASELINE_ID}]"),
        population_from_models(&data, BASELINE_ID, Compression::Baseline, seeds, &base_models, protocol),
    )?);
    for &t in &config.sparsities {
        let id = pruned_id(t);
        log::info!("training {id}");
        runs.push(stage(
            &format!("train[{id}]"),
            run_population(
                &data,
                &config.train,
                &id,
                Compression::Pruned { target_sparsity: t },
                seeds,
                protocol,
            ),
        )?);
    }
    // post-training quantization of the baseline members
    for &q in &config.quantization {
        let id = quant_id(q);
        log::info!("quantizing {id}");
        runs.push(stage(
            &format!("quantize[{id}]"),
            population_from_models(&data, &id, Compression::Quantized { quant: q }, seeds, &base_models, protocol),
        )?);
    }

    let header = LedgerHeader {
        num_classes: 2,
        populations: runs.iter().map(|r| r.spec.clone()).collect(),
    };
    let records: Vec<_> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let ledger = stage("ingest", ingest_predictions(records, header.clone(), Default::default()))?;

    let provenance = format!("# manifest_sha256={manifest_sha}\n");
    write_file(
        &out.join("header.toml"),
        format!("{provenance}{}", header.to_toml_string()),
    )?;
    let mut log = provenance.clone().into_bytes();
    stage("write", write_predictions(&mut log, ledger.records().collect::<Vec<_>>().iter()))?;
    write_file(&out.join("predictions.csv"), log)?;
    let test_attrs = data.test.attribute_table();
    let train_attrs = data.train.attribute_table();
    for (name, table) in [("attributes.csv", &test_attrs), ("train_attributes.csv", &train_attrs)] {
        let mut bytes = provenance.clone().into_bytes();
        stage("write", table.write(&mut bytes))?;
        write_file(&out.join(name), bytes)?;
    }
    let features = FeatureTable {
        names: (0..data.test.num_features).map(|j| format!("x{j}")).collect(),
        rows: (0..data.test.len())
            .map(|i| {
                (
                    data.test.ids[i].clone(),
                    data.test.row(i).iter().map(|&v| v as f64).collect(),
                )
            })
            .collect(),
    };
    let mut bytes = Vec::new();
    stage("write", features.write(&mut bytes))?;
    write_file(&out.join("features.csv"), bytes)?;

    let train_fractions = train_attrs.overall_fractions();
    let mut variants = Vec::new();
    let mut reports = BTreeMap::new();
    for r in runs.iter().skip(1) {
        let id = &r.spec.id;
        let scores = stage(
            &format!("score[{id}]"),
            score_ledger(
                &ledger,
                BASELINE_ID,
                id,
                PairingMode::Strict,
                config.tie_rule,
                config.rank_seed,
                Some(manifest_sha.clone()),
            ),
        )?;
        let bytes = scores.to_bytes();
        let sha = sha256_hex(&bytes);
        let score_path = out.join("scores").join(format!("{id}.csv"));
        write_file(&score_path, &bytes)?;
        let (report, files) = stage(
            &format!("report[{id}]"),
            write_report(
                &out.join("reports"),
                id,
                &ledger,
                &scores,
                sha.clone(),
                Some(&test_attrs),
                Some(&train_fractions),
                &config.percentiles,
                config.positive_class,
            ),
        )?;
        variants.push(VariantSummary {
            id: id.clone(),
            modal_cie_count: scores.modal_cie_count(),
            score_file: rel(out, &score_path),
            score_file_sha256: sha,
            report: rel(out, &files.json),
        });
        reports.insert(id.clone(), report);
    }

    let summary = ExperimentSummary {
        manifest_sha256: manifest_sha,
        test_examples: data.test.len(),
        train_examples: data.train.len(),
        populations: runs
            .iter()
            .map(|r| {
                let mut flags: Vec<String> = r
                    .members
                    .iter()
                    .flat_map(|m| m.flags.iter().map(move |f| format!("{}: {f}", m.model_id)))
                    .collect();
                flags.dedup();
                PopulationSummary {
                    id: r.spec.id.clone(),
                    compression: r.spec.compression,
                    mean_test_accuracy: r.mean_test_accuracy(),
                    mean_sparsity: r.members.iter().map(|m| m.sparsity).sum::<f64>()
                        / r.members.len() as f64,
                    member_accuracy: r.members.iter().map(|m| m.test_accuracy).collect(),
                    flags,
                }
            })
            .collect(),
        variants,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&out.join("summary.json"), json)?;
    write_file(&out.join("manifest.json"), manifest.to_json())?;
    write_file(&out.join("config.toml"), config_bytes)?;

    Ok(ExperimentOutput {
        dir: out.to_path_buf(),
        summary,
        reports,
    })
}

fn rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}
