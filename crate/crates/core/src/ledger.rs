//! Prediction ledger: ingestion and validation of prediction logs from model
//! populations, and per-example label histograms.
//!
//! A ledger is built once from a header (class count plus population specs)
//! and a stream of [`PredictionRecord`]s. After construction it is immutable;
//! every query is a pure function of its contents.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassIndex = u32;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("duplicate record: example {example_id:?}, population {population_id:?}, model {model_id:?}")]
    DuplicateRecord {
        example_id: String,
        population_id: String,
        model_id: String,
    },
    #[error("unknown population_id {population_id:?} (known: {known})")]
    UnknownPopulation { population_id: String, known: String },
    #[error("unknown example_id {0:?}")]
    UnknownExample(String),
    #[error("label out of range: {label} >= num_classes {num_classes} (example {example_id:?})")]
    LabelOutOfRange {
        example_id: String,
        label: ClassIndex,
        num_classes: u32,
    },
    #[error("conflicting true_label for example {example_id:?}: {first} vs {second}")]
    ConflictingTruth {
        example_id: String,
        first: ClassIndex,
        second: ClassIndex,
    },
    #[error("population {population_id:?} declares {declared} models but {observed} distinct model_ids were observed")]
    ModelCountMismatch {
        population_id: String,
        declared: usize,
        observed: usize,
    },
    #[error("model {model_id:?} of population {population_id:?} is missing predictions for {} example(s): {}", missing.len(), preview(missing))]
    MissingPredictions {
        population_id: String,
        model_id: String,
        missing: Vec<String>,
    },
    #[error("incomplete coverage: population {population_id:?} has {observed} of {expected} predictions for example {example_id:?}")]
    IncompleteCoverage {
        population_id: String,
        example_id: String,
        observed: usize,
        expected: usize,
    },
    #[error("population size mismatch: {baseline:?} has {baseline_n} models, {variant:?} has {variant_n} (use frequency mode to compare)")]
    PopulationSizeMismatch {
        baseline: String,
        variant: String,
        baseline_n: usize,
        variant_n: usize,
    },
    #[error("populations {baseline:?} and {variant:?} share no fully covered examples")]
    DisjointCoverage { baseline: String, variant: String },
    #[error("invalid ledger header: {0}")]
    InvalidHeader(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

pub type Result<T, E = LedgerError> = std::result::Result<T, E>;

/// Post-training quantization flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantKind {
    /// Int8 weights with float activations.
    HybridInt8,
    /// Int8 weights plus activations clipped to calibrated ranges.
    FixedpointInt8,
}

impl QuantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantKind::HybridInt8 => "hybrid_int8",
            QuantKind::FixedpointInt8 => "fixedpoint_int8",
        }
    }
}

impl fmt::Display for QuantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compression {
    Baseline,
    Pruned { target_sparsity: f64 },
    Quantized { quant: QuantKind },
}

impl Compression {
    pub fn is_baseline(&self) -> bool {
        matches!(self, Compression::Baseline)
    }
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compression::Baseline => f.write_str("baseline"),
            Compression::Pruned { target_sparsity } => write!(f, "pruned({target_sparsity})"),
            Compression::Quantized { quant } => write!(f, "quantized({quant})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub id: String,
    pub compression: Compression,
    pub model_count: usize,
}

/// Ledger header: class count and the populations a log may reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub num_classes: u32,
    pub populations: Vec<PopulationSpec>,
}

impl LedgerHeader {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(LedgerError::InvalidHeader(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let mut seen = BTreeSet::new();
        for p in &self.populations {
            if p.id.is_empty() {
                return Err(LedgerError::InvalidHeader("empty population id".into()));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(LedgerError::InvalidHeader(format!(
                    "population {:?} declared twice",
                    p.id
                )));
            }
            if p.model_count == 0 {
                return Err(LedgerError::InvalidHeader(format!(
                    "population {:?} has model_count 0",
                    p.id
                )));
            }
            if let Compression::Pruned { target_sparsity } = p.compression {
                if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
                    return Err(LedgerError::InvalidHeader(format!(
                        "population {:?}: target_sparsity {target_sparsity} outside (0, 1)",
                        p.id
                    )));
                }
            }
        }
        let baselines = self
            .populations
            .iter()
            .filter(|p| p.compression.is_baseline())
            .count();
        if baselines != 1 {
            return Err(LedgerError::InvalidHeader(format!(
                "exactly one baseline population required, found {baselines}"
            )));
        }
        Ok(())
    }

    pub fn population(&self, id: &str) -> Option<&PopulationSpec> {
        self.populations.iter().find(|p| p.id == id)
    }

    pub fn baseline(&self) -> Option<&PopulationSpec> {
        self.populations.iter().find(|p| p.compression.is_baseline())
    }

    pub fn known_ids(&self) -> String {
        self.populations
            .iter()
            .map(|p| p.id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let header: LedgerHeader =
            toml::from_str(s).map_err(|e| LedgerError::InvalidHeader(e.to_string()))?;
        header.validate()?;
        Ok(header)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ledger header serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| LedgerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            LedgerError::InvalidHeader(m) => LedgerError::Parse {
                path: path.display().to_string(),
                message: m,
            },
            other => other,
        })
    }
}

/// One model's prediction for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub population_id: String,
    pub model_id: String,
    pub predicted_label: ClassIndex,
    pub true_label: Option<ClassIndex>,
}

/// What ingestion does when a model lacks a prediction for some example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Reject the ledger, naming the model and its missing examples.
    #[default]
    Error,
    /// Drop every example not predicted by every model of every population.
    DropExamples,
    /// Keep partial coverage; histogram queries on gaps fail individually.
    Keep,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub missing: MissingPolicy,
}

/// Per-example class-count vector for one population.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelHistogram {
    counts: Vec<u64>,
}

impl LabelHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// Histogram of a set of predicted labels.
    pub fn from_labels(labels: impl IntoIterator<Item = ClassIndex>, num_classes: usize) -> Self {
        let mut counts = vec![0; num_classes];
        for l in labels {
            counts[l as usize] += 1;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Multiplies every count by `factor`; used to bring populations of
    /// different sizes onto a common denominator.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            counts: self.counts.iter().map(|c| c * factor).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct PopulationTable {
    spec: PopulationSpec,
    models: Vec<String>,
    /// Row-major `[model][example]`.
    votes: Vec<Option<ClassIndex>>,
}

impl PopulationTable {
    fn vote(&self, model: usize, example: usize, n_examples: usize) -> Option<ClassIndex> {
        self.votes[model * n_examples + example]
    }
}

/// Indexed, validated collection of prediction records.
#[derive(Debug, Clone)]
pub struct Ledger {
    header: LedgerHeader,
    examples: Vec<String>,
    example_index: HashMap<String, usize>,
    truth: Vec<Option<ClassIndex>>,
    populations: Vec<PopulationTable>,
    dropped: Vec<String>,
}

/// Builds a ledger from a header and a record stream. The result does not
/// depend on record order: examples and model ids are kept sorted.
pub fn ingest_predictions(
    records: impl IntoIterator<Item = PredictionRecord>,
    header: LedgerHeader,
    options: IngestOptions,
) -> Result<Ledger> {
    header.validate()?;
    let pop_index: HashMap<&str, usize> = header
        .populations
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();

    // (population, model, example) -> label, plus per-example truth
    let mut votes: HashMap<(usize, String, String), ClassIndex> = HashMap::new();
    let mut truth: HashMap<String, Option<ClassIndex>> = HashMap::new();
    let mut models: Vec<BTreeSet<String>> = vec![BTreeSet::new(); header.populations.len()];

    for r in records {
        let Some(&pi) = pop_index.get(r.population_id.as_str()) else {
            return Err(LedgerError::UnknownPopulation {
                population_id: r.population_id,
                known: header.known_ids(),
            });
        };
        for label in std::iter::once(r.predicted_label).chain(r.true_label) {
            if label >= header.num_classes {
                return Err(LedgerError::LabelOutOfRange {
                    example_id: r.example_id,
                    label,
                    num_classes: header.num_classes,
                });
            }
        }
        let slot = truth.entry(r.example_id.clone()).or_insert(None);
        match (*slot, r.true_label) {
            (Some(a), Some(b)) if a != b => {
                return Err(LedgerError::ConflictingTruth {
                    example_id: r.example_id,
                    first: a,
                    second: b,
                })
            }
            (None, Some(b)) => *slot = Some(b),
            _ => {}
        }
        models[pi].insert(r.model_id.clone());
        let key = (pi, r.model_id, r.example_id);
        if votes.contains_key(&key) {
            let (_, model_id, example_id) = key;
            return Err(LedgerError::DuplicateRecord {
                example_id,
                population_id: r.population_id,
                model_id,
            });
        }
        votes.insert(key, r.predicted_label);
    }

    for (pi, spec) in header.populations.iter().enumerate() {
        if models[pi].len() != spec.model_count {
            return Err(LedgerError::ModelCountMismatch {
                population_id: spec.id.clone(),
                declared: spec.model_count,
                observed: models[pi].len(),
            });
        }
    }

    let mut examples: Vec<String> = truth.keys().cloned().collect();
    examples.sort();

    // Coverage: every model of every population should predict every example.
    let mut dropped = BTreeSet::new();
    for (pi, spec) in header.populations.iter().enumerate() {
        for model in &models[pi] {
            let missing: Vec<String> = examples
                .iter()
                .filter(|e| !votes.contains_key(&(pi, model.clone(), (*e).clone())))
                .cloned()
                .collect();
            if missing.is_empty() {
                continue;
            }
            match options.missing {
                MissingPolicy::Error => {
                    return Err(LedgerError::MissingPredictions {
                        population_id: spec.id.clone(),
                        model_id: model.clone(),
                        missing,
                    })
                }
                MissingPolicy::DropExamples => dropped.extend(missing),
                MissingPolicy::Keep => {}
            }
        }
    }
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} incompletely covered example(s) from the ledger",
            dropped.len()
        );
        examples.retain(|e| !dropped.contains(e));
    }

    let example_index: HashMap<String, usize> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();
    let truth_vec = examples.iter().map(|e| truth[e]).collect();

    let n = examples.len();
    let populations = header
        .populations
        .iter()
        .enumerate()
        .map(|(pi, spec)| {
            let model_ids: Vec<String> = models[pi].iter().cloned().collect();
            let mut table = vec![None; model_ids.len() * n];
            for (mi, m) in model_ids.iter().enumerate() {
                for (ei, e) in examples.iter().enumerate() {
                    table[mi * n + ei] = votes.get(&(pi, m.clone(), e.clone())).copied();
                }
            }
            PopulationTable {
                spec: spec.clone(),
                models: model_ids,
                votes: table,
            }
        })
        .collect();

    Ok(Ledger {
        header,
        examples,
        example_index,
        truth: truth_vec,
        populations,
        dropped: dropped.into_iter().collect(),
    })
}

impl Ledger {
    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes as usize
    }

    /// Example ids in canonical (sorted) order.
    pub fn examples(&self) -> &[String] {
        &self.examples
    }

    pub fn example_index(&self, example_id: &str) -> Option<usize> {
        self.example_index.get(example_id).copied()
    }

    pub fn true_label(&self, example: usize) -> Option<ClassIndex> {
        self.truth[example]
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.truth.is_empty() && self.truth.iter().all(Option::is_some)
    }

    /// Examples removed under [`MissingPolicy::DropExamples`].
    pub fn dropped_examples(&self) -> &[String] {
        &self.dropped
    }

    pub fn record_count(&self) -> usize {
        self.populations
            .iter()
            .map(|p| p.votes.iter().filter(|v| v.is_some()).count())
            .sum()
    }

    fn table(&self, population_id: &str) -> Result<&PopulationTable> {
        self.populations
            .iter()
            .find(|p| p.spec.id == population_id)
            .ok_or_else(|| LedgerError::UnknownPopulation {
                population_id: population_id.to_string(),
                known: self.header.known_ids(),
            })
    }

    pub fn population(&self, population_id: &str) -> Result<&PopulationSpec> {
        self.table(population_id).map(|t| &t.spec)
    }

    pub fn model_ids(&self, population_id: &str) -> Result<&[String]> {
        self.table(population_id).map(|t| t.models.as_slice())
    }

    /// Predictions of one model on every example (None where missing).
    pub fn model_predictions(
        &self,
        population_id: &str,
        model: usize,
    ) -> Result<&[Option<ClassIndex>]> {
        let t = self.table(population_id)?;
        let n = self.examples.len();
        Ok(&t.votes[model * n..(model + 1) * n])
    }

    /// Whether every model of the population predicted this example.
    pub fn is_covered(&self, population_id: &str, example: usize) -> Result<bool> {
        let t = self.table(population_id)?;
        let n = self.examples.len();
        Ok((0..t.models.len()).all(|m| t.vote(m, example, n).is_some()))
    }

    /// Label histogram of one population on one example.
    pub fn histogram(&self, population_id: &str, example_id: &str) -> Result<LabelHistogram> {
        let example = self
            .example_index(example_id)
            .ok_or_else(|| LedgerError::UnknownExample(example_id.to_string()))?;
        self.histogram_at(population_id, example)
    }

    pub fn histogram_at(&self, population_id: &str, example: usize) -> Result<LabelHistogram> {
        let t = self.table(population_id)?;
        let n = self.examples.len();
        let mut counts = vec![0u64; self.num_classes()];
        let mut observed = 0;
        for m in 0..t.models.len() {
            if let Some(l) = t.vote(m, example, n) {
                counts[l as usize] += 1;
                observed += 1;
            }
        }
        if observed != t.models.len() {
            return Err(LedgerError::IncompleteCoverage {
                population_id: population_id.to_string(),
                example_id: self.examples[example].clone(),
                observed,
                expected: t.models.len(),
            });
        }
        Ok(LabelHistogram::from_counts(counts))
    }

    /// All records in canonical order: header population order, then model id,
    /// then example id.
    pub fn records(&self) -> impl Iterator<Item = PredictionRecord> + '_ {
        let n = self.examples.len();
        self.populations.iter().flat_map(move |t| {
            t.models.iter().enumerate().flat_map(move |(mi, m)| {
                (0..n).filter_map(move |ei| {
                    t.vote(mi, ei, n).map(|label| PredictionRecord {
                        example_id: self.examples[ei].clone(),
                        population_id: t.spec.id.clone(),
                        model_id: m.clone(),
                        predicted_label: label,
                        true_label: self.truth[ei],
                    })
                })
            })
        })
    }
}

/// How populations of different sizes are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Population sizes must match.
    #[default]
    Strict,
    /// Histograms are rescaled to the lcm of both sizes.
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub common_total: u64,
    pub baseline_factor: u64,
    pub variant_factor: u64,
}

/// Outcome of pairing a baseline population with a variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub baseline: String,
    pub variant: String,
    pub baseline_n: usize,
    pub variant_n: usize,
    /// Present when frequency mode rescaled unequal populations.
    pub normalization: Option<Normalization>,
    /// Indices of examples fully covered by both populations.
    pub shared: Vec<usize>,
    pub baseline_only: usize,
    pub variant_only: usize,
}

impl PairingReport {
    pub fn identical_coverage(&self) -> bool {
        self.baseline_only == 0 && self.variant_only == 0
    }

    /// Common histogram total after any normalization.
    pub fn common_total(&self) -> u64 {
        self.normalization
            .as_ref()
            .map_or(self.baseline_n as u64, |n| n.common_total)
    }

    /// Baseline and variant histograms for one example, rescaled when the
    /// pairing is normalized.
    pub fn histograms(
        &self,
        ledger: &Ledger,
        example: usize,
    ) -> Result<(LabelHistogram, LabelHistogram)> {
        let b = ledger.histogram_at(&self.baseline, example)?;
        let v = ledger.histogram_at(&self.variant, example)?;
        Ok(match &self.normalization {
            Some(n) => (b.scaled(n.baseline_factor), v.scaled(n.variant_factor)),
            None => (b, v),
        })
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn validate_pairing(
    ledger: &Ledger,
    baseline: &str,
    variant: &str,
    mode: PairingMode,
) -> Result<PairingReport> {
    let baseline_n = ledger.population(baseline)?.model_count;
    let variant_n = ledger.population(variant)?.model_count;
    let normalization = if baseline_n == variant_n {
        None
    } else {
        match mode {
            PairingMode::Strict => {
                return Err(LedgerError::PopulationSizeMismatch {
                    baseline: baseline.to_string(),
                    variant: variant.to_string(),
                    baseline_n,
                    variant_n,
                })
            }
            PairingMode::Frequency => {
                let (b, v) = (baseline_n as u64, variant_n as u64);
                let lcm = b / gcd(b, v) * v;
                Some(Normalization {
                    common_total: lcm,
                    baseline_factor: lcm / b,
                    variant_factor: lcm / v,
                })
            }
        }
    };

    let mut shared = Vec::new();
    let (mut baseline_only, mut variant_only) = (0, 0);
    for e in 0..ledger.examples().len() {
        match (ledger.is_covered(baseline, e)?, ledger.is_covered(variant, e)?) {
            (true, true) => shared.push(e),
            (true, false) => baseline_only += 1,
            (false, true) => variant_only += 1,
            (false, false) => {}
        }
    }
    if shared.is_empty() {
        return Err(LedgerError::DisjointCoverage {
            baseline: baseline.to_string(),
            variant: variant.to_string(),
        });
    }
    Ok(PairingReport {
        baseline: baseline.to_string(),
        variant: variant.to_string(),
        baseline_n,
        variant_n,
        normalization,
        shared,
        baseline_only,
        variant_only,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    example_id: String,
    population_id: String,
    model_id: String,
    predicted_label: ClassIndex,
    true_label: Option<ClassIndex>,
}

/// Reads a prediction log (comma-delimited, header row, one record per line).
pub fn read_predictions<R: Read>(reader: R, source: &str) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRecord>() {
        let r = row.map_err(|e| LedgerError::Parse {
            path: source.to_string(),
            message: csv_error_message(&e),
        })?;
        out.push(PredictionRecord {
            example_id: r.example_id,
            population_id: r.population_id,
            model_id: r.model_id,
            predicted_label: r.predicted_label,
            true_label: r.true_label,
        });
    }
    Ok(out)
}

pub(crate) fn csv_error_message(e: &csv::Error) -> String {
    match e.position() {
        Some(pos) => format!("line {}: {}", pos.line(), e),
        None => e.to_string(),
    }
}

pub fn write_predictions<'a, W: Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a PredictionRecord>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "example_id",
        "population_id",
        "model_id",
        "predicted_label",
        "true_label",
    ])?;
    for r in records {
        let truth = r.true_label.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([
            r.example_id.as_str(),
            r.population_id.as_str(),
            r.model_id.as_str(),
            &r.predicted_label.to_string(),
            &truth,
        ])?;
    }
    w.flush()
}

/// Loads a ledger from a header file and a prediction log.
pub fn load_ledger(header_path: &Path, log_path: &Path, options: IngestOptions) -> Result<Ledger> {
    let header = LedgerHeader::read(header_path)?;
    let file = fs::File::open(log_path).map_err(|source| LedgerError::Io {
        path: log_path.display().to_string(),
        source,
    })?;
    let records = read_predictions(std::io::BufReader::new(file), &log_path.display().to_string())?;
    ingest_predictions(records, header, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(pops: &[(&str, Compression, usize)]) -> LedgerHeader {
        LedgerHeader {
            num_classes: 2,
            populations: pops
                .iter()
                .map(|(id, c, n)| PopulationSpec {
                    id: id.to_string(),
                    compression: *c,
                    model_count: *n,
                })
                .collect(),
        }
    }

    fn rec(ex: &str, pop: &str, model: &str, label: u32) -> PredictionRecord {
        PredictionRecord {
            example_id: ex.into(),
            population_id: pop.into(),
            model_id: model.into(),
            predicted_label: label,
            true_label: None,
        }
    }

    fn two_pops() -> LedgerHeader {
        header(&[
            ("popA", Compression::Baseline, 3),
            (
                "popB",
                Compression::Pruned {
                    target_sparsity: 0.9,
                },
                3,
            ),
        ])
    }

    fn grid(pops: &[&str], models: usize, examples: usize) -> Vec<PredictionRecord> {
        let mut out = Vec::new();
        for p in pops {
            for m in 0..models {
                for e in 0..examples {
                    out.push(rec(&format!("ex{e}"), p, &format!("m{m}"), ((m + e) % 2) as u32));
                }
            }
        }
        out
    }

    #[test]
    fn complete_grid_ingests() {
        let ledger =
            ingest_predictions(grid(&["popA", "popB"], 3, 4), two_pops(), Default::default())
                .unwrap();
        assert_eq!(ledger.record_count(), 24);
        assert_eq!(ledger.examples().len(), 4);
    }

    #[test]
    fn label_out_of_range() {
        let mut recs = grid(&["popA", "popB"], 3, 4);
        recs[0].predicted_label = 5;
        let err = ingest_predictions(recs, two_pops(), Default::default()).unwrap_err();
        assert!(matches!(err, LedgerError::LabelOutOfRange { label: 5, .. }));
        assert!(err.to_string().contains("label out of range"));
    }

    #[test]
    fn duplicate_record() {
        let mut recs = grid(&["popA", "popB"], 3, 4);
        recs.push(rec("ex1", "popA", "m1", 0));
        let err = ingest_predictions(recs, two_pops(), Default::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate record"));
    }

    #[test]
    fn unknown_population() {
        let mut recs = grid(&["popA", "popB"], 3, 4);
        recs.push(rec("ex1", "popZ", "m1", 0));
        let err = ingest_predictions(recs, two_pops(), Default::default()).unwrap_err();
        assert!(matches!(err, LedgerError::UnknownPopulation { .. }));
        assert!(err.to_string().contains("popA, popB"));
    }

    #[test]
    fn missing_prediction_reported_with_set() {
        let mut recs = grid(&["popA", "popB"], 3, 4);
        recs.retain(|r| !(r.population_id == "popB" && r.model_id == "m2" && r.example_id != "ex0"));
        let err = ingest_predictions(recs, two_pops(), Default::default()).unwrap_err();
        match err {
            LedgerError::MissingPredictions {
                population_id,
                model_id,
                missing,
            } => {
                assert_eq!(population_id, "popB");
                assert_eq!(model_id, "m2");
                assert_eq!(missing, vec!["ex1", "ex2", "ex3"]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn drop_policy_removes_incomplete_examples() {
        let mut recs = grid(&["popA", "popB"], 3, 4);
        recs.retain(|r| !(r.model_id == "m1" && r.example_id == "ex2"));
        let ledger = ingest_predictions(
            recs,
            two_pops(),
            IngestOptions {
                missing: MissingPolicy::DropExamples,
            },
        )
        .unwrap();
        assert_eq!(ledger.examples(), ["ex0", "ex1", "ex3"]);
        assert_eq!(ledger.dropped_examples(), ["ex2"]);
    }

    #[test]
    fn histogram_counts() {
        let h = header(&[("popA", Compression::Baseline, 3)]);
        let recs = vec![
            rec("ex1", "popA", "m1", 0),
            rec("ex1", "popA", "m2", 0),
            rec("ex1", "popA", "m3", 1),
        ];
        let ledger = ingest_predictions(recs, h, Default::default()).unwrap();
        assert_eq!(ledger.histogram("popA", "ex1").unwrap().counts(), [2, 1]);
    }

    #[test]
    fn histogram_unanimous() {
        let h = header(&[("popA", Compression::Baseline, 30)]);
        let recs = (0..30).map(|m| rec("ex1", "popA", &format!("m{m}"), 1));
        let ledger = ingest_predictions(recs, h, Default::default()).unwrap();
        assert_eq!(ledger.histogram("popA", "ex1").unwrap().counts(), [0, 30]);
    }

    #[test]
    fn histogram_incomplete_coverage() {
        let h = header(&[("popA", Compression::Baseline, 3)]);
        let recs = vec![
            rec("ex1", "popA", "m1", 0),
            rec("ex1", "popA", "m2", 0),
            rec("ex2", "popA", "m3", 1),
        ];
        let keep = IngestOptions {
            missing: MissingPolicy::Keep,
        };
        let ledger = ingest_predictions(recs, h, keep).unwrap();
        let err = ledger.histogram("popA", "ex1").unwrap_err();
        assert!(err.to_string().contains("incomplete coverage"));
    }

    #[test]
    fn model_count_must_match_header() {
        let recs = grid(&["popA", "popB"], 2, 4);
        let err = ingest_predictions(recs, two_pops(), Default::default()).unwrap_err();
        assert!(matches!(err, LedgerError::ModelCountMismatch { observed: 2, .. }));
    }

    #[test]
    fn conflicting_truth_rejected() {
        let h = header(&[("popA", Compression::Baseline, 2)]);
        let mut a = rec("ex1", "popA", "m1", 0);
        a.true_label = Some(0);
        let mut b = rec("ex1", "popA", "m2", 0);
        b.true_label = Some(1);
        let err = ingest_predictions(vec![a, b], h, Default::default()).unwrap_err();
        assert!(matches!(err, LedgerError::ConflictingTruth { .. }));
    }

    #[test]
    fn header_requires_exactly_one_baseline() {
        let h = header(&[
            ("a", Compression::Baseline, 2),
            ("b", Compression::Baseline, 2),
        ]);
        assert!(h.validate().is_err());
        let h = header(&[(
            "a",
            Compression::Quantized {
                quant: QuantKind::HybridInt8,
            },
            2,
        )]);
        assert!(h.validate().is_err());
    }

    fn sized(a: usize, b: usize, examples: usize) -> Ledger {
        let h = header(&[
            ("base", Compression::Baseline, a),
            (
                "var",
                Compression::Pruned {
                    target_sparsity: 0.5,
                },
                b,
            ),
        ]);
        let mut recs = Vec::new();
        for (p, n) in [("base", a), ("var", b)] {
            for m in 0..n {
                for e in 0..examples {
                    recs.push(rec(&format!("ex{e:04}"), p, &format!("m{m}"), 0));
                }
            }
        }
        ingest_predictions(recs, h, Default::default()).unwrap()
    }

    #[test]
    fn pairing_equal_sizes() {
        let ledger = sized(30, 30, 1000);
        let report = validate_pairing(&ledger, "base", "var", PairingMode::Strict).unwrap();
        assert_eq!(report.shared.len(), 1000);
        assert!(report.normalization.is_none());
        assert!(report.identical_coverage());
    }

    #[test]
    fn pairing_size_mismatch_strict() {
        let ledger = sized(30, 10, 5);
        let err = validate_pairing(&ledger, "base", "var", PairingMode::Strict).unwrap_err();
        assert!(err.to_string().contains("population size mismatch"));
    }

    #[test]
    fn pairing_frequency_mode_normalizes() {
        let ledger = sized(30, 10, 5);
        let report = validate_pairing(&ledger, "base", "var", PairingMode::Frequency).unwrap();
        let n = report.normalization.clone().unwrap();
        assert_eq!(n.common_total, 30);
        assert_eq!((n.baseline_factor, n.variant_factor), (1, 3));
        let (b, v) = report.histograms(&ledger, 0).unwrap();
        assert_eq!(b.total(), v.total());
    }

    #[test]
    fn pairing_disjoint_coverage() {
        let h = header(&[
            ("a", Compression::Baseline, 1),
            (
                "b",
                Compression::Quantized {
                    quant: QuantKind::HybridInt8,
                },
                1,
            ),
        ]);
        let recs = vec![rec("ex1", "a", "m", 0), rec("ex2", "b", "m", 0)];
        let keep = IngestOptions {
            missing: MissingPolicy::Keep,
        };
        let ledger = ingest_predictions(recs, h, keep).unwrap();
        let err = validate_pairing(&ledger, "a", "b", PairingMode::Strict).unwrap_err();
        assert!(matches!(err, LedgerError::DisjointCoverage { .. }));
    }

    #[test]
    fn csv_roundtrip_and_line_context() {
        let recs = grid(&["popA", "popB"], 3, 4);
        let ledger = ingest_predictions(recs, two_pops(), Default::default()).unwrap();
        let all: Vec<_> = ledger.records().collect();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &all).unwrap();
        let back = read_predictions(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, all);

        let bad = "example_id,population_id,model_id,predicted_label,true_label\nex1,popA,m1,x,\n";
        let err = read_predictions(bad.as_bytes(), "log.csv").unwrap_err();
        assert!(err.to_string().starts_with("log.csv: line 2"), "{err}");
    }

    #[test]
    fn header_toml_roundtrip() {
        let h = two_pops();
        let text = h.to_toml_string();
        assert_eq!(LedgerHeader::from_toml_str(&text).unwrap(), h);
    }
}
