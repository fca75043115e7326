//! Human-in-the-loop audit sessions and the annotation log.
//!
//! A session is immutable after load: changing the percentile re-slices the
//! ranked scores, it never rewrites them. Annotations live in an append-only
//! JSON-lines file with one record per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::AttributeTable;
use crate::divergence::{rank_scores, threshold_ranked, DivergenceError};
use crate::ledger::{ClassIndex, Ledger};
use crate::report::{build_report, Report, ReportError, ReportInput};
use crate::scorefile::ScoreFile;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("unknown example {0:?}")]
    UnknownExample(String),
    #[error("invalid verdict {0:?}")]
    InvalidVerdict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("annotation log {path}: line {line}: {message}")]
    CorruptLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    Mislabeled,
    Ambiguous,
    UnderrepresentedAttribute,
    Ok,
    Other(String),
    /// A configured extra verdict.
    Extra(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Mislabeled => f.write_str("mislabeled"),
            Verdict::Ambiguous => f.write_str("ambiguous"),
            Verdict::UnderrepresentedAttribute => f.write_str("underrepresented-attribute"),
            Verdict::Ok => f.write_str("ok"),
            Verdict::Other(t) => write!(f, "other:{t}"),
            Verdict::Extra(t) => f.write_str(t),
        }
    }
}

impl FromStr for Verdict {
    type Err = AuditError;

    /// Parses the built-in verdicts. Extras need [`VerdictSet::parse`].
    fn from_str(s: &str) -> Result<Self> {
        VerdictSet::default().parse(s)
    }
}

impl Serialize for Verdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        // the log may hold extras configured at write time
        Ok(VerdictSet::default()
            .parse(&s)
            .unwrap_or(Verdict::Extra(s)))
    }
}

/// Accepted verdicts: the built-in taxonomy plus configured extras.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictSet {
    pub extras: Vec<String>,
}

impl VerdictSet {
    pub fn parse(&self, s: &str) -> Result<Verdict> {
        let s = s.trim();
        Ok(match s {
            "mislabeled" => Verdict::Mislabeled,
            "ambiguous" => Verdict::Ambiguous,
            "underrepresented-attribute" => Verdict::UnderrepresentedAttribute,
            "ok" => Verdict::Ok,
            _ => {
                if let Some(text) = s.strip_prefix("other:") {
                    if text.trim().is_empty() {
                        return Err(AuditError::InvalidVerdict(s.to_string()));
                    }
                    Verdict::Other(text.trim().to_string())
                } else if self.extras.iter().any(|e| e == s) {
                    Verdict::Extra(s.to_string())
                } else {
                    return Err(AuditError::InvalidVerdict(s.to_string()));
                }
            }
        })
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["mislabeled", "ambiguous", "underrepresented-attribute", "ok", "other:<text>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(self.extras.iter().cloned());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub example_id: String,
    pub auditor: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewAnnotation {
    pub example_id: String,
    pub auditor: String,
    pub verdict: String,
    #[serde(default)]
    pub note: String,
}

/// Append-only annotation log. Later verdicts by the same auditor on the same
/// example supersede earlier ones; every record is kept.
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    entries: Vec<Annotation>,
    appends_since_compaction: usize,
    compact_every: usize,
}

pub const DEFAULT_COMPACT_EVERY: usize = 1000;

impl AnnotationStore {
    /// Opens or creates the log. A torn final line (a crash mid-write) is
    /// dropped and the log rewritten; corruption anywhere else is an error.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut torn = false;
        if path.exists() {
            let mut text = String::new();
            File::open(path)?.read_to_string(&mut text)?;
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            for (i, raw) in lines.iter().enumerate() {
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                let last = i + 1 == lines.len();
                match serde_json::from_str::<Annotation>(line) {
                    Ok(a) if raw.ends_with('\n') => entries.push(a),
                    Ok(_) | Err(_) if last => {
                        log::warn!("{}: dropping torn final line {}", path.display(), i + 1);
                        torn = true;
                    }
                    Ok(_) => unreachable!("only the last line can lack a newline"),
                    Err(e) => {
                        return Err(AuditError::CorruptLog {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut store = Self {
            path: path.to_path_buf(),
            file,
            entries,
            appends_since_compaction: 0,
            compact_every: DEFAULT_COMPACT_EVERY,
        };
        if torn {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn set_compact_every(&mut self, n: usize) {
        self.compact_every = n.max(1);
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    /// Durably appends one annotation; ids are sequential from 1.
    pub fn append(
        &mut self,
        example_id: &str,
        auditor: &str,
        verdict: Verdict,
        note: &str,
        created_at: String,
    ) -> Result<Annotation> {
        if auditor.trim().is_empty() {
            return Err(AuditError::Invalid("auditor must be non-empty".into()));
        }
        let a = Annotation {
            id: self.entries.last().map_or(1, |a| a.id + 1),
            example_id: example_id.to_string(),
            auditor: auditor.to_string(),
            verdict,
            note: note.to_string(),
            created_at,
        };
        let mut line = serde_json::to_string(&a).expect("annotation serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.entries.push(a.clone());
        self.appends_since_compaction += 1;
        if self.appends_since_compaction >= self.compact_every {
            self.compact()?;
        }
        Ok(a)
    }

    /// Rewrites the log through a temporary file and an atomic rename.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            for a in &self.entries {
                serde_json::to_writer(&mut f, a).expect("annotation serializes");
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.appends_since_compaction = 0;
        Ok(())
    }

    /// Latest annotation per (example, auditor).
    pub fn active(&self) -> BTreeMap<(&str, &str), &Annotation> {
        let mut out = BTreeMap::new();
        for a in &self.entries {
            out.insert((a.example_id.as_str(), a.auditor.as_str()), a);
        }
        out
    }

    pub fn active_for(&self, example_id: &str) -> Vec<&Annotation> {
        self.active()
            .into_iter()
            .filter(|((e, _), _)| *e == example_id)
            .map(|(_, a)| a)
            .collect()
    }

    pub fn history(&self, example_id: &str) -> Vec<&Annotation> {
        self.entries
            .iter()
            .filter(|a| a.example_id == example_id)
            .collect()
    }

    /// Every record with a flag marking the active ones.
    pub fn export_csv(&self) -> String {
        let active: HashSet<u64> = self.active().values().map(|a| a.id).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "example_id", "auditor", "verdict", "note", "created_at", "active"])
            .expect("in-memory write");
        for a in &self.entries {
            w.write_record([
                a.id.to_string(),
                a.example_id.clone(),
                a.auditor.clone(),
                a.verdict.to_string(),
                a.note.clone(),
                a.created_at.clone(),
                active.contains(&a.id).to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Numeric feature rows for examples without media.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn read<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| AuditError::Invalid(format!("{source}: {e}")))?
            .clone();
        if headers.get(0) != Some("example_id") {
            return Err(AuditError::Invalid(format!(
                "{source}: first column must be example_id"
            )));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = HashMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| AuditError::Invalid(format!("{source}: {e}")))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| AuditError::Invalid(format!("{source}: line {}: {e}", i + 2)))?;
            rows.insert(rec[0].to_string(), vals);
        }
        Ok(Self { names, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["example_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut ids: Vec<&String> = self.rows.keys().collect();
        ids.sort();
        for id in ids {
            let mut rec = vec![id.clone()];
            rec.extend(self.rows[id].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub baseline: String,
    pub variant: String,
    pub examples: usize,
    pub num_classes: usize,
    pub rank_seed: u64,
    pub tie_rule: String,
    pub score_file_sha256: String,
    pub has_ground_truth: bool,
    pub attributes: Vec<String>,
    pub has_media: bool,
    pub features: Vec<String>,
    pub verdicts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub example_id: String,
    pub rank: usize,
    pub percentile: f64,
    pub taxicab: u64,
    pub jaccard: f64,
    pub modal_baseline: ClassIndex,
    pub modal_variant: ClassIndex,
    pub modal_cie: bool,
    pub tie_flag: bool,
    pub true_label: Option<ClassIndex>,
    pub baseline_counts: Vec<u64>,
    pub variant_counts: Vec<u64>,
    pub attributes: Option<BTreeMap<String, bool>>,
    pub media_url: Option<String>,
    pub features: Option<Vec<Feature>>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarPage {
    pub percentile: f64,
    /// Size of the unfiltered audit set at this percentile.
    pub audit_set_size: usize,
    /// Size after attribute and verdict filters.
    pub matching: usize,
    pub page: usize,
    pub page_size: usize,
    pub pages: usize,
    pub exemplars: Vec<Exemplar>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExemplarQuery {
    pub percentile: f64,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    /// Attribute that must be set; prefix with `!` for unset.
    pub attribute: Option<String>,
    /// Active verdict from any auditor, or `none` for unannotated examples.
    pub verdict: Option<String>,
}

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Audit-set examples with at least one active verdict.
    pub annotated: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub percentile: f64,
    pub audit_set_size: usize,
    pub report: Report,
    /// The rendered text report, identical to the command-line output.
    pub report_text: String,
    pub progress: Progress,
}

pub struct SessionInputs {
    pub ledger: Ledger,
    pub scores: ScoreFile,
    pub score_file_sha256: String,
    pub attributes: Option<AttributeTable>,
    pub train_fractions: Option<BTreeMap<String, f64>>,
    pub media: HashMap<String, String>,
    pub features: Option<FeatureTable>,
    pub positive_class: ClassIndex,
    /// Tie-break seed; defaults to the score file's.
    pub seed: Option<u64>,
    pub verdicts: VerdictSet,
}

pub struct AuditSession {
    inputs: SessionInputs,
    seed: u64,
}

impl AuditSession {
    pub fn new(mut inputs: SessionInputs) -> Result<Self> {
        let file_seed = inputs.scores.meta.rank_seed;
        let seed = inputs.seed.unwrap_or(file_seed);
        if seed != file_seed {
            rank_scores(&mut inputs.scores.scores, seed);
            inputs.scores.meta.rank_seed = seed;
        }
        for s in &inputs.scores.scores {
            if inputs.ledger.example_index(&s.example_id).is_none() {
                return Err(AuditError::UnknownExample(s.example_id.clone()));
            }
        }
        Ok(Self { inputs, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn verdicts(&self) -> &VerdictSet {
        &self.inputs.verdicts
    }

    pub fn contains(&self, example_id: &str) -> bool {
        self.inputs
            .scores
            .scores
            .iter()
            .any(|s| s.example_id == example_id)
    }

    pub fn info(&self) -> SessionInfo {
        let i = &self.inputs;
        SessionInfo {
            baseline: i.scores.meta.baseline.clone(),
            variant: i.scores.meta.variant.clone(),
            examples: i.scores.scores.len(),
            num_classes: i.ledger.num_classes(),
            rank_seed: self.seed,
            tie_rule: i.scores.meta.tie_rule.to_string(),
            score_file_sha256: i.score_file_sha256.clone(),
            has_ground_truth: i.ledger.has_ground_truth(),
            attributes: i
                .attributes
                .as_ref()
                .map(|a| a.names().to_vec())
                .unwrap_or_default(),
            has_media: !i.media.is_empty(),
            features: i
                .features
                .as_ref()
                .map(|f| f.names.clone())
                .unwrap_or_default(),
            verdicts: i.verdicts.names(),
        }
    }

    pub fn exemplars(&self, q: &ExemplarQuery, store: &AnnotationStore) -> Result<ExemplarPage> {
        let i = &self.inputs;
        let set = threshold_ranked(&i.scores.scores, q.percentile)?;
        let page_size = if q.page_size == 0 { DEFAULT_PAGE_SIZE } else { q.page_size };
        if page_size > MAX_PAGE_SIZE {
            return Err(AuditError::Invalid(format!(
                "page_size {page_size} exceeds {MAX_PAGE_SIZE}"
            )));
        }
        let page = q.page.max(1);

        let attr_filter = match &q.attribute {
            None => None,
            Some(a) => {
                let table = i.attributes.as_ref().ok_or_else(|| {
                    AuditError::Invalid("no attribute table loaded".into())
                })?;
                let (name, want) = match a.strip_prefix('!') {
                    Some(n) => (n, false),
                    None => (a.as_str(), true),
                };
                let idx = table
                    .attribute_index(name)
                    .map_err(|e| AuditError::Invalid(e.to_string()))?;
                Some((table, idx, want))
            }
        };
        let verdict_filter = match q.verdict.as_deref() {
            None => None,
            Some("none") => Some(None),
            Some(v) => Some(Some(i.verdicts.parse(v)?)),
        };
        let active = store.active();
        let mut by_example: HashMap<&str, Vec<&Annotation>> = HashMap::new();
        for ((e, _), a) in &active {
            by_example.entry(e).or_default().push(a);
        }

        let matching: Vec<_> = set
            .members
            .iter()
            .filter(|s| match attr_filter {
                None => true,
                Some((table, idx, want)) => table
                    .row(&s.example_id)
                    .is_some_and(|r| r[idx] == want),
            })
            .filter(|s| match &verdict_filter {
                None => true,
                Some(None) => !by_example.contains_key(s.example_id.as_str()),
                Some(Some(v)) => by_example
                    .get(s.example_id.as_str())
                    .is_some_and(|xs| xs.iter().any(|a| &a.verdict == v)),
            })
            .collect();
        let pages = matching.len().div_ceil(page_size);
        let exemplars = matching
            .iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .map(|s| {
                let e = i
                    .ledger
                    .example_index(&s.example_id)
                    .expect("checked at load");
                let counts = |pop: &str| {
                    i.ledger
                        .histogram_at(pop, e)
                        .map(|h| h.counts().to_vec())
                        .unwrap_or_default()
                };
                Exemplar {
                    example_id: s.example_id.clone(),
                    rank: s.rank,
                    percentile: s.percentile,
                    taxicab: s.taxicab,
                    jaccard: s.jaccard,
                    modal_baseline: s.modal_baseline,
                    modal_variant: s.modal_variant,
                    modal_cie: s.modal_cie,
                    tie_flag: s.tie_flag,
                    true_label: i.ledger.true_label(e),
                    baseline_counts: counts(&i.scores.meta.baseline),
                    variant_counts: counts(&i.scores.meta.variant),
                    attributes: i.attributes.as_ref().and_then(|t| t.named_row(&s.example_id)),
                    media_url: i.media.get(&s.example_id).cloned(),
                    features: i.features.as_ref().and_then(|f| {
                        f.rows.get(&s.example_id).map(|vals| {
                            f.names
                                .iter()
                                .zip(vals)
                                .map(|(n, v)| Feature {
                                    name: n.clone(),
                                    value: *v,
                                })
                                .collect()
                        })
                    }),
                    annotations: by_example
                        .get(s.example_id.as_str())
                        .map(|xs| xs.iter().map(|a| (*a).clone()).collect())
                        .unwrap_or_default(),
                }
            })
            .collect();
        Ok(ExemplarPage {
            percentile: q.percentile,
            audit_set_size: set.len(),
            matching: matching.len(),
            page,
            page_size,
            pages,
            exemplars,
        })
    }

    /// Report for one threshold, built exactly as the command-line report.
    pub fn report(&self, percentile: f64) -> Result<Report> {
        let i = &self.inputs;
        Ok(build_report(&ReportInput {
            ledger: &i.ledger,
            scores: &i.scores,
            score_file_sha256: i.score_file_sha256.clone(),
            attributes: i.attributes.as_ref(),
            train_fractions: i.train_fractions.as_ref(),
            percentiles: &[percentile],
            positive_class: i.positive_class,
        })?)
    }

    pub fn dashboard(&self, percentile: f64, store: &AnnotationStore) -> Result<Dashboard> {
        let report = self.report(percentile)?;
        let set = threshold_ranked(&self.inputs.scores.scores, percentile)?;
        let annotated: HashSet<&str> = store.active().keys().map(|(e, _)| *e).collect();
        let done = set
            .example_ids()
            .filter(|e| annotated.contains(e))
            .count();
        Ok(Dashboard {
            percentile,
            audit_set_size: set.len(),
            report_text: report.render_text(),
            report,
            progress: Progress {
                annotated: done,
                total: set.len(),
            },
        })
    }

    /// Validates and appends an annotation for an example in this session.
    pub fn annotate(
        &self,
        store: &mut AnnotationStore,
        new: &NewAnnotation,
        created_at: String,
    ) -> Result<Annotation> {
        if !self.contains(&new.example_id) {
            return Err(AuditError::UnknownExample(new.example_id.clone()));
        }
        let verdict = self.inputs.verdicts.parse(&new.verdict)?;
        store.append(&new.example_id, &new.auditor, verdict, &new.note, created_at)
    }
}

/// Current UTC time for annotation records.
pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Reads a media sidecar if one is given; a thin wrapper so callers need not
/// import the attribute module.
pub fn load_media(path: Option<&Path>) -> Result<HashMap<String, String>> {
    match path {
        None => Ok(HashMap::new()),
        Some(p) => crate::attributes::read_media_sidecar(p)
            .map_err(|e| AuditError::Invalid(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader};

    fn lines_in(path: &Path) -> std::io::Result<usize> {
        Ok(BufReader::new(File::open(path)?).lines().count())
    }

    #[test]
    fn verdict_taxonomy() {
        let set = VerdictSet {
            extras: vec!["duplicate".into()],
        };
        for s in ["mislabeled", "ambiguous", "underrepresented-attribute", "ok"] {
            assert_eq!(set.parse(s).unwrap().to_string(), s);
        }
        assert_eq!(set.parse("other:blurry").unwrap(), Verdict::Other("blurry".into()));
        assert_eq!(set.parse("duplicate").unwrap(), Verdict::Extra("duplicate".into()));
        assert!(set.parse("other:").is_err());
        assert!(set.parse("wrong").is_err());
        assert!("duplicate".parse::<Verdict>().is_err());
    }

    #[test]
    fn store_supersedes_and_keeps_history() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let mut s = AnnotationStore::open(&path).unwrap();
        s.append("e1", "ann", Verdict::Ok, "", "t0".into()).unwrap();
        s.append("e1", "ann", Verdict::Mislabeled, "flip", "t1".into()).unwrap();
        s.append("e1", "bob", Verdict::Ambiguous, "", "t2".into()).unwrap();
        let active = s.active_for("e1");
        assert_eq!(active.len(), 2);
        assert_eq!(active[0].verdict, Verdict::Mislabeled);
        assert_eq!(s.history("e1").len(), 3);
        drop(s);

        let s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.entries().len(), 3);
        assert_eq!(s.entries()[2].id, 3);
        let csv = s.export_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().ends_with(",false"));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let mut s = AnnotationStore::open(&path).unwrap();
        s.append("e1", "ann", Verdict::Ok, "", "t0".into()).unwrap();
        drop(s);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"id":2,"example_id":"e"#).unwrap();
        drop(f);

        let mut s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.entries().len(), 1);
        assert_eq!(lines_in(&path).unwrap(), 1);
        let a = s.append("e2", "ann", Verdict::Ok, "", "t1".into()).unwrap();
        assert_eq!(a.id, 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(
            AnnotationStore::open(&path),
            Err(AuditError::CorruptLog { line: 1, .. })
        ));
    }

    #[test]
    fn periodic_compaction_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let mut s = AnnotationStore::open(&path).unwrap();
        s.set_compact_every(3);
        for k in 0..7 {
            s.append(&format!("e{k}"), "a", Verdict::Ok, "", "t".into()).unwrap();
        }
        drop(s);
        let s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.entries().len(), 7);
        assert_eq!(lines_in(&path).unwrap(), 7);
    }
}
