//! Disaggregated error metrics: confusion counts per subgroup, error/FPR/FNR,
//! normalized differences against a baseline, accuracy on and off an audit
//! set, and attribute over-indexing.
//!
//! All rates are percentages. A rate whose denominator is zero is `None`
//! ("undefined"), never zero.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{AttributeError, AttributeTable, SubgroupKind};
use crate::ledger::{ClassIndex, Ledger, LedgerError};

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("missing ground truth for example {0:?}")]
    MissingGroundTruth(String),
    #[error("empty subgroup")]
    EmptySubgroup,
    #[error("audit set is empty")]
    EmptyAuditSet,
    #[error("attribute {0:?} is absent from the attribute table")]
    AttributeAbsent(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
}

pub type Result<T, E = FairnessError> = std::result::Result<T, E>;

/// Token used wherever an undefined rate is rendered.
pub const UNDEFINED: &str = "undefined";

/// Renders a percentage at two decimals, or the undefined token.
pub fn fmt_rate(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{r:.2}%"),
        None => UNDEFINED.to_string(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub positive_class: ClassIndex,
}

impl ConfusionCounts {
    pub fn new(positive_class: ClassIndex) -> Self {
        Self {
            positive_class,
            ..Default::default()
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, truth: ClassIndex, predicted: ClassIndex) {
        let pos = self.positive_class;
        match (truth == pos, predicted == pos) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
            positive_class: self.positive_class,
        }
    }
}

/// Counts pooled over every model of the population and every example the
/// mask selects.
pub fn confusion_counts(
    ledger: &Ledger,
    population_id: &str,
    mask: impl Fn(&str) -> bool,
    positive_class: ClassIndex,
) -> Result<ConfusionCounts> {
    let selected: Vec<usize> = ledger
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| mask(e))
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(FairnessError::EmptySubgroup);
    }
    let truths = selected
        .iter()
        .map(|&e| {
            ledger
                .true_label(e)
                .ok_or_else(|| FairnessError::MissingGroundTruth(ledger.examples()[e].clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = ConfusionCounts::new(positive_class);
    for m in 0..ledger.model_ids(population_id)?.len() {
        let preds = ledger.model_predictions(population_id, m)?;
        for (&e, &truth) in selected.iter().zip(&truths) {
            if let Some(p) = preds[e] {
                counts.record(truth, p);
            }
        }
    }
    Ok(counts)
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRates {
    pub error: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

impl SubgroupRates {
    pub const UNDEFINED: SubgroupRates = SubgroupRates {
        error: None,
        fpr: None,
        fnr: None,
    };
}

pub fn subgroup_rates(c: &ConfusionCounts) -> SubgroupRates {
    SubgroupRates {
        error: pct(c.fp + c.fn_, c.total()),
        fpr: pct(c.fp, c.fp + c.tn),
        fnr: pct(c.fn_, c.fn_ + c.tp),
    }
}

/// `100 * (compressed - baseline) / baseline`; undefined when baseline is 0.
pub fn normalized_difference(baseline: f64, compressed: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (compressed - baseline) / baseline)
}

fn opt_normalized(baseline: Option<f64>, compressed: Option<f64>) -> Option<f64> {
    normalized_difference(baseline?, compressed?)
}

pub fn normalized_rates(baseline: &SubgroupRates, compressed: &SubgroupRates) -> SubgroupRates {
    SubgroupRates {
        error: opt_normalized(baseline.error, compressed.error),
        fpr: opt_normalized(baseline.fpr, compressed.fpr),
        fnr: opt_normalized(baseline.fnr, compressed.fnr),
    }
}

/// Top-1 accuracy on an audit set, its complement and everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPartition {
    pub cie_acc: Option<f64>,
    pub noncie_acc: Option<f64>,
    pub all_acc: Option<f64>,
    pub cie_examples: usize,
    pub noncie_examples: usize,
    pub notices: Vec<String>,
}

/// Accuracy pooled over the population's models. An empty audit set or an
/// empty complement leaves that side undefined and adds a notice.
pub fn accuracy_partition(
    ledger: &Ledger,
    population_id: &str,
    audit_set: &HashSet<&str>,
) -> Result<AccuracyPartition> {
    let n_models = ledger.model_ids(population_id)?.len();
    let mut correct = [0u64; 2];
    let mut total = [0u64; 2];
    let mut examples = [0usize; 2];
    let preds: Vec<_> = (0..n_models)
        .map(|m| ledger.model_predictions(population_id, m))
        .collect::<std::result::Result<_, _>>()?;
    for (e, id) in ledger.examples().iter().enumerate() {
        let truth = ledger
            .true_label(e)
            .ok_or_else(|| FairnessError::MissingGroundTruth(id.clone()))?;
        let side = usize::from(!audit_set.contains(id.as_str()));
        examples[side] += 1;
        for p in &preds {
            if let Some(label) = p[e] {
                total[side] += 1;
                correct[side] += u64::from(label == truth);
            }
        }
    }
    let mut notices = Vec::new();
    if examples[0] == 0 {
        notices.push("audit set is empty; CIE accuracy undefined".to_string());
    }
    if examples[1] == 0 {
        notices.push("audit set covers every example; non-CIE accuracy undefined".to_string());
    }
    Ok(AccuracyPartition {
        cie_acc: pct(correct[0], total[0]),
        noncie_acc: pct(correct[1], total[1]),
        all_acc: pct(correct[0] + correct[1], total[0] + total[1]),
        cie_examples: examples[0],
        noncie_examples: examples[1],
        notices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverindexRow {
    pub attribute: String,
    pub train_fraction: f64,
    pub cie_fraction: f64,
    /// `cie_fraction / train_fraction`; undefined when the attribute never
    /// occurs in training data.
    pub representation_ratio: Option<f64>,
    pub flagged: bool,
}

/// Representation of every attribute in the audit set relative to its
/// training-set fraction.
pub fn overindex_table<'a>(
    attributes: &AttributeTable,
    train_fractions: &BTreeMap<String, f64>,
    audit_set: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<OverindexRow>> {
    let ids: Vec<&str> = audit_set.into_iter().collect();
    if ids.is_empty() {
        return Err(FairnessError::EmptyAuditSet);
    }
    for name in train_fractions.keys() {
        if attributes.attribute_index(name).is_err() {
            return Err(FairnessError::AttributeAbsent(name.clone()));
        }
    }
    let cie = attributes.fractions(ids)?;
    attributes
        .names()
        .iter()
        .map(|name| {
            let train = *train_fractions
                .get(name)
                .ok_or_else(|| FairnessError::AttributeAbsent(name.clone()))?;
            let cie_fraction = cie[name];
            let ratio = (train > 0.0).then(|| cie_fraction / train);
            Ok(OverindexRow {
                attribute: name.clone(),
                train_fraction: train,
                cie_fraction,
                representation_ratio: ratio,
                flagged: ratio.is_none(),
            })
        })
        .collect()
}

/// Baseline and compressed metrics for one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub subgroup: String,
    pub kind: SubgroupKind,
    pub examples: usize,
    pub baseline_counts: ConfusionCounts,
    pub variant_counts: ConfusionCounts,
    pub baseline: SubgroupRates,
    pub variant: SubgroupRates,
    pub normalized_diff: SubgroupRates,
}

/// Error/FPR/FNR for every subgroup the attribute table defines, for the
/// baseline and variant populations, with normalized differences.
pub fn subgroup_comparison(
    ledger: &Ledger,
    attributes: &AttributeTable,
    baseline: &str,
    variant: &str,
    positive_class: ClassIndex,
) -> Result<Vec<SubgroupReport>> {
    let mut rows = Vec::new();
    for group in attributes.subgroups() {
        let mut members = HashSet::new();
        for id in ledger.examples() {
            if group.contains(attributes, id)? {
                members.insert(id.as_str());
            }
        }
        let mask = |e: &str| members.contains(e);
        let counts = |pop: &str| match confusion_counts(ledger, pop, mask, positive_class) {
            Err(FairnessError::EmptySubgroup) => Ok(ConfusionCounts::new(positive_class)),
            other => other,
        };
        let bc = counts(baseline)?;
        let vc = counts(variant)?;
        let (br, vr) = (subgroup_rates(&bc), subgroup_rates(&vc));
        rows.push(SubgroupReport {
            subgroup: group.name.clone(),
            kind: group.kind,
            examples: members.len(),
            baseline_counts: bc,
            variant_counts: vc,
            baseline: br,
            variant: vr,
            normalized_diff: normalized_rates(&br, &vr),
        });
    }
    Ok(rows)
}
