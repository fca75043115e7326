//! Audit reports built from a score file and its prediction ledger.
//!
//! The same [`build_report`] feeds the command-line report and the audit
//! service dashboard, so both render identical numbers.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::AttributeTable;
use crate::divergence::{threshold_ranked, DivergenceError};
use crate::fairness::{
    accuracy_partition, fmt_rate, overindex_table, subgroup_comparison, AccuracyPartition,
    FairnessError, OverindexRow, SubgroupReport, UNDEFINED,
};
use crate::ledger::Ledger;
use crate::scorefile::ScoreFile;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error("score file example {0:?} is not in the ledger")]
    UnknownExample(String),
    #[error("score file pairs {baseline:?} with {variant:?} but the ledger has no population {missing:?}")]
    UnknownPopulation {
        baseline: String,
        variant: String,
        missing: String,
    },
}

/// Percentiles of the accuracy-versus-percentile curve.
pub const CURVE_PERCENTILES: [f64; 13] = [
    0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 95.0, 98.0, 99.0,
];

pub struct ReportInput<'a> {
    pub ledger: &'a Ledger,
    pub scores: &'a ScoreFile,
    pub score_file_sha256: String,
    pub attributes: Option<&'a AttributeTable>,
    /// Attribute fractions of the training set. Falls back to the fractions
    /// over the scored examples, with a notice.
    pub train_fractions: Option<&'a BTreeMap<String, f64>>,
    pub percentiles: &'a [f64],
    pub positive_class: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub variant: String,
    pub score_file_sha256: String,
    pub manifest_sha256: Option<String>,
    pub divergence: DivergenceSummary,
    pub thresholds: Vec<ThresholdCount>,
    pub accuracy: Option<AccuracySection>,
    pub subgroups: Option<Vec<SubgroupReport>>,
    pub overindex: Option<Vec<OverindexSet>>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub examples: usize,
    pub modal_cie_count: usize,
    pub tie_flagged: usize,
    pub taxicab_max: u64,
    pub taxicab_mean: f64,
    /// Taxicab distance to number of examples at that distance.
    pub taxicab_histogram: BTreeMap<u64, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub percentile: f64,
    pub count: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPair {
    pub baseline: AccuracyPartition,
    pub variant: AccuracyPartition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub percentile: f64,
    pub count: usize,
    pub accuracy: PopulationPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percentile: f64,
    pub count: usize,
    pub baseline_acc: Option<f64>,
    pub variant_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySection {
    pub modal_cie: PopulationPair,
    pub taxicab: Vec<ThresholdAccuracy>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverindexSet {
    /// `modal_cie` or `taxicab_p<percentile>`.
    pub set: String,
    pub examples: usize,
    pub rows: Option<Vec<OverindexRow>>,
}

fn pct_label(p: f64) -> String {
    format!("{p}")
}

pub fn build_report(input: &ReportInput<'_>) -> Result<Report, ReportError> {
    let ledger = input.ledger;
    let meta = &input.scores.meta;
    let ranked = &input.scores.scores;
    for pop in [&meta.baseline, &meta.variant] {
        if ledger.population(pop).is_err() {
            return Err(ReportError::UnknownPopulation {
                baseline: meta.baseline.clone(),
                variant: meta.variant.clone(),
                missing: pop.clone(),
            });
        }
    }
    for s in ranked {
        if ledger.example_index(&s.example_id).is_none() {
            return Err(ReportError::UnknownExample(s.example_id.clone()));
        }
    }
    let mut notices = Vec::new();

    let mut hist = BTreeMap::new();
    for s in ranked {
        *hist.entry(s.taxicab).or_insert(0usize) += 1;
    }
    let divergence = DivergenceSummary {
        examples: ranked.len(),
        modal_cie_count: input.scores.modal_cie_count(),
        tie_flagged: ranked.iter().filter(|s| s.tie_flag).count(),
        taxicab_max: ranked.iter().map(|s| s.taxicab).max().unwrap_or(0),
        taxicab_mean: if ranked.is_empty() {
            0.0
        } else {
            ranked.iter().map(|s| s.taxicab as f64).sum::<f64>() / ranked.len() as f64
        },
        taxicab_histogram: hist,
    };

    let mut sets = Vec::new();
    let mut thresholds = Vec::new();
    for &p in input.percentiles {
        let set = threshold_ranked(ranked, p)?;
        let warnings: Vec<String> = set.warnings.iter().map(|w| w.to_string()).collect();
        for w in &warnings {
            if !notices.contains(w) {
                notices.push(w.clone());
            }
        }
        thresholds.push(ThresholdCount {
            percentile: p,
            count: set.len(),
            warnings,
        });
        sets.push((p, set.example_ids().map(str::to_string).collect::<Vec<_>>()));
    }
    let modal: Vec<&str> = ranked
        .iter()
        .filter(|s| s.modal_cie)
        .map(|s| s.example_id.as_str())
        .collect();

    let accuracy = if ledger.has_ground_truth() {
        let pair = |ids: &HashSet<&str>| -> Result<PopulationPair, ReportError> {
            Ok(PopulationPair {
                baseline: accuracy_partition(ledger, &meta.baseline, ids)?,
                variant: accuracy_partition(ledger, &meta.variant, ids)?,
            })
        };
        let modal_cie = pair(&modal.iter().copied().collect())?;
        let mut taxicab = Vec::new();
        for (p, ids) in &sets {
            taxicab.push(ThresholdAccuracy {
                percentile: *p,
                count: ids.len(),
                accuracy: pair(&ids.iter().map(String::as_str).collect())?,
            });
        }
        let mut curve = Vec::new();
        for p in CURVE_PERCENTILES {
            let set = threshold_ranked(ranked, p)?;
            let acc = pair(&set.example_ids().collect())?;
            curve.push(CurvePoint {
                percentile: p,
                count: set.len(),
                baseline_acc: acc.baseline.cie_acc,
                variant_acc: acc.variant.cie_acc,
            });
        }
        Some(AccuracySection {
            modal_cie,
            taxicab,
            curve,
        })
    } else {
        notices.push("no ground truth: divergence-only report".to_string());
        None
    };

    let (subgroups, overindex) = match input.attributes {
        None => {
            notices.push("no attribute table: subgroup and over-index sections omitted".to_string());
            (None, None)
        }
        Some(attrs) => {
            let subgroups = if accuracy.is_some() {
                Some(subgroup_comparison(
                    ledger,
                    attrs,
                    &meta.baseline,
                    &meta.variant,
                    input.positive_class,
                )?)
            } else {
                None
            };
            let fallback;
            let train = match input.train_fractions {
                Some(t) => t,
                None => {
                    notices.push(
                        "no training attribute fractions: over-index uses the scored examples"
                            .to_string(),
                    );
                    fallback = attrs
                        .fractions(ranked.iter().map(|s| s.example_id.as_str()))
                        .map_err(FairnessError::from)?;
                    &fallback
                }
            };
            let mut out = Vec::new();
            let mut push = |name: String, ids: Vec<&str>| -> Result<(), ReportError> {
                let rows = match overindex_table(attrs, train, ids.iter().copied()) {
                    Ok(rows) => Some(rows),
                    Err(FairnessError::EmptyAuditSet) => None,
                    Err(e) => return Err(e.into()),
                };
                out.push(OverindexSet {
                    set: name,
                    examples: ids.len(),
                    rows,
                });
                Ok(())
            };
            push("modal_cie".to_string(), modal.clone())?;
            for (p, ids) in &sets {
                push(
                    format!("taxicab_p{}", pct_label(*p)),
                    ids.iter().map(String::as_str).collect(),
                )?;
            }
            (subgroups, Some(out))
        }
    };
    if let Some(sets) = &overindex {
        for s in sets.iter().filter(|s| s.rows.is_none()) {
            notices.push(format!("{} set is empty; over-index undefined", s.set));
        }
    }

    Ok(Report {
        baseline: meta.baseline.clone(),
        variant: meta.variant.clone(),
        score_file_sha256: input.score_file_sha256.clone(),
        manifest_sha256: meta.manifest_sha256.clone(),
        divergence,
        thresholds,
        accuracy,
        subgroups,
        overindex,
        notices,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn provenance_comment(&self) -> String {
        let mut s = format!("# score_file_sha256={}\n", self.score_file_sha256);
        if let Some(h) = &self.manifest_sha256 {
            let _ = writeln!(s, "# manifest_sha256={h}");
        }
        s
    }

    /// Accuracy-versus-percentile plot data.
    pub fn curve_csv(&self) -> Option<String> {
        let acc = self.accuracy.as_ref()?;
        let mut s = self.provenance_comment();
        s.push_str("percentile,examples,baseline_acc,variant_acc\n");
        for c in &acc.curve {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.percentile,
                c.count,
                opt_num(c.baseline_acc),
                opt_num(c.variant_acc)
            );
        }
        Some(s)
    }

    /// Over-index plot data, one row per (set, attribute).
    pub fn overindex_csv(&self) -> Option<String> {
        let sets = self.overindex.as_ref()?;
        let mut s = self.provenance_comment();
        s.push_str("set,attribute,train_fraction,cie_fraction,ratio\n");
        for set in sets {
            for r in set.rows.iter().flatten() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    set.set,
                    r.attribute,
                    r.train_fraction,
                    r.cie_fraction,
                    opt_num(r.representation_ratio)
                );
            }
        }
        Some(s)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Variant {:?} against baseline {:?}", self.variant, self.baseline);
        let _ = writeln!(s, "score file sha256: {}", self.score_file_sha256);
        if let Some(h) = &self.manifest_sha256 {
            let _ = writeln!(s, "manifest sha256:   {h}");
        }

        let d = &self.divergence;
        let _ = writeln!(s, "\nDivergence");
        let _ = writeln!(s, "  examples scored   {}", d.examples);
        let _ = writeln!(s, "  modal CIEs        {}", d.modal_cie_count);
        let _ = writeln!(s, "  tie-flagged       {}", d.tie_flagged);
        let _ = writeln!(s, "  taxicab max/mean  {} / {:.4}", d.taxicab_max, d.taxicab_mean);
        for t in &self.thresholds {
            let _ = writeln!(s, "  taxicab above p{:<5} {} examples", pct_label(t.percentile), t.count);
        }

        if let Some(acc) = &self.accuracy {
            let _ = writeln!(s, "\nTop-1 accuracy");
            let mut cols: Vec<(String, &PopulationPair, bool)> =
                vec![("All".into(), &acc.modal_cie, false)];
            cols.push(("Modal CIE".into(), &acc.modal_cie, true));
            cols.push(("Non-CIE".into(), &acc.modal_cie, false));
            for t in &acc.taxicab {
                cols.push((format!("Taxicab p{}", pct_label(t.percentile)), &t.accuracy, true));
            }
            let header: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
            let mut rows = Vec::new();
            for (name, pick) in [
                ("baseline", (|p: &PopulationPair| &p.baseline) as fn(&PopulationPair) -> &AccuracyPartition),
                ("variant", |p: &PopulationPair| &p.variant),
            ] {
                let cells: Vec<String> = cols
                    .iter()
                    .enumerate()
                    .map(|(i, (_, pair, cie))| {
                        let part = pick(pair);
                        let v = match (i, cie) {
                            (0, _) => part.all_acc,
                            (2, _) => part.noncie_acc,
                            _ => part.cie_acc,
                        };
                        fmt_rate(v)
                    })
                    .collect();
                rows.push((name.to_string(), cells));
            }
            table(&mut s, "", &header, &rows);
        }

        if let Some(groups) = &self.subgroups {
            let header: Vec<String> = groups.iter().map(|g| g.subgroup.clone()).collect();
            for (title, pick) in [
                ("Baseline", 0usize),
                ("Variant", 1),
                ("Normalized difference, variant vs baseline", 2),
            ] {
                let _ = writeln!(s, "\n{title}");
                let rates = |g: &SubgroupReport| match pick {
                    0 => g.baseline,
                    1 => g.variant,
                    _ => g.normalized_diff,
                };
                let rows: Vec<(String, Vec<String>)> = [
                    ("Error", 0usize),
                    ("FPR", 1),
                    ("FNR", 2),
                ]
                .iter()
                .map(|(metric, k)| {
                    let cells = groups
                        .iter()
                        .map(|g| {
                            let r = rates(g);
                            fmt_rate([r.error, r.fpr, r.fnr][*k])
                        })
                        .collect();
                    (metric.to_string(), cells)
                })
                .collect();
                table(&mut s, "Metric", &header, &rows);
            }
        }

        if let Some(sets) = &self.overindex {
            let _ = writeln!(s, "\nOver-indexing relative to training fractions");
            for set in sets {
                let _ = writeln!(s, "  {} ({} examples)", set.set, set.examples);
                match &set.rows {
                    None => {
                        let _ = writeln!(s, "    {UNDEFINED}");
                    }
                    Some(rows) => {
                        for r in rows {
                            let ratio = r
                                .representation_ratio
                                .map_or(UNDEFINED.to_string(), |x| format!("{x:.2}x"));
                            let _ = writeln!(
                                s,
                                "    {:<20} train {:>7.2}%  set {:>7.2}%  ratio {}",
                                r.attribute,
                                100.0 * r.train_fraction,
                                100.0 * r.cie_fraction,
                                ratio
                            );
                        }
                    }
                }
            }
        }

        if !self.notices.is_empty() {
            let _ = writeln!(s, "\nNotices");
            for n in &self.notices {
                let _ = writeln!(s, "  - {n}");
            }
        }
        s
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or(UNDEFINED.to_string(), |v| v.to_string())
}

fn table(s: &mut String, corner: &str, header: &[String], rows: &[(String, Vec<String>)]) {
    let first = rows
        .iter()
        .map(|r| r.0.len())
        .chain([corner.len()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| {
            rows.iter()
                .map(|r| r.1[i].len())
                .chain([h.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let _ = write!(s, "  {corner:<first$}");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(s, "  {h:>w$}");
    }
    s.push('\n');
    for (name, cells) in rows {
        let _ = write!(s, "  {name:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
    }
}
