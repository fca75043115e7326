//! Compression-identified exemplars: find the examples on which a compressed
//! model population disagrees with its dense baseline, rank them for human
//! audit, and report disaggregated error metrics.

pub mod attributes;
pub mod audit;
pub mod divergence;
pub mod fairness;
pub mod ledger;
pub mod manifest;
pub mod report;
pub mod scorefile;
pub mod trainer;

pub use attributes::{AttributeTable, Subgroup, SubgroupKind};
pub use divergence::{
    jaccard_distance, modal_cie, modal_label, rank_and_threshold, taxicab_distance, AuditSet,
    CieScore, TieRule,
};
pub use fairness::{
    accuracy_partition, confusion_counts, normalized_difference, overindex_table, subgroup_rates,
    AccuracyPartition, ConfusionCounts, OverindexRow, SubgroupRates, SubgroupReport,
};
pub use ledger::{
    ingest_predictions, validate_pairing, Compression, LabelHistogram, Ledger, LedgerHeader,
    PairingMode, PairingReport, PopulationSpec, PredictionRecord, QuantKind,
};
pub use manifest::{sha256_hex, RunManifest};
pub use report::{build_report, Report, ReportInput};
pub use scorefile::{ScoreFile, ScoreFileMeta};
