//! Per-example divergence between a baseline and a variant model population:
//! modal-label flips, the taxicab (L1) distance between label histograms,
//! and the multiset Jaccard distance, plus ranking and percentile thresholds.
//!
//! With equal population sizes `N`, the sum of per-class maxima equals
//! `N + taxicab / 2`, so Jaccard and taxicab order examples identically.
//! Both are computed for every example and the identity is checked at runtime.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{ClassIndex, LabelHistogram, Ledger, LedgerError, PairingReport};

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("histograms have different class counts ({0} vs {1})")]
    ClassCountMismatch(usize, usize),
    #[error("histogram totals differ ({0} vs {1}); normalize populations first")]
    TotalMismatch(u64, u64),
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("percentile {0} outside [0, 100)")]
    InvalidPercentile(f64),
    #[error("no scores to rank")]
    EmptyScores,
    #[error("jaccard/taxicab cross-check failed for example {example_id:?}: sum of maxima {union} != {total} + {taxicab}/2")]
    CrossCheck {
        example_id: String,
        union: u64,
        total: u64,
        taxicab: u64,
    },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub type Result<T, E = DivergenceError> = std::result::Result<T, E>;

/// How the modal label is chosen when several classes share the top count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    LowestIndex,
    HighestIndex,
}

impl TieRule {
    pub fn as_str(self) -> &'static str {
        match self {
            TieRule::LowestIndex => "lowest_index",
            TieRule::HighestIndex => "highest_index",
        }
    }
}

impl fmt::Display for TieRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TieRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lowest_index" | "lowest" => Ok(TieRule::LowestIndex),
            "highest_index" | "highest" => Ok(TieRule::HighestIndex),
            other => Err(format!(
                "unknown tie rule {other:?} (expected lowest_index or highest_index)"
            )),
        }
    }
}

fn check_comparable(b: &LabelHistogram, v: &LabelHistogram) -> Result<()> {
    if b.num_classes() != v.num_classes() {
        return Err(DivergenceError::ClassCountMismatch(
            b.num_classes(),
            v.num_classes(),
        ));
    }
    if b.total() != v.total() {
        return Err(DivergenceError::TotalMismatch(b.total(), v.total()));
    }
    Ok(())
}

/// Sum over classes of `|b_i - v_i|`.
pub fn taxicab_distance(b: &LabelHistogram, v: &LabelHistogram) -> Result<u64> {
    check_comparable(b, v)?;
    Ok(b.counts()
        .iter()
        .zip(v.counts())
        .map(|(x, y)| x.abs_diff(*y))
        .sum())
}

/// Multiset Jaccard distance kept as the exact ratio `1 - shared / union`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JaccardDistance {
    /// Sum of per-class minima.
    pub shared: u64,
    /// Sum of per-class maxima.
    pub union: u64,
}

impl JaccardDistance {
    pub fn value(&self) -> f64 {
        1.0 - self.shared as f64 / self.union as f64
    }
}

impl PartialOrd for JaccardDistance {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for JaccardDistance {
    /// Larger distance compares greater; exact via cross-multiplication.
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.shared as u128 * other.union as u128;
        let rhs = other.shared as u128 * self.union as u128;
        rhs.cmp(&lhs)
    }
}

pub fn jaccard(b: &LabelHistogram, v: &LabelHistogram) -> Result<JaccardDistance> {
    check_comparable(b, v)?;
    let (mut shared, mut union) = (0, 0);
    for (x, y) in b.counts().iter().zip(v.counts()) {
        shared += x.min(y);
        union += x.max(y);
    }
    if union == 0 {
        return Err(DivergenceError::EmptyHistogram);
    }
    Ok(JaccardDistance { shared, union })
}

pub fn jaccard_distance(b: &LabelHistogram, v: &LabelHistogram) -> Result<f64> {
    jaccard(b, v).map(|j| j.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalLabel {
    pub class: ClassIndex,
    /// More than one class shares the top count.
    pub tied: bool,
}

pub fn modal_label(h: &LabelHistogram, rule: TieRule) -> Result<ModalLabel> {
    let counts = h.counts();
    let top = counts.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return Err(DivergenceError::EmptyHistogram);
    }
    let mut winners = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == top)
        .map(|(i, _)| i as ClassIndex);
    let first = winners.next().expect("top count exists");
    let last = winners.next_back();
    let class = match rule {
        TieRule::LowestIndex => first,
        TieRule::HighestIndex => last.unwrap_or(first),
    };
    Ok(ModalLabel {
        class,
        tied: last.is_some(),
    })
}

/// True iff the modal labels of the two populations differ.
pub fn modal_cie(b: &LabelHistogram, v: &LabelHistogram, rule: TieRule) -> Result<bool> {
    check_comparable(b, v)?;
    Ok(modal_label(b, rule)?.class != modal_label(v, rule)?.class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CieScore {
    pub example_id: String,
    pub taxicab: u64,
    pub jaccard: f64,
    pub modal_baseline: ClassIndex,
    pub modal_variant: ClassIndex,
    pub modal_cie: bool,
    /// 1-based position after tie-breaking; 0 until ranked.
    pub rank: usize,
    /// `100 * (M - rank + 1) / M`; an example belongs to the audit set at
    /// threshold `p` exactly when its percentile exceeds `p`.
    pub percentile: f64,
    /// Either population's modal label was decided by the tie rule.
    pub tie_flag: bool,
}

/// Scores one example, cross-checking the Jaccard and taxicab routes.
pub fn score_example(
    example_id: &str,
    b: &LabelHistogram,
    v: &LabelHistogram,
    rule: TieRule,
) -> Result<CieScore> {
    let taxicab = taxicab_distance(b, v)?;
    let j = jaccard(b, v)?;
    if 2 * j.union != 2 * b.total() + taxicab {
        return Err(DivergenceError::CrossCheck {
            example_id: example_id.to_string(),
            union: j.union,
            total: b.total(),
            taxicab,
        });
    }
    let mb = modal_label(b, rule)?;
    let mv = modal_label(v, rule)?;
    Ok(CieScore {
        example_id: example_id.to_string(),
        taxicab,
        jaccard: j.value(),
        modal_baseline: mb.class,
        modal_variant: mv.class,
        modal_cie: mb.class != mv.class,
        rank: 0,
        percentile: 0.0,
        tie_flag: mb.tied || mv.tied,
    })
}

/// Scores every shared example of a pairing, in canonical example order.
pub fn score_pairing(
    ledger: &Ledger,
    pairing: &PairingReport,
    rule: TieRule,
) -> Result<Vec<CieScore>> {
    pairing
        .shared
        .par_iter()
        .map(|&e| {
            let (b, v) = pairing.histograms(ledger, e)?;
            score_example(&ledger.examples()[e], &b, &v, rule)
        })
        .collect()
}

/// Orders scores by descending taxicab distance, breaking ties with a
/// permutation drawn from `seed`, and fills in rank and percentile.
///
/// The input order does not matter: scores are first put in example-id order.
pub fn rank_scores(scores: &mut [CieScore], seed: u64) {
    scores.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scores.shuffle(&mut rng);
    scores.sort_by_key(|s| std::cmp::Reverse(s.taxicab));
    let m = scores.len();
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
        s.percentile = 100.0 * (m - i) as f64 / m as f64;
    }
}

/// `ceil((100 - p) / 100 * m)`: the audit-set size at percentile `p`.
pub fn audit_count(m: usize, percentile: f64) -> usize {
    let exact = (100.0 - percentile) * m as f64 / 100.0;
    // absorb float noise such as 100.00000000000001
    ((exact - 1e-9).ceil().max(0.0) as usize).min(m)
}

pub fn check_percentile(p: f64) -> Result<()> {
    if (0.0..100.0).contains(&p) {
        Ok(())
    } else {
        Err(DivergenceError::InvalidPercentile(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingWarning {
    /// Every example has zero taxicab distance; nothing diverges.
    ZeroDivergence { examples: usize },
}

impl fmt::Display for RankingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingWarning::ZeroDivergence { examples } => write!(
                f,
                "all {examples} examples have zero taxicab distance; audit sets above percentile 0 are empty"
            ),
        }
    }
}

/// Top slice of a ranking at one percentile threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSet {
    pub percentile: f64,
    pub total: usize,
    pub members: Vec<CieScore>,
    pub warnings: Vec<RankingWarning>,
}

impl AuditSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn example_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|s| s.example_id.as_str())
    }
}

/// Slices an already ranked score list (ascending rank) at `percentile`.
pub fn threshold_ranked(ranked: &[CieScore], percentile: f64) -> Result<AuditSet> {
    check_percentile(percentile)?;
    if ranked.is_empty() {
        return Err(DivergenceError::EmptyScores);
    }
    let mut warnings = Vec::new();
    let count = if ranked.iter().all(|s| s.taxicab == 0) {
        warnings.push(RankingWarning::ZeroDivergence {
            examples: ranked.len(),
        });
        if percentile > 0.0 {
            0
        } else {
            ranked.len()
        }
    } else {
        audit_count(ranked.len(), percentile)
    };
    Ok(AuditSet {
        percentile,
        total: ranked.len(),
        members: ranked[..count].to_vec(),
        warnings,
    })
}

/// Ranks `scores` with the seeded tie-break and returns the audit set at
/// `percentile`.
pub fn rank_and_threshold(scores: &[CieScore], percentile: f64, seed: u64) -> Result<AuditSet> {
    check_percentile(percentile)?;
    if scores.is_empty() {
        return Err(DivergenceError::EmptyScores);
    }
    let mut ranked = scores.to_vec();
    rank_scores(&mut ranked, seed);
    threshold_ranked(&ranked, percentile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(c: &[u64]) -> LabelHistogram {
        LabelHistogram::from_counts(c.to_vec())
    }

    #[test]
    fn taxicab_examples() {
        assert_eq!(taxicab_distance(&h(&[3, 1]), &h(&[1, 3])).unwrap(), 4);
        assert_eq!(taxicab_distance(&h(&[15, 15]), &h(&[15, 15])).unwrap(), 0);
        assert_eq!(taxicab_distance(&h(&[30, 0]), &h(&[0, 30])).unwrap(), 60);
    }

    #[test]
    fn taxicab_rejects_mismatch() {
        assert!(matches!(
            taxicab_distance(&h(&[1, 1]), &h(&[2])),
            Err(DivergenceError::ClassCountMismatch(2, 1))
        ));
        assert!(matches!(
            taxicab_distance(&h(&[1, 1]), &h(&[2, 1])),
            Err(DivergenceError::TotalMismatch(2, 3))
        ));
    }

    #[test]
    fn jaccard_examples() {
        // shared = min(3,1)+min(1,3) = 2, union = 6; 6 = 4 + 4/2
        let j = jaccard(&h(&[3, 1]), &h(&[1, 3])).unwrap();
        assert_eq!((j.shared, j.union), (2, 6));
        assert!((j.value() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_distance(&h(&[7, 2]), &h(&[7, 2])).unwrap(), 0.0);
        assert_eq!(jaccard_distance(&h(&[4, 0]), &h(&[0, 4])).unwrap(), 1.0);
    }

    #[test]
    fn modal_examples() {
        let m = modal_label(&h(&[25, 5]), TieRule::default()).unwrap();
        assert_eq!((m.class, m.tied), (0, false));
        let m = modal_label(&h(&[15, 15]), TieRule::default()).unwrap();
        assert_eq!((m.class, m.tied), (0, true));
        let m = modal_label(&h(&[15, 15]), TieRule::HighestIndex).unwrap();
        assert_eq!((m.class, m.tied), (1, true));
        assert_eq!(modal_label(&h(&[0, 0, 30]), TieRule::default()).unwrap().class, 2);
        assert!(matches!(
            modal_label(&h(&[0, 0]), TieRule::default()),
            Err(DivergenceError::EmptyHistogram)
        ));
    }

    #[test]
    fn modal_cie_examples() {
        let r = TieRule::default();
        assert!(modal_cie(&h(&[25, 5]), &h(&[5, 25]), r).unwrap());
        assert!(!modal_cie(&h(&[25, 5]), &h(&[20, 10]), r).unwrap());
        assert!(modal_cie(&h(&[15, 15]), &h(&[14, 16]), r).unwrap());
    }

    fn score(id: &str, taxicab: u64) -> CieScore {
        CieScore {
            example_id: id.into(),
            taxicab,
            jaccard: 0.0,
            modal_baseline: 0,
            modal_variant: 0,
            modal_cie: false,
            rank: 0,
            percentile: 0.0,
            tie_flag: false,
        }
    }

    #[test]
    fn threshold_counts() {
        let scores: Vec<_> = (0..1000).map(|i| score(&format!("e{i}"), (i % 7) as u64)).collect();
        assert_eq!(rank_and_threshold(&scores, 90.0, 1).unwrap().len(), 100);
        assert_eq!(rank_and_threshold(&scores, 99.0, 1).unwrap().len(), 10);
        let all = rank_and_threshold(&scores, 0.0, 1).unwrap();
        assert_eq!(all.len(), 1000);
        assert!(all.members.windows(2).all(|w| w[0].taxicab >= w[1].taxicab));
        assert_eq!(audit_count(7, 50.0), 4);
        assert_eq!(audit_count(1000, 99.9), 1);
    }

    #[test]
    fn tie_breaking_is_seeded() {
        let scores = vec![score("a", 2), score("b", 2), score("c", 0)];
        let x = rank_and_threshold(&scores, 0.0, 7).unwrap();
        let y = rank_and_threshold(&scores, 0.0, 7).unwrap();
        assert_eq!(x, y);
        // cut of 2 does not split the {a, b} tie group
        for seed in 0..20 {
            let s = rank_and_threshold(&scores, 50.0, seed).unwrap();
            let mut ids: Vec<_> = s.example_ids().collect();
            ids.sort();
            assert_eq!(ids, ["a", "b"]);
        }
        let orders: std::collections::HashSet<Vec<String>> = (0..20)
            .map(|seed| {
                rank_and_threshold(&scores, 0.0, seed)
                    .unwrap()
                    .example_ids()
                    .map(String::from)
                    .collect()
            })
            .collect();
        assert!(orders.len() > 1, "seeds should permute tied examples");
    }

    #[test]
    fn ranking_ignores_input_order() {
        let scores: Vec<_> = (0..50).map(|i| score(&format!("e{i:02}"), (i % 3) as u64)).collect();
        let mut rev = scores.clone();
        rev.reverse();
        assert_eq!(
            rank_and_threshold(&scores, 0.0, 3).unwrap(),
            rank_and_threshold(&rev, 0.0, 3).unwrap()
        );
    }

    #[test]
    fn zero_divergence_warns() {
        let scores = vec![score("a", 0), score("b", 0)];
        let s = rank_and_threshold(&scores, 50.0, 0).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(rank_and_threshold(&scores, 0.0, 0).unwrap().len(), 2);
    }

    #[test]
    fn percentile_and_empty_guards() {
        let scores = vec![score("a", 1)];
        assert!(matches!(
            rank_and_threshold(&scores, 100.0, 0),
            Err(DivergenceError::InvalidPercentile(_))
        ));
        assert!(rank_and_threshold(&scores, -1.0, 0).is_err());
        assert!(matches!(
            rank_and_threshold(&[], 10.0, 0),
            Err(DivergenceError::EmptyScores)
        ));
    }

    #[test]
    fn percentile_membership_matches_threshold() {
        let scores: Vec<_> = (0..37).map(|i| score(&format!("e{i}"), (i % 5) as u64)).collect();
        let mut ranked = scores.clone();
        rank_scores(&mut ranked, 11);
        for p in [0.0, 12.5, 50.0, 90.0, 99.0] {
            let set = threshold_ranked(&ranked, p).unwrap();
            let by_percentile = ranked.iter().filter(|s| s.percentile > p).count();
            assert_eq!(set.len(), by_percentile, "p={p}");
        }
    }
}
