//! Score files: ranked per-example divergence scores as delimited text.
//!
//! ```text
//! # cie-scores v1
//! # baseline=baseline
//! # variant=pruned-0.9
//! # tie_rule=lowest_index
//! # rank_seed=0
//! # common_total=10
//! # manifest_sha256=...
//! example_id,taxicab,jaccard,modal_baseline,modal_variant,modal_cie,rank,percentile,tie_flag
//! ex000017,20,1,0,1,true,1,100,false
//! ```
//!
//! Rows are written in rank order.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{CieScore, TieRule};

pub const MAGIC: &str = "# cie-scores v1";

#[derive(Debug, Error)]
pub enum ScoreFileError {
    #[error("{source_name}: not a score file (missing {MAGIC:?} header)")]
    NotAScoreFile { source_name: String },
    #[error("{source_name}: missing metadata key {key:?}")]
    MissingKey { source_name: String, key: &'static str },
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileMeta {
    pub baseline: String,
    pub variant: String,
    pub tie_rule: TieRule,
    pub rank_seed: u64,
    /// Histogram total both populations were compared at.
    pub common_total: u64,
    pub manifest_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub meta: ScoreFileMeta,
    /// Ascending rank.
    pub scores: Vec<CieScore>,
}

const COLUMNS: [&str; 9] = [
    "example_id",
    "taxicab",
    "jaccard",
    "modal_baseline",
    "modal_variant",
    "modal_cie",
    "rank",
    "percentile",
    "tie_flag",
];

impl ScoreFile {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = &self.meta;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "# baseline={}", m.baseline)?;
        writeln!(w, "# variant={}", m.variant)?;
        writeln!(w, "# tie_rule={}", m.tie_rule)?;
        writeln!(w, "# rank_seed={}", m.rank_seed)?;
        writeln!(w, "# common_total={}", m.common_total)?;
        if let Some(h) = &m.manifest_sha256 {
            writeln!(w, "# manifest_sha256={h}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(COLUMNS)?;
        for s in &self.scores {
            csv.write_record([
                s.example_id.clone(),
                s.taxicab.to_string(),
                s.jaccard.to_string(),
                s.modal_baseline.to_string(),
                s.modal_variant.to_string(),
                s.modal_cie.to_string(),
                s.rank.to_string(),
                s.percentile.to_string(),
                s.tie_flag.to_string(),
            ])?;
        }
        csv.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }

    pub fn read<R: Read>(reader: R, source_name: &str) -> Result<Self, ScoreFileError> {
        let mut reader = BufReader::new(reader);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        if first.trim_end() != MAGIC {
            return Err(ScoreFileError::NotAScoreFile {
                source_name: source_name.to_string(),
            });
        }
        let parse_err = |message: String| ScoreFileError::Parse {
            source_name: source_name.to_string(),
            message,
        };

        let mut rest = String::new();
        reader.read_to_string(&mut rest)?;
        let mut kv = std::collections::HashMap::new();
        for line in rest.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &'static str| {
            kv.get(key).cloned().ok_or(ScoreFileError::MissingKey {
                source_name: source_name.to_string(),
                key,
            })
        };
        let meta = ScoreFileMeta {
            baseline: get("baseline")?,
            variant: get("variant")?,
            tie_rule: get("tie_rule")?.parse().map_err(parse_err)?,
            rank_seed: get("rank_seed")?
                .parse()
                .map_err(|e| parse_err(format!("rank_seed: {e}")))?,
            common_total: get("common_total")?
                .parse()
                .map_err(|e| parse_err(format!("common_total: {e}")))?,
            manifest_sha256: kv.get("manifest_sha256").cloned(),
        };

        let mut csv = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(rest.as_bytes());
        let headers = csv
            .headers()
            .map_err(|e| parse_err(e.to_string()))?
            .clone();
        if headers.iter().ne(COLUMNS) {
            return Err(parse_err(format!(
                "unexpected columns {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        // line numbers are relative to the CSV body; offset by the magic line
        let mut scores = Vec::new();
        for row in csv.deserialize::<CieScore>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() + 1);
                parse_err(format!("line {line}: {e}"))
            })?;
            scores.push(row);
        }
        Ok(ScoreFile { meta, scores })
    }

    pub fn modal_cie_count(&self) -> usize {
        self.scores.iter().filter(|s| s.modal_cie).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::rank_scores;

    fn file() -> ScoreFile {
        let mut scores: Vec<CieScore> = (0..5)
            .map(|i| CieScore {
                example_id: format!("e{i}"),
                taxicab: 2 * (i % 3),
                jaccard: (i % 3) as f64 / 7.0,
                modal_baseline: 0,
                modal_variant: (i % 2) as u32,
                modal_cie: i % 2 == 1,
                rank: 0,
                percentile: 0.0,
                tie_flag: i == 4,
            })
            .collect();
        rank_scores(&mut scores, 3);
        ScoreFile {
            meta: ScoreFileMeta {
                baseline: "b".into(),
                variant: "v".into(),
                tie_rule: TieRule::LowestIndex,
                rank_seed: 3,
                common_total: 10,
                manifest_sha256: Some("ab".repeat(32)),
            },
            scores,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let f = file();
        let bytes = f.to_bytes();
        let back = ScoreFile::read(bytes.as_slice(), "mem").unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_foreign_files() {
        let err = ScoreFile::read("a,b\n1,2\n".as_bytes(), "x.csv").unwrap_err();
        assert!(matches!(err, ScoreFileError::NotAScoreFile { .. }));
        let text = format!("{MAGIC}\n# baseline=b\n");
        let err = ScoreFile::read(text.as_bytes(), "x.csv").unwrap_err();
        assert!(matches!(err, ScoreFileError::MissingKey { key: "variant", .. }));
    }
}
