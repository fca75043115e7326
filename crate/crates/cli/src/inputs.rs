//! Loading the file formats shared by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cie_core::ledger::{load_ledger, IngestOptions, MissingPolicy};
use cie_core::{sha256_hex, AttributeTable, Ledger, ScoreFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Missing {
    Error,
    Drop,
    Keep,
}

impl From<Missing> for MissingPolicy {
    fn from(m: Missing) -> Self {
        match m {
            Missing::Error => MissingPolicy::Error,
            Missing::Drop => MissingPolicy::DropExamples,
            Missing::Keep => MissingPolicy::Keep,
        }
    }
}

/// Header and prediction log of a ledger.
#[derive(Debug, Clone, clap::Args)]
pub struct LedgerArgs {
    /// Ledger header (TOML).
    #[arg(long)]
    pub header: PathBuf,
    /// Prediction log (CSV).
    #[arg(long)]
    pub predictions: PathBuf,
    /// What to do when a model lacks predictions for some examples.
    #[arg(long, value_enum, default_value = "error")]
    pub missing: Missing,
}

impl LedgerArgs {
    pub fn load(&self) -> anyhow::Result<Ledger> {
        load_ledger(
            &self.header,
            &self.predictions,
            IngestOptions {
                missing: self.missing.into(),
            },
        )
        .with_context(|| format!("loading ledger {}", self.predictions.display()))
    }
}

pub fn load_scores(path: &Path) -> anyhow::Result<(ScoreFile, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let file = ScoreFile::read(bytes.as_slice(), &path.display().to_string())?;
    Ok((file, sha256_hex(&bytes)))
}

pub fn load_attributes(path: Option<&Path>) -> anyhow::Result<Option<AttributeTable>> {
    path.map(|p| AttributeTable::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

/// Attribute fractions over a training attribute table.
pub fn load_train_fractions(path: Option<&Path>) -> anyhow::Result<Option<BTreeMap<String, f64>>> {
    Ok(load_attributes(path)?.map(|t| t.overall_fractions()))
}
