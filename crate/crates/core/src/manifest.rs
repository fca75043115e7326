//! Run manifests. Every artifact a command writes carries the SHA-256 of the
//! manifest that describes the run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    /// Input name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub baseline: Option<String>,
    pub variant: Option<String>,
    pub percentiles: Vec<f64>,
    pub seed: u64,
    pub output_dir: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: format!("cie {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            inputs: BTreeMap::new(),
            baseline: None,
            variant: None,
            percentiles: Vec::new(),
            seed: 0,
            output_dir: String::new(),
            timestamp: timestamp_now(),
            settings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `SOURCE_DATE_EPOCH` if set, otherwise the current time, as RFC 3339 UTC.
pub fn timestamp_now() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok());
    let t = match secs {
        Some(s) => chrono::DateTime::from_timestamp(s, 0).unwrap_or_default(),
        None => chrono::Utc::now(),
    };
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
