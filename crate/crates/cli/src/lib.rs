//! Command implementations behind the `cie` binary: scoring, reports, the
//! desk experiment and the audit service.

pub mod experiment;
pub mod inputs;
pub mod report;
pub mod score;
pub mod server;

use std::fs;
use std::path::Path;

use anyhow::Context;

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
