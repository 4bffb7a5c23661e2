//! Run manifest and overwrite-safe file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Provenance record written into every simulate output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config_path: Option<&Path>,
        output_dir: &Path,
        seeds: Vec<u64>,
    ) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(|p| p.to_path_buf()),
            output_dir: output_dir.to_path_buf(),
            seeds,
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Refuses to clobber existing files unless `force` is set; creates parent
/// directories as needed.
pub fn checked_write(path: &Path, contents: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "refusing to overwrite existing file {} (pass --force to allow)",
            path.display()
        );
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn checked_write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    checked_write(path, text.as_bytes(), force)
}
