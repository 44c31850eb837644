use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one invocation, written as `manifest.json` next to the outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// SHA-256 over the command, its options and the config file contents.
    pub input_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, options: &str, config: Option<&Path>, seed: u64, output_dir: &Path) -> std::io::Result<Self> {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update([0]);
        hasher.update(options.as_bytes());
        hasher.update([0]);
        hasher.update(seed.to_le_bytes());
        if let Some(path) = config {
            hasher.update(std::fs::read(path)?);
        }
        let input_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            command: command.to_string(),
            config_path: config.map(Path::to_path_buf),
            seed,
            output_dir: output_dir.to_path_buf(),
            input_hash,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")
    }
}
