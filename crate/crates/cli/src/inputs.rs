//! Per-command record of the files read and written, with SHA-256 digests,
//! saved as `inputs/<command>.json` in the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputsManifest {
    pub command: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip)]
    root: PathBuf,
}

impl InputsManifest {
    pub fn new(command: &str, root: &Path) -> Self {
        InputsManifest {
            command: command.to_string(),
            config_sha256: sha256_file(&root.join("config.toml")).unwrap_or_default(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            root: root.to_path_buf(),
        }
    }

    /// Paths inside the run directory are recorded relative to it.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(self.key(path), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.outputs.insert(self.key(path), digest);
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        let dir = self.root.join("inputs");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
