//! Run directory layout, manifest and integrity checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::CliError;

pub const CONFIG: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const SOLUTION: &str = "solution.csv";
pub const SOLUTION_META: &str = "solution.meta.json";
pub const POLICY: &str = "policy.csv";
pub const POLICY_META: &str = "policy.meta.json";
pub const SUMMARY: &str = "paths_summary.csv";
pub const DYNKIN: &str = "dynkin.json";
pub const VERIFICATION: &str = "verification.json";
pub const SWEEP: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` pins both.
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub timestamps: Timestamps,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    pub assumption_flags: Vec<String>,
}

pub fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn read(&self, name: &str) -> Result<String, CliError> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| io_err(&p, e))
    }

    pub fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    pub fn manifest(&self) -> Result<RunManifest, CliError> {
        serde_json::from_str(&self.read(MANIFEST)?)
            .map_err(|e| CliError::Integrity(format!("{MANIFEST} is unreadable: {e}")))
    }

    /// Writes `outputs` and records their digests in the manifest.
    pub fn commit(&self, mut manifest: RunManifest, outputs: &[(&str, String)]) -> Result<RunManifest, CliError> {
        for (name, text) in outputs {
            self.write(name, text)?;
            manifest.files.insert(name.to_string(), sha256_hex(text.as_bytes()));
        }
        manifest.timestamps.finished = now();
        self.write(MANIFEST, &(serde_json::to_string_pretty(&manifest).expect("serialisable") + "\n"))?;
        Ok(manifest)
    }

    /// Every file listed in the manifest must still hash to its recorded digest.
    pub fn check_inventory(&self, manifest: &RunManifest) -> Result<(), CliError> {
        for (name, digest) in &manifest.files {
            let p = self.path(name);
            let bytes = fs::read(&p).map_err(|_| CliError::Integrity(format!("{name} listed in the manifest is missing")))?;
            if sha256_hex(&bytes) != *digest {
                return Err(CliError::Integrity(format!("{name} does not match its manifest digest")));
            }
        }
        Ok(())
    }

    /// The regenerated artifact must equal the stored one byte for byte.
    pub fn check_same(&self, name: &str, regenerated: &str) -> Result<(), CliError> {
        if self.read(name)? != regenerated {
            return Err(CliError::Integrity(format!("{name} is stale: re-solving the recorded config gives different bytes")));
        }
        Ok(())
    }
}
