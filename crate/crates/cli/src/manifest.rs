//! Run manifests: written once at run start, next to a verbatim copy of
//! the configuration file. Completion details go to a separate file so the
//! manifest itself never changes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slide_core::checkpoint::write_atomic;

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPLETION_FILE: &str = "completion.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const MANIFEST_FORMAT: &str = "slide-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    /// Arm label used for plot legends, e.g. `slide` or `transfer:flat_sac`.
    pub name: String,
    pub seed: u64,
    pub config_sha256: String,
    pub source: String,
    pub modules: Vec<(String, String)>,
    pub started_at_unix: u64,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub finished_at_unix: u64,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn source_fingerprint() -> String {
    match option_env!("SLIDE_GIT_COMMIT") {
        Some(commit) if !commit.is_empty() => format!("git:{commit}"),
        _ => format!("version:{}", env!("CARGO_PKG_VERSION")),
    }
}

impl Manifest {
    pub fn new(command: &str, name: &str, seed: u64, config_text: &str, outputs: Vec<PathBuf>) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            name: name.into(),
            seed,
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            source: source_fingerprint(),
            modules: vec![
                ("slide-core".into(), slide_core::VERSION.into()),
                ("slide-cli".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            started_at_unix: now_unix(),
            outputs,
        }
    }

    /// Writes the manifest and the verbatim config copy.
    pub fn write(&self, dir: &Path, config_text: &str) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(CONFIG_COPY), config_text.as_bytes())?;
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &json)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Option<Manifest> {
        let bytes = std::fs::read(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

pub fn write_completion(dir: &Path, outputs: Vec<PathBuf>, summary: serde_json::Value) -> CliResult<()> {
    let c = Completion {
        finished_at_unix: now_unix(),
        outputs,
        summary,
    };
    write_atomic(&dir.join(COMPLETION_FILE), &serde_json::to_vec_pretty(&c).expect("completion serializes"))?;
    Ok(())
}
