use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> CliResult<Self> {
        Ok(FileDigest {
            path: label,
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of a completed run: enough to execute it again and check that
/// the outputs match byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    /// Worker threads available to the run; results do not depend on it.
    pub threads: usize,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the run directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn output_digest(&self, name: &str) -> Option<&str> {
        self.outputs.iter().find(|d| d.path == name).map(|d| d.sha256.as_str())
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Differences between the outputs of two manifests, as readable lines.
pub fn compare_outputs(expected: &Manifest, actual: &Manifest) -> Vec<String> {
    let mut diffs = Vec::new();
    for d in &expected.outputs {
        match actual.output_digest(&d.path) {
            None => diffs.push(format!("{} was not produced", d.path)),
            Some(h) if h != d.sha256 => diffs.push(format!("{} differs", d.path)),
            Some(_) => {}
        }
    }
    for d in &actual.outputs {
        if expected.output_digest(&d.path).is_none() {
            diffs.push(format!("{} is new", d.path));
        }
    }
    diffs
}
