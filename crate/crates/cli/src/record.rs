//! Run records: the exact invocation plus content digests of everything read
//! and written, so a run can be replayed and checked byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub seed: u64,
    pub workers: Option<u32>,
    pub digest_algorithm: String,
    /// Input path (as given) to hex digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to hex digest.
    pub outputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn file_name(subcommand: &str) -> String {
        format!("run-{subcommand}.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading run record {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing run record {}", path.display()))
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(Self::file_name(&self.subcommand));
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Accumulates the digests for one run.
#[derive(Debug, Default)]
pub struct Digests {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Digests {
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = digest_file(path)?;
        self.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let d = digest_file(&out_dir.join(name))?;
        self.outputs.insert(name.to_string(), d);
        Ok(())
    }
}
