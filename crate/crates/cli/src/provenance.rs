//! Provenance record written beside every output.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: Vec<String>,
    pub subcommand: String,
    /// SHA-256 of the effective configuration text.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub lesiongen: &'static str,
    pub checkpoint_format: u32,
}

impl Provenance {
    pub fn new(subcommand: &str, config_text: &str, seeds: Vec<u64>) -> Self {
        Self {
            command: std::env::args().collect(),
            subcommand: subcommand.into(),
            config_hash: sha256_hex(config_text.as_bytes()),
            seeds,
            versions: Versions { lesiongen: env!("CARGO_PKG_VERSION"), checkpoint_format: lesiongen::synthesis::CHECKPOINT_VERSION },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(lesiongen::Error::from)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
