//! Versioned JSON reports and the run manifest. Reports contain no
//! timestamps and are serialized from deterministically ordered structures,
//! so a rerun with the same resolved config is byte-identical. Wall-clock
//! data lives in the manifest only.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
            Outcome::Inconclusive => 3,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub run_kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grade: Option<String>,
    pub outcome: Outcome,
    pub results: serde_json::Value,
}

impl Report {
    pub fn new(
        run_kind: &str,
        config_hash: &str,
        seed: u64,
        grade: Option<String>,
        outcome: Outcome,
        results: serde_json::Value,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            run_kind: run_kind.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            grade,
            outcome,
            results,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
    pub outcome: Outcome,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// SHA-256 of the resolved config text.
pub fn config_hash(resolved_toml: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(resolved_toml.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now_unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
