//! Run manifests: one JSON record per invocation, appended to
//! `<runs_dir>/runs.jsonl`. The log is the only impure artifact a command
//! produces — every other output file is a pure function of (config, seed,
//! input files); the manifest carries the wall-clock timings and the
//! failure record when a run dies half way.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ddff_core::metrics::MetricsReport;
use ddff_net::train::EpochStats;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_LOG: &str = "runs.jsonl";

/// One evaluated stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackReport {
    pub scene: String,
    pub index: usize,
    pub report: MetricsReport,
}

/// Everything recorded about one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// `"ok"` or `"failed: <error>"`.
    pub status: String,
    /// Explicit seed for seeded commands.
    pub seed: Option<u64>,
    pub code_version: String,
    /// SHA-256 of the consumed dataset's `manifest.json`, when one exists.
    pub dataset_hash: Option<String>,
    /// Fully resolved configuration (defaults filled in, overrides applied).
    pub config: Value,
    /// Files and directories the run produced.
    pub outputs: Vec<String>,
    /// Per-epoch losses (train runs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochStats>,
    /// Per-stack metric reports (eval runs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<StackReport>,
    /// Valid-pixel-pooled aggregate over `reports`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<MetricsReport>,
    /// Wall-clock seconds per phase; excluded from the purity contract.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            status: "ok".to_string(),
            seed: None,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_hash: None,
            config,
            outputs: Vec::new(),
            epochs: Vec::new(),
            reports: Vec::new(),
            aggregate: None,
            timings: BTreeMap::new(),
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

/// Appends one manifest line to `<runs_dir>/runs.jsonl` (created on demand).
pub fn append_manifest(runs_dir: &Path, manifest: &RunManifest) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(runs_dir)
        .with_context(|| format!("creating {}", runs_dir.display()))?;
    let path = runs_dir.join(MANIFEST_LOG);
    let line = serde_json::to_string(manifest).context("serializing run manifest")?;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(file, "{line}").with_context(|| format!("appending to {}", path.display()))?;
    Ok(path)
}

/// Reads every manifest line in order; malformed lines are an error (the
/// log is append-only and machine-written).
pub fn read_manifests(runs_dir: &Path) -> anyhow::Result<Vec<RunManifest>> {
    let path = runs_dir.join(MANIFEST_LOG);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: RunManifest = serde_json::from_str(line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.push(m);
    }
    Ok(out)
}

/// SHA-256 of a file, hex-encoded.
pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Identity of a dataset root: the hash of its manifest file, which lists
/// every scene, stack, and file name.
pub fn dataset_hash(root: &Path) -> anyhow::Result<String> {
    hash_file(&root.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifests_append_and_read_back_in_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let mut m = RunManifest::new("synth", Value::Null);
            m.seed = Some(i);
            append_manifest(dir.path(), &m).unwrap();
        }
        let all = read_manifests(dir.path()).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].seed, Some(2));
        assert_eq!(all[0].command, "synth");
    }

    #[test]
    fn file_hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        std::fs::write(&p, b"abc").unwrap();
        let h1 = hash_file(&p).unwrap();
        assert_eq!(
            h1,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        std::fs::write(&p, b"abd").unwrap();
        assert_ne!(hash_file(&p).unwrap(), h1);
    }
}
