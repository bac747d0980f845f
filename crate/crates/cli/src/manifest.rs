//! Run manifests: the exact command, resolved config, seed, and sha256
//! of every emitted artifact, so any output can be regenerated from
//! (config, seed) alone. Written once before the long work starts and
//! rewritten with hashes once the artifacts exist.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{run_err, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u64,
    pub command: String,
    pub config_path: Option<String>,
    /// Resolved config snapshot after flag overrides.
    pub config: serde_json::Value,
    pub seed: u64,
    pub out_dir: String,
    /// Relative artifact path -> sha256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        config: serde_json::Value,
        seed: u64,
        out_dir: &Path,
    ) -> RunManifest {
        RunManifest {
            schema_version: 1,
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            seed,
            out_dir: out_dir.display().to_string(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Write (or rewrite) `manifest.json` in the output directory.
    pub fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join("manifest.json");
        let w = BufWriter::new(
            File::create(&path).map_err(|e| run_err(format!("cannot write manifest: {e}")))?,
        );
        serde_json::to_writer_pretty(w, self)
            .map_err(|e| run_err(format!("cannot serialize manifest: {e}")))?;
        Ok(path)
    }

    /// Hash artifacts (paths relative to the output directory) and store
    /// the digests.
    pub fn record_artifacts(&mut self, out_dir: &Path, files: &[PathBuf]) -> CliResult<()> {
        for f in files {
            let rel = f
                .strip_prefix(out_dir)
                .unwrap_or(f)
                .to_string_lossy()
                .into_owned();
            self.artifacts.insert(rel, sha256_file(f)?);
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path)
        .map_err(|e| run_err(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| run_err(format!("cannot hash {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| run_err(format!("cannot create {}: {e}", dir.display())))
}
