//! Atomic artifact writes and sidecar run manifests.
//!
//! Every output `x` gets a sibling `x.manifest.json` recording the command,
//! its effective settings (paths removed), seeds, and the SHA-256 of every
//! input and of the output itself. Manifests carry no paths or timestamps,
//! so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub settings: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Role → SHA-256 of the input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of the artifact this manifest describes.
    pub output: String,
    /// SHA-256 over the sorted input digests.
    pub lineage: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_os_string();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

/// Run-level description shared by every artifact of one command.
#[derive(Debug, Clone, Default)]
pub struct Run {
    pub command: String,
    pub settings: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
}

impl Run {
    pub fn new(command: &str, settings: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            settings,
            ..Self::default()
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    /// Records the digest of an input file under `role`.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(role.to_string(), digest_file(path)?);
        Ok(())
    }

    fn manifest(&self, output: &[u8]) -> Manifest {
        let mut h = Sha256::new();
        for (role, digest) in &self.inputs {
            h.update(role.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update(b"\n");
        }
        Manifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            settings: self.settings.clone(),
            seeds: self.seeds.clone(),
            inputs: self.inputs.clone(),
            output: sha256_hex(output),
            lineage: hex::encode(h.finalize()),
        }
    }

    /// Writes `bytes` and its manifest atomically; returns the manifest.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<Manifest, CliError> {
        let manifest = self.manifest(bytes);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
        text.push('\n');
        write_atomic(path, bytes)?;
        write_atomic(&manifest_path(path), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    let fail = |e: std::io::Error| CliError::data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn read_manifest(artifact: &Path) -> Result<Manifest, CliError> {
    let path = manifest_path(artifact);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::data(format!("missing lineage manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("malformed manifest {}: {e}", path.display())))
}
