use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Failure, PipelineConfig};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Written next to every stage's outputs. Carries no timestamps, so a rerun
/// with the same configuration and inputs reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub version: String,
    pub config_sha256: String,
    pub rng_seed: u64,
    /// Input path (relative to the output root when inside it) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Writes `bytes` to a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Failure::Runtime(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Collects one stage's inputs and outputs; nothing touches the disk until
/// [`commit`](Self::commit).
pub struct StageRun {
    name: &'static str,
    root: PathBuf,
    config_sha256: String,
    rng_seed: u64,
    inputs: BTreeMap<String, String>,
    pending: Vec<(String, Vec<u8>)>,
}

impl StageRun {
    pub fn new(name: &'static str, cfg: &PipelineConfig) -> Self {
        Self {
            name,
            root: cfg.out.clone(),
            config_sha256: cfg.digest(),
            rng_seed: cfg.rng_seed,
            inputs: BTreeMap::new(),
            pending: Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(self.name)
    }

    fn label(&self, path: &Path) -> String {
        match path.strip_prefix(&self.root) {
            Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
            Err(_) => path.display().to_string(),
        }
    }

    /// Reads and digests an input. A missing file is a validation failure
    /// naming this stage.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Failure::Validation(format!(
                "stage {}: missing input {}",
                self.name,
                path.display()
            )),
            _ => Failure::Runtime(format!(
                "stage {}: reading {}: {e}",
                self.name,
                path.display()
            )),
        })?;
        let label = self.label(path);
        self.inputs.insert(label, sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Reads an optional input: `Ok(None)` when the file does not exist.
    pub fn read_optional(&mut self, path: &Path) -> Result<Option<Vec<u8>>, Failure> {
        if path.exists() {
            self.read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn put(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.pending.push((name.into(), bytes));
    }

    pub fn put_json<T: Serialize>(
        &mut self,
        name: impl Into<String>,
        value: &T,
    ) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, bytes);
        Ok(())
    }

    /// Writes every output atomically, then the manifest.
    pub fn commit(self) -> Result<RunManifest, Failure> {
        let dir = self.dir();
        std::fs::create_dir_all(&dir)?;
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &self.pending {
            write_atomic(&dir.join(name), bytes)?;
            outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = RunManifest {
            stage: self.name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            rng_seed: self.rng_seed,
            inputs: self.inputs,
            outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&dir.join(MANIFEST), &bytes)?;
        log::info!(
            "stage {}: {} files written to {}",
            manifest.stage,
            manifest.outputs.len(),
            dir.display()
        );
        Ok(manifest)
    }
}

/// School ids become file names; reject anything that could escape the
/// stage directory or collide with a sidecar.
pub fn check_file_stem(school_id: &str) -> Result<(), Failure> {
    let ok = !school_id.is_empty()
        && school_id != "."
        && school_id != ".."
        && school_id != "index"
        && school_id != "manifest"
        && !school_id
            .chars()
            .any(|c| matches!(c, '/' | '\\' | '\0') || c.is_control());
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "school id {school_id:?} cannot be used as a file name"
        )))
    }
}
