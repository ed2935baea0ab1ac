//! Run manifests and the serialized output writer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub version: &'static str,
    pub parallel: bool,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stages: Vec<StageTiming>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
}

/// Accumulates everything a command reads, produces and times. Output files
/// are buffered and written in one place, in insertion order.
pub struct Run {
    dir: PathBuf,
    pub manifest: RunManifest,
    pending: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &str, dir: &Path, jobs: Option<usize>) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                arguments: std::env::args().skip(1).collect(),
                version: env!("CARGO_PKG_VERSION"),
                parallel: edgeless::par::is_parallel(),
                jobs,
                seed: None,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                stages: Vec::new(),
                status: "ok".into(),
                error: None,
            },
            pending: Vec::new(),
        }
    }

    /// Read an input file and record its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        self.manifest
            .stages
            .push(StageTiming { name: name.to_string(), wall_clock_seconds: started.elapsed().as_secs_f64() });
        out
    }

    pub fn emit(&mut self, name: &str, bytes: Vec<u8>) {
        self.pending.push((name.to_string(), bytes));
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(Failure::runtime)?;
        bytes.push(b'\n');
        self.emit(name, bytes);
        Ok(())
    }

    /// Write the buffered outputs followed by `manifest.json`.
    pub fn finish(mut self) -> Result<(), Failure> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", self.dir.display())))?;
        let started = Instant::now();
        for (name, bytes) in std::mem::take(&mut self.pending) {
            let path = self.dir.join(&name);
            fs::write(&path, &bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
            self.manifest.outputs.push(FileDigest { path: name, sha256: sha256_hex(&bytes) });
        }
        self.manifest
            .stages
            .push(StageTiming { name: "write".into(), wall_clock_seconds: started.elapsed().as_secs_f64() });
        self.write_manifest()
    }

    /// Record a failure; no result files are written.
    pub fn fail(mut self, failure: &Failure) -> Result<(), Failure> {
        self.manifest.status = "error".into();
        self.manifest.error = Some(failure.to_json());
        fs::create_dir_all(&self.dir)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", self.dir.display())))?;
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).map_err(Failure::runtime)?;
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
    }
}
