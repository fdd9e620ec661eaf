//! Output-directory layout, content hashing, run records and lock files.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model_io::{read_json, write_json};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of named parts, order-independent in the names.
pub fn digest_parts(parts: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// `path` expressed relative to directory `base`; both are made absolute
/// against the current directory first.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| {
        let p = if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir().unwrap_or_default().join(p) };
        let mut acc: Vec<std::ffi::OsString> = Vec::new();
        for c in p.components() {
            match c {
                Component::CurDir | Component::RootDir | Component::Prefix(_) => {}
                Component::ParentDir => {
                    acc.pop();
                }
                Component::Normal(s) => acc.push(s.to_os_string()),
            }
        }
        acc
    };
    let (p, b) = (abs(path), abs(base));
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c);
    }
    out
}

/// What a stage consumed and produced, enough to re-run it identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the workspace) to content hash.
    pub outputs: BTreeMap<String, String>,
    /// Hash over config and inputs; equal digests mean nothing changed.
    pub digest: String,
    pub summary: serde_json::Value,
}

/// The `--out` directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.path("corpus")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.path("corpus/manifest.jsonl")
    }

    /// Feature file of an utterance: `tag` is `mfcc`, `lf0` or `lpcnet`.
    pub fn feature(&self, utterance_id: &str, tag: &str) -> PathBuf {
        self.path(format!("features/{utterance_id}.{tag}"))
    }

    pub fn f0_stats(&self, speaker: &str) -> PathBuf {
        self.path(format!("stats/{speaker}.f0.json"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.path("models")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.path(format!("models/{name}.json"))
    }

    pub fn bilingual_manifest(&self, speaker: &str) -> PathBuf {
        self.path(format!("bilingual/{speaker}.jsonl"))
    }

    pub fn record_path(&self, stage: &str) -> PathBuf {
        self.path(format!("records/{stage}.json"))
    }

    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    /// True when the last record of `stage` has `digest` and every output it
    /// lists still has the recorded content.
    pub fn up_to_date(&self, stage: &str, digest: &str) -> bool {
        let Ok(rec) = read_json::<RunRecord>(&self.record_path(stage)) else {
            return false;
        };
        rec.digest == digest
            && rec.outputs.iter().all(|(p, h)| hash_file(&self.path(p)).is_ok_and(|got| &got == h))
    }

    pub fn write_record(&self, rec: &RunRecord) -> Result<()> {
        write_json(&self.record_path(&rec.stage), rec)
    }

    /// Builds and writes the record of a finished stage.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        stage: &str,
        seed: u64,
        config: &impl Serialize,
        inputs: BTreeMap<String, String>,
        digest: &str,
        outputs: &[PathBuf],
        summary: serde_json::Value,
    ) -> Result<RunRecord> {
        let mut out = BTreeMap::new();
        for p in outputs {
            out.insert(self.rel(p), hash_file(p)?);
        }
        let rec = RunRecord {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs,
            outputs: out,
            digest: digest.to_string(),
            summary,
        };
        self.write_record(&rec)?;
        Ok(rec)
    }
}

/// Digest of a stage run from its config and input hashes.
pub fn stage_digest(config: &impl Serialize, inputs: &BTreeMap<String, String>) -> Result<String> {
    let mut parts = inputs.clone();
    parts.insert("\0config".into(), serde_json::to_string(config)?);
    parts.insert("\0version".into(), env!("CARGO_PKG_VERSION").into());
    Ok(digest_parts(&parts))
}

/// Exclusive lock on a directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(format!(
                "{} is locked by another training run; remove {} if that run is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
