use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Language {
    En,
    Zh,
    /// Code-switched.
    Cs,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "EN",
            Language::Zh => "ZH",
            Language::Cs => "CS",
        })
    }
}

/// One utterance of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub audio_path: String,
    pub transcript: String,
    pub language: Language,
    pub speaker_id: String,
    pub synthetic: bool,
    /// LPCNet features to train on instead of features of `audio_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// JSON-lines corpus manifest: a header line, then one entry per line.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self { version: MANIFEST_VERSION, entries: Vec::new() }
    }
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { version: MANIFEST_VERSION, entries }
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&Header { format: "cstts-manifest".into(), version: self.version })
            .expect("header serializes");
        s.push('\n');
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("entry serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Format("manifest is empty".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::Format(format!("manifest header: {e}")))?;
        if header.format != "cstts-manifest" || header.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest {} v{}", header.format, header.version)));
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            let e: ManifestEntry =
                serde_json::from_str(line).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
            entries.push(e);
        }
        let m = Self { version: header.version, entries };
        m.check_unique()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::Validation(format!("duplicate utterance id {}", e.utterance_id)));
            }
        }
        Ok(())
    }

    /// Checks id uniqueness and that every referenced file exists.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.check_unique()?;
        for e in &self.entries {
            let p = resolve(base, &e.audio_path);
            if !e.synthetic && !p.exists() {
                return Err(Error::Validation(format!("utterance {}: audio {} not found", e.utterance_id, p.display())));
            }
            if let Some(f) = &e.features_path {
                let p = resolve(base, f);
                if !p.exists() {
                    return Err(Error::Validation(format!("utterance {}: features {} not found", e.utterance_id, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn by_speaker(&self, speaker: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.speaker_id == speaker).collect()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            utterance_id: id.into(),
            audio_path: format!("audio/{id}.wav"),
            transcript: "ni3 hao3, shi4 jie4".into(),
            language: Language::Zh,
            speaker_id: "b".into(),
            synthetic: false,
            features_path: None,
            notes: vec![],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut e2 = entry("u2");
        e2.synthetic = true;
        e2.features_path = Some("conv/u2.lpcnet".into());
        e2.notes = vec!["converted".into()];
        let m = CorpusManifest::new(vec![entry("u1"), e2]);
        let text = m.to_jsonl();
        let back = CorpusManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn validation() {
        let dup = CorpusManifest::new(vec![entry("u1"), entry("u1")]);
        assert!(CorpusManifest::parse(&dup.to_jsonl()).is_err());
        let dir = tempfile::tempdir().unwrap();
        let m = CorpusManifest::new(vec![entry("u1")]);
        let err = m.validate(dir.path()).unwrap_err().to_string();
        assert!(err.contains("u1"), "{err}");
        assert!(CorpusManifest::parse("").is_err());
    }
}
