//! Dataset manifests (JSONL, one segment per line).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Emotion;
use crate::error::{Error, Result};
use crate::nn::params::hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Audio path, relative to the manifest's directory unless absolute.
    pub wav: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Emotion>,
    pub session: u32,
    pub speaker: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    /// Unique ids, sessions ≥ 1, each speaker confined to one session.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut speaker_session: BTreeMap<&str, u32> = BTreeMap::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            if e.session < 1 {
                return Err(Error::input(format!("segment {}: session must be >= 1", e.id)));
            }
            match speaker_session.insert(&e.speaker, e.session) {
                Some(s) if s != e.session => {
                    return Err(Error::input(format!(
                        "speaker {} appears in sessions {s} and {}",
                        e.speaker, e.session
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Sorted distinct sessions.
    pub fn sessions(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.entries.iter().map(|e| e.session).collect();
        set.into_iter().collect()
    }

    /// Sorted distinct speakers.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.speaker.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Class index per labelled segment.
    pub fn labels(&self) -> BTreeMap<String, usize> {
        self.entries
            .iter()
            .filter_map(|e| e.label.map(|l| (e.id.clone(), l.index())))
            .collect()
    }

    pub fn subset(&self, ids: &[String]) -> DatasetManifest {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        DatasetManifest {
            entries: self.entries.iter().filter(|e| keep.contains(e.id.as_str())).cloned().collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|err| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: err.to_string(),
            })?;
            entries.push(e);
        }
        Self::new(entries)
    }

    /// SHA-256 of the JSONL rendering.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_jsonl())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, session: u32, speaker: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            wav: format!("{id}.wav"),
            transcript: Some("hello".into()),
            label: Some(Emotion::Sad),
            session,
            speaker: speaker.into(),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let m = DatasetManifest::new(vec![entry("a", 1, "s1"), entry("b", 2, "s2")]).unwrap();
        let back = DatasetManifest::from_jsonl(&m.to_jsonl(), "m").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            DatasetManifest::new(vec![entry("a", 1, "s"), entry("a", 1, "s")]),
            Err(Error::DuplicateId(_))
        ));
        assert!(DatasetManifest::new(vec![entry("a", 1, "s"), entry("b", 2, "s")]).is_err());
        assert!(DatasetManifest::new(vec![entry("a", 0, "s")]).is_err());
        let err = DatasetManifest::from_jsonl("{\"id\":\"a\"}\n", "m.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let bad_label = r#"{"id":"a","wav":"a.wav","label":"frustrated","session":1,"speaker":"s"}"#;
        assert!(DatasetManifest::from_jsonl(bad_label, "m").is_err());
    }
}
