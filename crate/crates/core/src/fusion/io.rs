//! ScoreSet JSONL files: one `{"id", "modality", "log_post"}` object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Modality, ScoreSet};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    modality: Modality,
    log_post: Vec<f64>,
}

pub fn to_jsonl(scores: &ScoreSet) -> String {
    let mut out = String::new();
    for (id, v) in scores.iter() {
        let line = Line {
            id: id.to_string(),
            modality: scores.modality,
            log_post: v.to_vec(),
        };
        out.push_str(&serde_json::to_string(&line).expect("score lines serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSONL scores, checking every vector has `n_classes` entries and
/// every line the same modality.
pub fn from_jsonl(text: &str, n_classes: usize, origin: &str) -> Result<ScoreSet> {
    let mut set: Option<ScoreSet> = None;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let line: Line = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let s = set.get_or_insert_with(|| ScoreSet::new(line.modality, n_classes));
        if line.modality != s.modality {
            return Err(parse_err(format!("modality {} differs from {}", line.modality, s.modality)));
        }
        s.insert(line.id, line.log_post).map_err(|e| parse_err(e.to_string()))?;
    }
    set.ok_or_else(|| Error::input(format!("{origin}: no scores")))
}

pub fn save(path: &Path, scores: &ScoreSet) -> Result<()> {
    Ok(std::fs::write(path, to_jsonl(scores))?)
}

pub fn load(path: &Path, n_classes: usize) -> Result<ScoreSet> {
    from_jsonl(&std::fs::read_to_string(path)?, n_classes, &path.display().to_string())
}

/// Loads text-modality scores produced by an external model.
pub fn import_external_scores(path: &Path, n_classes: usize) -> Result<ScoreSet> {
    let set = load(path, n_classes)?;
    if set.modality != Modality::Text {
        return Err(Error::input(format!(
            "{}: expected text scores, found {}",
            path.display(),
            set.modality
        )));
    }
    Ok(set)
}
