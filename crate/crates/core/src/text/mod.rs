//! Word-level tokenizer with character fallback and a small transformer
//! encoder classifier.

mod model;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{encoder_layer, LayerNodes, TextModel, TransformerConfig};
pub use train::{finetune_text, score_text, TextHyper};
pub use crate::fusion::io::import_external_scores;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Prefix marking a single-character fallback piece.
pub const CHAR_PREFIX: &str = "##";

const BASE_CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789'.,!?-";

/// Lowercases, splits on whitespace and splits ASCII punctuation off as
/// separate words (apostrophes stay inside words).
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.to_lowercase().split_whitespace() {
        let mut cur = String::new();
        for ch in raw.chars() {
            if ch.is_ascii_punctuation() && ch != '\'' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token strings in id order; the first four
    /// must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in [PAD, CLS, SEP, UNK].iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::input(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::input(format!("invalid vocabulary token at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids for one word: the word itself if known, else its characters.
    pub fn word_ids(&self, word: &str) -> Vec<usize> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        word.chars()
            .map(|c| self.id(&format!("{CHAR_PREFIX}{c}")).unwrap_or(UNK_ID))
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Words with frequency ≥ `min_freq` (most frequent first, ties by token),
/// followed by one fallback piece per character seen in the corpus or in
/// the basic Latin/digit set.
pub fn build_vocab(transcripts: &[&str], min_freq: usize) -> Result<Vocabulary> {
    if transcripts.iter().all(|t| t.trim().is_empty()) {
        return Err(Error::input("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut chars: BTreeSet<char> = BASE_CHARS.chars().collect();
    for t in transcripts {
        for w in split_words(t) {
            chars.extend(w.chars());
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(String, usize)> = freq.into_iter().filter(|(_, f)| *f >= min_freq.max(1)).collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = [PAD, CLS, SEP, UNK].iter().map(|s| s.to_string()).collect();
    let specials: BTreeSet<String> = tokens.iter().cloned().collect();
    tokens.extend(words.into_iter().map(|(w, _)| w).filter(|w| !specials.contains(w)));
    let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
    for c in chars {
        let piece = format!("{CHAR_PREFIX}{c}");
        if seen.insert(piece.clone()) {
            tokens.push(piece);
        }
    }
    Vocabulary::from_tokens(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// `[CLS] pieces… [SEP]` truncated to `max_len` (keeping `[SEP]` last) and
/// padded with `[PAD]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::config("max_len must be >= 2"));
    }
    let mut ids = vec![CLS_ID];
    for w in split_words(text) {
        ids.extend(vocab.word_ids(&w));
    }
    ids.truncate(max_len - 1);
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let attention_mask = (0..max_len).map(|i| u8::from(i < real)).collect();
    Ok(TokenSequence { ids, attention_mask })
}
