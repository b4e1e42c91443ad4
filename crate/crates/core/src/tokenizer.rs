//! Sensor activations as words: tokens, a frequency-ranked vocabulary and padded index encoding.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarError, Result};
use crate::event_log::OTHER_LABEL;

pub const PAD_INDEX: u32 = 0;

/// One sensor activation rendered as a word, e.g. `M001ON` or `T00424.5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token(s.to_string())
    }
}

pub fn tokenize_event(sensor_id: &str, value: &str) -> Result<Token> {
    if sensor_id.is_empty() || value.is_empty() {
        return Err(HarError::invalid("cannot tokenize an event with an empty field"));
    }
    Ok(Token(format!("{sensor_id}{value}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: Token,
    pub index: u32,
    pub frequency: u64,
}

/// Index 0 is padding, indexes `1..=n` are tokens by descending corpus frequency and
/// `n + 1` is the out-of-vocabulary slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    frequencies: Vec<u64>,
    lookup: HashMap<Token, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pad_index: u32,
    unk_index: u32,
    entries: Vec<VocabEntry>,
}

impl Vocabulary {
    /// Ranks tokens by frequency; ties go to the token seen first.
    pub fn build<'a, I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[Token]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&Token, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        let corpus: Vec<&S> = corpus.into_iter().collect();
        for seq in &corpus {
            for t in seq.as_ref() {
                let entry = counts.entry(t).or_insert((0, order));
                if entry.0 == 0 {
                    order += 1;
                }
                entry.0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(HarError::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&Token, u64, usize)> =
            counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Ok(Self::from_ranked(
            ranked.into_iter().map(|(t, c, _)| (t.clone(), c)).collect(),
        ))
    }

    fn from_ranked(ranked: Vec<(Token, u64)>) -> Self {
        let lookup = ranked
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i as u32 + 1))
            .collect();
        let (tokens, frequencies) = ranked.into_iter().unzip();
        Vocabulary { tokens, frequencies, lookup }
    }

    /// Number of real tokens.
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Rows needed by an embedding over this vocabulary (tokens plus PAD and UNK).
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn unk_index(&self) -> u32 {
        self.tokens.len() as u32 + 1
    }

    pub fn index_of(&self, token: &Token) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &Token) -> u32 {
        self.index_of(token).unwrap_or_else(|| self.unk_index())
    }

    pub fn token(&self, index: u32) -> Option<&Token> {
        if index == PAD_INDEX {
            return None;
        }
        self.tokens.get(index as usize - 1)
    }

    pub fn frequency(&self, index: u32) -> u64 {
        if index == PAD_INDEX {
            return 0;
        }
        self.frequencies.get(index as usize - 1).copied().unwrap_or(0)
    }

    /// Unigram counts indexed by vocabulary index (PAD and UNK get zero).
    pub fn counts_by_index(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.size()];
        c[1..=self.tokens.len()].copy_from_slice(&self.frequencies);
        c
    }

    pub fn entries(&self) -> impl Iterator<Item = VocabEntry> + '_ {
        self.tokens.iter().zip(&self.frequencies).enumerate().map(|(i, (t, f))| VocabEntry {
            token: t.clone(),
            index: i as u32 + 1,
            frequency: *f,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            pad_index: PAD_INDEX,
            unk_index: self.unk_index(),
            entries: self.entries().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: VocabFile = serde_json::from_str(text)?;
        file.entries.sort_by_key(|e| e.index);
        for (i, e) in file.entries.iter().enumerate() {
            if e.index as usize != i + 1 {
                return Err(HarError::Vocabulary(format!(
                    "indexes must be contiguous from 1, found {} at position {i}",
                    e.index
                )));
            }
        }
        if file.pad_index != PAD_INDEX || file.unk_index as usize != file.entries.len() + 1 {
            return Err(HarError::Vocabulary("unexpected reserved indexes".into()));
        }
        Ok(Self::from_ranked(
            file.entries.into_iter().map(|e| (e.token, e.frequency)).collect(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Stable content hash, used to pair checkpoints with the vocabulary they were trained on.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for e in self.entries() {
            h.update(e.token.as_str().as_bytes());
            h.update([0u8]);
            h.update(e.index.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, tokens: &[Token], max_len: usize) -> Result<EncodedSequence> {
        encode(tokens, self, max_len)
    }

    /// Maps an encoded sequence back to tokens over its real positions.
    pub fn decode(&self, seq: &EncodedSequence) -> Vec<Option<Token>> {
        seq.indexes
            .iter()
            .zip(&seq.mask)
            .filter(|(_, m)| **m)
            .map(|(i, _)| self.token(*i).cloned())
            .collect()
    }
}

/// Fixed-length, left-padded index encoding of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub indexes: Vec<u32>,
    pub mask: Vec<bool>,
    pub label_id: usize,
    pub original_length: usize,
}

impl EncodedSequence {
    /// The real (unpadded) indexes in order.
    pub fn real_indexes(&self) -> Vec<u32> {
        self.indexes
            .iter()
            .zip(&self.mask)
            .filter_map(|(i, m)| m.then_some(*i))
            .collect()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Keeps the last `max_len` tokens and left-pads with [`PAD_INDEX`].
pub fn encode(tokens: &[Token], vocab: &Vocabulary, max_len: usize) -> Result<EncodedSequence> {
    if max_len == 0 {
        return Err(HarError::invalid("max_len must be at least 1"));
    }
    let kept = &tokens[tokens.len().saturating_sub(max_len)..];
    let pad = max_len - kept.len();
    let mut indexes = vec![PAD_INDEX; max_len];
    let mut mask = vec![false; max_len];
    for (k, t) in kept.iter().enumerate() {
        indexes[pad + k] = vocab.index_or_unk(t);
        mask[pad + k] = true;
    }
    Ok(EncodedSequence { indexes, mask, label_id: 0, original_length: kept.len() })
}

/// Raw activity name to activity group. Unmapped names fall into [`OTHER_LABEL`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RelabelMap {
    map: HashMap<String, String>,
}

fn normalize_label(raw: &str) -> String {
    raw.trim().replace('_', " ").to_lowercase()
}

impl RelabelMap {
    pub fn from_groups(groups: &[(&str, &[&str])]) -> Self {
        let mut map = HashMap::new();
        for (group, raws) in groups {
            for raw in *raws {
                map.insert(normalize_label(raw), group.to_string());
            }
        }
        RelabelMap { map }
    }

    pub fn insert(&mut self, raw: &str, group: &str) {
        self.map.insert(normalize_label(raw), group.to_string());
    }

    pub fn milan() -> Self {
        Self::from_groups(&[
            ("Bathing", &["Master Bathroom", "Guest Bathroom"]),
            ("Bed to toilet", &["Bed to toilet"]),
            ("Cook", &["Kitchen Activity"]),
            ("Eat", &["Dining Room Activity", "Dining Rm Activity"]),
            ("Leave home", &["Leave home"]),
            ("Relax", &["Read", "Watch Tv"]),
            ("Sleep", &["Sleep"]),
            ("Take medicine", &["Eve Meds", "Morning Meds"]),
            ("Work", &["Desk Activity", "Chores"]),
            ("Other", &["Meditate", "Master Bedroom Activity", "Other"]),
        ])
    }

    pub fn cairo() -> Self {
        Self::from_groups(&[
            ("Bed to toilet", &["Bed to toilet"]),
            ("Cook", &["Lunch", "Dinner", "Breakfast"]),
            ("Leave home", &["Leave Home"]),
            ("Sleep", &["R1 sleep", "R2 sleep"]),
            ("Take medicine", &["R2 take medecine", "R2 take medicine"]),
            ("Work", &["Laundry", "R1 work in office"]),
            ("Other", &["Night wandering", "R2 wake", "R1 wake", "Other"]),
        ])
    }

    /// Built-in maps by dataset name; `None` for datasets used with their raw labels.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "milan" => Some(Self::milan()),
            "cairo" => Some(Self::cairo()),
            _ => None,
        }
    }

    pub fn relabel(&self, raw: &str) -> String {
        self.map
            .get(&normalize_label(raw))
            .cloned()
            .unwrap_or_else(|| OTHER_LABEL.to_string())
    }

    /// Reads either a JSON object `{"raw": "group", ...}` or CSV lines `raw,group`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            let flat: HashMap<String, String> = serde_json::from_str(&text)?;
            let mut m = RelabelMap::default();
            for (raw, group) in flat {
                m.insert(&raw, &group);
            }
            return Ok(m);
        }
        let mut m = RelabelMap::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, group) = line.split_once(',').ok_or_else(|| HarError::Parse {
                line: n + 1,
                message: "expected `raw,group`".into(),
            })?;
            m.insert(raw, group.trim());
        }
        Ok(m)
    }
}

pub fn relabel(raw: &str, map: &RelabelMap) -> String {
    map.relabel(raw)
}
