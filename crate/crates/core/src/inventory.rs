//! Sense inventory: sense keys, glosses and the lemma/POS to candidate map.
//!
//! The inventory is read from a flat tab-separated file with one entry per
//! line: `<sense_key>\t<lemma>\t<pos>\t<gloss>`. Blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque sense identifier such as `plant%1:03:00::`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseKey(String);

impl SenseKey {
    pub fn new(key: impl Into<String>) -> Result<Self> {
        let key = key.into();
        if key.is_empty() || key.chars().any(char::is_whitespace) {
            return Err(Error::Invalid(format!("bad sense key {key:?}")));
        }
        Ok(SenseKey(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SenseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SenseKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SenseKey::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NOUN" | "noun" | "n" => Ok(Pos::Noun),
            "VERB" | "verb" | "v" => Ok(Pos::Verb),
            "ADJ" | "adj" | "a" | "s" => Ok(Pos::Adj),
            "ADV" | "adv" | "r" => Ok(Pos::Adv),
            other => Err(Error::Invalid(format!("unknown part of speech {other:?}"))),
        }
    }
}

/// Lookup key for a lemma bucket. Lemmas are stored lowercased.
pub type LemmaPos = (String, Pos);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub key: SenseKey,
    pub lemma: String,
    pub pos: Pos,
    pub gloss: String,
}

#[derive(Debug, Clone, Default)]
pub struct SenseInventory {
    entries: BTreeMap<LemmaPos, Vec<SenseEntry>>,
    index: BTreeMap<SenseKey, LemmaPos>,
}

impl SenseInventory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from in-memory entries; the same checks as file loading apply.
    pub fn from_entries(entries: impl IntoIterator<Item = SenseEntry>) -> Result<Self> {
        let mut inv = SenseInventory::new();
        for entry in entries {
            inv.insert(entry)?;
        }
        Ok(inv)
    }

    fn insert(&mut self, mut entry: SenseEntry) -> Result<()> {
        if entry.gloss.trim().is_empty() {
            return Err(Error::Invalid(format!("empty gloss for {}", entry.key)));
        }
        entry.lemma = entry.lemma.to_lowercase();
        if self.index.contains_key(&entry.key) {
            return Err(Error::DuplicateKey(entry.key));
        }
        let bucket_key = (entry.lemma.clone(), entry.pos);
        self.index.insert(entry.key.clone(), bucket_key.clone());
        let bucket = self.entries.entry(bucket_key).or_default();
        let at = bucket.partition_point(|e| e.key < entry.key);
        bucket.insert(at, entry);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse inventory text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut inv = SenseInventory::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            if fields.len() != 4 {
                return Err(Error::parse(origin, lineno, "expected 4 tab-separated fields"));
            }
            let key = SenseKey::new(fields[0].trim())
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            let lemma = fields[1].trim();
            if lemma.is_empty() {
                return Err(Error::parse(origin, lineno, "empty lemma"));
            }
            let pos: Pos = fields[2]
                .trim()
                .parse()
                .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
            let gloss = fields[3].trim();
            if gloss.is_empty() {
                return Err(Error::parse(origin, lineno, "empty gloss"));
            }
            inv.insert(SenseEntry {
                key,
                lemma: lemma.to_string(),
                pos,
                gloss: gloss.to_string(),
            })?;
        }
        Ok(inv)
    }

    /// Candidate senses for a lemma, ordered by sense key. The lemma is
    /// lowercased before lookup.
    pub fn senses_of(&self, lemma: &str, pos: Pos) -> &[SenseEntry] {
        self.entries
            .get(&(lemma.to_lowercase(), pos))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn entry(&self, key: &SenseKey) -> Option<&SenseEntry> {
        let bucket = self.index.get(key)?;
        self.entries[bucket].iter().find(|e| &e.key == key)
    }

    pub fn gloss_of(&self, key: &SenseKey) -> Result<&str> {
        self.entry(key)
            .map(|e| e.gloss.as_str())
            .ok_or_else(|| Error::UnknownSense(key.clone()))
    }

    pub fn contains(&self, key: &SenseKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&LemmaPos, &[SenseEntry])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }
}
