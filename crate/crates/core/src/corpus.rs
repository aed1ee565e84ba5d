//! Sense-annotated corpora, plain external corpora and sense statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{LemmaPos, Pos, SenseKey};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub source_id: String,
}

impl Sentence {
    /// Builds a sentence, rejecting empty token lists and tokens that are
    /// empty or contain whitespace.
    pub fn new(tokens: Vec<String>, source_id: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Invalid("empty sentence".into()));
        }
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Invalid(format!("bad token {bad:?}")));
        }
        Ok(Sentence {
            tokens,
            source_id: source_id.into(),
        })
    }

    pub fn from_text(text: &str, source_id: impl Into<String>) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_string).collect(), source_id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub instance_id: String,
    pub sentence: Arc<Sentence>,
    pub target_index: usize,
    pub lemma: String,
    pub pos: Pos,
    /// First key listed for the instance; used for training and statistics.
    pub gold: SenseKey,
    /// Remaining keys from multi-key gold lines, credited at scoring time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_gold: Vec<SenseKey>,
}

impl AnnotatedInstance {
    pub fn lemma_pos(&self) -> LemmaPos {
        (self.lemma.clone(), self.pos)
    }

    pub fn target_token(&self) -> &str {
        &self.sentence.tokens[self.target_index]
    }

    pub fn gold_keys(&self) -> impl Iterator<Item = &SenseKey> {
        std::iter::once(&self.gold).chain(self.extra_gold.iter())
    }
}

/// Annotated instances with lookup indices by lemma and by sense.
#[derive(Debug, Clone, Default)]
pub struct AnnotatedCorpus {
    instances: Vec<AnnotatedInstance>,
    sentences: BTreeMap<String, Arc<Sentence>>,
    by_lemma: BTreeMap<LemmaPos, Vec<usize>>,
    by_sense: BTreeMap<SenseKey, Vec<usize>>,
}

impl AnnotatedCorpus {
    pub fn new(instances: Vec<AnnotatedInstance>) -> Result<Self> {
        let mut corpus = AnnotatedCorpus::default();
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in instances {
            if !seen.insert(inst.instance_id.clone()) {
                return Err(Error::Invalid(format!(
                    "duplicate instance id {}",
                    inst.instance_id
                )));
            }
            corpus.push_unchecked(inst)?;
        }
        Ok(corpus)
    }

    fn push_unchecked(&mut self, mut inst: AnnotatedInstance) -> Result<()> {
        if inst.target_index >= inst.sentence.len() {
            return Err(Error::Invalid(format!(
                "instance {}: target index {} outside sentence of length {}",
                inst.instance_id,
                inst.target_index,
                inst.sentence.len()
            )));
        }
        inst.lemma = inst.lemma.to_lowercase();
        let sentence = self
            .sentences
            .entry(inst.sentence.source_id.clone())
            .or_insert_with(|| inst.sentence.clone());
        inst.sentence = sentence.clone();
        let idx = self.instances.len();
        self.by_lemma.entry(inst.lemma_pos()).or_default().push(idx);
        self.by_sense.entry(inst.gold.clone()).or_default().push(idx);
        self.instances.push(inst);
        Ok(())
    }

    pub fn instances(&self) -> &[AnnotatedInstance] {
        &self.instances
    }

    pub fn sentences(&self) -> &BTreeMap<String, Arc<Sentence>> {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.instances.iter().any(|i| i.instance_id == id)
    }

    /// Instances of a lemma, in corpus order.
    pub fn of_lemma(&self, lemma: &str, pos: Pos) -> impl Iterator<Item = &AnnotatedInstance> {
        self.by_lemma
            .get(&(lemma.to_lowercase(), pos))
            .into_iter()
            .flatten()
            .map(|&i| &self.instances[i])
    }

    /// Instances whose first gold key is `key`, in corpus order.
    pub fn of_sense(&self, key: &SenseKey) -> impl Iterator<Item = &AnnotatedInstance> {
        self.by_sense
            .get(key)
            .into_iter()
            .flatten()
            .map(|&i| &self.instances[i])
    }

    /// Gold key sets keyed by instance id.
    pub fn gold_map(&self) -> BTreeMap<String, Vec<SenseKey>> {
        self.instances
            .iter()
            .map(|i| (i.instance_id.clone(), i.gold_keys().cloned().collect()))
            .collect()
    }

    /// Unified-format XML plus its gold key file.
    pub fn load(xml_path: impl AsRef<Path>, gold_path: impl AsRef<Path>) -> Result<Self> {
        let xml_path = xml_path.as_ref();
        let gold_path = gold_path.as_ref();
        let xml = std::fs::read_to_string(xml_path).map_err(|e| Error::io(xml_path, e))?;
        let gold_text =
            std::fs::read_to_string(gold_path).map_err(|e| Error::io(gold_path, e))?;
        let gold = parse_gold(&gold_text, gold_path)?;
        parse_unified_xml(&xml, xml_path, &gold)
    }
}

/// Parse a gold key file: `<instance_id> <key> [<key>...]` per line.
pub fn parse_gold(text: &str, origin: &Path) -> Result<HashMap<String, Vec<SenseKey>>> {
    let mut gold = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let keys = fields
            .map(SenseKey::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if keys.is_empty() {
            return Err(Error::parse(origin, i + 1, format!("no sense key for {id}")));
        }
        gold.insert(id.to_string(), keys);
    }
    Ok(gold)
}

fn normalize_token(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join("_")
}

fn parse_unified_xml(
    xml: &str,
    origin: &Path,
    gold: &HashMap<String, Vec<SenseKey>>,
) -> Result<AnnotatedCorpus> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::parse(origin, pos.row as usize, format!("column {}: {e}", pos.col))
    })?;
    let located = |node: roxmltree::Node, msg: String| {
        let pos = doc.text_pos_at(node.range().start);
        Error::parse(origin, pos.row as usize, format!("column {}: {msg}", pos.col))
    };

    let mut corpus = AnnotatedCorpus::default();
    let mut seen_ids = HashSet::new();
    let mut n_sentences = 0usize;
    for sent_node in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        n_sentences += 1;
        let sent_id = sent_node
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("s{n_sentences:06}"));
        let mut tokens = Vec::new();
        let mut pending = Vec::new();
        for word in sent_node.children().filter(|n| n.is_element()) {
            let tag = word.tag_name().name();
            if tag != "wf" && tag != "instance" {
                continue;
            }
            let token = normalize_token(word.text().unwrap_or(""));
            if token.is_empty() {
                return Err(located(word, "empty word element".into()));
            }
            if tag == "instance" {
                let id = word
                    .attribute("id")
                    .ok_or_else(|| located(word, "instance without id".into()))?;
                let lemma = word
                    .attribute("lemma")
                    .ok_or_else(|| located(word, format!("instance {id} without lemma")))?;
                let pos: Pos = word
                    .attribute("pos")
                    .ok_or_else(|| located(word, format!("instance {id} without pos")))?
                    .parse()
                    .map_err(|e: Error| located(word, e.to_string()))?;
                pending.push((id.to_string(), lemma.to_string(), pos, tokens.len()));
            }
            tokens.push(token);
        }
        if tokens.is_empty() {
            continue;
        }
        let sentence = Arc::new(Sentence::new(tokens, sent_id)?);
        for (id, lemma, pos, target_index) in pending {
            let keys = gold.get(&id).ok_or_else(|| Error::MissingGold(id.clone()))?;
            if !seen_ids.insert(id.clone()) {
                return Err(Error::Invalid(format!("duplicate instance id {id}")));
            }
            corpus.push_unchecked(AnnotatedInstance {
                instance_id: id,
                sentence: sentence.clone(),
                target_index,
                lemma,
                pos,
                gold: keys[0].clone(),
                extra_gold: keys[1..].to_vec(),
            })?;
        }
    }
    Ok(corpus)
}

/// Per-lemma sense counts with the most frequent sense of each lemma.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<LemmaPos, BTreeMap<SenseKey, u64>>,
    mfs: BTreeMap<LemmaPos, SenseKey>,
    key_totals: BTreeMap<SenseKey, u64>,
}

impl FrequencyTable {
    /// Tally first gold keys. Ties for the most frequent sense go to the
    /// lexicographically smallest key.
    pub fn from_corpus(corpus: &AnnotatedCorpus) -> Self {
        let mut counts: BTreeMap<LemmaPos, BTreeMap<SenseKey, u64>> = BTreeMap::new();
        let mut key_totals: BTreeMap<SenseKey, u64> = BTreeMap::new();
        for inst in corpus.instances() {
            *counts
                .entry(inst.lemma_pos())
                .or_default()
                .entry(inst.gold.clone())
                .or_default() += 1;
            *key_totals.entry(inst.gold.clone()).or_default() += 1;
        }
        let mfs = counts
            .iter()
            .map(|(lp, senses)| {
                // iteration is in key order, so strict > keeps the smallest key on ties
                let mut best: Option<(&SenseKey, u64)> = None;
                for (k, &c) in senses {
                    if best.is_none_or(|(_, bc)| c > bc) {
                        best = Some((k, c));
                    }
                }
                (lp.clone(), best.expect("nonempty bucket").0.clone())
            })
            .collect();
        FrequencyTable {
            counts,
            mfs,
            key_totals,
        }
    }

    pub fn counts(&self) -> &BTreeMap<LemmaPos, BTreeMap<SenseKey, u64>> {
        &self.counts
    }

    pub fn count(&self, lemma: &str, pos: Pos, key: &SenseKey) -> u64 {
        self.counts
            .get(&(lemma.to_lowercase(), pos))
            .and_then(|m| m.get(key))
            .copied()
            .unwrap_or(0)
    }

    pub fn mfs(&self, lemma: &str, pos: Pos) -> Option<&SenseKey> {
        self.mfs.get(&(lemma.to_lowercase(), pos))
    }

    pub fn has_lemma(&self, lemma: &str, pos: Pos) -> bool {
        self.counts.contains_key(&(lemma.to_lowercase(), pos))
    }

    /// Whether the key was observed for any lemma in the training data.
    pub fn has_key(&self, key: &SenseKey) -> bool {
        self.key_totals.contains_key(key)
    }

    pub fn n_keys(&self) -> usize {
        self.key_totals.len()
    }

    pub fn n_lemmas(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// All attested senses that are not their lemma's MFS.
    pub fn lfs_senses(&self) -> BTreeSet<(String, Pos, SenseKey)> {
        let mut out = BTreeSet::new();
        for ((lemma, pos), senses) in &self.counts {
            let mfs = &self.mfs[&(lemma.clone(), *pos)];
            for (key, &c) in senses {
                if c > 0 && key != mfs {
                    out.insert((lemma.clone(), *pos, key.clone()));
                }
            }
        }
        out
    }

    /// Tab-separated dump, one row per (lemma, pos, key); byte-stable.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lemma\tpos\tsense_key\tcount\tis_mfs\n");
        for ((lemma, pos), senses) in &self.counts {
            let mfs = &self.mfs[&(lemma.clone(), *pos)];
            for (key, c) in senses {
                let _ = writeln!(out, "{lemma}\t{pos}\t{key}\t{c}\t{}", u8::from(key == mfs));
            }
        }
        out
    }
}

/// Uniformly pick an instance of `(lemma, pos)` labeled with that lemma's MFS.
pub fn mfs_host_instance<'a>(
    corpus: &'a AnnotatedCorpus,
    table: &FrequencyTable,
    lemma: &str,
    pos: Pos,
    rng: &mut Rng,
) -> Result<&'a AnnotatedInstance> {
    let no_host = || Error::NoHostAvailable {
        lemma: lemma.to_string(),
        pos: pos.to_string(),
    };
    let mfs = table.mfs(lemma, pos).ok_or_else(no_host)?;
    let lemma = lemma.to_lowercase();
    let hosts: Vec<&AnnotatedInstance> = corpus
        .of_sense(mfs)
        .filter(|i| i.lemma == lemma && i.pos == pos)
        .collect();
    if hosts.is_empty() {
        return Err(no_host());
    }
    Ok(hosts[rng.gen_range(0..hosts.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LengthBounds {
    fn default() -> Self {
        LengthBounds {
            min_len: 5,
            max_len: 100,
        }
    }
}

impl LengthBounds {
    pub fn contains(&self, len: usize) -> bool {
        (self.min_len..=self.max_len).contains(&len)
    }
}

/// Unannotated host sentences for external mixing.
#[derive(Debug, Clone, Default)]
pub struct ExternalCorpus {
    sentences: Vec<Sentence>,
}

impl ExternalCorpus {
    /// Keeps only sentences whose length is within `bounds`.
    pub fn new(sentences: impl IntoIterator<Item = Sentence>, bounds: LengthBounds) -> Self {
        ExternalCorpus {
            sentences: sentences
                .into_iter()
                .filter(|s| bounds.contains(s.len()))
                .collect(),
        }
    }

    /// One pre-tokenized sentence per line; ids are `ext:<line number>`.
    pub fn load(path: impl AsRef<Path>, bounds: LengthBounds) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sentences = text.lines().enumerate().filter_map(|(i, line)| {
            Sentence::from_text(line, format!("ext:{}", i + 1)).ok()
        });
        Ok(Self::new(sentences, bounds))
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<&Sentence> {
        if self.sentences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(&self.sentences[rng.gen_range(0..self.sentences.len())])
    }
}
