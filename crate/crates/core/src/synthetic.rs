//! Synthetic imbalanced WSD benchmark.
//!
//! Every lemma has a few senses with a skewed frequency profile. Each sense
//! owns a handful of cue words that appear close to the target, and its
//! gloss mentions some of them, so a context-vs-gloss model can learn the
//! task while rare senses stay hard. Sentences are otherwise filler.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedCorpus, AnnotatedInstance, ExternalCorpus, LengthBounds, Sentence};
use crate::error::{Error, Result};
use crate::inventory::{Pos, SenseEntry, SenseInventory, SenseKey};
use crate::seed::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_lemmas: usize,
    /// Relative sense frequencies, most frequent first; one entry per sense.
    pub skew: Vec<f64>,
    pub n_train: usize,
    /// Held-out instances per sense (balanced).
    pub eval_per_sense: usize,
    pub n_external: usize,
    pub cues_per_sense: usize,
    /// Cue words copied into each gloss.
    pub gloss_cues: usize,
    pub filler_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a sentence also carries a cue of a sibling sense.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_lemmas: 5,
            skew: vec![0.90, 0.09, 0.01],
            n_train: 2000,
            eval_per_sense: 20,
            n_external: 400,
            cues_per_sense: 4,
            gloss_cues: 2,
            filler_vocab: 80,
            min_len: 8,
            max_len: 16,
            noise: 0.15,
            seed: 0,
        }
    }
}

pub struct SyntheticBenchmark {
    pub inventory: SenseInventory,
    pub train: AnnotatedCorpus,
    pub eval: AnnotatedCorpus,
    pub external: ExternalCorpus,
    /// Planned training count per sense key, in inventory order.
    pub train_counts: Vec<(SenseKey, usize)>,
}

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "te", "lu", "ma", "sen", "dor", "vi", "pa", "gel", "nu", "fa", "tor", "mi", "za", "quo", "len",
    "de", "ra", "sho", "bi", "kel", "mon",
];

const LEMMAS: &[&str] = &[
    "bank", "plant", "bass", "crane", "spring", "pitch", "seal", "match", "bark", "pupil", "mole", "date",
];

struct WordMaker {
    used: BTreeSet<String>,
}

impl WordMaker {
    fn make(&mut self, rng: &mut Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("syllables")).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// Split `total` over `weights` by largest remainder.
pub fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

struct LemmaSpec {
    lemma: String,
    keys: Vec<SenseKey>,
    cues: Vec<Vec<String>>,
}

fn sentence(
    spec: &LemmaSpec,
    sense: usize,
    fillers: &[String],
    cfg: &SyntheticConfig,
    rng: &mut Rng,
) -> (Vec<String>, usize) {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let mut tokens: Vec<String> = (0..len).map(|_| fillers.choose(rng).expect("fillers").clone()).collect();
    let target = rng.gen_range(0..len);
    tokens[target] = spec.lemma.clone();
    let near: Vec<usize> = (target.saturating_sub(3)..(target + 4).min(len)).filter(|&i| i != target).collect();
    let mut slots = near.clone();
    slots.shuffle(rng);
    let mut slots = slots.into_iter();
    for _ in 0..2 {
        if let Some(i) = slots.next() {
            tokens[i] = spec.cues[sense].choose(rng).expect("cues").clone();
        }
    }
    if spec.keys.len() > 1 && rng.gen_bool(cfg.noise) {
        let other = (sense + rng.gen_range(1..spec.keys.len())) % spec.keys.len();
        if let Some(i) = slots.next() {
            tokens[i] = spec.cues[other].choose(rng).expect("cues").clone();
        }
    }
    (tokens, target)
}

fn instance(id: String, tokens: Vec<String>, target: usize, spec: &LemmaSpec, sense: usize) -> Result<AnnotatedInstance> {
    Ok(AnnotatedInstance {
        sentence: Arc::new(Sentence::new(tokens, format!("{id}.s"))?),
        instance_id: id,
        target_index: target,
        lemma: spec.lemma.clone(),
        pos: Pos::Noun,
        gold: spec.keys[sense].clone(),
        extra_gold: Vec::new(),
    })
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    if cfg.n_lemmas == 0 || cfg.n_lemmas > LEMMAS.len() || cfg.skew.is_empty() {
        return Err(Error::Invalid(format!("need 1..={} lemmas and at least one sense", LEMMAS.len())));
    }
    if cfg.min_len < 8 || cfg.min_len > cfg.max_len || cfg.gloss_cues > cfg.cues_per_sense || cfg.cues_per_sense == 0 {
        return Err(Error::Invalid("inconsistent synthetic corpus shape".into()));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &["synthetic", "vocab"]));
    let mut maker = WordMaker { used: LEMMAS.iter().map(|s| s.to_string()).collect() };
    let fillers: Vec<String> = (0..cfg.filler_vocab).map(|_| maker.make(&mut rng)).collect();

    let mut specs = Vec::new();
    let mut entries = Vec::new();
    for lemma in &LEMMAS[..cfg.n_lemmas] {
        let mut keys = Vec::new();
        let mut cues = Vec::new();
        for s in 0..cfg.skew.len() {
            let key = SenseKey::new(format!("{lemma}%1:{:02}:00::", s + 1))?;
            let words: Vec<String> = (0..cfg.cues_per_sense).map(|_| maker.make(&mut rng)).collect();
            let gloss = format!("{} {lemma} sense", words[..cfg.gloss_cues].join(" "));
            entries.push(SenseEntry {
                key: key.clone(),
                lemma: lemma.to_string(),
                pos: Pos::Noun,
                gloss,
            });
            keys.push(key);
            cues.push(words);
        }
        specs.push(LemmaSpec {
            lemma: lemma.to_string(),
            keys,
            cues,
        });
    }
    let inventory = SenseInventory::from_entries(entries)?;

    let per_lemma = allocate(cfg.n_train, &vec![1.0; cfg.n_lemmas]);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut train_counts = Vec::new();
    for (l, spec) in specs.iter().enumerate() {
        let counts = allocate(per_lemma[l], &cfg.skew);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &["synthetic", "train", &spec.lemma]));
        let mut senses: Vec<usize> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
        senses.shuffle(&mut rng);
        for (n, &s) in senses.iter().enumerate() {
            let (tokens, target) = sentence(spec, s, &fillers, cfg, &mut rng);
            train.push(instance(format!("train.{}.{n:05}", spec.lemma), tokens, target, spec, s)?);
        }
        for (s, &c) in counts.iter().enumerate() {
            train_counts.push((spec.keys[s].clone(), c));
        }
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &["synthetic", "eval", &spec.lemma]));
        for s in 0..spec.keys.len() {
            for n in 0..cfg.eval_per_sense {
                let (tokens, target) = sentence(spec, s, &fillers, cfg, &mut rng);
                eval.push(instance(format!("eval.{}.{s}.{n:03}", spec.lemma), tokens, target, spec, s)?);
            }
        }
    }
    train_counts.sort();

    let mut rng = rng_from_seed(derive_seed(cfg.seed, &["synthetic", "external"]));
    let external = (0..cfg.n_external)
        .map(|i| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len + 4);
            let tokens = (0..len).map(|_| fillers.choose(&mut rng).expect("fillers").clone()).collect();
            Sentence::new(tokens, format!("ext:{}", i + 1))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticBenchmark {
        inventory,
        train: AnnotatedCorpus::new(train)?,
        eval: AnnotatedCorpus::new(eval)?,
        external: ExternalCorpus::new(external, LengthBounds::default()),
        train_counts,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Corpus as unified XML plus its gold key file, sentences in order of
/// first appearance.
pub fn to_xml_and_gold(corpus: &AnnotatedCorpus) -> (String, String) {
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<corpus lang=\"en\" source=\"synthetic\">\n<text id=\"d000\">\n");
    let mut gold = String::new();
    let mut groups: Vec<(&Sentence, Vec<&AnnotatedInstance>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for inst in corpus.instances() {
        let sid = inst.sentence.source_id.as_str();
        let g = *slot.entry(sid).or_insert_with(|| {
            groups.push((&inst.sentence, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(inst);
    }
    for (sentence, on_sentence) in groups {
        let _ = writeln!(xml, "<sentence id=\"{}\">", escape(&sentence.source_id));
        for (t, tok) in sentence.tokens.iter().enumerate() {
            match on_sentence.iter().find(|i| i.target_index == t) {
                Some(i) => {
                    let _ = writeln!(
                        xml,
                        "<instance id=\"{}\" lemma=\"{}\" pos=\"{}\">{}</instance>",
                        escape(&i.instance_id),
                        escape(&i.lemma),
                        i.pos.as_str(),
                        escape(tok)
                    );
                    let keys: Vec<&str> = i.gold_keys().map(SenseKey::as_str).collect();
                    let _ = writeln!(gold, "{} {}", i.instance_id, keys.join(" "));
                }
                None => {
                    let _ = writeln!(xml, "<wf lemma=\"{0}\" pos=\"X\">{0}</wf>", escape(tok));
                }
            }
        }
        xml.push_str("</sentence>\n");
    }
    xml.push_str("</text>\n</corpus>\n");
    (xml, gold)
}

pub fn inventory_tsv(inv: &SenseInventory) -> String {
    let mut out = String::new();
    for (_, entries) in inv.buckets() {
        for e in entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.key, e.lemma, e.pos.as_str(), e.gloss);
        }
    }
    out
}

impl SyntheticBenchmark {
    /// Write `inventory.tsv`, `train.xml`, `train.gold.txt`, `eval.xml`,
    /// `eval.gold.txt` and `external.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("inventory.tsv", &inventory_tsv(&self.inventory))?;
        let (xml, gold) = to_xml_and_gold(&self.train);
        write("train.xml", &xml)?;
        write("train.gold.txt", &gold)?;
        let (xml, gold) = to_xml_and_gold(&self.eval);
        write("eval.xml", &xml)?;
        write("eval.gold.txt", &gold)?;
        let ext: String = self.external.sentences().iter().map(|s| s.text() + "\n").collect();
        write("external.txt", &ext)
    }
}
