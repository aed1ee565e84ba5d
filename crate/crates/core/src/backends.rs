//! Model-dependent capabilities and their reference implementations.
//!
//! Four traits cover everything the augmentation pipeline needs from a model:
//! token saliency, mask infilling, acceptability judgement and target
//! encoding. [`ToyBiEncoder`] is a small gloss/context bi-encoder with
//! closed-form gradients; [`TemplateInfiller`] and [`RuleJudge`] are
//! deterministic stand-ins for a span-infilling language model and a
//! grammaticality classifier. [`ProcessBackend`] forwards all four
//! capabilities to an external process over line-delimited JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{AnnotatedCorpus, AnnotatedInstance, LengthBounds, Sentence};
use crate::error::{Error, Result, Stage};
use crate::inventory::{SenseEntry, SenseInventory};
use crate::mixer::MaskedText;
use crate::seed::{rng_from_seed, stable_hash, Rng};
use crate::spanselect::SaliencyVector;

/// Span-corruption sentinel for position `i`.
pub fn sentinel(i: usize) -> String {
    format!("<extra_id_{i}>")
}

pub fn is_sentinel(token: &str) -> bool {
    token
        .strip_prefix("<extra_id_")
        .and_then(|rest| rest.strip_suffix('>'))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

pub trait SaliencyBackend: Send + Sync {
    /// One nonnegative score per word token of the instance sentence.
    fn token_saliency(
        &self,
        instance: &AnnotatedInstance,
        candidates: &[SenseEntry],
    ) -> Result<SaliencyVector>;

    /// Whether concurrent calls are allowed.
    fn concurrent(&self) -> bool {
        true
    }
}

pub trait InfillEngine: Send + Sync {
    /// One (possibly empty) token sequence per sentinel, in sentinel order.
    fn infill(&self, masked: &MaskedText) -> Result<Vec<Vec<String>>>;

    fn concurrent(&self) -> bool {
        true
    }
}

pub trait AcceptabilityJudge: Send + Sync {
    fn accept(&self, sentence: &Sentence) -> Result<bool>;

    fn concurrent(&self) -> bool {
        true
    }
}

pub trait TargetEncoder: Send + Sync {
    /// Fixed-dimension representation of the token at `target_index`.
    fn encode(&self, sentence: &Sentence, target_index: usize) -> Result<Vec<f64>>;

    fn concurrent(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Toy bi-encoder

pub const UNK: &str = "<unk>";
const CHECKPOINT_MAGIC: &str = "SMSMIX-TOY";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyHyper {
    pub dim: usize,
    pub window: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Initial embeddings are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ToyHyper {
    fn default() -> Self {
        ToyHyper {
            dim: 16,
            window: 5,
            lr: 0.5,
            epochs: 10,
            seed: 0,
            init_scale: 0.5,
        }
    }
}

/// Result of one pass over a training set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub mean_loss: f64,
    pub trained: usize,
    /// Instances without candidates, or whose gold is not a candidate.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainReport {
    pub epochs: Vec<EpochReport>,
}

/// Context/gloss bi-encoder over a shared word-embedding table.
///
/// The context vector is the mean embedding of tokens within `window`
/// positions of the target (target included); a gloss vector is the mean
/// embedding of its tokens. A sense scores `dot(context, gloss) / temperature`
/// and training minimizes softmax cross-entropy over the candidate senses.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBiEncoder {
    vocab: BTreeMap<String, usize>,
    embeddings: Vec<f64>,
    dim: usize,
    window: usize,
    temperature: f64,
}

/// Lowercased tokens of a gloss with surrounding punctuation trimmed.
pub fn gloss_tokens(gloss: &str) -> Vec<String> {
    gloss
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

struct Forward {
    window_ids: Vec<usize>,
    gloss_ids: Vec<Vec<usize>>,
    context: Vec<f64>,
    glosses: Vec<Vec<f64>>,
    probs: Vec<f64>,
    loss: f64,
}

impl ToyBiEncoder {
    /// Random initialisation with a vocabulary drawn from the corpus tokens
    /// and the inventory glosses.
    pub fn init(corpus: &AnnotatedCorpus, inventory: &SenseInventory, hyper: &ToyHyper) -> Self {
        let mut words = BTreeSet::new();
        for sentence in corpus.sentences().values() {
            words.extend(sentence.tokens.iter().map(|t| t.to_lowercase()));
        }
        for (_, entries) in inventory.buckets() {
            for e in entries {
                words.extend(gloss_tokens(&e.gloss));
            }
        }
        Self::with_vocab(words, hyper)
    }

    pub fn with_vocab(words: impl IntoIterator<Item = String>, hyper: &ToyHyper) -> Self {
        assert!(hyper.dim >= 2, "embedding dimension must be at least 2");
        let mut vocab = BTreeMap::new();
        vocab.insert(UNK.to_string(), 0);
        for w in words {
            if w != UNK {
                let next = vocab.len();
                vocab.entry(w).or_insert(next);
            }
        }
        let mut rng = rng_from_seed(hyper.seed);
        let embeddings = (0..vocab.len() * hyper.dim)
            .map(|_| rng.gen_range(-hyper.init_scale..=hyper.init_scale))
            .collect();
        ToyBiEncoder {
            vocab,
            embeddings,
            dim: hyper.dim,
            window: hyper.window,
            temperature: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) {
        assert!(temperature > 0.0 && temperature.is_finite());
        self.temperature = temperature;
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.vocab.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    /// Token positions feeding the context vector.
    pub fn window_range(&self, len: usize, target_index: usize) -> std::ops::Range<usize> {
        target_index.saturating_sub(self.window)..(target_index + self.window + 1).min(len)
    }

    fn mean_of(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.row(id)) {
                *o += v;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    fn window_ids(&self, sentence: &Sentence, target_index: usize) -> Vec<usize> {
        self.window_range(sentence.len(), target_index)
            .map(|i| self.token_id(&sentence.tokens[i]))
            .collect()
    }

    /// Context vector of the target; this is also the target encoding.
    pub fn context(&self, sentence: &Sentence, target_index: usize) -> Vec<f64> {
        self.mean_of(&self.window_ids(sentence, target_index))
    }

    pub fn gloss_vector(&self, gloss: &str) -> Vec<f64> {
        let ids: Vec<usize> = gloss_tokens(gloss).iter().map(|t| self.token_id(t)).collect();
        self.mean_of(&ids)
    }

    /// Candidate logits for the target token.
    pub fn scores(&self, sentence: &Sentence, target_index: usize, candidates: &[SenseEntry]) -> Vec<f64> {
        let c = self.context(sentence, target_index);
        candidates
            .iter()
            .map(|e| dot(&c, &self.gloss_vector(&e.gloss)) / self.temperature)
            .collect()
    }

    /// Index of the best-scoring candidate; ties go to the earliest.
    pub fn predict(&self, sentence: &Sentence, target_index: usize, candidates: &[SenseEntry]) -> Option<usize> {
        argmax(&self.scores(sentence, target_index, candidates))
    }

    fn gold_index(instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Result<usize> {
        candidates
            .iter()
            .position(|e| e.key == instance.gold)
            .ok_or_else(|| Error::LabelNotCandidate(instance.gold.clone()))
    }

    fn forward(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry], gold: usize) -> Forward {
        let window_ids = self.window_ids(&instance.sentence, instance.target_index);
        let context = self.mean_of(&window_ids);
        let gloss_ids: Vec<Vec<usize>> = candidates
            .iter()
            .map(|e| gloss_tokens(&e.gloss).iter().map(|t| self.token_id(t)).collect())
            .collect();
        let glosses: Vec<Vec<f64>> = gloss_ids.iter().map(|ids| self.mean_of(ids)).collect();
        let logits: Vec<f64> = glosses.iter().map(|g| dot(&context, g) / self.temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let loss = -(logits[gold] - max - sum.ln());
        Forward {
            window_ids,
            gloss_ids,
            context,
            glosses,
            probs,
            loss,
        }
    }

    /// Cross-entropy loss of the instance's gold sense among `candidates`.
    pub fn loss(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Result<f64> {
        let gold = Self::gold_index(instance, candidates)?;
        Ok(self.forward(instance, candidates, gold).loss)
    }

    /// Loss and gradient with respect to every embedding row the loss
    /// touches.
    pub fn loss_and_gradient(
        &self,
        instance: &AnnotatedInstance,
        candidates: &[SenseEntry],
    ) -> Result<(f64, BTreeMap<usize, Vec<f64>>)> {
        let gold = Self::gold_index(instance, candidates)?;
        let fw = self.forward(instance, candidates, gold);
        let d = self.dim;
        let inv_t = 1.0 / self.temperature;

        // dL/dz_k = p_k - [k == gold]
        let dz: Vec<f64> = fw
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| p - f64::from(u8::from(k == gold)))
            .collect();
        let mut d_context = vec![0.0; d];
        for (g, dzk) in fw.glosses.iter().zip(&dz) {
            for (dc, gv) in d_context.iter_mut().zip(g) {
                *dc += dzk * gv * inv_t;
            }
        }

        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut add = |id: usize, scale: f64, v: &[f64]| {
            let row = grads.entry(id).or_insert_with(|| vec![0.0; d]);
            for (r, x) in row.iter_mut().zip(v) {
                *r += scale * x;
            }
        };
        let n_window = fw.window_ids.len() as f64;
        for &id in &fw.window_ids {
            add(id, 1.0 / n_window, &d_context);
        }
        for (ids, dzk) in fw.gloss_ids.iter().zip(&dz) {
            if ids.is_empty() {
                continue;
            }
            let scale = dzk * inv_t / ids.len() as f64;
            for &id in ids {
                add(id, scale, &fw.context);
            }
        }
        Ok((fw.loss, grads))
    }

    /// Per-token L2 norm of the loss gradient with respect to the token's
    /// embedding row. Tokens whose row does not affect the loss score 0.
    pub fn saliency(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Result<SaliencyVector> {
        let (_, grads) = self.loss_and_gradient(instance, candidates)?;
        let scores = instance
            .sentence
            .tokens
            .iter()
            .map(|t| {
                grads
                    .get(&self.token_id(t))
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .unwrap_or(0.0)
            })
            .collect();
        SaliencyVector::new(scores)
    }

    /// One gradient step on one instance; returns the pre-update loss.
    pub fn sgd_step(&mut self, instance: &AnnotatedInstance, candidates: &[SenseEntry], lr: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradient(instance, candidates)?;
        if lr != 0.0 {
            for (id, g) in grads {
                for (w, gv) in self.row_mut(id).iter_mut().zip(&g) {
                    *w -= lr * gv;
                }
            }
        }
        Ok(loss)
    }

    /// One shuffled pass of per-instance gradient descent.
    pub fn train_epoch(
        &mut self,
        instances: &[&AnnotatedInstance],
        inventory: &SenseInventory,
        lr: f64,
        rng: &mut Rng,
    ) -> EpochReport {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(rng);
        let mut report = EpochReport::default();
        let mut total = 0.0;
        for i in order {
            let inst = instances[i];
            let candidates = inventory.senses_of(&inst.lemma, inst.pos);
            match self.sgd_step(inst, candidates, lr) {
                Ok(loss) => {
                    total += loss;
                    report.trained += 1;
                }
                Err(_) => report.skipped += 1,
            }
        }
        report.mean_loss = if report.trained > 0 {
            total / report.trained as f64
        } else {
            0.0
        };
        report
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "window {}", self.window);
        let _ = writeln!(out, "temperature {}", self.temperature);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        let mut by_id: Vec<(&String, usize)> = self.vocab.iter().map(|(w, &i)| (w, i)).collect();
        by_id.sort_by_key(|&(_, i)| i);
        for (word, id) in by_id {
            out.push_str(word);
            for v in self.row(id) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }

    pub fn from_checkpoint_str(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(origin, 0, format!("truncated checkpoint, expected {what}")))
        };
        let (_, magic) = next("header")?;
        if magic != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(Error::parse(origin, 1, format!("not a toy checkpoint: {magic:?}")));
        }
        let mut field = |name: &str| -> Result<String> {
            let (i, line) = next(name)?;
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::parse(origin, i + 1, format!("expected `{name} <value>`")))
        };
        let bad = |i: usize, msg: &str| Error::parse(origin, i, msg.to_string());
        let dim: usize = field("dim")?.parse().map_err(|_| bad(2, "bad dim"))?;
        let window: usize = field("window")?.parse().map_err(|_| bad(3, "bad window"))?;
        let temperature: f64 = field("temperature")?.parse().map_err(|_| bad(4, "bad temperature"))?;
        let n: usize = field("vocab")?.parse().map_err(|_| bad(5, "bad vocab size"))?;
        if dim < 2 {
            return Err(bad(2, "dim must be at least 2"));
        }
        let mut vocab = BTreeMap::new();
        let mut embeddings = Vec::with_capacity(n * dim);
        for id in 0..n {
            let (i, line) = next("vocab row")?;
            let mut parts = line.split('\t');
            let word = parts.next().unwrap_or_default().to_string();
            let row: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(i + 1, "bad embedding value"))?;
            if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
                return Err(bad(i + 1, "embedding row has wrong width or non-finite values"));
            }
            if vocab.insert(word, id).is_some() {
                return Err(bad(i + 1, "duplicate vocabulary entry"));
            }
            embeddings.extend(row);
        }
        if vocab.get(UNK) != Some(&0) {
            return Err(bad(6, "first vocabulary row must be <unk>"));
        }
        Ok(ToyBiEncoder {
            vocab,
            embeddings,
            dim,
            window,
            temperature,
        })
    }
}

impl SaliencyBackend for ToyBiEncoder {
    fn token_saliency(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Result<SaliencyVector> {
        self.saliency(instance, candidates)
    }
}

impl TargetEncoder for ToyBiEncoder {
    fn encode(&self, sentence: &Sentence, target_index: usize) -> Result<Vec<f64>> {
        if target_index >= sentence.len() {
            return Err(Error::Backend {
                stage: Stage::Encode,
                msg: format!("target index {target_index} outside sentence"),
            });
        }
        Ok(self.context(sentence, target_index))
    }
}

/// Train a fresh toy model on `corpus`.
pub fn toy_train(
    corpus: &AnnotatedCorpus,
    inventory: &SenseInventory,
    hyper: &ToyHyper,
) -> Result<(ToyBiEncoder, ToyTrainReport)> {
    let mut model = ToyBiEncoder::init(corpus, inventory, hyper);
    let instances: Vec<&AnnotatedInstance> = corpus.instances().iter().collect();
    let mut rng = rng_from_seed(crate::seed::derive_seed(hyper.seed, &["toy-train"]));
    let mut report = ToyTrainReport::default();
    for epoch in 0..hyper.epochs {
        let ep = model.train_epoch(&instances, inventory, hyper.lr, &mut rng);
        if !ep.mean_loss.is_finite() {
            return Err(Error::Divergence { stage: 1, epoch });
        }
        report.epochs.push(ep);
    }
    if let Some(last) = report.epochs.last() {
        if last.skipped > 0 {
            log::warn!("{} instances without usable candidates were skipped", last.skipped);
        }
    }
    Ok((model, report))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// Reference infiller and judge

const CONNECTIVES: &[&[&str]] = &[
    &["and"],
    &["while"],
    &["as"],
    &["where"],
    &["so", "that"],
    &["because"],
    &["and", "then"],
    &["with"],
    &["which"],
    &["when"],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfillMode {
    /// Every sentinel is replaced by nothing.
    Identity,
    /// Every sentinel is replaced by a connective chosen from its neighbours.
    Template,
}

#[derive(Debug, Clone, Copy)]
pub struct TemplateInfiller {
    pub mode: InfillMode,
}

impl TemplateInfiller {
    pub fn identity() -> Self {
        TemplateInfiller {
            mode: InfillMode::Identity,
        }
    }

    pub fn template() -> Self {
        TemplateInfiller {
            mode: InfillMode::Template,
        }
    }
}

impl InfillEngine for TemplateInfiller {
    fn infill(&self, masked: &MaskedText) -> Result<Vec<Vec<String>>> {
        let tokens = &masked.tokens;
        Ok(masked
            .sentinel_positions
            .iter()
            .enumerate()
            .map(|(n, &p)| match self.mode {
                InfillMode::Identity => Vec::new(),
                InfillMode::Template => {
                    let left = p.checked_sub(1).map_or("", |i| tokens[i].as_str());
                    let right = tokens.get(p + 1).map_or("", String::as_str);
                    let h = stable_hash(&[&left.to_lowercase(), &right.to_lowercase(), &n.to_string()]);
                    CONNECTIVES[(h % CONNECTIVES.len() as u64) as usize]
                        .iter()
                        .map(|s| s.to_string())
                        .collect()
                }
            })
            .collect())
    }
}

/// Rejects sentences with residual sentinels, out-of-range length, or a
/// run of more than `max_run` identical tokens.
#[derive(Debug, Clone, Copy)]
pub struct RuleJudge {
    pub bounds: LengthBounds,
    pub max_run: usize,
}

impl Default for RuleJudge {
    fn default() -> Self {
        RuleJudge {
            bounds: LengthBounds::default(),
            max_run: 3,
        }
    }
}

impl RuleJudge {
    pub fn judge(&self, sentence: &Sentence) -> bool {
        let tokens = &sentence.tokens;
        if tokens.iter().any(|t| is_sentinel(t)) || !self.bounds.contains(tokens.len()) {
            return false;
        }
        let mut run = 1;
        for pair in tokens.windows(2) {
            if pair[0].eq_ignore_ascii_case(&pair[1]) {
                run += 1;
                if run > self.max_run {
                    return false;
                }
            } else {
                run = 1;
            }
        }
        true
    }
}

impl AcceptabilityJudge for RuleJudge {
    fn accept(&self, sentence: &Sentence) -> Result<bool> {
        Ok(self.judge(sentence))
    }
}

/// Judge with a fixed verdict.
#[derive(Debug, Clone, Copy)]
pub struct ConstJudge(pub bool);

impl AcceptabilityJudge for ConstJudge {
    fn accept(&self, _: &Sentence) -> Result<bool> {
        Ok(self.0)
    }
}

// ---------------------------------------------------------------------------
// External process adapter

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Backend served by a child process speaking line-delimited JSON.
///
/// Each request is one JSON object on one line with an `op` field
/// (`saliency`, `infill`, `accept` or `encode`); the process answers with
/// one JSON object per line carrying `scores`, `infills`, `accept` or
/// `vector` respectively, or `error` with a message. Calls are serialized.
pub struct ProcessBackend {
    pipe: Mutex<Pipe>,
    command: String,
}

impl ProcessBackend {
    /// Spawn `command` (split on whitespace; first word is the program).
    pub fn spawn(command: &str) -> Result<Self> {
        let mut words = command.split_whitespace();
        let program = words.next().ok_or_else(|| Error::Backend {
            stage: Stage::Saliency,
            msg: "empty adapter command".into(),
        })?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend {
                stage: Stage::Saliency,
                msg: format!("cannot start adapter `{command}`: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessBackend {
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
            command: command.to_string(),
        })
    }

    fn call(&self, stage: Stage, request: serde_json::Value) -> Result<serde_json::Value> {
        let fail = |msg: String| Error::Backend { stage, msg };
        let mut pipe = self.pipe.lock().map_err(|_| fail("adapter lock poisoned".into()))?;
        let mut line = request.to_string();
        line.push('\n');
        pipe.stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| fail(format!("write to `{}` failed: {e}", self.command)))?;
        let mut reply = String::new();
        let n = pipe
            .stdout
            .read_line(&mut reply)
            .map_err(|e| fail(format!("read from `{}` failed: {e}", self.command)))?;
        if n == 0 {
            return Err(fail(format!("adapter `{}` closed its output", self.command)));
        }
        let value: serde_json::Value =
            serde_json::from_str(&reply).map_err(|e| fail(format!("bad reply {reply:?}: {e}")))?;
        if let Some(msg) = value.get("error") {
            return Err(fail(msg.to_string()));
        }
        Ok(value)
    }

    fn field<T: serde::de::DeserializeOwned>(stage: Stage, value: &serde_json::Value, name: &str) -> Result<T> {
        value
            .get(name)
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| Error::Backend {
                stage,
                msg: format!("reply lacks a valid `{name}` field"),
            })
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

impl SaliencyBackend for ProcessBackend {
    fn token_saliency(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Result<SaliencyVector> {
        let reply = self.call(
            Stage::Saliency,
            json!({
                "op": "saliency",
                "tokens": instance.sentence.tokens,
                "target_index": instance.target_index,
                "lemma": instance.lemma,
                "pos": instance.pos,
                "gold": instance.gold,
                "candidates": candidates.iter().map(|c| json!({"key": c.key, "gloss": c.gloss})).collect::<Vec<_>>(),
            }),
        )?;
        let scores: Vec<f64> = Self::field(Stage::Saliency, &reply, "scores")?;
        if scores.len() != instance.sentence.len() {
            return Err(Error::BackendContractViolation(format!(
                "{} saliency scores for {} tokens",
                scores.len(),
                instance.sentence.len()
            )));
        }
        SaliencyVector::new(scores)
    }

    fn concurrent(&self) -> bool {
        false
    }
}

impl InfillEngine for ProcessBackend {
    fn infill(&self, masked: &MaskedText) -> Result<Vec<Vec<String>>> {
        let reply = self.call(Stage::Infill, json!({"op": "infill", "tokens": masked.tokens}))?;
        Self::field(Stage::Infill, &reply, "infills")
    }

    fn concurrent(&self) -> bool {
        false
    }
}

impl AcceptabilityJudge for ProcessBackend {
    fn accept(&self, sentence: &Sentence) -> Result<bool> {
        let reply = self.call(Stage::Judge, json!({"op": "accept", "tokens": sentence.tokens}))?;
        Self::field(Stage::Judge, &reply, "accept")
    }

    fn concurrent(&self) -> bool {
        false
    }
}

impl TargetEncoder for ProcessBackend {
    fn encode(&self, sentence: &Sentence, target_index: usize) -> Result<Vec<f64>> {
        let reply = self.call(
            Stage::Encode,
            json!({"op": "encode", "tokens": sentence.tokens, "target_index": target_index}),
        )?;
        Self::field(Stage::Encode, &reply, "vector")
    }

    fn concurrent(&self) -> bool {
        false
    }
}
