//! LFS target selection, budgeted generation and training-set assembly.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedCorpus, AnnotatedInstance, FrequencyTable, Sentence};
use crate::error::{Error, Result};
use crate::inventory::{Pos, SenseKey};
use crate::mixer::{mix, AugmentedExample, MixDeps, Mode, Provenance};
use crate::seed::{derive_seed, rng_from_seed, Rng};

pub const AUGMENTED_SCHEMA: &str = "smsmix.augmented";
pub const AUGMENTED_SCHEMA_VERSION: u32 = 1;
pub const SYNTHETIC_ID_PREFIX: &str = "smsmix:";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Target {
    pub lemma: String,
    pub pos: Pos,
    pub key: SenseKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    /// Uniform sample without replacement.
    #[default]
    Random,
    /// Lowest training count first, ties by key.
    Rarest,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SelectionPolicy::Random),
            "rarest" => Ok(SelectionPolicy::Rarest),
            other => Err(Error::Invalid(format!("unknown selection policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub targets: Vec<Target>,
    pub per_sense: usize,
    pub mode: Mode,
    pub lfs_fraction: f64,
    pub selection_policy: SelectionPolicy,
    pub retry_limit: usize,
    pub seed: u64,
}

impl AugmentationPlan {
    /// Plan with the default budget: 3 examples for half of the LFS senses,
    /// up to 5 retries per rejected generation.
    pub fn new(targets: Vec<Target>, mode: Mode, seed: u64) -> Self {
        AugmentationPlan {
            targets,
            per_sense: 3,
            mode,
            lfs_fraction: 0.5,
            selection_policy: SelectionPolicy::Random,
            retry_limit: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped_senses: usize,
}

impl std::ops::AddAssign for GenerationStats {
    fn add_assign(&mut self, o: Self) {
        self.attempted += o.attempted;
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.skipped_senses += o.skipped_senses;
    }
}

/// Generated examples in generation order, rejected ones included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    pub records: Vec<AugmentedExample>,
    pub plan: AugmentationPlan,
    pub stats: GenerationStats,
}

impl AugmentedDataset {
    pub fn accepted(&self) -> impl Iterator<Item = &AugmentedExample> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn rejected(&self) -> impl Iterator<Item = &AugmentedExample> {
        self.records.iter().filter(|r| !r.accepted)
    }
}

/// Pick `ceil(fraction * |LFS|)` LFS senses.
pub fn select_lfs_targets(
    table: &FrequencyTable,
    lfs_fraction: f64,
    policy: SelectionPolicy,
    rng: &mut Rng,
) -> Result<Vec<Target>> {
    if !(lfs_fraction > 0.0 && lfs_fraction <= 1.0) {
        return Err(Error::Invalid(format!("lfs_fraction {lfs_fraction} outside (0, 1]")));
    }
    let pool: Vec<Target> = table
        .lfs_senses()
        .into_iter()
        .map(|(lemma, pos, key)| Target { lemma, pos, key })
        .collect();
    let k = ((pool.len() as f64) * lfs_fraction).ceil() as usize;
    let k = k.min(pool.len());
    let mut chosen = match policy {
        SelectionPolicy::Random => pool.into_iter().choose_multiple(rng, k),
        SelectionPolicy::Rarest => {
            let mut ranked = pool;
            ranked.sort_by_key(|t| (table.count(&t.lemma, t.pos, &t.key), t.key.clone()));
            ranked.truncate(k);
            ranked
        }
    };
    chosen.sort();
    Ok(chosen)
}

fn sources_for<'a>(corpus: &'a AnnotatedCorpus, target: &Target) -> Vec<&'a AnnotatedInstance> {
    corpus
        .of_sense(&target.key)
        .filter(|i| i.lemma == target.lemma && i.pos == target.pos)
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build worker pool: {e}")))
}

struct SenseOutcome {
    records: Vec<AugmentedExample>,
    stats: GenerationStats,
}

fn generate_sense(
    corpus: &AnnotatedCorpus,
    plan: &AugmentationPlan,
    deps: &MixDeps<'_>,
    target: &Target,
) -> Result<SenseOutcome> {
    let mut out = SenseOutcome {
        records: Vec::new(),
        stats: GenerationStats::default(),
    };
    let mut sources = sources_for(corpus, target);
    if sources.is_empty() {
        out.stats.skipped_senses = 1;
        return Ok(out);
    }
    let key = target.key.as_str();
    sources.shuffle(&mut rng_from_seed(derive_seed(plan.seed, &["sources", key])));

    for slot in 0..plan.per_sense {
        let source = sources[slot % sources.len()];
        for attempt in 0..=plan.retry_limit {
            let seed = derive_seed(plan.seed, &[key, &source.instance_id, &slot.to_string(), &attempt.to_string()]);
            let example = match mix(source, plan.mode, deps, seed) {
                Ok(ex) => ex,
                Err(Error::NoHostAvailable { .. }) => {
                    out.stats.skipped_senses = 1;
                    return Ok(out);
                }
                Err(e) => return Err(e),
            };
            out.stats.attempted += 1;
            let accepted = example.accepted;
            out.records.push(example);
            if accepted {
                out.stats.accepted += 1;
                break;
            }
            out.stats.rejected += 1;
        }
    }
    Ok(out)
}

/// Run the mixing pipeline over every plan target.
///
/// Targets are processed on up to `workers` threads (forced to one when a
/// backend is not safe for concurrent calls). Output order and content only
/// depend on the plan.
pub fn generate(
    corpus: &AnnotatedCorpus,
    plan: &AugmentationPlan,
    deps: &MixDeps<'_>,
    workers: usize,
) -> Result<AugmentedDataset> {
    if plan.mode == Mode::Oversample {
        return oversample(corpus, plan);
    }
    if plan.per_sense == 0 {
        return Err(Error::Invalid("per_sense must be at least 1".into()));
    }
    let workers = if deps.concurrent() { workers } else { 1 };
    let outcomes: Vec<Result<SenseOutcome>> = if workers <= 1 {
        plan.targets
            .iter()
            .map(|t| generate_sense(corpus, plan, deps, t))
            .collect()
    } else {
        pool(workers)?.install(|| {
            plan.targets
                .par_iter()
                .map(|t| generate_sense(corpus, plan, deps, t))
                .collect()
        })
    };
    let mut records = Vec::new();
    let mut stats = GenerationStats::default();
    for outcome in outcomes {
        let outcome = outcome?;
        records.extend(outcome.records);
        stats += outcome.stats;
    }
    Ok(AugmentedDataset {
        records,
        plan: plan.clone(),
        stats,
    })
}

/// Verbatim copies of uniformly sampled source instances.
pub fn oversample(corpus: &AnnotatedCorpus, plan: &AugmentationPlan) -> Result<AugmentedDataset> {
    if plan.per_sense == 0 {
        return Err(Error::Invalid("per_sense must be at least 1".into()));
    }
    let mut records = Vec::new();
    let mut stats = GenerationStats::default();
    for target in &plan.targets {
        let sources = sources_for(corpus, target);
        if sources.is_empty() {
            stats.skipped_senses += 1;
            continue;
        }
        let seed = derive_seed(plan.seed, &["oversample", target.key.as_str()]);
        let mut rng = rng_from_seed(seed);
        for _ in 0..plan.per_sense {
            let source = sources[rng.gen_range(0..sources.len())];
            records.push(AugmentedExample::copy_of(source, seed));
            stats.attempted += 1;
            stats.accepted += 1;
        }
    }
    Ok(AugmentedDataset {
        records,
        plan: plan.clone(),
        stats,
    })
}

/// Original instances followed by the accepted augmented examples, which get
/// ids of the form `smsmix:<source id>:<n>`.
pub fn assemble_training_set(original: &AnnotatedCorpus, aug: &AugmentedDataset) -> Result<AnnotatedCorpus> {
    let mut taken: HashSet<String> = original.instances().iter().map(|i| i.instance_id.clone()).collect();
    taken.extend(original.sentences().keys().cloned());
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    let mut instances: Vec<AnnotatedInstance> = original.instances().to_vec();
    for ex in aug.accepted() {
        let src = ex.provenance.source_instance_id.as_str();
        let n = per_source.entry(src).or_default();
        let base = format!("{SYNTHETIC_ID_PREFIX}{src}:{n}");
        *n += 1;
        let mut id = base.clone();
        let mut suffix = 2;
        while taken.contains(&id) {
            id = format!("{base}#{suffix}");
            suffix += 1;
        }
        taken.insert(id.clone());
        instances.push(AnnotatedInstance {
            instance_id: id.clone(),
            sentence: Arc::new(Sentence {
                tokens: ex.sentence.tokens.clone(),
                source_id: id,
            }),
            target_index: ex.target_index,
            lemma: ex.lemma.clone(),
            pos: ex.pos,
            gold: ex.label.clone(),
            extra_gold: Vec::new(),
        });
    }
    AnnotatedCorpus::new(instances)
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    plan: AugmentationPlan,
    stats: GenerationStats,
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    target_index: usize,
    lemma: String,
    pos: Pos,
    sense_key: SenseKey,
    sentence_id: String,
    provenance: Provenance,
    accepted: bool,
}

impl AugmentedDataset {
    /// Line-delimited JSON: a schema header line, then one record per
    /// example in generation order.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = Header {
            schema: AUGMENTED_SCHEMA.to_string(),
            version: AUGMENTED_SCHEMA_VERSION,
            plan: self.plan.clone(),
            stats: self.stats,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for ex in &self.records {
            let rec = Record {
                tokens: ex.sentence.tokens.clone(),
                target_index: ex.target_index,
                lemma: ex.lemma.clone(),
                pos: ex.pos,
                sense_key: ex.label.clone(),
                sentence_id: ex.sentence.source_id.clone(),
                provenance: ex.provenance.clone(),
                accepted: ex.accepted,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if header.schema != AUGMENTED_SCHEMA || header.version != AUGMENTED_SCHEMA_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported schema {} v{}", header.schema, header.version),
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let sentence = Sentence::new(rec.tokens, rec.sentence_id)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if rec.target_index >= sentence.len() {
                return Err(Error::parse(path, i + 1, "target index outside sentence"));
            }
            records.push(AugmentedExample {
                sentence,
                target_index: rec.target_index,
                lemma: rec.lemma,
                pos: rec.pos,
                label: rec.sense_key,
                provenance: rec.provenance,
                accepted: rec.accepted,
            });
        }
        Ok(AugmentedDataset {
            records,
            plan: header.plan,
            stats: header.stats,
        })
    }
}
