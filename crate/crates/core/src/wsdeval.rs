//! Micro/macro F1 scoring and MFS/LFS/zero-shot subset reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{argmax, ToyBiEncoder};
use crate::corpus::{AnnotatedCorpus, AnnotatedInstance, FrequencyTable};
use crate::error::{Error, Result};
use crate::inventory::{LemmaPos, SenseEntry, SenseInventory, SenseKey};

/// Predicted sense per instance id.
pub type PredictionSet = BTreeMap<String, SenseKey>;
/// Acceptable gold keys per instance id; the first key is the primary one.
pub type GoldMap = BTreeMap<String, Vec<SenseKey>>;

pub const SUBSETS_VERSION: &str = "v1";

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn is_correct(pred: &SenseKey, gold: &[SenseKey]) -> bool {
    gold.contains(pred)
}

/// Precision over attempted instances, recall over all gold instances.
pub fn micro_f1(preds: &PredictionSet, gold: &GoldMap) -> f64 {
    let total = gold.len();
    let mut attempted = 0usize;
    let mut correct = 0usize;
    for (id, keys) in gold {
        if let Some(p) = preds.get(id) {
            attempted += 1;
            if is_correct(p, keys) {
                correct += 1;
            }
        }
    }
    if attempted == 0 || correct == 0 {
        return 0.0;
    }
    let precision = correct as f64 / attempted as f64;
    let recall = correct as f64 / total as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }
}

/// One-vs-rest counts per key. A correct prediction is a true positive of
/// the predicted key; a wrong one is a false negative of the primary gold
/// key and a false positive of the predicted key; a missing one is a false
/// negative only.
pub fn per_key_confusion(preds: &PredictionSet, gold: &GoldMap) -> BTreeMap<SenseKey, Confusion> {
    let mut table: BTreeMap<SenseKey, Confusion> = BTreeMap::new();
    for (id, keys) in gold {
        let primary = &keys[0];
        match preds.get(id) {
            Some(p) if is_correct(p, keys) => table.entry(p.clone()).or_default().tp += 1,
            Some(p) => {
                table.entry(primary.clone()).or_default().fn_ += 1;
                table.entry(p.clone()).or_default().fp += 1;
            }
            None => table.entry(primary.clone()).or_default().fn_ += 1,
        }
    }
    table
}

/// Averaging unit for macro F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroUnit {
    /// Mean over primary gold keys present in the evaluation set.
    #[default]
    BySense,
    /// Mean over lemmas of the mean per-key F1 within each lemma.
    ByLemma,
}

impl std::str::FromStr for MacroUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by_sense" => Ok(MacroUnit::BySense),
            "by_lemma" => Ok(MacroUnit::ByLemma),
            other => Err(Error::Invalid(format!("unknown macro unit {other:?}"))),
        }
    }
}

/// Unweighted mean of per-key F1 over the primary gold keys in `gold`.
pub fn macro_f1(preds: &PredictionSet, gold: &GoldMap) -> f64 {
    let confusion = per_key_confusion(preds, gold);
    let keys: BTreeSet<&SenseKey> = gold.values().map(|k| &k[0]).collect();
    if keys.is_empty() {
        return 0.0;
    }
    keys.iter().map(|k| confusion.get(*k).map_or(0.0, Confusion::f1)).sum::<f64>() / keys.len() as f64
}

/// Macro F1 averaged per lemma first; `lemma_of` maps instance ids to their
/// lemma.
pub fn macro_f1_by_lemma(preds: &PredictionSet, gold: &GoldMap, lemma_of: &BTreeMap<String, LemmaPos>) -> f64 {
    let confusion = per_key_confusion(preds, gold);
    let mut by_lemma: BTreeMap<&LemmaPos, BTreeSet<&SenseKey>> = BTreeMap::new();
    for (id, keys) in gold {
        if let Some(lp) = lemma_of.get(id) {
            by_lemma.entry(lp).or_default().insert(&keys[0]);
        }
    }
    if by_lemma.is_empty() {
        return 0.0;
    }
    by_lemma
        .values()
        .map(|keys| keys.iter().map(|k| confusion.get(*k).map_or(0.0, Confusion::f1)).sum::<f64>() / keys.len() as f64)
        .sum::<f64>()
        / by_lemma.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "MFS")]
    Mfs,
    #[serde(rename = "LFS")]
    Lfs,
    #[serde(rename = "0-lex")]
    ZeroLex,
    #[serde(rename = "0-lex-def")]
    ZeroLexDef,
    #[serde(rename = "0-def")]
    ZeroDef,
}

impl Subset {
    pub const ALL: [Subset; 5] = [Subset::Mfs, Subset::Lfs, Subset::ZeroLex, Subset::ZeroLexDef, Subset::ZeroDef];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Mfs => "MFS",
            Subset::Lfs => "LFS",
            Subset::ZeroLex => "0-lex",
            Subset::ZeroLexDef => "0-lex-def",
            Subset::ZeroDef => "0-def",
        }
    }
}

/// Subset of one instance given training statistics.
///
/// Precedence: 0-lex-def, 0-lex, 0-def, then MFS/LFS. A sense counts as seen
/// when any of its gold keys occurs in training.
pub fn classify(instance: &AnnotatedInstance, table: &FrequencyTable) -> Subset {
    let lemma_seen = table.has_lemma(&instance.lemma, instance.pos);
    let sense_seen = instance.gold_keys().any(|k| table.has_key(k));
    match (lemma_seen, sense_seen) {
        (false, false) => Subset::ZeroLexDef,
        (false, true) => Subset::ZeroLex,
        (true, false) => Subset::ZeroDef,
        (true, true) => {
            let mfs = table.mfs(&instance.lemma, instance.pos);
            if mfs.is_some_and(|m| instance.gold_keys().any(|k| k == m)) {
                Subset::Mfs
            } else {
                Subset::Lfs
            }
        }
    }
}

/// Instance ids per subset; the sets are disjoint and cover the corpus.
pub fn subset_partition(eval: &AnnotatedCorpus, train_table: &FrequencyTable) -> BTreeMap<Subset, BTreeSet<String>> {
    let mut out: BTreeMap<Subset, BTreeSet<String>> = Subset::ALL.iter().map(|s| (*s, BTreeSet::new())).collect();
    for inst in eval.instances() {
        out.get_mut(&classify(inst, train_table))
            .expect("all subsets present")
            .insert(inst.instance_id.clone());
    }
    out
}

/// Anything that can score candidate senses for an instance.
pub trait CandidateScorer: Sync {
    /// One score per candidate, or `None` to abstain.
    fn candidate_scores(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Option<Vec<f64>>;

    fn model_id(&self) -> String {
        "anonymous".into()
    }
}

impl CandidateScorer for ToyBiEncoder {
    fn candidate_scores(&self, instance: &AnnotatedInstance, candidates: &[SenseEntry]) -> Option<Vec<f64>> {
        Some(self.scores(&instance.sentence, instance.target_index, candidates))
    }

    fn model_id(&self) -> String {
        format!("toy-biencoder(d={},w={})", self.dim(), self.window())
    }
}

/// Argmax prediction per instance with MFS then first-candidate backoff.
/// Instances with no candidates are left unpredicted; the count is returned.
pub fn predict(
    model: &dyn CandidateScorer,
    eval: &AnnotatedCorpus,
    inventory: &SenseInventory,
    train_table: &FrequencyTable,
) -> (PredictionSet, usize) {
    let mut preds = PredictionSet::new();
    let mut unattempted = 0;
    for inst in eval.instances() {
        let candidates = inventory.senses_of(&inst.lemma, inst.pos);
        if candidates.is_empty() {
            unattempted += 1;
            continue;
        }
        let chosen = model
            .candidate_scores(inst, candidates)
            .filter(|s| s.len() == candidates.len() && s.iter().all(|x| x.is_finite()))
            .and_then(|s| argmax(&s))
            .map(|i| candidates[i].key.clone())
            .or_else(|| train_table.mfs(&inst.lemma, inst.pos).cloned())
            .unwrap_or_else(|| candidates[0].key.clone());
        preds.insert(inst.instance_id.clone(), chosen);
    }
    if unattempted > 0 {
        log::warn!("{unattempted} instances have no candidate senses and were not attempted");
    }
    (preds, unattempted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub n_instances: usize,
    pub n_senses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub model_id: String,
    pub subsets_version: String,
    pub macro_unit: MacroUnit,
    pub unattempted: usize,
}

/// Scores for one dataset: `ALL` plus the five subsets, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub rows: Vec<(String, Scores)>,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn get(&self, subset: &str) -> Option<&Scores> {
        self.rows.iter().find(|(n, _)| n == subset).map(|(_, s)| s)
    }
}

fn scores_for(preds: &PredictionSet, gold: &GoldMap, lemma_of: &BTreeMap<String, LemmaPos>, unit: MacroUnit) -> Scores {
    Scores {
        micro_f1: micro_f1(preds, gold),
        macro_f1: match unit {
            MacroUnit::BySense => macro_f1(preds, gold),
            MacroUnit::ByLemma => macro_f1_by_lemma(preds, gold, lemma_of),
        },
        n_instances: gold.len(),
        n_senses: gold.values().map(|k| &k[0]).collect::<BTreeSet<_>>().len(),
    }
}

/// Score a prediction set against `eval`, globally and per subset.
pub fn score_report(
    dataset: &str,
    preds: &PredictionSet,
    eval: &AnnotatedCorpus,
    train_table: &FrequencyTable,
    unit: MacroUnit,
    meta: ReportMeta,
) -> EvalReport {
    let gold = eval.gold_map();
    let lemma_of: BTreeMap<String, LemmaPos> = eval
        .instances()
        .iter()
        .map(|i| (i.instance_id.clone(), i.lemma_pos()))
        .collect();
    let mut rows = vec![("ALL".to_string(), scores_for(preds, &gold, &lemma_of, unit))];
    for (subset, ids) in subset_partition(eval, train_table) {
        let sub: GoldMap = ids.iter().map(|id| (id.clone(), gold[id].clone())).collect();
        rows.push((subset.name().to_string(), scores_for(preds, &sub, &lemma_of, unit)));
    }
    EvalReport {
        dataset: dataset.to_string(),
        rows,
        meta,
    }
}

/// Predict with `model` and score the result.
pub fn evaluate(
    dataset: &str,
    model: &dyn CandidateScorer,
    eval: &AnnotatedCorpus,
    inventory: &SenseInventory,
    train_table: &FrequencyTable,
    unit: MacroUnit,
    seed: u64,
) -> EvalReport {
    let (preds, unattempted) = predict(model, eval, inventory, train_table);
    let meta = ReportMeta {
        seed,
        model_id: model.model_id(),
        subsets_version: SUBSETS_VERSION.to_string(),
        macro_unit: unit,
        unattempted,
    };
    score_report(dataset, &preds, eval, train_table, unit, meta)
}

/// Tab-separated report, one row per (dataset, subset).
pub fn format_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let m = &first.meta;
        let _ = writeln!(
            out,
            "# seed={} model={} subsets={} macro_unit={:?} unattempted={}",
            m.seed,
            m.model_id,
            m.subsets_version,
            m.macro_unit,
            reports.iter().map(|r| r.meta.unattempted).sum::<usize>()
        );
    }
    out.push_str("dataset\tsubset\tmicro_f1\tmacro_f1\tn_instances\tn_senses\n");
    for r in reports {
        for (name, s) in &r.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                r.dataset, name, s.micro_f1, s.macro_f1, s.n_instances, s.n_senses
            );
        }
    }
    out
}

/// Mean and sample standard deviation of each metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub subset: String,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
    pub n_instances: usize,
    pub n_senses: usize,
    pub n_runs: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate per-seed runs; each run holds the same datasets in the same
/// order.
pub fn aggregate(runs: &[Vec<EvalReport>]) -> Vec<AggregateRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (d, report) in first.iter().enumerate() {
        for (r, (subset, scores)) in report.rows.iter().enumerate() {
            let micro: Vec<f64> = runs.iter().map(|run| run[d].rows[r].1.micro_f1).collect();
            let macro_: Vec<f64> = runs.iter().map(|run| run[d].rows[r].1.macro_f1).collect();
            let (micro_mean, micro_std) = mean_std(&micro);
            let (macro_mean, macro_std) = mean_std(&macro_);
            out.push(AggregateRow {
                dataset: report.dataset.clone(),
                subset: subset.clone(),
                micro_mean,
                micro_std,
                macro_mean,
                macro_std,
                n_instances: scores.n_instances,
                n_senses: scores.n_senses,
                n_runs: runs.len(),
            });
        }
    }
    out
}

pub fn format_aggregate(rows: &[AggregateRow], first_seed: u64) -> String {
    let mut out = String::new();
    let n_runs = rows.first().map_or(0, |r| r.n_runs);
    let _ = writeln!(out, "# seeds={}..{} subsets={}", first_seed, first_seed + n_runs as u64, SUBSETS_VERSION);
    out.push_str("dataset\tsubset\tmicro_f1_mean\tmicro_f1_std\tmacro_f1_mean\tmacro_f1_std\tn_instances\tn_senses\tn_runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.dataset, r.subset, r.micro_mean, r.micro_std, r.macro_mean, r.macro_std, r.n_instances, r.n_senses, r.n_runs
        );
    }
    out
}

/// `<instance_id> <sense_key>` per line.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut preds = PredictionSet::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let key = fields
            .next()
            .ok_or_else(|| Error::parse(path, i + 1, "missing sense key"))
            .and_then(|k| SenseKey::new(k).map_err(|e| Error::parse(path, i + 1, e.to_string())))?;
        preds.insert(id.to_string(), key);
    }
    Ok(preds)
}

pub fn format_predictions(preds: &PredictionSet) -> String {
    preds.iter().map(|(id, k)| format!("{id} {k}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(s: &str) -> SenseKey {
        SenseKey::new(s).unwrap()
    }

    fn case(gold: &[&str], pred: &[Option<&str>]) -> (PredictionSet, GoldMap) {
        let g = gold.iter().enumerate().map(|(i, k)| (format!("i{i:03}"), vec![key(k)])).collect();
        let p = pred
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.map(|k| (format!("i{i:03}"), key(k))))
            .collect();
        (p, g)
    }

    #[test]
    fn hand_case() {
        let (p, g) = case(&["a", "a", "b", "b"], &[Some("a"), Some("b"), Some("b"), Some("b")]);
        assert!((micro_f1(&p, &g) - 0.75).abs() < 1e-12);
        assert!((macro_f1(&p, &g) - (2.0 / 3.0 + 4.0 / 5.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let (p, g) = case(&["a", "b", "c"], &[Some("a"), Some("b"), Some("c")]);
        assert_eq!(micro_f1(&p, &g), 1.0);
        assert_eq!(macro_f1(&p, &g), 1.0);
        let (p, g) = case(&["a", "b"], &[None, None]);
        assert_eq!(micro_f1(&p, &g), 0.0);
    }

    #[test]
    fn single_sense_macro_equals_micro() {
        // one candidate: every attempted prediction is that sense
        for pattern in 0u32..16 {
            let pred: Vec<Option<&str>> = (0..4).map(|i| (pattern >> i & 1 == 1).then_some("a")).collect();
            let (p, g) = case(&["a", "a", "a", "a"], &pred);
            assert!((macro_f1(&p, &g) - micro_f1(&p, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_key_credit() {
        let mut g = GoldMap::new();
        g.insert("i".into(), vec![key("a"), key("b")]);
        let mut p = PredictionSet::new();
        p.insert("i".into(), key("b"));
        assert_eq!(micro_f1(&p, &g), 1.0);
    }

    #[test]
    fn partial_coverage() {
        let (p, g) = case(&["a", "a", "b", "b"], &[Some("a"), None, Some("b"), None]);
        // precision 1, recall 0.5
        assert!((micro_f1(&p, &g) - 2.0 / 3.0).abs() < 1e-12);
    }

    /// Independent per-key oracle: enumerate keys and count by definition.
    fn brute_macro(gold: &[usize], pred: &[usize]) -> f64 {
        let keys: BTreeSet<usize> = gold.iter().copied().collect();
        let mut total = 0.0;
        for &k in &keys {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == k && **p == k).count();
            let fp = gold.iter().zip(pred).filter(|(g, p)| **g != k && **p == k).count();
            let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == k && **p != k).count();
            let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            total += if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        }
        total / keys.len() as f64
    }

    proptest! {
        #[test]
        fn micro_is_accuracy_at_full_coverage(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..40)) {
            let gold: Vec<String> = pairs.iter().map(|p| format!("k{}", p.0)).collect();
            let pred: Vec<String> = pairs.iter().map(|p| format!("k{}", p.1)).collect();
            let (p, g) = case(
                &gold.iter().map(String::as_str).collect::<Vec<_>>(),
                &pred.iter().map(|s| Some(s.as_str())).collect::<Vec<_>>(),
            );
            let acc = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
            prop_assert!((micro_f1(&p, &g) - acc).abs() < 1e-12);
        }

        #[test]
        fn macro_matches_brute_force(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..20)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let gs: Vec<String> = gold.iter().map(|k| format!("k{k}")).collect();
            let ps: Vec<String> = pred.iter().map(|k| format!("k{k}")).collect();
            let (p, g) = case(
                &gs.iter().map(String::as_str).collect::<Vec<_>>(),
                &ps.iter().map(|s| Some(s.as_str())).collect::<Vec<_>>(),
            );
            prop_assert!((macro_f1(&p, &g) - brute_macro(&gold, &pred)).abs() < 1e-12);
        }
    }

    #[test]
    fn by_lemma_averaging() {
        let (p, g) = case(&["a1", "a1", "a2", "b1"], &[Some("a1"), Some("a2"), Some("a2"), Some("b1")]);
        let lemma_of: BTreeMap<String, LemmaPos> = [("i000", "a"), ("i001", "a"), ("i002", "a"), ("i003", "b")]
            .iter()
            .map(|(id, l)| (id.to_string(), (l.to_string(), crate::inventory::Pos::Noun)))
            .collect();
        // lemma a: F1(a1)=2/3, F1(a2)=2/3; lemma b: 1
        let expected = (2.0 / 3.0 + 1.0) / 2.0;
        assert!((macro_f1_by_lemma(&p, &g, &lemma_of) - expected).abs() < 1e-12);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
