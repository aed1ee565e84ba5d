//! Sense-maintenance diagnostics.
//!
//! Target-word embeddings from augmented and reference sentences are
//! projected to 2-D with t-SNE for plotting, and a cross-validated linear
//! probe measures how well the two origins can be told apart: 0.5 means
//! indistinguishable, 1.0 fully separable.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backends::TargetEncoder;
use crate::corpus::{AnnotatedCorpus, Sentence};
use crate::augmentor::AugmentedDataset;
use crate::error::{Error, Result};
use crate::inventory::SenseKey;
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Augmented,
    Reference,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Augmented => "augmented",
            Origin::Reference => "reference",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augmented" => Ok(Origin::Augmented),
            "reference" => Ok(Origin::Reference),
            other => Err(Error::Invalid(format!("unknown origin {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub sense_key: SenseKey,
    pub origin: Origin,
}

/// A target occurrence to embed.
#[derive(Debug, Clone)]
pub struct TargetSample<'a> {
    pub sentence: &'a Sentence,
    pub target_index: usize,
    pub label: RowLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<RowLabel>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<RowLabel>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Invalid("one label per embedding row required".into()));
        }
        if let Some(d) = vectors.first().map(Vec::len) {
            if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
                return Err(Error::Invalid("embedding rows must share a dimension and be finite".into()));
            }
        }
        Ok(EmbeddingSet { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// Encode every sample; failing or malformed encodings are skipped and
/// counted.
pub fn embed_targets(encoder: &dyn TargetEncoder, samples: &[TargetSample<'_>]) -> (EmbeddingSet, usize) {
    let mut set = EmbeddingSet::default();
    let mut skipped = 0;
    for s in samples {
        match encoder.encode(s.sentence, s.target_index) {
            Ok(v) if v.iter().all(|x| x.is_finite()) && (set.is_empty() || v.len() == set.dim()) => {
                set.vectors.push(v);
                set.labels.push(s.label.clone());
            }
            Ok(_) => skipped += 1,
            Err(e) => {
                log::warn!("encoding {} failed: {e}", s.sentence.source_id);
                skipped += 1;
            }
        }
    }
    (set, skipped)
}

/// Accepted augmented examples as samples, at most `per_sense` per sense
/// in dataset order.
pub fn augmented_samples(ds: &AugmentedDataset, per_sense: usize) -> Vec<TargetSample<'_>> {
    let mut taken: BTreeMap<&SenseKey, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for ex in ds.accepted() {
        let n = taken.entry(&ex.label).or_default();
        if *n < per_sense {
            *n += 1;
            out.push(TargetSample {
                sentence: &ex.sentence,
                target_index: ex.target_index,
                label: RowLabel {
                    sense_key: ex.label.clone(),
                    origin: Origin::Augmented,
                },
            });
        }
    }
    out
}

/// Up to `per_sense` uniformly chosen instances of each listed sense.
pub fn reference_samples<'a>(
    corpus: &'a AnnotatedCorpus,
    senses: impl IntoIterator<Item = &'a SenseKey>,
    per_sense: usize,
    rng: &mut Rng,
) -> Vec<TargetSample<'a>> {
    let mut out = Vec::new();
    for key in senses {
        let mut pool: Vec<_> = corpus.of_sense(key).collect();
        pool.shuffle(rng);
        pool.truncate(per_sense);
        out.extend(pool.into_iter().map(|i| TargetSample {
            sentence: &i.sentence,
            target_index: i.target_index,
            label: RowLabel {
                sense_key: key.clone(),
                origin: Origin::Reference,
            },
        }));
    }
    out
}

// ---------------------------------------------------------------------------
// t-SNE

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Conditional affinities for row `i` at the precision matching `perplexity`.
fn row_affinities(dist: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let n = dist.len();
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..200 {
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-dist[j] * beta).exp() };
            sum += p[j];
        }
        if sum <= 0.0 {
            // all neighbours underflowed: precision too high
            hi = beta;
            beta = (lo + hi) / 2.0;
            continue;
        }
        let mut weighted = 0.0;
        for j in 0..n {
            p[j] /= sum;
            weighted += p[j] * dist[j];
        }
        let entropy = sum.ln() + beta * weighted;
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (lo + hi) / 2.0;
        }
    }
    p
}

fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exact t-SNE to two dimensions. Perplexity is clamped below `n / 3`.
pub fn project_2d(embeds: &EmbeddingSet, seed: u64, perplexity: f64) -> Result<Vec<[f64; 2]>> {
    tsne(
        embeds,
        seed,
        &TsneConfig {
            perplexity,
            ..TsneConfig::default()
        },
    )
}

pub fn tsne(embeds: &EmbeddingSet, seed: u64, cfg: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    let n = embeds.len();
    if n < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: n });
    }
    let perplexity = cfg.perplexity.min((n as f64 - 1.0) / 3.0).max(1.0);
    let x = &embeds.vectors;

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let dist: Vec<f64> = (0..n).map(|j| sq_dist(&x[i], &x[j])).collect();
        let row = row_affinities(&dist, i, perplexity);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = rng_from_seed(seed);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [1e-2 * gaussian(&mut rng), 1e-2 * gaussian(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                let q = 1.0 / (1.0 + d);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - q / z) * q;
                grad[0] += 4.0 * mult * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * mult * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * grad[k];
            }
        }
        let mut mean = [0.0f64; 2];
        for i in 0..n {
            for k in 0..2 {
                y[i][k] += update[i][k];
                mean[k] += y[i][k] / n as f64;
            }
        }
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Overlap score

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub folds: usize,
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            folds: 5,
            l2: 1e-2,
            iterations: 300,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub per_sense: BTreeMap<SenseKey, f64>,
    /// Senses without both origins, with the reason.
    pub skipped: Vec<(SenseKey, String)>,
}

/// Class-balanced logistic regression by full-batch gradient descent.
fn fit_logistic(x: &[Vec<f64>], y: &[bool], cfg: &OverlapConfig) -> (Vec<f64>, f64) {
    let d = x.first().map_or(0, Vec::len);
    let n_pos = y.iter().filter(|&&b| b).count().max(1) as f64;
    let n_neg = y.iter().filter(|&&b| !b).count().max(1) as f64;
    let weight = |b: bool| if b { 0.5 / n_pos } else { 0.5 / n_neg };
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = weight(yi) * (p - f64::from(u8::from(yi)));
            for (g, v) in gw.iter_mut().zip(xi) {
                *g += r * v;
            }
            gb += r;
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= cfg.learning_rate * (g + cfg.l2 * *wk);
        }
        b -= cfg.learning_rate * gb;
    }
    (w, b)
}

fn standardize(rows: &[&Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            sd[k] += (r[k] - mean[k]).powi(2) / n;
        }
    }
    rows.iter()
        .map(|r| {
            (0..d)
                .map(|k| {
                    let s = sd[k].sqrt();
                    if s > 1e-12 {
                        (r[k] - mean[k]) / s
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Cross-validated balanced accuracy of a probe separating augmented from
/// reference rows, for a single group of rows.
///
/// Identical vectors are kept in the same fold so that a duplicate never
/// sits on both sides of a train/test split.
pub fn probe_balanced_accuracy(vectors: &[&Vec<f64>], is_augmented: &[bool], cfg: &OverlapConfig) -> f64 {
    let x = standardize(vectors);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, v) in vectors.iter().enumerate() {
        let bits: Vec<u64> = v.iter().map(|f| f.to_bits()).collect();
        let g = *group_of.entry(bits).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let folds = cfg.folds.min(groups.len());
    if folds < 2 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng_from_seed(cfg.seed));
    let mut fold_of = vec![0usize; x.len()];
    for (rank, &g) in order.iter().enumerate() {
        for &i in &groups[g] {
            fold_of[i] = rank % folds;
        }
    }

    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for f in 0..folds {
        let train: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] != f).collect();
        let train_x: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let train_y: Vec<bool> = train.iter().map(|&i| is_augmented[i]).collect();
        let (w, b) = fit_logistic(&train_x, &train_y, cfg);
        for i in (0..x.len()).filter(|&i| fold_of[i] == f) {
            let z = b + x[i].iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let pred = z > 0.0;
            if is_augmented[i] {
                pos += 1;
                tp += usize::from(pred);
            } else {
                neg += 1;
                tn += usize::from(!pred);
            }
        }
    }
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64)
}

/// Probe balanced accuracy per sense.
pub fn overlap_score(embeds: &EmbeddingSet, cfg: &OverlapConfig) -> OverlapReport {
    let mut by_sense: BTreeMap<&SenseKey, Vec<usize>> = BTreeMap::new();
    for (i, l) in embeds.labels.iter().enumerate() {
        by_sense.entry(&l.sense_key).or_default().push(i);
    }
    let mut report = OverlapReport::default();
    for (key, rows) in by_sense {
        let flags: Vec<bool> = rows.iter().map(|&i| embeds.labels[i].origin == Origin::Augmented).collect();
        let n_aug = flags.iter().filter(|&&f| f).count();
        if n_aug == 0 || n_aug == flags.len() {
            report.skipped.push((key.clone(), "only one origin present".into()));
            continue;
        }
        let vectors: Vec<&Vec<f64>> = rows.iter().map(|&i| &embeds.vectors[i]).collect();
        report.per_sense.insert(key.clone(), probe_balanced_accuracy(&vectors, &flags, cfg));
    }
    report
}

// ---------------------------------------------------------------------------
// Plot data

pub const PLOT_HEADER: &str = "x\ty\tsense_key\torigin";

pub fn format_plot_data(coords: &[[f64; 2]], labels: &[RowLabel]) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (c, l) in coords.iter().zip(labels) {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", c[0], c[1], l.sense_key, l.origin.as_str());
    }
    out
}

pub fn export_plot_data(coords: &[[f64; 2]], labels: &[RowLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if coords.len() != labels.len() {
        return Err(Error::Invalid("one label per coordinate required".into()));
    }
    std::fs::write(path, format_plot_data(coords, labels)).map_err(|e| Error::io(path, e))
}

pub fn read_plot_data(path: impl AsRef<Path>) -> Result<(Vec<[f64; 2]>, Vec<RowLabel>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PLOT_HEADER => {}
        _ => return Err(Error::parse(path, 1, "missing plot header")),
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| Error::parse(path, i + 1, m.to_string());
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let x: f64 = f[0].parse().map_err(|_| bad("bad x"))?;
        let y: f64 = f[1].parse().map_err(|_| bad("bad y"))?;
        coords.push([x, y]);
        labels.push(RowLabel {
            sense_key: SenseKey::new(f[2]).map_err(|e| bad(&e.to_string()))?,
            origin: f[3].parse().map_err(|e: Error| bad(&e.to_string()))?,
        });
    }
    Ok((coords, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(key: &str, origin: Origin) -> RowLabel {
        RowLabel {
            sense_key: SenseKey::new(key).unwrap(),
            origin,
        }
    }

    fn cloud(rng: &mut Rng, n: usize, d: usize, center: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| center + gaussian(rng)).collect()).collect()
    }

    #[test]
    fn too_few_points() {
        let set = EmbeddingSet::new(vec![vec![0.0, 1.0]; 3], vec![label("a", Origin::Reference); 3]).unwrap();
        assert!(matches!(project_2d(&set, 0, 30.0), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn tsne_replay() {
        let mut rng = rng_from_seed(1);
        let v = cloud(&mut rng, 20, 5, 0.0);
        let set = EmbeddingSet::new(v, vec![label("a", Origin::Reference); 20]).unwrap();
        let cfg = TsneConfig {
            iterations: 200,
            ..TsneConfig::default()
        };
        assert_eq!(tsne(&set, 3, &cfg).unwrap(), tsne(&set, 3, &cfg).unwrap());
    }

    #[test]
    fn duplicated_rows_score_half() {
        let mut rng = rng_from_seed(4);
        let refs = cloud(&mut rng, 40, 8, 0.0);
        let mut vectors = refs.clone();
        vectors.extend(refs);
        let labels: Vec<RowLabel> = (0..80)
            .map(|i| label("s", if i < 40 { Origin::Reference } else { Origin::Augmented }))
            .collect();
        let set = EmbeddingSet::new(vectors, labels).unwrap();
        let r = overlap_score(&set, &OverlapConfig::default());
        assert!((r.per_sense[&SenseKey::new("s").unwrap()] - 0.5).abs() < 0.05);
    }

    #[test]
    fn single_origin_skipped() {
        let set = EmbeddingSet::new(vec![vec![0.0, 1.0]; 4], vec![label("a", Origin::Reference); 4]).unwrap();
        let r = overlap_score(&set, &OverlapConfig::default());
        assert!(r.per_sense.is_empty());
        assert_eq!(r.skipped.len(), 1);
    }

    #[test]
    fn plot_roundtrip() {
        let coords: Vec<[f64; 2]> = (0..100).map(|i| [i as f64 * 0.1, -(i as f64) / 3.0]).collect();
        let labels: Vec<RowLabel> = (0..100)
            .map(|i| label(&format!("k%{}", i % 3), if i % 2 == 0 { Origin::Augmented } else { Origin::Reference }))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.tsv");
        export_plot_data(&coords, &labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(text.lines().filter(|l| *l == PLOT_HEADER).count(), 1);
        let (c2, l2) = read_plot_data(&path).unwrap();
        assert_eq!(c2, coords);
        assert_eq!(l2, labels);
    }
}
