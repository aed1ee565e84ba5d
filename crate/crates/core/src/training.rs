//! Two-stage training: full training on the original data, then a short
//! low-learning-rate pass over original plus augmented data.

use serde::{Deserialize, Serialize};

use crate::backends::{EpochReport, ToyBiEncoder};
use crate::corpus::{AnnotatedCorpus, AnnotatedInstance, FrequencyTable};
use crate::error::{Error, Result};
use crate::inventory::SenseInventory;
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::wsdeval::{evaluate, CandidateScorer, MacroUnit};

/// A WSD model trainable by per-epoch passes.
pub trait WsdModel: CandidateScorer + Clone {
    fn train_epoch(
        &mut self,
        instances: &[&AnnotatedInstance],
        inventory: &SenseInventory,
        lr: f64,
        rng: &mut Rng,
    ) -> EpochReport;
}

impl WsdModel for ToyBiEncoder {
    fn train_epoch(
        &mut self,
        instances: &[&AnnotatedInstance],
        inventory: &SenseInventory,
        lr: f64,
        rng: &mut Rng,
    ) -> EpochReport {
        ToyBiEncoder::train_epoch(self, instances, inventory, lr, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Evaluate on the dev set every this many epochs (0 disables periodic
    /// evaluation; the end of each stage is always evaluated).
    pub eval_every: usize,
}

/// Stage-2 learning rate relative to stage 1 for the toy model. Transformer
/// adapters should use an absolute 5e-7 instead.
pub const TOY_STAGE2_LR_RATIO: f64 = 0.01;
pub const TRANSFORMER_STAGE2_LR: f64 = 5e-7;

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            stage1: StageConfig { lr, epochs, seed },
            stage2: StageConfig {
                lr: lr * TOY_STAGE2_LR_RATIO,
                epochs: 1,
                seed,
            },
            eval_every: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if !(s.lr >= 0.0 && s.lr.is_finite()) {
                return Err(Error::Invalid(format!("{name} learning rate must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss: f64,
    pub trained: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_micro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_macro_f1: Option<f64>,
}

pub struct TwoStageOutcome<M> {
    pub stage1: M,
    pub model: M,
    pub metrics: Vec<EpochMetrics>,
}

/// Held-out data scored during training.
pub struct DevSet<'a> {
    pub corpus: &'a AnnotatedCorpus,
    pub train_table: &'a FrequencyTable,
}

fn run_stage<M: WsdModel>(
    model: &mut M,
    stage: u8,
    corpus: &AnnotatedCorpus,
    inventory: &SenseInventory,
    cfg: &StageConfig,
    eval_every: usize,
    dev: Option<&DevSet<'_>>,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<()> {
    let instances: Vec<&AnnotatedInstance> = corpus.instances().iter().collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &["stage", &stage.to_string()]));
    for epoch in 0..cfg.epochs {
        let report = model.train_epoch(&instances, inventory, cfg.lr, &mut rng);
        if !report.mean_loss.is_finite() {
            return Err(Error::Divergence { stage, epoch });
        }
        let last = epoch + 1 == cfg.epochs;
        let periodic = eval_every > 0 && (epoch + 1) % eval_every == 0;
        let (dev_micro_f1, dev_macro_f1) = match dev {
            Some(d) if last || periodic => {
                let r = evaluate("dev", &*model, d.corpus, inventory, d.train_table, MacroUnit::BySense, cfg.seed);
                let all = r.get("ALL").expect("ALL row");
                (Some(all.micro_f1), Some(all.macro_f1))
            }
            _ => (None, None),
        };
        metrics.push(EpochMetrics {
            stage,
            epoch,
            mean_loss: report.mean_loss,
            trained: report.trained,
            skipped: report.skipped,
            dev_micro_f1,
            dev_macro_f1,
        });
    }
    Ok(())
}

/// Stage 1: train a fresh model on the original data.
pub fn train_stage_one<M: WsdModel>(
    factory: impl FnOnce() -> M,
    original: &AnnotatedCorpus,
    inventory: &SenseInventory,
    cfg: &TrainConfig,
    dev: Option<&DevSet<'_>>,
) -> Result<(M, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if original.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut metrics = Vec::new();
    let mut model = factory();
    run_stage(&mut model, 1, original, inventory, &cfg.stage1, cfg.eval_every, dev, &mut metrics)?;
    Ok((model, metrics))
}

/// Stage 2: continue from a stage-1 model on `assembled` (the original data
/// followed by augmented examples, shuffled jointly every epoch).
pub fn train_stage_two<M: WsdModel>(
    stage1: &M,
    assembled: &AnnotatedCorpus,
    inventory: &SenseInventory,
    cfg: &TrainConfig,
    dev: Option<&DevSet<'_>>,
) -> Result<(M, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if assembled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut metrics = Vec::new();
    let mut model = stage1.clone();
    run_stage(&mut model, 2, assembled, inventory, &cfg.stage2, cfg.eval_every, dev, &mut metrics)?;
    Ok((model, metrics))
}

/// Both stages in sequence.
pub fn two_stage_train<M: WsdModel>(
    factory: impl FnOnce() -> M,
    original: &AnnotatedCorpus,
    assembled: &AnnotatedCorpus,
    inventory: &SenseInventory,
    cfg: &TrainConfig,
    dev: Option<&DevSet<'_>>,
) -> Result<TwoStageOutcome<M>> {
    if assembled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (stage1, mut metrics) = train_stage_one(factory, original, inventory, cfg, dev)?;
    let (model, m2) = train_stage_two(&stage1, assembled, inventory, cfg, dev)?;
    metrics.extend(m2);
    Ok(TwoStageOutcome {
        stage1,
        model,
        metrics,
    })
}
