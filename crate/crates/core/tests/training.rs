mod common;

use smsmix::augmentor::{assemble_training_set, generate, select_lfs_targets, AugmentationPlan, SelectionPolicy};
use smsmix::backends::{RuleJudge, TemplateInfiller, ToyBiEncoder, ToyHyper};
use smsmix::corpus::AnnotatedCorpus;
use smsmix::mixer::{MixConfig, MixDeps, Mode};
use smsmix::seed::rng_from_seed;
use smsmix::training::{train_stage_one, train_stage_two, two_stage_train, DevSet, TrainConfig};
use smsmix::Error;

fn factory(bench: &smsmix::synthetic::SyntheticBenchmark) -> impl FnOnce() -> ToyBiEncoder + '_ {
    || ToyBiEncoder::init(&bench.train, &bench.inventory, &ToyHyper::default())
}

#[test]
fn stage_two_learning_rate_defaults() {
    let cfg = TrainConfig::new(0.5, 10, 3);
    assert_eq!(cfg.stage2.epochs, 1);
    assert!((cfg.stage2.lr - 0.005).abs() < 1e-15);
}

#[test]
fn zero_stage_two_rate_keeps_stage_one() {
    let bench = common::small_bench(0);
    let mut cfg = TrainConfig::new(0.5, 3, 0);
    cfg.stage2.lr = 0.0;
    let out = two_stage_train(factory(&bench), &bench.train, &bench.train, &bench.inventory, &cfg, None).unwrap();
    assert_eq!(out.model, out.stage1);
    assert_eq!(out.metrics.iter().filter(|m| m.stage == 2).count(), 1);
}

#[test]
fn stages_compose() {
    let bench = common::small_bench(1);
    let cfg = TrainConfig::new(0.5, 2, 4);
    let (s1, _) = train_stage_one(factory(&bench), &bench.train, &bench.inventory, &cfg, None).unwrap();
    let (s2, _) = train_stage_two(&s1, &bench.train, &bench.inventory, &cfg, None).unwrap();
    let joint = two_stage_train(factory(&bench), &bench.train, &bench.train, &bench.inventory, &cfg, None).unwrap();
    assert_eq!(joint.stage1, s1);
    assert_eq!(joint.model, s2);
    assert_ne!(s1, s2);
}

#[test]
fn stage_two_sees_augmented_data() {
    let bench = common::small_bench(2);
    let table = common::table(&bench);
    let cfg = TrainConfig::new(0.5, 3, 1);
    let (s1, _) = train_stage_one(factory(&bench), &bench.train, &bench.inventory, &cfg, None).unwrap();
    let targets = select_lfs_targets(&table, 0.5, SelectionPolicy::Random, &mut rng_from_seed(1)).unwrap();
    let infill = TemplateInfiller::template();
    let judge = RuleJudge::default();
    let deps = MixDeps {
        saliency: &s1,
        infill: &infill,
        judge: &judge,
        inventory: &bench.inventory,
        corpus: &bench.train,
        table: &table,
        external: Some(&bench.external),
        config: MixConfig::default(),
    };
    let ds = generate(&bench.train, &AugmentationPlan::new(targets, Mode::External, 1), &deps, 1).unwrap();
    let asm = assemble_training_set(&bench.train, &ds).unwrap();
    let (_, metrics) = train_stage_two(&s1, &asm, &bench.inventory, &cfg, None).unwrap();
    assert_eq!(metrics[0].trained, bench.train.len() + ds.stats.accepted);
}

#[test]
fn dev_scores_recorded_at_stage_end() {
    let bench = common::small_bench(0);
    let table = common::table(&bench);
    let dev = DevSet {
        corpus: &bench.eval,
        train_table: &table,
    };
    let mut cfg = TrainConfig::new(0.5, 4, 0);
    cfg.eval_every = 2;
    let out = two_stage_train(factory(&bench), &bench.train, &bench.train, &bench.inventory, &cfg, Some(&dev)).unwrap();
    let scored: Vec<(u8, usize)> = out
        .metrics
        .iter()
        .filter(|m| m.dev_micro_f1.is_some())
        .map(|m| (m.stage, m.epoch))
        .collect();
    assert_eq!(scored, [(1, 1), (1, 3), (2, 0)]);
}

#[test]
fn divergence_is_reported() {
    let bench = common::small_bench(0);
    let cfg = TrainConfig::new(1e300, 2, 0);
    let err = two_stage_train(factory(&bench), &bench.train, &bench.train, &bench.inventory, &cfg, None);
    assert!(matches!(err, Err(Error::Divergence { stage: 1, .. })));
}

#[test]
fn empty_inputs_rejected() {
    let bench = common::small_bench(0);
    let empty = AnnotatedCorpus::new(vec![]).unwrap();
    let cfg = TrainConfig::new(0.5, 1, 0);
    assert!(matches!(
        two_stage_train(factory(&bench), &empty, &bench.train, &bench.inventory, &cfg, None),
        Err(Error::EmptyCorpus)
    ));
    let mut bad = cfg;
    bad.stage1.lr = f64::NAN;
    assert!(matches!(
        two_stage_train(factory(&bench), &bench.train, &bench.train, &bench.inventory, &bad, None),
        Err(Error::Invalid(_))
    ));
}
