mod common;

use rand::Rng as _;
use smsmix::backends::{ToyBiEncoder, ToyHyper};
use smsmix::corpus::AnnotatedInstance;
use smsmix::inventory::SenseEntry;
use smsmix::seed::rng_from_seed;

/// Central-difference gradient norm of the loss w.r.t. one embedding row.
fn fd_row_norm(model: &ToyBiEncoder, inst: &AnnotatedInstance, cands: &[SenseEntry], id: usize, h: f64) -> f64 {
    let mut m = model.clone();
    let mut sq = 0.0;
    for k in 0..m.dim() {
        let orig = m.row(id)[k];
        m.row_mut(id)[k] = orig + h;
        let up = m.loss(inst, cands).unwrap();
        m.row_mut(id)[k] = orig - h;
        let down = m.loss(inst, cands).unwrap();
        m.row_mut(id)[k] = orig;
        let g = (up - down) / (2.0 * h);
        sq += g * g;
    }
    sq.sqrt()
}

#[test]
fn saliency_matches_finite_differences() {
    let mut rng = rng_from_seed(2024);
    let mut worst: f64 = 0.0;
    for pair in 0..100u64 {
        let bench = common::small_bench(pair % 7);
        let epochs = rng.gen_range(0..3);
        let hyper = ToyHyper {
            seed: pair,
            epochs,
            dim: rng.gen_range(2..12),
            window: rng.gen_range(1..6),
            ..ToyHyper::default()
        };
        let (model, _) = smsmix::backends::toy_train(&bench.train, &bench.inventory, &hyper).unwrap();
        let inst = &bench.train.instances()[rng.gen_range(0..bench.train.len())];
        let cands = bench.inventory.senses_of(&inst.lemma, inst.pos);
        let sal = model.saliency(inst, cands).unwrap();
        for (i, tok) in inst.sentence.tokens.iter().enumerate() {
            let fd = fd_row_norm(&model, inst, cands, model.token_id(tok), 1e-5);
            let a = sal.scores()[i];
            let scale = a.abs().max(fd.abs());
            if scale > 1e-7 {
                worst = worst.max((a - fd).abs() / scale);
            } else {
                assert!((a - fd).abs() < 1e-9);
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}
