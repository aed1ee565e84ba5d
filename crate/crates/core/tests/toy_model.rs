mod common;

use std::path::Path;
use std::sync::Arc;

use smsmix::backends::{toy_train, ToyBiEncoder, ToyHyper};
use smsmix::corpus::{AnnotatedCorpus, AnnotatedInstance, Sentence};
use smsmix::inventory::{Pos, SenseEntry, SenseInventory, SenseKey};

fn separable() -> (AnnotatedCorpus, SenseInventory) {
    let inv = SenseInventory::from_entries([
        SenseEntry {
            key: SenseKey::new("bank%1:14:00::").unwrap(),
            lemma: "bank".into(),
            pos: Pos::Noun,
            gloss: "money deposit institution".into(),
        },
        SenseEntry {
            key: SenseKey::new("bank%1:17:01::").unwrap(),
            lemma: "bank".into(),
            pos: Pos::Noun,
            gloss: "river water slope".into(),
        },
    ])
    .unwrap();
    let texts = [
        ("she put money in the bank today", 5, "bank%1:14:00::"),
        ("the bank took my deposit quickly", 1, "bank%1:14:00::"),
        ("we sat on the river bank fishing", 5, "bank%1:17:01::"),
        ("water flooded the bank after rain", 3, "bank%1:17:01::"),
        ("the bank paid money on deposit", 1, "bank%1:14:00::"),
        ("the muddy bank beside the river", 2, "bank%1:17:01::"),
    ];
    let instances = texts
        .iter()
        .enumerate()
        .map(|(i, (t, idx, key))| AnnotatedInstance {
            instance_id: format!("d.s{i}.t0"),
            sentence: Arc::new(Sentence::from_text(t, format!("d.s{i}")).unwrap()),
            target_index: *idx,
            lemma: "bank".into(),
            pos: Pos::Noun,
            gold: SenseKey::new(*key).unwrap(),
            extra_gold: vec![],
        })
        .collect();
    (AnnotatedCorpus::new(instances).unwrap(), inv)
}

fn accuracy(model: &ToyBiEncoder, corpus: &AnnotatedCorpus, inv: &SenseInventory) -> f64 {
    let correct = corpus
        .instances()
        .iter()
        .filter(|i| {
            let c = inv.senses_of(&i.lemma, i.pos);
            model.predict(&i.sentence, i.target_index, c).map(|k| &c[k].key) == Some(&i.gold)
        })
        .count();
    correct as f64 / corpus.len() as f64
}

#[test]
fn learns_separable_fixture() {
    let (corpus, inv) = separable();
    let hyper = ToyHyper {
        epochs: 50,
        ..ToyHyper::default()
    };
    let (model, report) = toy_train(&corpus, &inv, &hyper).unwrap();
    assert_eq!(accuracy(&model, &corpus, &inv), 1.0);
    let first = report.epochs.first().unwrap().mean_loss;
    let last = report.epochs.last().unwrap().mean_loss;
    assert!(last < first);
}

#[test]
fn zero_epochs_is_initialisation() {
    let (corpus, inv) = separable();
    let hyper = ToyHyper {
        epochs: 0,
        ..ToyHyper::default()
    };
    let (model, report) = toy_train(&corpus, &inv, &hyper).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(model, ToyBiEncoder::init(&corpus, &inv, &hyper));
}

#[test]
fn training_is_deterministic() {
    let bench = common::small_bench(3);
    let a = common::trained(&bench, 9, 3);
    let b = common::trained(&bench, 9, 3);
    assert_eq!(a, b);
    assert_ne!(a, common::trained(&bench, 10, 3));
}

#[test]
fn synthetic_loss_goes_down() {
    let bench = common::small_bench(0);
    let hyper = ToyHyper {
        epochs: 8,
        ..ToyHyper::default()
    };
    let (_, report) = toy_train(&bench.train, &bench.inventory, &hyper).unwrap();
    let losses: Vec<f64> = report.epochs.iter().map(|e| e.mean_loss).collect();
    assert!(losses.last().unwrap() < &(0.5 * losses[0]), "{losses:?}");
}

#[test]
fn checkpoint_roundtrip_file() {
    let bench = common::small_bench(1);
    let model = common::trained(&bench, 1, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    assert_eq!(ToyBiEncoder::load(&path).unwrap(), model);
    let truncated: String = model.to_checkpoint_string().lines().take(7).collect::<Vec<_>>().join("\n");
    assert!(ToyBiEncoder::from_checkpoint_str(&truncated, Path::new("x")).is_err());
}
