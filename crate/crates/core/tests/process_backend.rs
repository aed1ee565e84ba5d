mod common;

use std::path::PathBuf;

use smsmix::augmentor::{generate, select_lfs_targets, AugmentationPlan, SelectionPolicy};
use smsmix::backends::{AcceptabilityJudge, InfillEngine, ProcessBackend, SaliencyBackend, TargetEncoder};
use smsmix::corpus::Sentence;
use smsmix::error::Stage;
use smsmix::mixer::{MixConfig, MixDeps, Mode};
use smsmix::seed::rng_from_seed;
use smsmix::Error;

const ADAPTER: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    op = req["op"]
    toks = req["tokens"]
    if op == "saliency":
        t = req["target_index"]
        out = {"scores": [1.0 / (1 + abs(i - t)) if i != t else 0.0 for i in range(len(toks))]}
    elif op == "infill":
        n = sum(1 for x in toks if x.startswith("<extra_id_"))
        out = {"infills": [["and"]] * n}
    elif op == "accept":
        out = {"accept": len(toks) >= 5}
    elif op == "encode":
        out = {"vector": [float(len(toks)), float(req["target_index"])]}
    else:
        out = {"error": "unknown op " + op}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
"#;

fn adapter() -> Option<(tempfile::TempDir, String)> {
    let python = ["python3", "python"].into_iter().find(|p| {
        std::process::Command::new(p)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })?;
    let dir = tempfile::tempdir().unwrap();
    let script: PathBuf = dir.path().join("adapter.py");
    std::fs::write(&script, ADAPTER).unwrap();
    let command = format!("{python} {}", script.display());
    Some((dir, command))
}

#[test]
fn adapter_serves_every_role() {
    let Some((_dir, command)) = adapter() else {
        eprintln!("no python interpreter; skipping");
        return;
    };
    let backend = ProcessBackend::spawn(&command).unwrap();
    let bench = common::small_bench(0);
    let inst = &bench.train.instances()[0];
    let cands = bench.inventory.senses_of(&inst.lemma, inst.pos);
    let s = backend.token_saliency(inst, cands).unwrap();
    assert_eq!(s.len(), inst.sentence.len());
    assert_eq!(s.scores()[inst.target_index], 0.0);

    let sentence = Sentence::from_text("a b c d e f", "x").unwrap();
    assert!(backend.accept(&sentence).unwrap());
    assert_eq!(backend.encode(&sentence, 2).unwrap(), vec![6.0, 2.0]);

    let table = common::table(&bench);
    let targets = select_lfs_targets(&table, 0.5, SelectionPolicy::Random, &mut rng_from_seed(0)).unwrap();
    let deps = MixDeps {
        saliency: &backend,
        infill: &backend as &dyn InfillEngine,
        judge: &backend as &dyn AcceptabilityJudge,
        inventory: &bench.inventory,
        corpus: &bench.train,
        table: &table,
        external: Some(&bench.external),
        config: MixConfig::default(),
    };
    assert!(!deps.concurrent());
    let ds = generate(&bench.train, &AugmentationPlan::new(targets.clone(), Mode::External, 0), &deps, 4).unwrap();
    assert_eq!(ds.stats.accepted, 3 * targets.len());
    for ex in ds.accepted() {
        assert_eq!(ex.provenance.infills, vec![vec!["and".to_string()]; 2]);
    }
}

#[test]
fn missing_program_is_a_backend_error() {
    let err = ProcessBackend::spawn("/nonexistent/adapter --flag").err().unwrap();
    assert!(err.is_backend());
    assert!(matches!(err, Error::Backend { stage: Stage::Saliency, .. }));
}

#[test]
fn adapter_error_reply_is_tagged() {
    let Some((dir, _)) = adapter() else {
        return;
    };
    let script = dir.path().join("broken.py");
    std::fs::write(&script, "import sys\nfor l in sys.stdin:\n    print('{\"error\": \"boom\"}', flush=True)\n").unwrap();
    let backend = ProcessBackend::spawn(&format!("python3 {}", script.display())).unwrap();
    let sentence = Sentence::from_text("a b c d e", "x").unwrap();
    match backend.accept(&sentence) {
        Err(Error::Backend { stage: Stage::Judge, msg }) => assert!(msg.contains("boom")),
        other => panic!("unexpected {other:?}"),
    }
}
