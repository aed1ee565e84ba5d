mod common;

use std::path::Path;

use common::{code, corpus_args, fixture, p, run, run_owned, stderr, stdout};

fn with(mut base: Vec<String>, extra: &[&str]) -> Vec<String> {
    base.extend(extra.iter().map(|s| s.to_string()));
    base
}

fn cmd(name: &str, data: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![name.to_string()];
    v.extend(corpus_args(data));
    with(with(v, &["--out", p(out)]), extra)
}

fn augment_args(data: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let ext = data.join("external.txt");
    cmd("augment", data, out, &[&["--external", p(&ext)], extra].concat())
}

#[test]
fn stats_counts_match_construction() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let eval_xml = data.join("eval.xml");
    let eval_gold = data.join("eval.gold.txt");
    let o = run_owned(cmd("stats", &data, &out, &["--eval-xml", p(&eval_xml), "--eval-gold", p(&eval_gold)]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["instances"], 300);
    assert_eq!(summary["lemmas"], 5);
    assert_eq!(summary["senses"], 15);
    // 60 per lemma split 54 / 5 / 1
    assert_eq!(summary["mfs_instances"], 5 * 54);
    assert_eq!(summary["lfs_instances"], 5 * 6);
    assert_eq!(summary["eval_subsets"]["MFS"], 5 * 4);
    assert_eq!(summary["eval_subsets"]["LFS"], 5 * 8);
    let tsv = std::fs::read_to_string(out.join("stats.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 5);
    assert!(tsv.lines().nth(1).unwrap().starts_with("bank\tNOUN\t60\t3\t"));
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.xml");
    let o = run(&["stats", "--train-xml", p(&missing), "--train-gold", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.xml"), "{}", stderr(&o));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let xml = dir.path().join("bad.xml");
    let gold = dir.path().join("bad.gold.txt");
    std::fs::write(&xml, "<corpus><sentence><instance id='a'>x</sentence></corpus>").unwrap();
    std::fs::write(&gold, "").unwrap();
    let o = run(&["stats", "--train-xml", p(&xml), "--train-gold", p(&gold), "--out", p(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.xml"));
}

#[test]
fn oversample_writes_copies() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let o = run_owned(augment_args(&data, &out, &["--mode", "oversample", "--per-sense", "4"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = smsmix::augmentor::AugmentedDataset::load(out.join("augmented.jsonl")).unwrap();
    assert_eq!(ds.plan.targets.len(), 5);
    assert_eq!(ds.records.len(), 4 * 5);
    for t in &ds.plan.targets {
        assert_eq!(ds.records.iter().filter(|r| r.label == t.key).count(), 4);
    }
}

#[test]
fn external_identity_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let o = run_owned(augment_args(&data, &out, &["--infill", "identity", "--seed", "7"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let produced = std::fs::read_to_string(out.join("augmented.jsonl")).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/augment_external_identity.jsonl");
    if std::env::var_os("SMSMIX_BLESS").is_some() {
        std::fs::create_dir_all(golden_path.parent().unwrap()).unwrap();
        std::fs::write(&golden_path, &produced).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(produced, golden);
}

#[test]
fn nothing_accepted_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let o = run_owned(augment_args(&data, &out, &["--judge", "reject-all", "--retry-limit", "1"]));
    assert_eq!(code(&o), 3);
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["attempted"], 5 * 3 * 2);
    assert_eq!(summary["accepted"], 0);
}

#[test]
fn unreachable_backend_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let o = run_owned(augment_args(&data, &out, &["--backend", "cmd:/nonexistent/adapter"]));
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = run_owned(augment_args(&data, &out, &["--judge", "cmd:/nonexistent/judge"]));
    assert_eq!(code(&o), 4);
}

#[test]
fn bad_flag_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    for extra in [&["--lfs-fraction", "1.5"][..], &["--mode", "sideways"], &["--infill", "magic"], &["--per-sense", "0"]] {
        let o = run_owned(augment_args(&data, &out, extra));
        assert_eq!(code(&o), 2, "{extra:?}: {}", stderr(&o));
    }
    let o = run_owned(cmd("augment", &data, &out, &[]));
    assert_eq!(code(&o), 2, "external mode needs --external");
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "# oversampling run\ntrain_xml = {}\ntrain-gold = {}\ninventory = {}\nmode = oversample\nper_sense = 2\nseed = 5\n",
            p(&data.join("train.xml")),
            p(&data.join("train.gold.txt")),
            p(&data.join("inventory.tsv"))
        ),
    )
    .unwrap();
    let o = run(&["augment", "--config", p(&conf), "--per-sense", "6", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = smsmix::augmentor::AugmentedDataset::load(out.join("augmented.jsonl")).unwrap();
    assert_eq!(ds.plan.per_sense, 6);
    assert_eq!(ds.plan.seed, 5);
    assert_eq!(ds.plan.mode, smsmix::mixer::Mode::Oversample);

    std::fs::write(&conf, "colour = blue\n").unwrap();
    let o = run(&["augment", "--config", p(&conf), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));
}

fn train_eval(dir: &Path, data: &Path, seeds: &str) -> (String, String) {
    let out = dir.join("run");
    let o = run_owned(augment_args(data, &out, &[]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let aug = out.join("augmented.jsonl");
    let o = run_owned(cmd("train", data, &out, &["--augmented", p(&aug), "--epochs", "3", "--n-seeds", seeds]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ex = data.join("eval.xml");
    let eg = data.join("eval.gold.txt");
    let o = run_owned(cmd("eval", data, &out, &["--eval-xml", p(&ex), "--eval-gold", p(&eg), "--model-dir", p(&out), "--n-seeds", seeds]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (
        std::fs::read_to_string(out.join("report.tsv")).unwrap(),
        std::fs::read_to_string(out.join("metrics.jsonl")).unwrap(),
    )
}

#[test]
fn multi_seed_report_has_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let (report, metrics) = train_eval(dir.path(), &data, "5");
    let header: Vec<&str> = report.lines().nth(1).unwrap().split('\t').collect();
    assert!(header.contains(&"micro_f1_mean") && header.contains(&"macro_f1_std"));
    assert_eq!(report.lines().count(), 2 + 6);
    for s in 0..5 {
        assert!(dir.path().join(format!("run/model.seed{s}.ckpt")).is_file());
    }
    // 3 stage-1 epochs + 1 stage-2 epoch per seed
    assert_eq!(metrics.lines().count(), 5 * 4);
}

#[test]
fn commands_are_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = fixture(a.path(), 300);
    let db = fixture(b.path(), 300);
    assert_eq!(train_eval(a.path(), &da, "2"), train_eval(b.path(), &db, "2"));
    for name in ["augmented.jsonl", "model.seed0.ckpt", "model.seed1.stage1.ckpt"] {
        assert_eq!(
            std::fs::read(a.path().join("run").join(name)).unwrap(),
            std::fs::read(b.path().join("run").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn oracle_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let preds = dir.path().join("oracle.txt");
    let gold = std::fs::read_to_string(data.join("eval.gold.txt")).unwrap();
    let oracle: String = gold
        .lines()
        .map(|l| l.split_whitespace().take(2).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    std::fs::write(&preds, oracle).unwrap();
    let ex = data.join("eval.xml");
    let eg = data.join("eval.gold.txt");
    let o = run_owned(cmd("eval", &data, &out, &["--eval-xml", p(&ex), "--eval-gold", p(&eg), "--predictions", p(&preds)]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    for row in report.lines().skip(2) {
        let f: Vec<&str> = row.split('\t').collect();
        if f[4] != "0" {
            assert_eq!((f[2], f[3]), ("1.000000", "1.000000"), "{row}");
        }
    }
}

#[test]
fn diagnose_duplicated_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.tsv");
    let mut text = String::new();
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..8).map(|_| next()).collect()).collect();
    for origin in ["reference", "augmented"] {
        for r in &rows {
            let v: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("k%1\t{origin}\t{}\n", v.join("\t")));
        }
    }
    std::fs::write(&emb, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["diagnose", "--embeddings", p(&emb), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let overlap = std::fs::read_to_string(out.join("overlap.tsv")).unwrap();
    let score: f64 = overlap.lines().nth(1).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((score - 0.5).abs() <= 0.05, "{score}");
    let plot = std::fs::read_to_string(out.join("plot.tsv")).unwrap();
    assert_eq!(plot.lines().count(), 81);
}

#[test]
fn diagnose_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 300);
    let out = dir.path().join("out");
    let o = run_owned(augment_args(&data, &out, &["--lfs-fraction", "1"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run_owned(cmd("train", &data, &out, &["--epochs", "2"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let aug = out.join("augmented.jsonl");
    let model = out.join("model.seed0.ckpt");
    let o = run_owned(cmd("diagnose", &data, &out, &["--augmented", p(&aug), "--model", p(&model)]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let overlap = std::fs::read_to_string(out.join("overlap.tsv")).unwrap();
    assert_eq!(overlap.lines().filter(|l| !l.starts_with('#')).count(), 1 + 10);
    let plot = std::fs::read_to_string(out.join("plot.tsv")).unwrap();
    assert!(plot.starts_with("x\ty\tsense_key\torigin\n"));
}

#[test]
fn diagnose_too_few_points() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.tsv");
    std::fs::write(&emb, "k%1\treference\t0\t1\nk%1\taugmented\t1\t0\nk%1\treference\t2\t2\n").unwrap();
    let o = run(&["diagnose", "--embeddings", p(&emb), "--out", p(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("directly"));
}
