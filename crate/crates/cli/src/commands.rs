use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use smsmix::augmentor::{self, assemble_training_set, select_lfs_targets, AugmentationPlan, AugmentedDataset};
use smsmix::backends::{
    toy_train, AcceptabilityJudge, ConstJudge, InfillEngine, ProcessBackend, RuleJudge, SaliencyBackend,
    TargetEncoder, TemplateInfiller, ToyBiEncoder, ToyHyper,
};
use smsmix::corpus::{AnnotatedCorpus, ExternalCorpus, FrequencyTable, LengthBounds};
use smsmix::diagnostics::{
    augmented_samples, embed_targets, export_plot_data, overlap_score, project_2d, reference_samples,
    EmbeddingSet, OverlapConfig, RowLabel,
};
use smsmix::inventory::{SenseInventory, SenseKey};
use smsmix::mixer::{HostSaliencyLabel, MixConfig, MixDeps, Mode};
use smsmix::seed::{derive_seed, rng_from_seed};
use smsmix::training::{train_stage_one, train_stage_two, DevSet, TrainConfig};
use smsmix::wsdeval::{
    aggregate, evaluate, format_aggregate, format_reports, read_predictions, score_report, subset_partition,
    EvalReport, ReportMeta, SUBSETS_VERSION,
};

use crate::{AugmentArgs, Cli, Command, CorpusArgs, DiagnoseArgs, EvalArgs, Failure, StatsArgs, ToyArgs, TrainArgs};

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    if cli.n_seeds == 0 {
        return Err(Failure::Config("--n-seeds must be at least 1".into()));
    }
    match &cli.command {
        Command::Stats(a) => stats(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Diagnose(a) => diagnose(cli, a),
    }
}

fn existing<'a>(path: Option<&'a PathBuf>, flag: &str) -> Outcome<&'a Path> {
    let path = path.ok_or_else(|| Failure::Config(format!("--{flag} is required")))?;
    if !path.is_file() {
        return Err(Failure::Config(format!("--{flag}: {} does not exist", path.display())));
    }
    Ok(path)
}

fn load_corpus(xml: Option<&PathBuf>, gold: Option<&PathBuf>, prefix: &str) -> Outcome<AnnotatedCorpus> {
    let xml = existing(xml, &format!("{prefix}-xml"))?;
    let gold = existing(gold, &format!("{prefix}-gold"))?;
    let corpus = AnnotatedCorpus::load(xml, gold)?;
    if corpus.is_empty() {
        return Err(Failure::Data(format!("{}: no annotated instances", xml.display())));
    }
    Ok(corpus)
}

fn load_train(c: &CorpusArgs) -> Outcome<AnnotatedCorpus> {
    load_corpus(c.train_xml.as_ref(), c.train_gold.as_ref(), "train")
}

fn load_inventory(c: &CorpusArgs) -> Outcome<SenseInventory> {
    Ok(SenseInventory::load(existing(c.inventory.as_ref(), "inventory")?)?)
}

fn out_dir(cli: &Cli) -> Outcome<&Path> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Config(format!("cannot create output directory {}: {e}", cli.out.display())))?;
    Ok(&cli.out)
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn seeds(cli: &Cli) -> impl Iterator<Item = u64> {
    cli.seed..cli.seed + cli.n_seeds
}

fn hyper(t: &ToyArgs, seed: u64) -> Outcome<ToyHyper> {
    if t.dim < 2 {
        return Err(Failure::Config("--dim must be at least 2".into()));
    }
    if !(t.lr.is_finite() && t.lr >= 0.0) {
        return Err(Failure::Config("--lr must be finite and nonnegative".into()));
    }
    Ok(ToyHyper {
        dim: t.dim,
        window: t.window,
        lr: t.lr,
        epochs: t.epochs,
        seed,
        ..ToyHyper::default()
    })
}

fn command_spec(spec: &str) -> Option<&str> {
    spec.strip_prefix("cmd:").map(str::trim)
}

// ---------------------------------------------------------------------------

fn stats(cli: &Cli, a: &StatsArgs) -> Outcome {
    let corpus = load_train(&a.corpus)?;
    let table = FrequencyTable::from_corpus(&corpus);
    let out = out_dir(cli)?;

    let mut per_lemma = String::from("lemma\tpos\tn_instances\tn_senses\tmfs_key\tmfs_count\tlfs_count\tmfs_share\n");
    let (mut mfs_total, mut lfs_total) = (0u64, 0u64);
    for ((lemma, pos), senses) in table.counts() {
        let n: u64 = senses.values().sum();
        let mfs = table.mfs(lemma, *pos).expect("attested lemma has an MFS");
        let m = senses[mfs];
        mfs_total += m;
        lfs_total += n - m;
        let _ = writeln!(
            per_lemma,
            "{lemma}\t{pos}\t{n}\t{}\t{mfs}\t{m}\t{}\t{:.4}",
            senses.len(),
            n - m,
            m as f64 / n as f64
        );
    }
    write(&out.join("stats.tsv"), &per_lemma)?;
    write(&out.join("senses.tsv"), &table.to_tsv())?;

    let total = corpus.len() as u64;
    let mut summary = BTreeMap::new();
    summary.insert("instances", serde_json::json!(total));
    summary.insert("lemmas", serde_json::json!(table.n_lemmas()));
    summary.insert("senses", serde_json::json!(table.n_keys()));
    summary.insert("lfs_senses", serde_json::json!(table.lfs_senses().len()));
    summary.insert("mfs_instances", serde_json::json!(mfs_total));
    summary.insert("lfs_instances", serde_json::json!(lfs_total));
    summary.insert("mfs_share", serde_json::json!(mfs_total as f64 / total as f64));
    if a.eval_xml.is_some() || a.eval_gold.is_some() {
        let eval = load_corpus(a.eval_xml.as_ref(), a.eval_gold.as_ref(), "eval")?;
        let mut subsets = BTreeMap::new();
        for (subset, ids) in subset_partition(&eval, &table) {
            subsets.insert(subset.name(), ids.len());
        }
        summary.insert("eval_instances", serde_json::json!(eval.len()));
        summary.insert("eval_subsets", serde_json::json!(subsets));
    }
    let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
    write(&out.join("summary.json"), &format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn saliency_backend(a: &AugmentArgs, corpus: &AnnotatedCorpus, inv: &SenseInventory, seed: u64) -> Outcome<Box<dyn SaliencyBackend>> {
    if let Some(cmd) = command_spec(&a.backend) {
        return Ok(Box::new(ProcessBackend::spawn(cmd)?));
    }
    if a.backend != "toy" {
        return Err(Failure::Config(format!("unknown backend `{}`", a.backend)));
    }
    if let Some(path) = &a.model {
        return Ok(Box::new(ToyBiEncoder::load(existing(Some(path), "model")?)?));
    }
    let (model, _) = toy_train(corpus, inv, &hyper(&a.toy, derive_seed(seed, &["saliency-model"]))?)?;
    Ok(Box::new(model))
}

fn infill_engine(spec: &str) -> Outcome<Box<dyn InfillEngine>> {
    if let Some(cmd) = command_spec(spec) {
        return Ok(Box::new(ProcessBackend::spawn(cmd).map_err(|e| e.at_stage(smsmix::error::Stage::Infill))?));
    }
    match spec {
        "template" => Ok(Box::new(TemplateInfiller::template())),
        "identity" => Ok(Box::new(TemplateInfiller::identity())),
        other => Err(Failure::Config(format!("unknown infill engine `{other}`"))),
    }
}

fn judge(spec: &str) -> Outcome<Box<dyn AcceptabilityJudge>> {
    if let Some(cmd) = command_spec(spec) {
        return Ok(Box::new(ProcessBackend::spawn(cmd).map_err(|e| e.at_stage(smsmix::error::Stage::Judge))?));
    }
    match spec {
        "rule" => Ok(Box::new(RuleJudge::default())),
        "accept-all" => Ok(Box::new(ConstJudge(true))),
        "reject-all" => Ok(Box::new(ConstJudge(false))),
        other => Err(Failure::Config(format!("unknown judge `{other}`"))),
    }
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Outcome {
    if a.per_sense == 0 {
        return Err(Failure::Config("--per-sense must be at least 1".into()));
    }
    if !(a.lfs_fraction > 0.0 && a.lfs_fraction <= 1.0) {
        return Err(Failure::Config("--lfs-fraction must be in (0, 1]".into()));
    }
    if !(a.max_span_fraction > 0.0 && a.max_span_fraction <= 1.0) {
        return Err(Failure::Config("--max-span-fraction must be in (0, 1]".into()));
    }
    let host_label = match a.host_label.as_str() {
        "host" => HostSaliencyLabel::HostGold,
        "source" => HostSaliencyLabel::SourceGold,
        other => return Err(Failure::Config(format!("unknown host label `{other}`"))),
    };
    let external = match (a.mode, &a.external) {
        (Mode::External, None) => return Err(Failure::Config("--external is required for mode=external".into())),
        (_, Some(p)) => Some(ExternalCorpus::load(existing(Some(p), "external")?, LengthBounds::default())?),
        (_, None) => None,
    };
    let corpus = load_train(&a.corpus)?;
    let inventory = load_inventory(&a.corpus)?;
    let table = FrequencyTable::from_corpus(&corpus);

    let mut rng = rng_from_seed(derive_seed(cli.seed, &["targets"]));
    let targets = select_lfs_targets(&table, a.lfs_fraction, a.selection_policy, &mut rng)?;
    let mut plan = AugmentationPlan::new(targets, a.mode, cli.seed);
    plan.per_sense = a.per_sense;
    plan.lfs_fraction = a.lfs_fraction;
    plan.selection_policy = a.selection_policy;
    plan.retry_limit = a.retry_limit;

    let dataset = if a.mode == Mode::Oversample {
        augmentor::oversample(&corpus, &plan)?
    } else {
        let saliency = saliency_backend(a, &corpus, &inventory, cli.seed)?;
        let infill = infill_engine(&a.infill)?;
        let judge = judge(&a.judge)?;
        let deps = MixDeps {
            saliency: saliency.as_ref(),
            infill: infill.as_ref(),
            judge: judge.as_ref(),
            inventory: &inventory,
            corpus: &corpus,
            table: &table,
            external: external.as_ref(),
            config: MixConfig {
                max_fraction: a.max_span_fraction,
                host_saliency_label: host_label,
            },
        };
        augmentor::generate(&corpus, &plan, &deps, cli.workers)?
    };

    let path = out_dir(cli)?.join("augmented.jsonl");
    dataset.save(&path)?;
    let summary = serde_json::json!({
        "targets": plan.targets.len(),
        "mode": plan.mode,
        "attempted": dataset.stats.attempted,
        "accepted": dataset.stats.accepted,
        "rejected": dataset.stats.rejected,
        "skipped_senses": dataset.stats.skipped_senses,
        "output": path.display().to_string(),
    });
    println!("{summary}");
    if dataset.stats.accepted == 0 && !plan.targets.is_empty() {
        return Err(Failure::Data("no augmented example was accepted".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let corpus = load_train(&a.corpus)?;
    let inventory = load_inventory(&a.corpus)?;
    let table = FrequencyTable::from_corpus(&corpus);
    let assembled = match &a.augmented {
        Some(p) => Some(assemble_training_set(&corpus, &AugmentedDataset::load(existing(Some(p), "augmented")?)?)?),
        None => None,
    };
    let dev_corpus = match (&a.dev_xml, &a.dev_gold) {
        (None, None) => None,
        (x, g) => Some(load_corpus(x.as_ref(), g.as_ref(), "dev")?),
    };
    let dev = dev_corpus.as_ref().map(|c| DevSet {
        corpus: c,
        train_table: &table,
    });
    if let Some(lr) = a.stage2_lr {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Failure::Config("--stage2-lr must be finite and nonnegative".into()));
        }
    }
    let out = out_dir(cli)?;
    let mut metrics = String::new();
    for seed in seeds(cli) {
        let h = hyper(&a.toy, seed)?;
        let mut cfg = TrainConfig::new(a.toy.lr, a.toy.epochs, seed);
        cfg.stage2.epochs = a.stage2_epochs;
        if let Some(lr) = a.stage2_lr {
            cfg.stage2.lr = lr;
        }
        cfg.eval_every = a.eval_every;
        let (stage1, m1) = train_stage_one(|| ToyBiEncoder::init(&corpus, &inventory, &h), &corpus, &inventory, &cfg, dev.as_ref())?;
        stage1.save(out.join(format!("model.seed{seed}.stage1.ckpt")))?;
        let mut all = m1;
        let model = match &assembled {
            Some(asm) => {
                let (m, m2) = train_stage_two(&stage1, asm, &inventory, &cfg, dev.as_ref())?;
                all.extend(m2);
                m
            }
            None => stage1,
        };
        model.save(out.join(format!("model.seed{seed}.ckpt")))?;
        for m in &all {
            let mut v = serde_json::to_value(m).expect("serializable metrics");
            v["seed"] = serde_json::json!(seed);
            metrics.push_str(&v.to_string());
            metrics.push('\n');
        }
        let last = all.last().map_or(f64::NAN, |m| m.mean_loss);
        println!("seed {seed}: {} epochs, final loss {last:.6}", all.len());
    }
    write(&out.join("metrics.jsonl"), &metrics)
}

// ---------------------------------------------------------------------------

fn eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    if a.eval_xml.is_empty() || a.eval_xml.len() != a.eval_gold.len() {
        return Err(Failure::Config("give one --eval-gold per --eval-xml (at least one)".into()));
    }
    let train = load_train(&a.corpus)?;
    let table = FrequencyTable::from_corpus(&train);
    let mut datasets = Vec::new();
    for (x, g) in a.eval_xml.iter().zip(&a.eval_gold) {
        let name = x.file_stem().map_or("eval".into(), |s| s.to_string_lossy().into_owned());
        datasets.push((name, load_corpus(Some(x), Some(g), "eval")?));
    }

    let runs: Vec<Vec<EvalReport>> = if let Some(p) = &a.predictions {
        if datasets.len() != 1 {
            return Err(Failure::Config("--predictions scores exactly one evaluation corpus".into()));
        }
        let preds = read_predictions(existing(Some(p), "predictions")?)?;
        let (name, corpus) = &datasets[0];
        let unattempted = corpus.instances().iter().filter(|i| !preds.contains_key(&i.instance_id)).count();
        let meta = ReportMeta {
            seed: cli.seed,
            model_id: format!("file:{}", p.display()),
            subsets_version: SUBSETS_VERSION.to_string(),
            macro_unit: a.macro_unit,
            unattempted,
        };
        vec![vec![score_report(name, &preds, corpus, &table, a.macro_unit, meta)]]
    } else {
        let inventory = load_inventory(&a.corpus)?;
        let paths: Vec<(u64, PathBuf)> = match (&a.model_dir, a.model.is_empty()) {
            (Some(dir), true) => seeds(cli).map(|s| (s, dir.join(format!("model.seed{s}.ckpt")))).collect(),
            (None, false) => a.model.iter().enumerate().map(|(i, p)| (cli.seed + i as u64, p.clone())).collect(),
            _ => return Err(Failure::Config("give either --model (repeatable) or --model-dir".into())),
        };
        let mut runs = Vec::new();
        for (seed, path) in paths {
            let model = ToyBiEncoder::load(existing(Some(&path), "model")?)?;
            runs.push(
                datasets
                    .iter()
                    .map(|(name, c)| evaluate(name, &model, c, &inventory, &table, a.macro_unit, seed))
                    .collect(),
            );
        }
        runs
    };

    let text = if runs.len() == 1 {
        format_reports(&runs[0])
    } else {
        format_aggregate(&aggregate(&runs), runs[0][0].meta.seed)
    };
    write(&out_dir(cli)?.join("report.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn read_embeddings(path: &Path) -> Outcome<EmbeddingSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let bad = |m: &str| Failure::Data(format!("{}:{}: {m}", path.display(), i + 1));
        let mut f = line.split('\t');
        let key = SenseKey::new(f.next().unwrap_or_default()).map_err(|e| bad(&e.to_string()))?;
        let origin = f.next().unwrap_or_default().parse().map_err(|e: smsmix::Error| bad(&e.to_string()))?;
        let v: Vec<f64> = f.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad number"))?;
        vectors.push(v);
        labels.push(RowLabel { sense_key: key, origin });
    }
    Ok(EmbeddingSet::new(vectors, labels)?)
}

fn diagnose(cli: &Cli, a: &DiagnoseArgs) -> Outcome {
    if a.folds < 2 {
        return Err(Failure::Config("--folds must be at least 2".into()));
    }
    let set = if let Some(p) = &a.embeddings {
        read_embeddings(existing(Some(p), "embeddings")?)?
    } else {
        let dataset = AugmentedDataset::load(existing(a.augmented.as_ref(), "augmented")?)?;
        let reference = if a.reference_xml.is_some() || a.reference_gold.is_some() {
            load_corpus(a.reference_xml.as_ref(), a.reference_gold.as_ref(), "reference")?
        } else {
            load_train(&a.corpus)?
        };
        let encoder: Box<dyn TargetEncoder> = match command_spec(&a.encoder) {
            Some(cmd) => Box::new(ProcessBackend::spawn(cmd).map_err(|e| e.at_stage(smsmix::error::Stage::Encode))?),
            None if a.encoder == "toy" => Box::new(ToyBiEncoder::load(existing(a.model.as_ref(), "model")?)?),
            None => return Err(Failure::Config(format!("unknown encoder `{}`", a.encoder))),
        };
        let aug = augmented_samples(&dataset, a.per_sense);
        let senses: std::collections::BTreeSet<SenseKey> = aug.iter().map(|s| s.label.sense_key.clone()).collect();
        let mut rng = rng_from_seed(derive_seed(cli.seed, &["reference"]));
        let refs = reference_samples(&reference, &senses, a.per_sense, &mut rng);
        let samples: Vec<_> = aug.into_iter().chain(refs).collect();
        let (set, skipped) = embed_targets(encoder.as_ref(), &samples);
        if skipped > 0 {
            eprintln!("smsmix: {skipped} examples could not be encoded and were skipped");
        }
        set
    };

    let out = out_dir(cli)?;
    let cfg = OverlapConfig {
        folds: a.folds,
        seed: cli.seed,
        ..OverlapConfig::default()
    };
    let report = overlap_score(&set, &cfg);
    let mut text = String::from("sense_key\toverlap\tn_augmented\tn_reference\n");
    for (key, score) in &report.per_sense {
        let count = |o| set.labels.iter().filter(|l| &l.sense_key == key && l.origin == o).count();
        let _ = writeln!(
            text,
            "{key}\t{score:.6}\t{}\t{}",
            count(smsmix::diagnostics::Origin::Augmented),
            count(smsmix::diagnostics::Origin::Reference)
        );
    }
    for (key, why) in &report.skipped {
        let _ = writeln!(text, "# skipped {key}: {why}");
    }
    write(&out.join("overlap.tsv"), &text)?;
    print!("{text}");

    let coords = project_2d(&set, cli.seed, a.perplexity)?;
    export_plot_data(&coords, &set.labels, out.join("plot.tsv"))?;
    Ok(())
}
