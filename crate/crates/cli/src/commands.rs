use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use dandelion::batcher::{build_epoch_plan, BatchConfig};
use dandelion::evalkit::{average_runs, build_task, evaluate, MetricsReport, TaskMode};
use dandelion::experiment::{
    build_tasks, run_variant, two_by_two, AblationRow, ExperimentConfig, Splits, Variant,
};
use dandelion::miner::{select_training_pairs, MinerConfig, MinerMode, TrainingPair};
use dandelion::synth::{generate, SynthConfig};
use dandelion::trainer::{
    epoch_vectors, run_training, Checkpoint, Encoder, Execution, HistoryRecord, Identity, ProjectionModel,
    TrainConfig, Validation,
};
use dandelion::Corpus;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::table::{fixed, render};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or paths: exit 1.
    Usage(String),
    /// Unreadable or inconsistent data: exit 2.
    Data(anyhow::Error),
}

impl From<dandelion::Error> for CliError {
    fn from(e: dandelion::Error) -> Self {
        match e {
            dandelion::Error::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Mine(a) => mine(a),
        Command::Plan(a) => plan(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Inputs must never be overwritten by a subcommand's own outputs.
fn ensure_distinct(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| absolute(i) == absolute(o)) {
            return Err(CliError::Usage(format!("output {} would overwrite input {}", o.display(), i.display())));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create_file(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).context("serialising record")?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Ok(Corpus::load(path)?)
}

fn batch_config(opts: &BatchOpts, seed: u64) -> BatchConfig {
    BatchConfig {
        batch_size: opts.batch_size,
        clusters_per_batch: opts.clusters_per_batch,
        neighbor_cap: opts.neighbor_cap,
        seed,
        mode: opts.batching,
        ..BatchConfig::default()
    }
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: opts.epochs,
        shards_per_step: opts.shards_per_step,
        temperature: opts.temperature,
        learning_rate: opts.learning_rate,
        seed,
        execution: if opts.sequential { Execution::Sequential } else { Execution::Concurrent },
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_authors: a.authors,
        docs_per_author: a.docs_per_author,
        num_topics: a.topics,
        dim: a.dim,
        style_weight: a.style_weight,
        noise_sigma: a.noise,
        topics_per_author: a.topics_per_author,
        seed: a.seed,
    };
    let corpus = generate(&cfg)?;
    let mut w = create_file(&a.out)?;
    corpus.write_to(&mut w)?;
    w.flush()?;
    println!(
        "wrote {} documents by {} authors to {}",
        corpus.len(),
        corpus.num_authors(),
        a.out.display()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let out_corpus = a.out.join("corpus.jsonl");
    let out_validation = a.out.join("validation.jsonl");
    let out_test = a.out.join("test.jsonl");
    let out_summary = a.out.join("summary.json");
    ensure_distinct(&[&a.corpus], &[&out_corpus, &out_validation, &out_test, &out_summary])?;
    let corpus = load_corpus(&a.corpus)?;
    let kept = corpus.filter_min_words(a.min_words);
    if a.validation_authors + a.test_authors >= kept.num_authors().max(1) {
        return Err(CliError::Usage(format!(
            "cannot hold out {} of {} authors",
            a.validation_authors + a.test_authors,
            kept.num_authors()
        )));
    }
    let (rest, test) = kept.split_authors(a.test_authors, a.split_seed);
    let (train, validation) = rest.split_authors(a.validation_authors, a.split_seed.wrapping_add(1));
    create_dir(&a.out)?;
    train.save(&out_corpus)?;
    for (n, part, path) in [(a.validation_authors, &validation, &out_validation), (a.test_authors, &test, &out_test)] {
        if n > 0 {
            part.save(path)?;
        }
    }

    let genres: BTreeSet<&str> = kept.documents().iter().map(|d| d.genre.as_str()).collect();
    let rows: Vec<Vec<String>> = genres
        .iter()
        .map(|g| {
            let docs: Vec<_> = kept.documents().iter().filter(|d| d.genre == *g).collect();
            let authors: BTreeSet<&str> = docs.iter().map(|d| d.author_id.as_str()).collect();
            vec![g.to_string(), docs.len().to_string(), authors.len().to_string()]
        })
        .collect();
    print!("{}", render(&["genre", "documents", "authors"], &rows));
    let summary = json!({
        "documents": kept.len(),
        "authors": kept.num_authors(),
        "genres": genres.len(),
        "dimension": kept.dimension(),
        "dropped_documents": corpus.len() - kept.len(),
        "min_words": a.min_words,
        "train_authors": train.num_authors(),
        "validation_authors": validation.num_authors(),
        "test_authors": test.num_authors(),
    });
    let mut w = create_file(&out_summary)?;
    writeln!(w, "{summary}")?;
    w.flush()?;
    println!(
        "kept {} of {} documents; authors train={} validation={} test={}",
        kept.len(),
        corpus.len(),
        train.num_authors(),
        validation.num_authors(),
        test.num_authors()
    );
    Ok(())
}

fn mine(a: MineArgs) -> Result<()> {
    let out_pairs = a.out.join("pairs.jsonl");
    ensure_distinct(&[&a.corpus], &[&out_pairs])?;
    let cfg = MinerConfig {
        mode: a.mode,
        ceiling: a.ceiling,
        seed: a.seed,
    };
    cfg.validate()?;
    let corpus = load_corpus(&a.corpus)?.filter_min_words(a.min_words);
    let pairs = select_training_pairs(&corpus, &cfg)?;
    write_jsonl(&out_pairs, &pairs)?;
    let eligible = corpus.author_index().values().filter(|d| d.len() >= 2).count();
    println!("kept {} of {} eligible authors -> {}", pairs.len(), eligible, out_pairs.display());
    Ok(())
}

fn plan(a: PlanArgs) -> Result<()> {
    let out_plan = a.out.join(format!("plan-epoch-{}.txt", a.epoch));
    let mut inputs = vec![a.corpus.as_path(), a.pairs.as_path()];
    inputs.extend(a.checkpoint.as_deref());
    ensure_distinct(&inputs, &[&out_plan])?;
    let corpus = load_corpus(&a.corpus)?;
    let pairs: Vec<TrainingPair> = read_jsonl(&a.pairs)?;
    let model = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.model,
        None => ProjectionModel::init(corpus.dimension().ok_or(dandelion::Error::EmptyInput)?, a.seed)?,
    };
    let vectors = epoch_vectors(&model, &corpus, &pairs)?;
    let plan = build_epoch_plan(&pairs, &vectors, &batch_config(&a.batch, a.seed), a.epoch)?;
    let mut w = create_file(&out_plan)?;
    plan.write_to(&mut w)?;
    w.flush()?;
    println!(
        "{} authors in {} batches ({} batching) -> {}",
        plan.num_authors(),
        plan.batches.len(),
        plan.mode,
        out_plan.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let out_model = a.out.join("model.bin");
    let out_history = a.out.join("history.jsonl");
    let out_steps = a.out.join("steps.jsonl");
    let plans_dir = a.out.join("plans");
    ensure_distinct(
        &[&a.corpus, &a.pairs, &a.validation],
        &[&out_model, &out_history, &out_steps, &plans_dir],
    )?;
    let corpus = load_corpus(&a.corpus)?;
    let validation = load_corpus(&a.validation)?;
    let pairs: Vec<TrainingPair> = read_jsonl(&a.pairs)?;
    if pairs.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!("{} holds no training pairs", a.pairs.display())));
    }
    let task = build_task(&validation, a.validation_mode, a.task_seed, 1)?;
    let cfg = train_config(&a.train, a.seed);
    let outcome = run_training(
        &corpus,
        &pairs,
        &batch_config(&a.batch, a.seed),
        &cfg,
        &Validation {
            corpus: &validation,
            task: &task,
        },
    )?;

    create_dir(&plans_dir)?;
    for plan in &outcome.plans {
        let mut w = create_file(&plans_dir.join(format!("plan-epoch-{}.txt", plan.epoch)))?;
        plan.write_to(&mut w)?;
        w.flush()?;
    }
    let history: Vec<HistoryRecord> = outcome.history.iter().map(HistoryRecord::from).collect();
    write_jsonl(&out_history, &history)?;
    let steps: Vec<Value> = outcome
        .step_losses
        .iter()
        .enumerate()
        .map(|(i, l)| json!({"step": i + 1, "mean_shard_loss": l}))
        .collect();
    write_jsonl(&out_steps, &steps)?;
    Checkpoint {
        model: outcome.best.model.clone(),
        epoch: outcome.best.epoch as u64,
        seed: a.seed,
        temperature: cfg.temperature,
        learning_rate: cfg.learning_rate,
    }
    .save(&out_model)?;

    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            let mark = if h.epoch == outcome.best.epoch { "*" } else { "" };
            vec![
                format!("{}{mark}", h.epoch),
                fixed(h.mean_train_loss),
                fixed(h.validation_success_at_8),
            ]
        })
        .collect();
    print!("{}", render(&["epoch", "train loss", "val Success@8"], &rows));
    println!("best epoch {} -> {}", outcome.best.epoch, out_model.display());
    Ok(())
}

fn metrics_rows(reports: &[MetricsReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        for g in r.by_genre() {
            rows.push(vec![
                r.mode.to_string(),
                g.genre,
                g.num_queries.to_string(),
                fixed(g.success_at_8),
                fixed(g.mrr),
            ]);
        }
        rows.push(vec![
            r.mode.to_string(),
            "all".into(),
            r.num_queries.to_string(),
            fixed(r.success_at_8),
            fixed(r.mrr),
        ]);
    }
    rows
}

const METRIC_HEADERS: [&str; 5] = ["mode", "genre", "queries", "Success@8", "MRR"];

fn eval(a: EvalArgs) -> Result<()> {
    let out_metrics = a.out.join("metrics.jsonl");
    let mut inputs = vec![a.corpus.as_path()];
    inputs.extend(a.checkpoint.iter().map(PathBuf::as_path));
    ensure_distinct(&inputs, &[&out_metrics])?;
    let corpus = load_corpus(&a.corpus)?;
    let encoders: Vec<Box<dyn Encoder>> = if a.checkpoint.is_empty() {
        vec![Box::new(Identity(corpus.dimension().ok_or(dandelion::Error::EmptyInput)?))]
    } else {
        a.checkpoint
            .iter()
            .map(|p| Ok(Box::new(Checkpoint::load(p)?.model) as Box<dyn Encoder>))
            .collect::<Result<_>>()?
    };
    let tasks = build_tasks(&corpus, &a.modes, a.task_seed)?;
    let reports = tasks
        .iter()
        .map(|t| {
            let runs = encoders
                .iter()
                .map(|e| evaluate(e.as_ref(), &corpus, t))
                .collect::<dandelion::Result<Vec<_>>>()?;
            Ok(average_runs(&runs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&out_metrics, &reports)?;
    print!("{}", render(&METRIC_HEADERS, &metrics_rows(&reports)));
    Ok(())
}

fn ablation_variants(a: &AblateArgs) -> Vec<Variant> {
    let mut variants: Vec<Variant> = a
        .ceilings
        .iter()
        .map(|&c| Variant::new(MinerConfig::hard(c), a.batch.batching))
        .collect();
    if a.grid {
        variants.extend(two_by_two(a.ceiling));
    }
    for &c in &a.clusters {
        let mut v = Variant::new(MinerConfig::hard(a.ceiling), a.batch.batching);
        v.label = format!("{}/C={c}", v.label);
        v.clusters_per_batch = Some(c);
        variants.push(v);
    }
    variants
}

fn ablation_table(rows: &[AblationRow], modes: &[TaskMode]) -> String {
    let mut headers = vec!["variant".to_owned(), "authors".to_owned()];
    headers.extend(modes.iter().map(|m| format!("{m} S@8")));
    headers.push("mean S@8".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone(), r.num_training_authors.to_string()];
            row.extend(modes.iter().map(|&m| r.success_at_8(m).map_or("-".into(), fixed)));
            row.push(if r.reports.is_empty() { "-".into() } else { fixed(r.mean_success_at_8()) });
            row
        })
        .collect();
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    render(&h, &body)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let out_rows = a.out.join("ablation.jsonl");
    ensure_distinct(&[&a.corpus, &a.validation, &a.test], &[&out_rows])?;
    let variants = ablation_variants(&a);
    if variants.is_empty() {
        return Err(CliError::Usage("nothing to ablate: give --ceilings, --grid or --clusters".into()));
    }
    if a.seeds.is_empty() || a.modes.is_empty() {
        return Err(CliError::Usage("--seeds and --modes must not be empty".into()));
    }
    let splits = Splits {
        train: load_corpus(&a.corpus)?,
        validation: load_corpus(&a.validation)?,
        test: load_corpus(&a.test)?,
    };
    let base = ExperimentConfig {
        miner: MinerConfig::default(),
        batch: batch_config(&a.batch, 0),
        train: train_config(&a.train, 0),
        modes: a.modes.clone(),
        validation_mode: a.validation_mode,
        seeds: a.seeds.clone(),
        min_words: a.min_words,
        task_seed: a.task_seed,
    };
    let filtered = splits.train.filter_min_words(a.min_words);
    let mut rows = Vec::new();
    for v in &variants {
        v.miner.validate()?;
        let survivors = select_training_pairs(&filtered, &MinerConfig { seed: a.seeds[0], ..v.miner })?.len();
        let row = if survivors == 0 {
            // nothing to train on: keep the row so sweeps stay aligned
            AblationRow {
                label: v.label.clone(),
                miner_mode: v.miner.mode,
                ceiling: (v.miner.mode == MinerMode::Hard).then_some(v.miner.ceiling),
                batching: v.batching,
                clusters_per_batch: v.clusters_per_batch.unwrap_or(a.batch.clusters_per_batch),
                num_training_authors: 0,
                reports: Vec::new(),
            }
        } else {
            run_variant(&splits, &base, v)?
        };
        rows.push(row);
    }
    write_jsonl(&out_rows, &rows)?;
    print!("{}", ablation_table(&rows, &a.modes));
    Ok(())
}

enum Records {
    Metrics(Vec<MetricsReport>),
    History(Vec<HistoryRecord>),
    Ablation(Vec<AblationRow>),
}

fn from_values<T: DeserializeOwned>(path: &Path, values: Vec<Value>) -> Result<Vec<T>> {
    Ok(values
        .into_iter()
        .map(serde_json::from_value)
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?)
}

fn classify(path: &Path) -> Result<Records> {
    let values: Vec<Value> = read_jsonl(path)?;
    let first = values
        .first()
        .ok_or_else(|| CliError::Data(anyhow::anyhow!("{} is empty", path.display())))?;
    if first.get("per_query").is_some() {
        Ok(Records::Metrics(from_values(path, values)?))
    } else if first.get("validation_success_at_8").is_some() {
        Ok(Records::History(from_values(path, values)?))
    } else if first.get("label").is_some() {
        Ok(Records::Ablation(from_values(path, values)?))
    } else {
        Err(CliError::Data(anyhow::anyhow!("{}: unrecognised record type", path.display())))
    }
}

fn report(a: ReportArgs) -> Result<()> {
    if let Some(s) = &a.summary {
        let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
        ensure_distinct(&inputs, &[s])?;
    }
    let mut summary = serde_json::Map::new();
    let mut push = |kind: &str, v: Value| {
        summary
            .entry(kind)
            .or_insert_with(|| Value::Array(Vec::new()))
            .as_array_mut()
            .expect("array")
            .push(v);
    };
    for path in &a.inputs {
        let file = path.display().to_string();
        println!("== {file}");
        match classify(path)? {
            Records::Metrics(reports) => {
                print!("{}", render(&METRIC_HEADERS, &metrics_rows(&reports)));
                for r in &reports {
                    push(
                        "metrics",
                        json!({"file": file, "mode": r.mode, "success_at_8": r.success_at_8, "mrr": r.mrr, "num_queries": r.num_queries}),
                    );
                }
            }
            Records::History(history) => {
                let rows: Vec<Vec<String>> = history
                    .iter()
                    .map(|h| vec![h.epoch.to_string(), fixed(h.mean_train_loss), fixed(h.validation_success_at_8)])
                    .collect();
                print!("{}", render(&["epoch", "train loss", "val Success@8"], &rows));
                let best = history
                    .iter()
                    .fold(None::<&HistoryRecord>, |b, h| match b {
                        Some(b) if b.validation_success_at_8 >= h.validation_success_at_8 => Some(b),
                        _ => Some(h),
                    })
                    .expect("non-empty");
                push(
                    "history",
                    json!({"file": file, "epochs": history.len(), "best_epoch": best.epoch, "best_validation_success_at_8": best.validation_success_at_8}),
                );
            }
            Records::Ablation(rows) => {
                let mut modes: Vec<TaskMode> = Vec::new();
                for m in rows.iter().flat_map(|r| r.reports.iter().map(|x| x.mode)) {
                    if !modes.contains(&m) {
                        modes.push(m);
                    }
                }
                print!("{}", ablation_table(&rows, &modes));
                for r in &rows {
                    push(
                        "ablation",
                        json!({"file": file, "label": r.label, "num_training_authors": r.num_training_authors,
                               "mean_success_at_8": (!r.reports.is_empty()).then(|| r.mean_success_at_8())}),
                    );
                }
            }
        }
    }
    let record = Value::Object(summary);
    match &a.summary {
        Some(p) => {
            let mut w = create_file(p)?;
            writeln!(w, "{record}")?;
            w.flush()?;
        }
        None => println!("{record}"),
    }
    Ok(())
}
