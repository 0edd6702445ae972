use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use docrel::bpe::{read_corpus_lines, train_bpe, train_word_vocab, write_stats, BioTag, Vocab};
use docrel::check::{check_toy_model, toy_config};
use docrel::config::Config;
use docrel::ctd::{build_ctd_dataset, parse_curated, render_stats};
use docrel::dataset::{preprocess_cdr as label_cdr, resplit_train_dev};
use docrel::document::{load_documents, save_documents, write_jsonl, Document, Split};
use docrel::eval::{
    argmax_thresholds, classify, distance_filtered_eval, ensemble as average_sets,
    predicted_labels, prf1, read_predictions, render_cutoffs, span_ner_f1, thresholds_from_map,
    thresholds_to_map, tune_thresholds, tuning_rows, write_predictions, PairKey, PairPrediction,
};
use docrel::example::{build_examples, Example};
use docrel::mesh::MeshTree;
use docrel::model::{Checkpoint, Model, ModelDims};
use docrel::predict::{flatten_pairs, predict_examples, tags_to_bio};
use docrel::pubtator::parse_pubtator_file;
use docrel::schema::RelationSchema;
use docrel::train::{gold_labels, TrainState, Trainer};
use docrel::{Error, Result};
use docrel_tensor::{GradCheckConfig, Stencil};

use crate::manifest::Manifest;
use crate::ConfigArgs;

fn resolve_config(args: &ConfigArgs, base: Option<Config>) -> Result<Config> {
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut config = match (base, args.preset.as_deref()) {
        (Some(b), None) => Config::resolve_from(&b, text.as_deref(), &args.overrides)?,
        (_, preset) => Config::resolve(preset, text.as_deref(), &args.overrides)?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn set_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
    {
        warn!("thread pool already configured: {e}");
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

// ---------------------------------------------------------------- bpe-train

#[derive(Args, Debug)]
pub struct BpeTrainArgs {
    /// Text files with one document per line, or `.jsonl` document files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Vocabulary size, special tokens excluded. 0 means unlimited in word mode.
    #[arg(long, default_value_t = 2500)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Whole-word vocabulary instead of sub-words.
    #[arg(long)]
    word: bool,
    #[arg(long)]
    out: PathBuf,
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(load_documents(path)?.into_iter().map(|d| d.text).collect())
    } else {
        read_corpus_lines(open(path)?, &path.display().to_string())
    }
}

pub fn bpe_train(args: &BpeTrainArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::new("bpe-train", argv);
    let mut texts = Vec::new();
    for p in &args.input {
        texts.extend(read_texts(p)?);
        manifest.input(p)?;
    }
    let corpus = texts.iter().map(String::as_str);
    let vocab = if args.word {
        train_word_vocab(corpus, args.budget, args.min_count)?
    } else {
        train_bpe(corpus, args.budget, args.min_count)?
    };
    create_dir(&args.out)?;
    let vocab_path = args.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let mut stats = Vec::new();
    write_stats(&mut stats, &vocab, texts.iter().map(String::as_str))?;
    let stats_path = write_text(args.out.join("stats.txt"), &String::from_utf8_lossy(&stats))?;
    info!(
        "vocabulary of {} tokens written to {}",
        vocab.len(),
        vocab_path.display()
    );
    manifest.write(&args.out, &[vocab_path, stats_path])
}

// ---------------------------------------------------------------- build-ctd

#[derive(Args, Debug)]
pub struct BuildCtdArgs {
    /// Tab-separated `pmid head relation tail` rows.
    #[arg(long)]
    curated: PathBuf,
    /// PubTator file of entity-tagged abstracts.
    #[arg(long)]
    abstracts: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Abstracts with more word tokens are discarded.
    #[arg(long, default_value_t = docrel::ctd::DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn build_ctd(args: &BuildCtdArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::new("build-ctd", argv);
    for p in [&args.curated, &args.abstracts, &args.schema] {
        manifest.input(p)?;
    }
    let schema = RelationSchema::load(&args.schema)?;
    let curated = parse_curated(open(&args.curated)?, &args.curated.display().to_string())?;
    let parsed = parse_pubtator_file(&args.abstracts)?;
    for e in &parsed.errors {
        warn!("{e}");
    }
    let ds = build_ctd_dataset(&curated, &parsed.documents, &schema, args.max_tokens)?;

    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        let docs: Vec<Document> = ds
            .documents
            .iter()
            .filter(|d| d.split == Some(split))
            .cloned()
            .collect();
        let path = split_file(&args.out, split);
        save_documents(&path, &docs)?;
        outputs.push(path);
    }
    let schema_path = args.out.join("schema.toml");
    ds.schema.save(&schema_path)?;
    outputs.push(schema_path);
    let mut stats = render_stats(&ds);
    let _ = writeln!(
        stats,
        "abstract_records_skipped\t{}",
        parsed.skipped_records
    );
    outputs.push(write_text(args.out.join("stats.txt"), &stats)?);
    info!(
        "{} documents written to {}",
        ds.documents.len(),
        args.out.display()
    );
    manifest.write(&args.out, &outputs)
}

// ----------------------------------------------------------- preprocess-cdr

#[derive(Args, Debug)]
pub struct PreprocessCdrArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// `child TAB parent` hierarchy used for hypernym filtering.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn preprocess_cdr(args: &PreprocessCdrArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::new("preprocess-cdr", argv);
    let splits: Vec<(Split, &PathBuf)> = [
        (Split::Train, &args.train),
        (Split::Dev, &args.dev),
        (Split::Test, &args.test),
    ]
    .into_iter()
    .filter_map(|(s, p)| p.as_ref().map(|p| (s, p)))
    .collect();
    if splits.is_empty() {
        return Err(Error::Config(
            "give at least one of --train, --dev, --test".into(),
        ));
    }
    manifest.input(&args.mesh)?;
    manifest.input(&args.schema)?;
    let schema = RelationSchema::load(&args.schema)?;
    let mesh = MeshTree::load(&args.mesh)?;

    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for &(split, path) in &splits {
        manifest.input(path)?;
        let parsed = parse_pubtator_file(path)?;
        for e in &parsed.errors {
            warn!("{e}");
        }
        skipped.push((split, parsed.skipped_records));
        docs.extend(parsed.documents.into_iter().map(|mut d| {
            d.split = Some(split);
            d
        }));
    }
    let (docs, report) = label_cdr(docs, &schema, &mesh);

    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for &(split, _) in &splits {
        let part: Vec<Document> = docs
            .iter()
            .filter(|d| d.split == Some(split))
            .cloned()
            .collect();
        let path = split_file(&args.out, split);
        save_documents(&path, &part)?;
        outputs.push(path);
    }
    let mut stats = report.render();
    for (split, n) in skipped {
        let _ = writeln!(stats, "records_skipped\t{split}\t{n}");
    }
    outputs.push(write_text(args.out.join("stats.txt"), &stats)?);
    info!("{} documents written to {}", docs.len(), args.out.display());
    manifest.write(&args.out, &outputs)
}

// -------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training documents (`.jsonl` with labeled pairs).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Existing vocabulary; otherwise one is learned from the training text.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Pre-trained token vectors, `token v1 .. vd` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn pool_and_resplit(
    train: Vec<Document>,
    dev: Vec<Document>,
    n_train: usize,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    let pooled: Vec<Document> = train.into_iter().chain(dev).collect();
    if n_train == 0 || n_train >= pooled.len() {
        return Err(Error::Config(format!(
            "resplit_train = {n_train} must be between 1 and {} (pooled documents - 1)",
            pooled.len().saturating_sub(1)
        )));
    }
    let docs = resplit_train_dev(pooled, n_train, seed);
    Ok(docs
        .into_iter()
        .partition(|d| d.split == Some(Split::Train)))
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let config = resolve_config(&args.config, None)?;
    set_threads(config.threads);
    let mut manifest = Manifest::new("train", argv).with_config(&config);
    for p in [
        Some(&args.train),
        Some(&args.dev),
        Some(&args.schema),
        args.vocab.as_ref(),
        args.embeddings.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        manifest.input(p)?;
    }
    let schema = RelationSchema::load(&args.schema)?;
    let (mut train_docs, mut dev_docs) = (load_documents(&args.train)?, load_documents(&args.dev)?);
    if config.resplit_train > 0 {
        (train_docs, dev_docs) =
            pool_and_resplit(train_docs, dev_docs, config.resplit_train, config.seed)?;
        info!(
            "re-split into {} train and {} dev documents",
            train_docs.len(),
            dev_docs.len()
        );
    }
    let vocab = match &args.vocab {
        Some(p) => Vocab::load(p)?,
        None => train_bpe(
            train_docs.iter().map(|d| d.text.as_str()),
            config.bpe_budget,
            config.min_count,
        )?,
    };
    let mc = config.model();
    let train_ex = build_examples(&train_docs, &vocab, &schema, &mc)?;
    let dev_ex = build_examples(&dev_docs, &vocab, &schema, &mc)?;
    let mut model = Model::init(mc, ModelDims::new(&vocab, &schema), config.seed)?;
    if let Some(p) = &args.embeddings {
        let n = model.import_embeddings(&vocab, open(p)?, &p.display().to_string())?;
        info!("imported {n} embedding rows");
    }

    let mut trainer = Trainer::new(
        TrainState::new(model),
        &config,
        &train_ex,
        &dev_ex,
        schema.class_names(),
    )?;
    trainer.run(None, |_| {})?;
    let log = trainer.log.clone();
    let (model, thresholds) = trainer.finish()?;

    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    let log_path = args.out.join("log.jsonl");
    let mut log_bytes = Vec::new();
    write_jsonl(&mut log_bytes, &log)?;
    std::fs::write(&log_path, &log_bytes).map_err(|e| Error::io(&log_path, e))?;
    outputs.push(log_path);

    let dev_preds = flatten_pairs(&predict_examples(&model, &dev_ex)?);
    let class_names = schema.class_names();
    let t = thresholds_from_map(&thresholds, &class_names);
    let report = prf1(
        &predicted_labels(&dev_preds, &t),
        &gold_labels(&dev_ex),
        &class_names,
    )?;
    outputs.push(write_text(
        args.out.join("dev_report.txt"),
        &report.render(),
    )?);
    outputs.push(write_json(args.out.join("thresholds.json"), &thresholds)?);
    outputs.push(write_text(args.out.join("config.toml"), &config.to_toml())?);
    let vocab_path = args.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    outputs.push(vocab_path);
    let ckpt_path = args.out.join("model.ckpt");
    Checkpoint {
        model,
        schema,
        vocab,
        thresholds: Some(thresholds),
    }
    .save(&ckpt_path)?;
    outputs.push(ckpt_path);
    info!(
        "dev micro-F1 with tuned thresholds: {:.4}",
        report.micro_f1()
    );
    manifest.write(&args.out, &outputs)
}

// ------------------------------------------------------------------ predict

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Documents to score (`.jsonl`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct TagRecord {
    doc_id: String,
    tags: Vec<String>,
}

pub fn predict(args: &PredictArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::new("predict", argv);
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.input)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let docs = load_documents(&args.input)?;
    let examples = build_examples(&docs, &ckpt.vocab, &ckpt.schema, &ckpt.model.config)?;
    let preds = predict_examples(&ckpt.model, &examples)?;
    let class_names = ckpt.schema.class_names();
    let thresholds = match &ckpt.thresholds {
        Some(m) => thresholds_from_map(m, &class_names),
        None => argmax_thresholds(class_names.len()),
    };

    create_dir(&args.out)?;
    let pairs = flatten_pairs(&preds);
    let mut outputs = vec![write_text(
        args.out.join("predictions.jsonl"),
        &write_predictions(&pairs, &class_names),
    )?];
    let mut decided = String::from("doc_id\thead\trelation\ttail\tprobability\n");
    for p in &pairs {
        let c = classify(&p.probs, &thresholds);
        if c != 0 {
            let k = &p.key;
            let _ = writeln!(
                decided,
                "{}\t{}\t{}\t{}\t{:.6}",
                k.doc_id, k.head, class_names[c], k.tail, p.probs[c]
            );
        }
    }
    outputs.push(write_text(args.out.join("relations.tsv"), &decided)?);
    let tags: Vec<TagRecord> = examples
        .iter()
        .zip(&preds)
        .map(|(ex, p)| TagRecord {
            doc_id: ex.doc_id.clone(),
            tags: tags_to_bio(&p.tags, &ckpt.schema)
                .iter()
                .map(ToString::to_string)
                .collect(),
        })
        .collect();
    let tags_path = args.out.join("tags.jsonl");
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &tags)?;
    std::fs::write(&tags_path, bytes).map_err(|e| Error::io(&tags_path, e))?;
    outputs.push(tags_path);
    info!(
        "scored {} pairs in {} documents",
        pairs.len(),
        examples.len()
    );
    manifest.write(&args.out, &outputs)
}

// ----------------------------------------------------------------- evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Per-class probabilities written by `predict` or `ensemble`.
    #[arg(long)]
    predictions: PathBuf,
    /// Gold documents (`.jsonl`).
    #[arg(long)]
    gold: PathBuf,
    /// Supplies the schema, vocabulary and default thresholds.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Thresholds JSON overriding those in the checkpoint.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Mention-distance cutoffs in sub-word tokens, ascending, e.g. `11,25,50,100,500`.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Vec<usize>,
    /// Predicted tags written by `predict`, for span-level NER scores in `ner.json`.
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_thresholds(path: &Path) -> Result<BTreeMap<String, f64>> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn gold_examples(path: &Path, ckpt: &Checkpoint) -> Result<Vec<Example>> {
    build_examples(
        &load_documents(path)?,
        &ckpt.vocab,
        &ckpt.schema,
        &ckpt.model.config,
    )
}

pub fn evaluate(args: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::new("evaluate", argv);
    for p in [
        Some(&args.predictions),
        Some(&args.gold),
        Some(&args.checkpoint),
        args.thresholds.as_ref(),
        args.tags.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        manifest.input(p)?;
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let class_names = ckpt.schema.class_names();
    let thresholds = match (&args.thresholds, &ckpt.thresholds) {
        (Some(p), _) => thresholds_from_map(&load_thresholds(p)?, &class_names),
        (None, Some(m)) => thresholds_from_map(m, &class_names),
        (None, None) => argmax_thresholds(class_names.len()),
    };
    let examples = gold_examples(&args.gold, &ckpt)?;
    let gold = gold_labels(&examples);
    let preds = read_predictions(
        open(&args.predictions)?,
        &class_names,
        &args.predictions.display().to_string(),
    )?;
    let predicted = predicted_labels(&preds, &thresholds);
    let report = prf1(&predicted, &gold, &class_names)?;

    create_dir(&args.out)?;
    let rendered = report.render();
    print!("{rendered}");
    let mut outputs = vec![
        write_text(args.out.join("metrics.txt"), &rendered)?,
        write_text(args.out.join("metrics.jsonl"), &report.to_jsonl())?,
    ];
    if !args.cutoffs.is_empty() {
        let distances: BTreeMap<PairKey, usize> = examples
            .iter()
            .flat_map(|ex| {
                ex.pairs.iter().map(|p| {
                    let key = PairKey {
                        doc_id: ex.doc_id.clone(),
                        head: p.head.clone(),
                        tail: p.tail.clone(),
                    };
                    (key, p.distance())
                })
            })
            .collect();
        let rows =
            distance_filtered_eval(&predicted, &gold, &distances, &args.cutoffs, &class_names)?;
        let table = render_cutoffs(&rows);
        print!("{table}");
        outputs.push(write_text(args.out.join("cutoffs.tsv"), &table)?);
    }
    if let Some(p) = &args.tags {
        let records: Vec<TagRecord> =
            docrel::document::read_jsonl(open(p)?, &p.display().to_string())?;
        let by_doc: BTreeMap<&str, &TagRecord> =
            records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
        let mut predicted_tags = Vec::with_capacity(examples.len());
        let mut gold_tags = Vec::with_capacity(examples.len());
        for ex in &examples {
            let rec = by_doc.get(ex.doc_id.as_str()).ok_or_else(|| {
                Error::Data(format!("no predicted tags for document {}", ex.doc_id))
            })?;
            let tags = rec
                .tags
                .iter()
                .map(|t| t.parse())
                .collect::<Result<Vec<BioTag>>>()?;
            predicted_tags.push(tags);
            gold_tags.push(tags_to_bio(&ex.tags, &ckpt.schema));
        }
        let ner = span_ner_f1(&predicted_tags, &gold_tags)?;
        println!(
            "ner spans: P {:.4}  R {:.4}  F1 {:.4}  ({} tags repaired)",
            ner.precision, ner.recall, ner.f1, ner.repairs
        );
        outputs.push(write_json(args.out.join("ner.json"), &ner)?);
    }
    manifest.write(&args.out, &outputs)
}

// ----------------------------------------------------------------- ensemble

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Prediction files of the member models on the evaluation set.
    #[arg(long, required = true, num_args = 2..)]
    predictions: Vec<PathBuf>,
    /// Prediction files of the same members on dev, in the same order.
    #[arg(long, required = true, num_args = 2..)]
    dev_predictions: Vec<PathBuf>,
    /// Gold dev documents used to re-tune thresholds.
    #[arg(long)]
    dev_gold: PathBuf,
    /// Any member checkpoint; supplies the schema and vocabulary.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_sets(
    paths: &[PathBuf],
    class_names: &[String],
    manifest: &mut Manifest,
) -> Result<Vec<Vec<PairPrediction>>> {
    paths
        .iter()
        .map(|p| {
            manifest.input(p)?;
            read_predictions(open(p)?, class_names, &p.display().to_string())
        })
        .collect()
}

pub fn ensemble(args: &EnsembleArgs, argv: &[String]) -> Result<()> {
    if args.predictions.len() != args.dev_predictions.len() {
        return Err(Error::Config(
            "--predictions and --dev-predictions need the same number of files".into(),
        ));
    }
    let mut manifest = Manifest::new("ensemble", argv);
    manifest.input(&args.dev_gold)?;
    manifest.input(&args.checkpoint)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let class_names = ckpt.schema.class_names();
    let test = average_sets(&read_sets(&args.predictions, &class_names, &mut manifest)?)?;
    let dev = average_sets(&read_sets(
        &args.dev_predictions,
        &class_names,
        &mut manifest,
    )?)?;

    let gold = gold_labels(&gold_examples(&args.dev_gold, &ckpt)?);
    let (probs, labels) = tuning_rows(&dev, &gold)?;
    let thresholds = thresholds_to_map(
        &tune_thresholds(&probs, &labels, &class_names),
        &class_names,
    );

    create_dir(&args.out)?;
    let outputs = vec![
        write_text(
            args.out.join("predictions.jsonl"),
            &write_predictions(&test, &class_names),
        )?,
        write_text(
            args.out.join("dev_predictions.jsonl"),
            &write_predictions(&dev, &class_names),
        )?,
        write_json(args.out.join("thresholds.json"), &thresholds)?,
    ];
    info!(
        "averaged {} members over {} pairs",
        args.predictions.len(),
        test.len()
    );
    manifest.write(&args.out, &outputs)
}

// --------------------------------------------------------------- grad-check

#[derive(ValueEnum, Debug, Clone, Copy)]
enum StencilArg {
    Three,
    Five,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Starting finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = StencilArg::Five)]
    stencil: StencilArg,
    /// Halvings of the step allowed while a stencil point crosses a ReLU kink.
    #[arg(long, default_value_t = 12)]
    kink_retries: usize,
    /// Only central differences, no one-sided estimates beside kinks.
    #[arg(long)]
    central_only: bool,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Configuration on top of the toy model (width 8, one block, two heads).
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for `report.json` and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GradCheckSummary {
    max_rel_error: f64,
    coords_checked: usize,
    kinked: usize,
    step_reduced: usize,
    one_sided: usize,
    worst_param: Option<String>,
    worst_index: Option<usize>,
    passed: bool,
}

pub fn grad_check(args: &GradCheckArgs, argv: &[String]) -> Result<()> {
    let config = resolve_config(&args.config, Some(toy_config()))?;
    let check = GradCheckConfig {
        eps: args.eps,
        stencil: match args.stencil {
            StencilArg::Three => Stencil::ThreePoint,
            StencilArg::Five => Stencil::FivePoint,
        },
        max_coords_per_param: None,
        seed: 0,
        kink_retries: args.kink_retries,
        one_sided: !args.central_only,
    };
    let report = check_toy_model(&config, &check)?;
    let passed = report.kinked == 0 && report.max_rel_error < args.tolerance;
    println!(
        "coordinates {}  kinked {}  one-sided {}  step reduced {}  max relative error {:.3e}",
        report.coords_checked,
        report.kinked,
        report.one_sided,
        report.step_reduced,
        report.max_rel_error
    );
    if let Some(w) = &report.worst {
        println!(
            "worst {}[{}]: analytic {:.6e} numeric {:.6e} (step {:.1e})",
            w.param, w.index, w.analytic, w.numeric, w.step
        );
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let summary = GradCheckSummary {
            max_rel_error: report.max_rel_error,
            coords_checked: report.coords_checked,
            kinked: report.kinked,
            step_reduced: report.step_reduced,
            one_sided: report.one_sided,
            worst_param: report.worst.as_ref().map(|w| w.param.clone()),
            worst_index: report.worst.as_ref().map(|w| w.index),
            passed,
        };
        let path = write_json(dir.join("report.json"), &summary)?;
        Manifest::new("grad-check", argv)
            .with_config(&config)
            .write(dir, &[path])?;
    }
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: max relative error {:.3e} (tolerance {:.1e}), {} kinked coordinates",
            report.max_rel_error, args.tolerance, report.kinked
        )))
    }
}
