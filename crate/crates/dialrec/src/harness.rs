//! Subcommand implementations. Every subcommand writes its artifacts under
//! the configured output directory and returns their paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dialrec_core::baseline::{train_tfidf_baseline, TfidfConfig};
use dialrec_core::corpus::{cohen_kappa, corpus_stats, mask_and_truncate, Corpus, Dialogue, Split};
use dialrec_core::encoder::Tokenizer;
use dialrec_core::kg::{train_transr, KnowledgeGraph};
use dialrec_core::metrics::{ddi_rate, evaluate_run, truncation_curve, DdiGraph, EvaluationReport};
use dialrec_core::model::{quick_scores, train_model, Ablation, DdnModel, TrainLog};
use dialrec_core::synth::generate_synthetic;
use serde::Serialize;

use crate::checkpoint::{self, DevMetrics};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io;
use crate::report::{prediction_line, stats_json, to_json, CurvePoint, Meta, Report, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Predict,
    Ablate,
    Truncate,
    Stats,
    Kappa,
    Synth,
    Baseline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict => "predict",
            Command::Ablate => "ablate",
            Command::Truncate => "truncate",
            Command::Stats => "stats",
            Command::Kappa => "kappa",
            Command::Synth => "synth",
            Command::Baseline => "baseline",
        }
    }
}

pub const ABLATION_VARIANTS: [(&str, Ablation); 3] = [
    ("full", Ablation { no_dialogue_graph: false, no_kg: false }),
    ("no_dialogue_graph", Ablation { no_dialogue_graph: true, no_kg: false }),
    ("no_kg", Ablation { no_dialogue_graph: false, no_kg: true }),
];

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub corpus: Corpus,
    pub kg: Option<KnowledgeGraph>,
    pub ddi: DdiGraph,
}

impl ExperimentData {
    pub fn split(&self, split: Split) -> Vec<Dialogue> {
        self.corpus.split(split).cloned().collect()
    }
}

fn existing(config: &ExperimentConfig, key: &str, value: &Option<String>) -> Result<Option<PathBuf>> {
    match value {
        None => Ok(None),
        Some(p) => {
            let path = config.resolve(p);
            if !path.is_file() {
                return Err(HarnessError::Config(format!("{key}: {} does not exist", path.display())));
            }
            Ok(Some(path))
        }
    }
}

fn required(config: &ExperimentConfig, key: &str, value: &Option<String>) -> Result<PathBuf> {
    existing(config, key, value)?.ok_or_else(|| HarnessError::Config(format!("{key} is not set")))
}

pub fn load_corpus_file(config: &ExperimentConfig, path: &Path) -> Result<Corpus> {
    let remap = existing(config, "field_remap", &config.field_remap)?.map(|p| io::FieldRemap::read(&p)).transpose()?;
    let mut corpus = io::read_corpus(path, remap.as_ref())?;
    if config.mask {
        let norm = required(config, "normalization", &config.normalization)?;
        let map = io::read_normalization(&norm)?;
        let masked = corpus.dialogues.iter().map(|d| mask_and_truncate(d, &map)).collect::<Result<Vec<_>, _>>()?;
        corpus = Corpus::new(masked);
    }
    if let Some(dep) = config.department {
        corpus = corpus.filter_department(dep);
    }
    Ok(corpus)
}

/// Loads the corpus, optional KG and DDI table; `need_kg` makes the KG mandatory.
pub fn load_data(config: &ExperimentConfig, need_kg: bool) -> Result<ExperimentData> {
    let corpus_path = required(config, "corpus", &config.corpus)?;
    let kg_path = existing(config, "kg", &config.kg)?;
    let alias_path = existing(config, "kg_aliases", &config.kg_aliases)?;
    let ddi_path = existing(config, "ddi", &config.ddi)?;
    if need_kg && kg_path.is_none() {
        return Err(HarnessError::Config("kg is not set (or pass --no-kg)".into()));
    }
    let corpus = load_corpus_file(config, &corpus_path)?;
    if corpus.is_empty() {
        return Err(HarnessError::Data(format!("{}: no dialogues", corpus_path.display())));
    }
    corpus.validate()?;
    let kg = kg_path.map(|p| io::read_kg(&p, alias_path.as_deref())).transpose()?;
    let ddi = ddi_path.map(|p| io::read_ddi(&p)).transpose()?.unwrap_or_default();
    Ok(ExperimentData { corpus, kg, ddi })
}

/// Fits the tokenizer, pretrains TransR when the KG path is on, and trains one model.
pub fn train_run(config: &ExperimentConfig, data: &ExperimentData, ablation: Ablation, seed: u64) -> Result<(DdnModel, TrainLog)> {
    let train = data.split(Split::Train);
    let dev = data.split(Split::Dev);
    if train.is_empty() {
        return Err(HarnessError::Data("the corpus has no training dialogues".into()));
    }
    let tokenizer = Tokenizer::fit(
        train.iter().flat_map(|d| d.utterances.iter().map(|u| u.text.as_str())),
        config.max_len,
        config.min_count,
    )?;
    let transr = if ablation.no_kg {
        None
    } else {
        let kg = data.kg.as_ref().ok_or_else(|| HarnessError::Config("kg is not set (or pass --no-kg)".into()))?;
        Some(train_transr(kg, &config.transr_config(seed))?.0)
    };
    let mut model = DdnModel::new(
        config.ddn_config(seed, ablation),
        tokenizer,
        data.corpus.medications.clone(),
        data.corpus.diseases.clone(),
        transr.as_ref(),
    )?;
    let log = train_model(&mut model, &train, &dev, data.kg.as_ref(), &config.train_config(seed))?;
    Ok((model, log))
}

pub fn evaluate(model: &DdnModel, data: &ExperimentData, dialogues: &[Dialogue]) -> Result<EvaluationReport> {
    let kg = if model.config.ablation.no_kg { None } else { data.kg.as_ref() };
    Ok(model.evaluate(dialogues, kg, &data.ddi)?)
}

fn write(paths: &mut Vec<PathBuf>, path: PathBuf, text: &str) -> Result<()> {
    io::write_text(&path, text)?;
    paths.push(path);
    Ok(())
}

fn predictions_text(model: &DdnModel, data: &ExperimentData, dialogues: &[Dialogue]) -> Result<String> {
    let kg = if model.config.ablation.no_kg { None } else { data.kg.as_ref() };
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&prediction_line(model, &model.predict(d, kg)?));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunLog<'a> {
    seed: u64,
    best_epoch: usize,
    epochs: Vec<EpochRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<&'a str>,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    dev_jaccard: f64,
    dev_f1: f64,
}

fn run_log<'a>(seed: u64, log: &TrainLog, variant: Option<&'a str>) -> RunLog<'a> {
    RunLog {
        seed,
        best_epoch: log.best_epoch,
        epochs: log
            .epochs
            .iter()
            .map(|e| EpochRecord { epoch: e.epoch, train_loss: e.train_loss, dev_jaccard: e.dev_jaccard, dev_f1: e.dev_f1 })
            .collect(),
        variant,
    }
}

fn dev_metrics(log: &TrainLog) -> DevMetrics {
    let best = log.epochs.iter().find(|e| e.epoch == log.best_epoch);
    DevMetrics { jaccard: best.map_or(0.0, |e| e.dev_jaccard), f1: best.map_or(0.0, |e| e.dev_f1) }
}

/// A trained model with its seed and training log.
pub type TrainedRun = (u64, DdnModel, TrainLog);

/// Trains `repeats` models for one ablation setting and scores each on the eval split.
/// The first model is returned with the report.
pub fn train_and_report(
    command: &str,
    config: &ExperimentConfig,
    data: &ExperimentData,
    ablation: Ablation,
) -> Result<(Report, Vec<TrainedRun>)> {
    let eval = data.split(config.eval_split);
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for r in 0..config.repeats.max(1) {
        let seed = config.repeat_seed(r);
        let (model, log) = train_run(config, data, ablation, seed)?;
        let rep = evaluate(&model, data, &eval)?;
        runs.push(RunSummary::new(seed, &rep, Some(log.best_epoch)));
        models.push((seed, model, log));
    }
    Ok((Report::from_runs(Meta::new(command, config), config.eval_split.as_str(), runs), models))
}

fn cmd_train(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let ablation = config.ablation();
    let data = load_data(config, !ablation.no_kg)?;
    let (report, models) = train_and_report("train", config, &data, ablation)?;
    let mut logs = Vec::new();
    for (r, (seed, model, log)) in models.iter().enumerate() {
        let dir = if r == 0 { out.join("checkpoint") } else { out.join(format!("checkpoint-{r}")) };
        checkpoint::save(&dir, model, config, log.best_epoch, dev_metrics(log))?;
        paths.push(dir);
        logs.push(run_log(*seed, log, None));
    }
    let eval = data.split(config.eval_split);
    write(paths, out.join("predictions.jsonl"), &predictions_text(&models[0].1, &data, &eval)?)?;
    write(paths, out.join("train_log.json"), &to_json(&logs))?;
    write(paths, out.join("report.json"), &to_json(&report))
}

fn load_checkpoint(config: &ExperimentConfig, out: &Path) -> Result<(DdnModel, ExperimentData)> {
    let dir = match &config.checkpoint {
        Some(p) => config.resolve(p),
        None => out.join("checkpoint"),
    };
    if !dir.join(checkpoint::MANIFEST_FILE).is_file() {
        return Err(HarnessError::Config(format!("no checkpoint at {}", dir.display())));
    }
    let (model, _) = checkpoint::load(&dir)?;
    let data = load_data(config, !model.config.ablation.no_kg)?;
    Ok((model, data))
}

fn cmd_eval(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let (model, data) = load_checkpoint(config, out)?;
    let rep = evaluate(&model, &data, &data.split(config.eval_split))?;
    let report = Report::from_runs(Meta::new("eval", config), config.eval_split.as_str(), vec![RunSummary::new(model.config.seed, &rep, None)]);
    write(paths, out.join("eval_report.json"), &to_json(&report))
}

fn cmd_predict(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let (model, data) = load_checkpoint(config, out)?;
    let text = predictions_text(&model, &data, &data.split(config.eval_split))?;
    write(paths, out.join("predictions.jsonl"), &text)
}

#[derive(Serialize)]
struct VariantRow {
    jaccard: f64,
    jaccard_std: f64,
    f1: f64,
    f1_std: f64,
    ddi_rate: f64,
}

#[derive(Serialize)]
struct AblationTable {
    meta: Meta,
    split: String,
    order: Vec<&'static str>,
    variants: BTreeMap<&'static str, VariantRow>,
}

fn cmd_ablate(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let data = load_data(config, true)?;
    let mut variants = BTreeMap::new();
    let mut tsv = String::from("variant\tjaccard\tjaccard_std\tf1\tf1_std\tddi_rate\n");
    let mut logs = Vec::new();
    for (name, ablation) in ABLATION_VARIANTS {
        let (report, models) = train_and_report("ablate", config, &data, ablation)?;
        for (seed, _, log) in &models {
            logs.push(run_log(*seed, log, Some(name)));
        }
        write(paths, out.join("ablation").join(name).join("report.json"), &to_json(&report))?;
        let _ = writeln!(
            tsv,
            "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            report.jaccard, report.jaccard_std, report.f1, report.f1_std, report.ddi_rate
        );
        variants.insert(
            name,
            VariantRow {
                jaccard: report.jaccard,
                jaccard_std: report.jaccard_std,
                f1: report.f1,
                f1_std: report.f1_std,
                ddi_rate: report.ddi_rate,
            },
        );
    }
    let table = AblationTable {
        meta: Meta::new("ablate", config),
        split: config.eval_split.as_str().to_string(),
        order: ABLATION_VARIANTS.iter().map(|(n, _)| *n).collect(),
        variants,
    };
    write(paths, out.join("ablation").join("train_log.json"), &to_json(&logs))?;
    write(paths, out.join("ablation.tsv"), &tsv)?;
    write(paths, out.join("ablation.json"), &to_json(&table))
}

/// Truncation curve over the eval split plus the full-length evaluation of
/// the same subset.
pub fn truncation_report(config: &ExperimentConfig, model: &DdnModel, data: &ExperimentData) -> Result<Report> {
    let kg = if model.config.ablation.no_kg { None } else { data.kg.as_ref() };
    let eval = data.split(config.eval_split);
    let curve = truncation_curve(&eval, &config.discourse_percents, config.min_turns, |d| model.predict_names(d, kg))?;
    let subset: Vec<Dialogue> = eval.into_iter().filter(|d| d.utterances.len() >= config.min_turns).collect();
    let predictions = model.predict_all(&subset, kg)?;
    let rep = evaluate_run(&predictions, &subset, &data.ddi)?;
    let mut report = Report::from_runs(Meta::new("truncate", config), config.eval_split.as_str(), vec![RunSummary::new(model.config.seed, &rep, None)]);
    report.curve = Some(curve.into_iter().map(|(percent, jaccard)| CurvePoint { percent, jaccard }).collect());
    Ok(report)
}

fn cmd_truncate(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let (model, data) = if config.checkpoint.is_some() {
        load_checkpoint(config, out)?
    } else {
        let data = load_data(config, !config.no_kg)?;
        let (model, _) = train_run(config, &data, config.ablation(), config.seed)?;
        (model, data)
    };
    let report = truncation_report(config, &model, &data)?;
    let mut tsv = String::from("percent\tjaccard\n");
    for p in report.curve.as_deref().unwrap_or_default() {
        let _ = writeln!(tsv, "{}\t{:.6}", p.percent, p.jaccard);
    }
    write(paths, out.join("curve.tsv"), &tsv)?;
    write(paths, out.join("truncate_report.json"), &to_json(&report))
}

fn cmd_stats(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let corpus = load_corpus_file(config, &required(config, "corpus", &config.corpus)?)?;
    let stats = corpus_stats(&corpus)?;
    let gt = existing(config, "ddi", &config.ddi)?
        .map(|p| io::read_ddi(&p))
        .transpose()?
        .map(|ddi| ddi_rate(corpus.dialogues.iter().map(|d| &d.medications), &ddi));
    write(paths, out.join("stats.json"), &stats_json(Meta::new("stats", config), &stats, gt))
}

#[derive(Serialize)]
struct KappaReport {
    meta: Meta,
    kappa: f64,
    n: usize,
}

/// Agreement between two annotation files over the dialogue ids they share.
/// Each label is the sorted medication tuple.
pub fn kappa_between(a: &Corpus, b: &Corpus) -> Result<(f64, usize)> {
    let b_by_id: BTreeMap<&str, &Dialogue> = b.dialogues.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for d in &a.dialogues {
        if let Some(other) = b_by_id.get(d.id.as_str()) {
            la.push(d.medications.iter().cloned().collect::<Vec<_>>());
            lb.push(other.medications.iter().cloned().collect::<Vec<_>>());
        }
    }
    if la.is_empty() {
        return Err(HarnessError::Data("annotator files share no dialogue ids".into()));
    }
    Ok((cohen_kappa(&la, &lb)?, la.len()))
}

fn cmd_kappa(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let a = io::read_corpus(&required(config, "annotator_a", &config.annotator_a)?, None)?;
    let b = io::read_corpus(&required(config, "annotator_b", &config.annotator_b)?, None)?;
    let (kappa, n) = kappa_between(&a, &b)?;
    write(paths, out.join("kappa.json"), &to_json(&KappaReport { meta: Meta::new("kappa", config), kappa, n }))
}

#[derive(Serialize)]
struct SynthReport {
    meta: Meta,
    dialogues: usize,
    train: usize,
    dev: usize,
    test: usize,
    medications: usize,
    diseases: usize,
    triples: usize,
    ddi_pairs: usize,
    novel_diseases: Vec<String>,
}

fn cmd_synth(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let s = generate_synthetic(&config.synth_config())?;
    io::write_corpus(&out.join("corpus.jsonl"), &s.corpus)?;
    io::write_dialogues(&out.join("raw_corpus.jsonl"), &s.raw)?;
    io::write_kg(&out.join("kg.tsv"), &s.kg)?;
    io::write_ddi(&out.join("ddi.tsv"), &s.ddi)?;
    io::write_normalization(&out.join("normalization.tsv"), &s.normalization)?;
    for f in ["corpus.jsonl", "raw_corpus.jsonl", "kg.tsv", "ddi.tsv", "normalization.tsv"] {
        paths.push(out.join(f));
    }
    let conf = format!(
        "# generated by dialrec synth\ncorpus = corpus.jsonl\nkg = kg.tsv\nddi = ddi.tsv\nnormalization = normalization.tsv\nseed = {}\n",
        config.seed
    );
    write(paths, out.join("experiment.conf"), &conf)?;
    let count = |sp| s.corpus.split(sp).count();
    let report = SynthReport {
        meta: Meta::new("synth", config),
        dialogues: s.corpus.len(),
        train: count(Split::Train),
        dev: count(Split::Dev),
        test: count(Split::Test),
        medications: s.corpus.medications.len(),
        diseases: s.corpus.diseases.len(),
        triples: s.kg.triples().len(),
        ddi_pairs: s.ddi.len(),
        novel_diseases: s.rules.novel_diseases.iter().cloned().collect(),
    };
    write(paths, out.join("synth.json"), &to_json(&report))
}

fn cmd_baseline(config: &ExperimentConfig, out: &Path, paths: &mut Vec<PathBuf>) -> Result<()> {
    let data = load_data(config, false)?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(HarnessError::Data("the corpus has no training dialogues".into()));
    }
    let tf = TfidfConfig {
        epochs: config.baseline_epochs,
        lr: config.baseline_lr,
        threshold: config.threshold,
        ..TfidfConfig::default()
    };
    let model = train_tfidf_baseline(&train, &data.corpus.medications, &tf)?;
    let eval = data.split(config.eval_split);
    let predictions: BTreeMap<String, BTreeSet<String>> = eval.iter().map(|d| (d.id.clone(), model.predict(d))).collect();
    let rep = evaluate_run(&predictions, &eval, &data.ddi)?;
    let report = Report::from_runs(Meta::new("baseline", config), config.eval_split.as_str(), vec![RunSummary::new(config.seed, &rep, None)]);
    write(paths, out.join("baseline_report.json"), &to_json(&report))
}

/// Runs one subcommand and returns the artifacts written.
pub fn run_experiment(command: Command, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let mut paths = Vec::new();
    match command {
        Command::Train => cmd_train(config, &out, &mut paths),
        Command::Eval => cmd_eval(config, &out, &mut paths),
        Command::Predict => cmd_predict(config, &out, &mut paths),
        Command::Ablate => cmd_ablate(config, &out, &mut paths),
        Command::Truncate => cmd_truncate(config, &out, &mut paths),
        Command::Stats => cmd_stats(config, &out, &mut paths),
        Command::Kappa => cmd_kappa(config, &out, &mut paths),
        Command::Synth => cmd_synth(config, &out, &mut paths),
        Command::Baseline => cmd_baseline(config, &out, &mut paths),
    }?;
    Ok(paths)
}

/// Mean train and held-out Jaccard, for quick checks.
pub fn split_scores(model: &DdnModel, data: &ExperimentData, split: Split) -> Result<f64> {
    let kg = if model.config.ablation.no_kg { None } else { data.kg.as_ref() };
    Ok(quick_scores(model, &data.split(split), kg)?.0)
}
