//! JSON artifacts: evaluation reports, predictions and statistics.

use std::collections::BTreeMap;

use dialrec_core::corpus::StatsRecord;
use dialrec_core::metrics::{ErrorClass, EvaluationReport};
use dialrec_core::model::{DdnModel, Prediction};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Provenance embedded in every artifact.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Meta {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Meta {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub jaccard: f64,
    pub f1: f64,
    pub ddi_rate: f64,
    pub errors: BTreeMap<String, usize>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

impl RunSummary {
    pub fn new(seed: u64, r: &EvaluationReport, best_epoch: Option<usize>) -> Self {
        RunSummary {
            seed,
            jaccard: r.mean_jaccard,
            f1: r.mean_f1,
            ddi_rate: r.ddi_rate,
            errors: error_map(&r.error_counts),
            n: r.n,
            best_epoch,
        }
    }
}

pub fn error_map(counts: &BTreeMap<ErrorClass, usize>) -> BTreeMap<String, usize> {
    counts.iter().map(|(c, n)| (c.label().to_string(), *n)).collect()
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct CurvePoint {
    pub percent: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub meta: Meta,
    pub split: String,
    /// Means over runs.
    pub jaccard: f64,
    pub f1: f64,
    pub ddi_rate: f64,
    /// Sample standard deviations over runs (0 for a single run).
    pub jaccard_std: f64,
    pub f1_std: f64,
    pub ddi_rate_std: f64,
    /// Error counts summed over runs.
    pub errors: BTreeMap<String, usize>,
    /// Dialogues per run.
    pub n: usize,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<CurvePoint>>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Report {
    pub fn from_runs(meta: Meta, split: &str, runs: Vec<RunSummary>) -> Self {
        let col = |f: fn(&RunSummary) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (jaccard, jaccard_std) = col(|r| r.jaccard);
        let (f1, f1_std) = col(|r| r.f1);
        let (ddi_rate, ddi_rate_std) = col(|r| r.ddi_rate);
        let mut errors = BTreeMap::new();
        for r in &runs {
            for (k, v) in &r.errors {
                *errors.entry(k.clone()).or_insert(0) += v;
            }
        }
        Report {
            meta,
            split: split.to_string(),
            jaccard,
            f1,
            ddi_rate,
            jaccard_std,
            f1_std,
            ddi_rate_std,
            errors,
            n: runs.first().map_or(0, |r| r.n),
            runs,
            curve: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    scores: BTreeMap<&'a str, f64>,
    predicted: Vec<&'a str>,
}

pub fn prediction_line(model: &DdnModel, p: &Prediction) -> String {
    let names = model.medications.names();
    let rec = PredictionRecord {
        id: &p.id,
        scores: names.iter().map(String::as_str).zip(p.probabilities.iter().copied()).collect(),
        predicted: p.predicted.iter().map(|&i| names[i].as_str()).collect(),
    };
    serde_json::to_string(&rec).expect("prediction records always serialize")
}

#[derive(Debug, Clone, Serialize)]
struct StatsRow {
    #[serde(rename = "#Dial.")]
    dialogues: usize,
    #[serde(rename = "#Dise.")]
    diseases: usize,
    #[serde(rename = "#Med.")]
    medications: usize,
    #[serde(rename = "Avg.M")]
    avg_medications: f64,
    #[serde(rename = "Avg.T")]
    avg_turns: f64,
    #[serde(rename = "Max.T")]
    max_turns: usize,
    #[serde(rename = "Avg.U")]
    avg_utterance_len: f64,
    #[serde(rename = "Max.U")]
    max_utterance_len: usize,
}

#[derive(Debug, Clone, Serialize)]
struct StatsReport {
    meta: Meta,
    order: Vec<String>,
    rows: BTreeMap<String, StatsRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ddi_rate_ground_truth: Option<f64>,
}

/// Statistics table as JSON keyed by row label, then column label.
pub fn stats_json(meta: Meta, stats: &StatsRecord, ddi_rate_ground_truth: Option<f64>) -> String {
    let rows = stats
        .rows
        .iter()
        .map(|(label, s)| {
            (
                label.clone(),
                StatsRow {
                    dialogues: s.dialogues,
                    diseases: s.diseases,
                    medications: s.medications,
                    avg_medications: s.avg_medications,
                    avg_turns: s.avg_turns,
                    max_turns: s.max_turns,
                    avg_utterance_len: s.avg_utterance_len,
                    max_utterance_len: s.max_utterance_len,
                },
            )
        })
        .collect();
    let order = stats.rows.iter().map(|(l, _)| l.clone()).collect();
    to_json(&StatsReport { meta, order, rows, ddi_rate_ground_truth })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts always serialize");
    s.push('\n');
    s
}
