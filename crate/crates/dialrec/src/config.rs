//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory of the config file. Every key has a
//! default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use dialrec_core::autodiff::Activation;
use dialrec_core::corpus::{Department, Split};
use dialrec_core::encoder::Mixer;
use dialrec_core::kg::TransRConfig;
use dialrec_core::model::{Ablation, DdnConfig, TrainConfig};
use dialrec_core::synth::SynthConfig;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,

    pub corpus: Option<String>,
    pub field_remap: Option<String>,
    pub normalization: Option<String>,
    /// Apply masking and truncation on load (needs `normalization`).
    pub mask: bool,
    pub kg: Option<String>,
    pub kg_aliases: Option<String>,
    pub ddi: Option<String>,
    pub department: Option<Department>,
    pub checkpoint: Option<String>,
    pub annotator_a: Option<String>,
    pub annotator_b: Option<String>,
    pub out: String,

    pub seed: u64,
    pub repeats: usize,
    pub eval_split: Split,

    pub dim: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub mixer: Mixer,
    pub dialogue_layers: usize,
    pub kg_layers: usize,
    pub kg_att_dim: usize,
    pub hops: usize,
    pub fanout: usize,
    pub activation: Activation,
    pub self_loops: bool,
    pub threshold: f64,
    pub no_dialogue_graph: bool,
    pub no_kg: bool,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub freeze_kg: bool,

    pub transr_dim: usize,
    pub transr_epochs: usize,
    pub transr_lr: f64,
    pub transr_margin: f64,
    pub transr_negatives: usize,

    pub discourse_percents: Vec<f64>,
    pub min_turns: usize,

    pub baseline_epochs: usize,
    pub baseline_lr: f64,

    pub synth_dialogues: usize,
    pub synth_diseases: usize,
    pub synth_medications: usize,
    pub synth_vocab: usize,
    pub synth_kg_fanout: usize,
    pub synth_classes: usize,
    pub synth_novel_per_class: usize,
    pub synth_questions: usize,
    pub synth_none_rate: f64,
    pub synth_ddi_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ddn = DdnConfig::default();
        let train = TrainConfig::default();
        let transr = TransRConfig::default();
        let synth = SynthConfig::default();
        ExperimentConfig {
            base_dir: PathBuf::from("."),
            corpus: None,
            field_remap: None,
            normalization: None,
            mask: false,
            kg: None,
            kg_aliases: None,
            ddi: None,
            department: None,
            checkpoint: None,
            annotator_a: None,
            annotator_b: None,
            out: "out".into(),
            seed: 0,
            repeats: 1,
            eval_split: Split::Test,
            dim: ddn.dim,
            max_len: ddn.max_len,
            min_count: 1,
            mixer: ddn.mixer,
            dialogue_layers: ddn.dialogue_layers,
            kg_layers: ddn.kg_layers,
            kg_att_dim: ddn.kg_att_dim,
            hops: ddn.hops,
            fanout: ddn.fanout,
            activation: ddn.activation,
            self_loops: ddn.self_loops,
            threshold: ddn.threshold,
            no_dialogue_graph: false,
            no_kg: false,
            lr: train.lr,
            batch_size: train.batch_size,
            epochs: train.epochs,
            clip_norm: train.clip_norm.unwrap_or(0.0),
            freeze_kg: train.freeze_kg,
            transr_dim: transr.d_e,
            transr_epochs: transr.epochs,
            transr_lr: transr.lr,
            transr_margin: transr.margin,
            transr_negatives: transr.negatives_per_positive,
            discourse_percents: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            min_turns: 5,
            baseline_epochs: 2000,
            baseline_lr: 10.0,
            synth_dialogues: synth.n_dialogues,
            synth_diseases: synth.n_diseases,
            synth_medications: synth.n_medications,
            synth_vocab: synth.vocab_size,
            synth_kg_fanout: synth.kg_fanout,
            synth_classes: synth.n_classes,
            synth_novel_per_class: synth.novel_per_class,
            synth_questions: synth.questions,
            synth_none_rate: synth.none_or_others_rate,
            synth_ddi_pairs: synth.ddi_pairs,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_path(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_string())
}

pub fn parse_percents(v: &str) -> Result<Vec<f64>> {
    let ps: Vec<f64> = v.split(',').map(|p| parse::<f64>("discourse_percents", p.trim())).collect::<Result<_>>()?;
    if ps.is_empty() || ps.iter().any(|&p| !(p > 0.0 && p <= 100.0)) {
        return Err(HarnessError::Config(format!("discourse_percents: values must lie in (0, 100], got {v:?}")));
    }
    Ok(ps)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn opt(p: &Option<String>) -> String {
    p.clone().unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "corpus" => self.corpus = parse_path(v),
            "field_remap" => self.field_remap = parse_path(v),
            "normalization" => self.normalization = parse_path(v),
            "mask" => self.mask = parse_bool(key, v)?,
            "kg" => self.kg = parse_path(v),
            "kg_aliases" => self.kg_aliases = parse_path(v),
            "ddi" => self.ddi = parse_path(v),
            "department" => {
                self.department = if v.is_empty() {
                    None
                } else {
                    Some(Department::parse(v).ok_or_else(|| HarnessError::Config(format!("unknown department {v:?}")))?)
                }
            }
            "checkpoint" => self.checkpoint = parse_path(v),
            "annotator_a" => self.annotator_a = parse_path(v),
            "annotator_b" => self.annotator_b = parse_path(v),
            "out" => self.out = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            "eval_split" => self.eval_split = Split::parse(v).ok_or_else(|| HarnessError::Config(format!("unknown split {v:?}")))?,
            "dim" => self.dim = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "mixer" => self.mixer = Mixer::parse(v).ok_or_else(|| HarnessError::Config(format!("unknown mixer {v:?}")))?,
            "dialogue_layers" => self.dialogue_layers = parse(key, v)?,
            "kg_layers" => self.kg_layers = parse(key, v)?,
            "kg_att_dim" => self.kg_att_dim = parse(key, v)?,
            "hops" => self.hops = parse(key, v)?,
            "fanout" => self.fanout = parse(key, v)?,
            "activation" => {
                self.activation = Activation::parse(v).ok_or_else(|| HarnessError::Config(format!("unknown activation {v:?}")))?
            }
            "self_loops" => self.self_loops = parse_bool(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "no_dialogue_graph" => self.no_dialogue_graph = parse_bool(key, v)?,
            "no_kg" => self.no_kg = parse_bool(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "freeze_kg" => self.freeze_kg = parse_bool(key, v)?,
            "transr_dim" => self.transr_dim = parse(key, v)?,
            "transr_epochs" => self.transr_epochs = parse(key, v)?,
            "transr_lr" => self.transr_lr = parse(key, v)?,
            "transr_margin" => self.transr_margin = parse(key, v)?,
            "transr_negatives" => self.transr_negatives = parse(key, v)?,
            "discourse_percents" => self.discourse_percents = parse_percents(v)?,
            "min_turns" => self.min_turns = parse(key, v)?,
            "baseline_epochs" => self.baseline_epochs = parse(key, v)?,
            "baseline_lr" => self.baseline_lr = parse(key, v)?,
            "synth_dialogues" => self.synth_dialogues = parse(key, v)?,
            "synth_diseases" => self.synth_diseases = parse(key, v)?,
            "synth_medications" => self.synth_medications = parse(key, v)?,
            "synth_vocab" => self.synth_vocab = parse(key, v)?,
            "synth_kg_fanout" => self.synth_kg_fanout = parse(key, v)?,
            "synth_classes" => self.synth_classes = parse(key, v)?,
            "synth_novel_per_class" => self.synth_novel_per_class = parse(key, v)?,
            "synth_questions" => self.synth_questions = parse(key, v)?,
            "synth_none_rate" => self.synth_none_rate = parse(key, v)?,
            "synth_ddi_pairs" => self.synth_ddi_pairs = parse(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let percents: Vec<String> = self.discourse_percents.iter().map(|&p| fmt_f64(p)).collect();
        vec![
            ("corpus", opt(&self.corpus)),
            ("field_remap", opt(&self.field_remap)),
            ("normalization", opt(&self.normalization)),
            ("mask", self.mask.to_string()),
            ("kg", opt(&self.kg)),
            ("kg_aliases", opt(&self.kg_aliases)),
            ("ddi", opt(&self.ddi)),
            ("department", self.department.map_or(String::new(), |d| d.as_str().to_string())),
            ("checkpoint", opt(&self.checkpoint)),
            ("annotator_a", opt(&self.annotator_a)),
            ("annotator_b", opt(&self.annotator_b)),
            ("out", self.out.clone()),
            ("seed", self.seed.to_string()),
            ("repeats", self.repeats.to_string()),
            ("eval_split", self.eval_split.as_str().to_string()),
            ("dim", self.dim.to_string()),
            ("max_len", self.max_len.to_string()),
            ("min_count", self.min_count.to_string()),
            ("mixer", self.mixer.name().to_string()),
            ("dialogue_layers", self.dialogue_layers.to_string()),
            ("kg_layers", self.kg_layers.to_string()),
            ("kg_att_dim", self.kg_att_dim.to_string()),
            ("hops", self.hops.to_string()),
            ("fanout", self.fanout.to_string()),
            ("activation", self.activation.name().to_string()),
            ("self_loops", self.self_loops.to_string()),
            ("threshold", fmt_f64(self.threshold)),
            ("no_dialogue_graph", self.no_dialogue_graph.to_string()),
            ("no_kg", self.no_kg.to_string()),
            ("lr", fmt_f64(self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("clip_norm", fmt_f64(self.clip_norm)),
            ("freeze_kg", self.freeze_kg.to_string()),
            ("transr_dim", self.transr_dim.to_string()),
            ("transr_epochs", self.transr_epochs.to_string()),
            ("transr_lr", fmt_f64(self.transr_lr)),
            ("transr_margin", fmt_f64(self.transr_margin)),
            ("transr_negatives", self.transr_negatives.to_string()),
            ("discourse_percents", percents.join(",")),
            ("min_turns", self.min_turns.to_string()),
            ("baseline_epochs", self.baseline_epochs.to_string()),
            ("baseline_lr", fmt_f64(self.baseline_lr)),
            ("synth_dialogues", self.synth_dialogues.to_string()),
            ("synth_diseases", self.synth_diseases.to_string()),
            ("synth_medications", self.synth_medications.to_string()),
            ("synth_vocab", self.synth_vocab.to_string()),
            ("synth_kg_fanout", self.synth_kg_fanout.to_string()),
            ("synth_classes", self.synth_classes.to_string()),
            ("synth_novel_per_class", self.synth_novel_per_class.to_string()),
            ("synth_questions", self.synth_questions.to_string()),
            ("synth_none_rate", fmt_f64(self.synth_none_rate)),
            ("synth_ddi_pairs", self.synth_ddi_pairs.to_string()),
        ]
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c = ExperimentConfig { base_dir: base_dir.to_path_buf(), ..Self::default() };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::parse_str(&text, &base)
    }

    /// The config as `key = value` lines; parsing it back yields the same values.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Like [`to_text`](Self::to_text) without the output directory.
    pub fn to_portable_text(&self) -> String {
        self.entries().into_iter().filter(|(k, _)| *k != "out").map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over every entry except the output directory, as hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolves a configured path against the config directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output directory; relative to the working directory.
    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn ablation(&self) -> Ablation {
        Ablation { no_dialogue_graph: self.no_dialogue_graph, no_kg: self.no_kg }
    }

    pub fn ddn_config(&self, seed: u64, ablation: Ablation) -> DdnConfig {
        DdnConfig {
            dim: self.dim,
            max_len: self.max_len,
            mixer: self.mixer,
            dialogue_layers: self.dialogue_layers,
            kg_layers: self.kg_layers,
            kg_att_dim: self.kg_att_dim,
            hops: self.hops,
            fanout: self.fanout,
            activation: self.activation,
            self_loops: self.self_loops,
            threshold: self.threshold,
            ablation,
            seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            freeze_kg: self.freeze_kg,
        }
    }

    pub fn transr_config(&self, seed: u64) -> TransRConfig {
        TransRConfig {
            d_e: self.transr_dim,
            d_r: self.transr_dim,
            margin: self.transr_margin,
            epochs: self.transr_epochs,
            negatives_per_positive: self.transr_negatives,
            lr: self.transr_lr,
            seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_dialogues: self.synth_dialogues,
            n_diseases: self.synth_diseases,
            n_medications: self.synth_medications,
            vocab_size: self.synth_vocab,
            kg_fanout: self.synth_kg_fanout,
            seed: self.seed,
            n_classes: self.synth_classes,
            novel_per_class: self.synth_novel_per_class,
            questions: self.synth_questions,
            none_or_others_rate: self.synth_none_rate,
            ddi_pairs: self.synth_ddi_pairs,
        }
    }

    /// Seed of the `r`-th repeat; repeat 0 uses the configured seed.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}
