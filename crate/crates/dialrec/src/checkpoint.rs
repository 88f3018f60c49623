//! Model checkpoints: a parameter archive, vocabulary lists and a JSON manifest.

use std::fs;
use std::path::Path;

use dialrec_core::corpus::Vocabulary;
use dialrec_core::encoder::Tokenizer;
use dialrec_core::model::DdnModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{read_list, read_text, write_list, write_text};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOKENS_FILE: &str = "tokens.txt";
pub const MEDICATIONS_FILE: &str = "medications.txt";
pub const DISEASES_FILE: &str = "diseases.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabHashes {
    pub tokens: String,
    pub medications: String,
    pub diseases: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub jaccard: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    /// Effective configuration as `key = value` text, without `out`.
    pub config: String,
    pub seed: u64,
    pub no_dialogue_graph: bool,
    pub no_kg: bool,
    pub vocab_hashes: VocabHashes,
    pub epoch: usize,
    pub dev: DevMetrics,
}

pub fn list_hash(items: &[String]) -> String {
    let mut h = Sha256::new();
    for s in items {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(dir: &Path, model: &DdnModel, config: &ExperimentConfig, epoch: usize, dev: DevMetrics) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    archive::write_store(&dir.join(PARAMS_FILE), &model.store)?;
    let tokens = model.tokenizer.tokens().to_vec();
    write_list(&dir.join(TOKENS_FILE), &tokens)?;
    write_list(&dir.join(MEDICATIONS_FILE), model.medications.names())?;
    write_list(&dir.join(DISEASES_FILE), model.diseases.names())?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.to_portable_text(),
        seed: model.config.seed,
        no_dialogue_graph: model.config.ablation.no_dialogue_graph,
        no_kg: model.config.ablation.no_kg,
        vocab_hashes: VocabHashes {
            tokens: list_hash(&tokens),
            medications: list_hash(model.medications.names()),
            diseases: list_hash(model.diseases.names()),
        },
        epoch,
        dev,
    };
    write_text(&dir.join(MANIFEST_FILE), &crate::report::to_json(&manifest))
}

fn checked_list(dir: &Path, file: &str, expected: &str) -> Result<Vec<String>> {
    let items = read_list(&dir.join(file))?;
    if list_hash(&items) != expected {
        return Err(HarnessError::Data(format!("{}: vocabulary hash mismatch", dir.join(file).display())));
    }
    Ok(items)
}

/// Restores a model; architecture settings come from the stored config.
pub fn load(dir: &Path) -> Result<(DdnModel, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let config = ExperimentConfig::parse_str(&manifest.config, dir)?;
    let tokens = checked_list(dir, TOKENS_FILE, &manifest.vocab_hashes.tokens)?;
    let meds = checked_list(dir, MEDICATIONS_FILE, &manifest.vocab_hashes.medications)?;
    let diseases = checked_list(dir, DISEASES_FILE, &manifest.vocab_hashes.diseases)?;
    let tokenizer = Tokenizer::from_tokens(tokens, config.max_len)?;
    let store = archive::read_store(&dir.join(PARAMS_FILE))?;
    let ablation = dialrec_core::model::Ablation { no_dialogue_graph: manifest.no_dialogue_graph, no_kg: manifest.no_kg };
    let model = DdnModel::from_store(
        config.ddn_config(manifest.seed, ablation),
        tokenizer,
        Vocabulary::from_names(meds),
        Vocabulary::from_names(diseases),
        store,
    )?;
    Ok((model, manifest))
}
