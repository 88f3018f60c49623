//! TF-IDF features with one logistic classifier per medication.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{pretokenize, Dialogue, Vocabulary};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub threshold: f64,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig { epochs: 2000, lr: 10.0, l2: 1e-4, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfBaseline {
    /// Token to (column, idf).
    pub idf: BTreeMap<String, (usize, f64)>,
    pub medications: Vocabulary,
    /// One weight row per medication.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub threshold: f64,
}

/// All utterance texts of a dialogue, joined by spaces.
pub fn dialogue_text(d: &Dialogue) -> String {
    let parts: Vec<&str> = d.utterances.iter().map(|u| u.text.as_str()).collect();
    parts.join(" ")
}

/// `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    math::ln((1.0 + n_docs as f64) / (1.0 + df as f64)) + 1.0
}

impl TfidfBaseline {
    /// Sparse L2-normalised TF-IDF vector; tokens unseen in training are dropped.
    pub fn features(&self, d: &Dialogue) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in pretokenize(&dialogue_text(d)) {
            if let Some(&(col, idf)) = self.idf.get(&tok) {
                *counts.entry(col).or_insert(0.0) += idf;
            }
        }
        let norm = math::sqrt(counts.values().map(|v| v * v).sum());
        counts.into_iter().map(|(c, v)| (c, if norm > 0.0 { v / norm } else { v })).collect()
    }

    pub fn probabilities(&self, d: &Dialogue) -> Vec<f64> {
        let x = self.features(d);
        self.weights.iter().zip(&self.bias).map(|(w, b)| math::sigmoid(b + x.iter().map(|&(c, v)| w[c] * v).sum::<f64>())).collect()
    }

    pub fn predict(&self, d: &Dialogue) -> BTreeSet<String> {
        self.probabilities(d)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > self.threshold)
            .map(|(i, _)| self.medications.name(i).to_string())
            .collect()
    }
}

/// Fits idf on `train` and trains each classifier by full-batch gradient
/// descent on the mean logistic loss.
pub fn train_tfidf_baseline(train: &[Dialogue], medications: &Vocabulary, config: &TfidfConfig) -> Result<TfidfBaseline> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let docs: Vec<BTreeSet<String>> = train.iter().map(|d| pretokenize(&dialogue_text(d)).into_iter().collect()).collect();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in &docs {
        for t in doc {
            *df.entry(t.clone()).or_insert(0) += 1;
        }
    }
    let idf: BTreeMap<String, (usize, f64)> =
        df.into_iter().enumerate().map(|(col, (t, n))| (t, (col, smoothed_idf(train.len(), n)))).collect();
    let dim = idf.len();
    let mut model = TfidfBaseline {
        idf,
        medications: medications.clone(),
        weights: vec![vec![0.0; dim]; medications.len()],
        bias: vec![0.0; medications.len()],
        threshold: config.threshold,
    };
    let xs: Vec<Vec<(usize, f64)>> = train.iter().map(|d| model.features(d)).collect();
    let ys: Vec<Vec<f64>> = train.iter().map(|d| medications.multi_hot(&d.medications)).collect();
    let n = train.len() as f64;
    for m in 0..medications.len() {
        let (w, b) = (&mut model.weights[m], &mut model.bias[m]);
        for _ in 0..config.epochs {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                let z = *b + x.iter().map(|&(c, v)| w[c] * v).sum::<f64>();
                let err = math::sigmoid(z) - y[m];
                gb += err;
                for &(c, v) in x {
                    gw[c] += err * v;
                }
            }
            for (wc, g) in w.iter_mut().zip(&gw) {
                *wc -= config.lr * (g / n + config.l2 * *wc);
            }
            *b -= config.lr * gb / n;
        }
    }
    Ok(model)
}
