//! Set-based evaluation: Jaccard, sample F1, DDI rate, the error taxonomy and
//! the discourse-truncation curve.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::Dialogue;
use crate::error::{Error, Result};

/// `|P ∩ T| / |P ∪ T|`, with two empty sets scoring 1.
pub fn jaccard<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    let union = predicted.union(truth).count();
    if union == 0 {
        return 1.0;
    }
    predicted.intersection(truth).count() as f64 / union as f64
}

/// Harmonic mean of per-dialogue precision and recall; 0 when nothing
/// overlaps (including an empty prediction), 1 when both sets are empty.
pub fn sample_f1<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    if predicted.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let hit = predicted.intersection(truth).count();
    if hit == 0 {
        return 0.0;
    }
    let p = hit as f64 / predicted.len() as f64;
    let r = hit as f64 / truth.len() as f64;
    2.0 * p * r / (p + r)
}

/// Known drug-drug interactions as unordered pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DdiGraph {
    pairs: BTreeSet<(String, String)>,
}

impl DdiGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str) -> Result<bool> {
        if a == b {
            return Err(Error::InvalidArgument(format!("self interaction for {a}")));
        }
        Ok(self.pairs.insert(ordered(a, b)))
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Interacting pairs over all predicted pairs, pooled across dialogues.
/// Each unordered pair of a predicted set is counted once; no pairs at all gives 0.
pub fn ddi_rate<'a, I>(predictions: I, ddi: &DdiGraph) -> f64
where
    I: IntoIterator<Item = &'a BTreeSet<String>>,
{
    let (mut hits, mut pairs) = (0usize, 0usize);
    for set in predictions {
        let items: Vec<&String> = set.iter().collect();
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                pairs += 1;
                if ddi.contains(items[i], items[j]) {
                    hits += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        hits as f64 / pairs as f64
    }
}

/// Outcome of one prediction against a non-empty truth set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorClass {
    Correct,
    /// Nothing predicted.
    E1,
    /// Strict non-empty subset of the truth.
    E2,
    /// Strict superset of the truth.
    E3,
    /// Overlapping, neither contains the other.
    E4,
    /// Disjoint and non-empty.
    E5,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 6] =
        [ErrorClass::Correct, ErrorClass::E1, ErrorClass::E2, ErrorClass::E3, ErrorClass::E4, ErrorClass::E5];

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Correct => "correct",
            ErrorClass::E1 => "e1",
            ErrorClass::E2 => "e2",
            ErrorClass::E3 => "e3",
            ErrorClass::E4 => "e4",
            ErrorClass::E5 => "e5",
        }
    }
}

pub fn classify_error<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> Result<ErrorClass> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("error taxonomy needs a non-empty truth set".into()));
    }
    Ok(if predicted == truth {
        ErrorClass::Correct
    } else if predicted.is_empty() {
        ErrorClass::E1
    } else if predicted.is_subset(truth) {
        ErrorClass::E2
    } else if truth.is_subset(predicted) {
        ErrorClass::E3
    } else if predicted.intersection(truth).next().is_some() {
        ErrorClass::E4
    } else {
        ErrorClass::E5
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub mean_jaccard: f64,
    pub mean_f1: f64,
    pub ddi_rate: f64,
    pub error_counts: BTreeMap<ErrorClass, usize>,
    pub n: usize,
}

/// Scores `predictions` (keyed by dialogue id) against every dialogue given.
pub fn evaluate_run<'a>(
    predictions: &BTreeMap<String, BTreeSet<String>>,
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
    ddi: &DdiGraph,
) -> Result<EvaluationReport> {
    let mut error_counts: BTreeMap<ErrorClass, usize> = ErrorClass::ALL.iter().map(|&c| (c, 0)).collect();
    let (mut jac, mut f1, mut n) = (0.0, 0.0, 0usize);
    let mut used = Vec::new();
    for d in dialogues {
        let p = predictions
            .get(&d.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no prediction for dialogue {}", d.id)))?;
        jac += jaccard(p, &d.medications);
        f1 += sample_f1(p, &d.medications);
        *error_counts.get_mut(&classify_error(p, &d.medications)?).unwrap() += 1;
        used.push(p);
        n += 1;
    }
    let denom = n.max(1) as f64;
    Ok(EvaluationReport {
        mean_jaccard: jac / denom,
        mean_f1: f1 / denom,
        ddi_rate: ddi_rate(used, ddi),
        error_counts,
        n,
    })
}

/// Number of leading utterances kept at `percent` of a `len`-utterance dialogue.
pub fn prefix_len(len: usize, percent: f64) -> usize {
    let exact = percent * len as f64 / 100.0;
    (libm::ceil(exact - 1e-9) as usize).clamp(1, len.max(1))
}

/// Mean Jaccard after keeping the first `percent`% of each dialogue, over
/// dialogues with at least `min_turns` utterances.
pub fn truncation_curve<'a, F>(
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
    percents: &[f64],
    min_turns: usize,
    mut predict: F,
) -> Result<Vec<(f64, f64)>>
where
    F: FnMut(&Dialogue) -> Result<BTreeSet<String>>,
{
    if let Some(p) = percents.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
        return Err(Error::InvalidArgument(format!("discourse percent {p} outside (0, 100]")));
    }
    let subset: Vec<&Dialogue> = dialogues.into_iter().filter(|d| d.utterances.len() >= min_turns).collect();
    let mut curve = Vec::with_capacity(percents.len());
    for &p in percents {
        let mut total = 0.0;
        for d in &subset {
            let prefix = d.prefix(prefix_len(d.utterances.len(), p));
            total += jaccard(&predict(&prefix)?, &d.medications);
        }
        curve.push((p, if subset.is_empty() { 0.0 } else { total / subset.len() as f64 }));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert!((jaccard(&set(&["a", "b"]), &set(&["b", "c"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[]), &set(&["a"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert!((sample_f1(&set(&["b", "c", "d"]), &set(&["a", "b", "c"])) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_f1(&set(&[]), &set(&["a"])), 0.0);
        assert_eq!(sample_f1(&set(&["a"]), &set(&["a"])), 1.0);
    }

    #[test]
    fn ddi_examples() {
        let mut ddi = DdiGraph::new();
        ddi.insert("b", "a").unwrap();
        assert!(ddi.insert("a", "a").is_err());
        let preds = [set(&["a", "b", "c"]), set(&["a", "d"])];
        assert_eq!(ddi_rate(&preds, &ddi), 0.25);
        let singles = [set(&["a"]), set(&["b"])];
        assert_eq!(ddi_rate(&singles, &ddi), 0.0);
    }

    #[test]
    fn error_class_examples() {
        let t = set(&["a", "b"]);
        assert_eq!(classify_error(&set(&[]), &set(&["a"])).unwrap(), ErrorClass::E1);
        assert_eq!(classify_error(&set(&["a"]), &t).unwrap(), ErrorClass::E2);
        assert_eq!(classify_error(&set(&["a", "b"]), &set(&["a"])).unwrap(), ErrorClass::E3);
        assert_eq!(classify_error(&set(&["a", "c"]), &t).unwrap(), ErrorClass::E4);
        assert_eq!(classify_error(&set(&["c"]), &t).unwrap(), ErrorClass::E5);
        assert_eq!(classify_error(&t, &t).unwrap(), ErrorClass::Correct);
        assert!(classify_error(&t, &set(&[])).is_err());
    }

    #[test]
    fn prefix_lengths() {
        assert_eq!(prefix_len(5, 20.0), 1);
        assert_eq!(prefix_len(5, 100.0), 5);
        assert_eq!(prefix_len(7, 20.0), 2);
        assert_eq!(prefix_len(3, 1.0), 1);
        assert_eq!(prefix_len(10, 30.0), 3);
    }
}
