//! Dialogue data model, label normalisation, masking, annotator agreement and
//! corpus statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Reserved disease label for dialogues without an in-scope diagnosis.
pub const NONE_OR_OTHERS: &str = "__NONE_OR_OTHERS__";
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Speaker {
    Patient,
    Doctor,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Patient => "patient",
            Speaker::Doctor => "doctor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patient" | "p" => Some(Speaker::Patient),
            "doctor" | "d" => Some(Speaker::Doctor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Department {
    Respiratory,
    Gastroenterology,
    Dermatology,
}

impl Department {
    pub const ALL: [Department; 3] =
        [Department::Respiratory, Department::Gastroenterology, Department::Dermatology];

    pub fn as_str(self) -> &'static str {
        match self {
            Department::Respiratory => "respiratory",
            Department::Gastroenterology => "gastroenterology",
            Department::Dermatology => "dermatology",
        }
    }

    /// Column label used in statistics tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Department::Respiratory => "Resp.",
            Department::Gastroenterology => "Gastro.",
            Department::Dermatology => "Derma.",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "respiratory" | "resp" | "resp." => Some(Department::Respiratory),
            "gastroenterology" | "gastro" | "gastro." => Some(Department::Gastroenterology),
            "dermatology" | "derma" | "derma." => Some(Department::Dermatology),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "dev" | "valid" | "validation" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    /// Deterministic 80/10/10 assignment from the dialogue id.
    pub fn from_id_hash(id: &str) -> Split {
        match fnv1a64(id.as_bytes()) % 10 {
            0..=7 => Split::Train,
            8 => Split::Dev,
            _ => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub department: Department,
    /// Canonical disease name or [`NONE_OR_OTHERS`].
    pub disease: String,
    /// Canonical medication names.
    pub medications: BTreeSet<String>,
    pub utterances: Vec<Utterance>,
    /// Explicit split; `None` falls back to the id hash.
    pub split: Option<Split>,
}

impl Dialogue {
    /// Builds a dialogue, numbering utterances in order.
    pub fn new(
        id: impl Into<String>,
        department: Department,
        disease: impl Into<String>,
        medications: impl IntoIterator<Item = String>,
        utterances: impl IntoIterator<Item = (Speaker, String)>,
    ) -> Self {
        Dialogue {
            id: id.into(),
            department,
            disease: disease.into(),
            medications: medications.into_iter().collect(),
            utterances: utterances
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, text))| Utterance { speaker, text, index })
                .collect(),
            split: None,
        }
    }

    pub fn speakers(&self) -> Vec<Speaker> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    pub fn is_none_or_others(&self) -> bool {
        self.disease == NONE_OR_OTHERS
    }

    pub fn split(&self) -> Split {
        self.split.unwrap_or_else(|| Split::from_id_hash(&self.id))
    }

    /// The first `keep` utterances (at least one).
    pub fn prefix(&self, keep: usize) -> Dialogue {
        let keep = keep.clamp(1, self.utterances.len().max(1));
        let mut d = self.clone();
        d.utterances.truncate(keep);
        d
    }

    /// Structural checks that hold for every annotated dialogue.
    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::Validation(format!("dialogue {}: no utterances", self.id)));
        }
        if self.medications.is_empty() {
            return Err(Error::Validation(format!("dialogue {}: empty medication set", self.id)));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(Error::Validation(format!("dialogue {}: utterance {i} is empty", self.id)));
            }
            if u.index != i {
                return Err(Error::Validation(format!(
                    "dialogue {}: utterance index {} at position {i}",
                    self.id, u.index
                )));
            }
        }
        Ok(())
    }

    /// Checks that nothing follows the first doctor utterance carrying a mask.
    pub fn validate_truncation(&self) -> Result<()> {
        let point = self
            .utterances
            .iter()
            .position(|u| u.speaker == Speaker::Doctor && u.text.contains(MASK_TOKEN));
        match point {
            Some(p) if p + 1 < self.utterances.len() => Err(Error::Validation(format!(
                "dialogue {}: {} utterance(s) follow the recommendation at turn {p}",
                self.id,
                self.utterances.len() - p - 1
            ))),
            _ => Ok(()),
        }
    }
}

/// Sorted label vocabulary with stable indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Vocabulary { names: set.into_iter().collect() }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Multi-hot encoding of a name set; unknown names are ignored.
    pub fn multi_hot(&self, set: &BTreeSet<String>) -> Vec<f64> {
        let mut y = alloc::vec![0.0; self.len()];
        for name in set {
            if let Some(i) = self.index(name) {
                y[i] = 1.0;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub medications: Vocabulary,
    /// In-scope diseases; never contains [`NONE_OR_OTHERS`].
    pub diseases: Vocabulary,
}

impl Corpus {
    /// Vocabularies are the label sets observed in `dialogues`.
    pub fn new(dialogues: Vec<Dialogue>) -> Self {
        let medications =
            Vocabulary::from_names(dialogues.iter().flat_map(|d| d.medications.iter().cloned()));
        let diseases = Vocabulary::from_names(
            dialogues.iter().filter(|d| !d.is_none_or_others()).map(|d| d.disease.clone()),
        );
        Corpus { dialogues, medications, diseases }
    }

    pub fn with_vocabularies(dialogues: Vec<Dialogue>, medications: Vocabulary, diseases: Vocabulary) -> Self {
        Corpus { dialogues, medications, diseases }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Dialogue> {
        self.dialogues.iter().filter(move |d| d.split() == split)
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Checks every dialogue plus label membership in the vocabularies.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for d in &self.dialogues {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Validation(format!("duplicate dialogue id {}", d.id)));
            }
            for m in &d.medications {
                if self.medications.index(m).is_none() {
                    return Err(Error::Validation(format!("dialogue {}: unknown medication {m}", d.id)));
                }
            }
            if !d.is_none_or_others() && self.diseases.index(&d.disease).is_none() {
                return Err(Error::Validation(format!("dialogue {}: unknown disease {}", d.id, d.disease)));
            }
        }
        Ok(())
    }

    pub fn filter_department(&self, department: Department) -> Corpus {
        Corpus {
            dialogues: self.dialogues.iter().filter(|d| d.department == department).cloned().collect(),
            medications: self.medications.clone(),
            diseases: self.diseases.clone(),
        }
    }
}

/// Alias to canonical label map. Canonical names always map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationMap {
    map: BTreeMap<String, String>,
}

impl NormalizationMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails if `alias` already maps to a different canonical name, or if a
    /// canonical name is itself an alias of something else.
    pub fn insert(&mut self, alias: &str, canonical: &str) -> Result<()> {
        let alias = alias.trim();
        let canonical = canonical.trim();
        if alias.is_empty() || canonical.is_empty() {
            return Err(Error::InvalidArgument("empty alias or canonical name".into()));
        }
        for (a, c) in [(canonical, canonical), (alias, canonical)] {
            match self.map.get(a) {
                Some(existing) if existing != c => {
                    return Err(Error::InvalidArgument(format!(
                        "alias {a} maps to both {existing} and {c}"
                    )))
                }
                Some(_) => {}
                None => {
                    self.map.insert(a.to_string(), c.to_string());
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, alias: &str) -> Option<&str> {
        self.map.get(alias.trim()).map(String::as_str)
    }

    /// Canonical form of `name`, or `name` itself when it is not in the map.
    pub fn normalize<'a>(&'a self, name: &'a str) -> &'a str {
        self.get(name).unwrap_or(name)
    }

    pub fn canonical_names(&self) -> BTreeSet<&str> {
        self.map.values().map(String::as_str).collect()
    }

    pub fn is_canonical(&self, name: &str) -> bool {
        self.map.get(name).is_some_and(|c| c == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, c)| (a.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Finds medication mentions: `(byte_start, byte_end, canonical)`,
    /// non-overlapping, longest alias first at each position.
    pub fn find_mentions<'a>(&'a self, text: &str) -> Vec<(usize, usize, &'a str)> {
        let mut aliases: Vec<(&str, &str)> = self.iter().collect();
        aliases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        let mut found = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            if !text.is_char_boundary(pos) {
                pos += 1;
                continue;
            }
            let rest = &text[pos..];
            let hit = aliases.iter().find(|(alias, _)| {
                rest.len() >= alias.len()
                    && rest.is_char_boundary(alias.len())
                    && rest[..alias.len()].eq_ignore_ascii_case(alias)
                    && word_bounded(text, pos, pos + alias.len())
            });
            match hit {
                Some((alias, canonical)) => {
                    found.push((pos, pos + alias.len(), *canonical));
                    pos += alias.len();
                }
                None => pos += rest.chars().next().map_or(1, char::len_utf8),
            }
        }
        found
    }
}

/// Latin mentions must not sit inside a longer word; CJK text has no word boundaries.
fn word_bounded(text: &str, start: usize, end: usize) -> bool {
    let inner_first = text[start..].chars().next();
    let inner_last = text[..end].chars().next_back();
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    let clash = |outer: Option<char>, inner: Option<char>| match (outer, inner) {
        (Some(o), Some(i)) => o.is_ascii_alphanumeric() && i.is_ascii_alphanumeric(),
        _ => false,
    };
    !clash(before, inner_first) && !clash(after, inner_last)
}

/// Replaces every medication mention with `[MASK]` and drops every utterance
/// after the first doctor utterance that recommends a medication. The
/// recorded medication set is the canonical names mentioned in that utterance.
pub fn mask_and_truncate(raw: &Dialogue, meds: &NormalizationMap) -> Result<Dialogue> {
    let point = raw
        .utterances
        .iter()
        .position(|u| u.speaker == Speaker::Doctor && !meds.find_mentions(&u.text).is_empty())
        .ok_or_else(|| Error::Unlabelable(raw.id.clone()))?;

    let mut out = raw.clone();
    out.utterances.truncate(point + 1);
    let mut medications = BTreeSet::new();
    for (i, u) in out.utterances.iter_mut().enumerate() {
        let mentions = meds.find_mentions(&u.text);
        if mentions.is_empty() {
            continue;
        }
        let mut masked = String::with_capacity(u.text.len());
        let mut last = 0;
        for (start, end, canonical) in mentions {
            masked.push_str(&u.text[last..start]);
            masked.push_str(MASK_TOKEN);
            last = end;
            if i == point {
                medications.insert(canonical.to_string());
            }
        }
        masked.push_str(&u.text[last..]);
        u.text = masked;
    }
    out.medications = medications;
    Ok(out)
}

/// Cohen's kappa between two annotators' label sequences.
pub fn cohen_kappa<T: Ord>(labels_a: &[T], labels_b: &[T]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::InvalidArgument(format!(
            "label sequences differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::InvalidArgument("kappa needs at least one label".into()));
    }
    let n = labels_a.len() as f64;
    let agree = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count() as f64;
    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for a in labels_a {
        marginals.entry(a).or_default().0 += 1;
    }
    for b in labels_b {
        marginals.entry(b).or_default().1 += 1;
    }
    let p_o = agree / n;
    let p_e: f64 = marginals.values().map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Splits text into word pieces: runs of ASCII letters/digits (lowercased),
/// single non-ASCII characters, single punctuation marks, and bracketed
/// special tokens such as `[MASK]` kept whole.
pub fn pretokenize(text: &str) -> Vec<String> {
    const SPECIAL: [&str; 5] = ["[MASK]", "[CLS]", "[SEP]", "[UNK]", "[PAD]"];
    let mut pieces = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '[' {
            if let Some(sp) = SPECIAL.iter().find(|sp| rest.starts_with(**sp)) {
                flush(&mut word, &mut pieces);
                pieces.push((*sp).to_string());
                rest = &rest[sp.len()..];
                continue;
            }
        }
        if c.is_ascii_alphanumeric() {
            word.push(c.to_ascii_lowercase());
        } else {
            flush(&mut word, &mut pieces);
            if !c.is_whitespace() {
                pieces.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut pieces);
    pieces
}

fn flush(word: &mut String, pieces: &mut Vec<String>) {
    if !word.is_empty() {
        pieces.push(core::mem::take(word));
    }
}

/// One row of the statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub dialogues: usize,
    pub diseases: usize,
    pub medications: usize,
    pub avg_medications: f64,
    pub avg_turns: f64,
    pub max_turns: usize,
    pub avg_utterance_len: f64,
    pub max_utterance_len: usize,
}

/// Per-department, total and per-split statistics, in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRecord {
    pub rows: Vec<(String, GroupStats)>,
}

impl StatsRecord {
    pub fn get(&self, label: &str) -> Option<&GroupStats> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }
}

fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

fn group_stats<'a>(dialogues: impl Iterator<Item = &'a Dialogue>) -> Option<GroupStats> {
    let mut n = 0usize;
    let mut diseases = BTreeSet::new();
    let mut medications = BTreeSet::new();
    let (mut med_total, mut turn_total, mut max_turns) = (0usize, 0usize, 0usize);
    let (mut utt_count, mut utt_len_total, mut max_utt) = (0usize, 0usize, 0usize);
    for d in dialogues {
        n += 1;
        if !d.is_none_or_others() {
            diseases.insert(d.disease.as_str());
        }
        medications.extend(d.medications.iter().map(String::as_str));
        med_total += d.medications.len();
        turn_total += d.utterances.len();
        max_turns = max_turns.max(d.utterances.len());
        for u in &d.utterances {
            let len = pretokenize(&u.text).len();
            utt_count += 1;
            utt_len_total += len;
            max_utt = max_utt.max(len);
        }
    }
    if n == 0 {
        return None;
    }
    Some(GroupStats {
        dialogues: n,
        diseases: diseases.len(),
        medications: medications.len(),
        avg_medications: round2(med_total as f64 / n as f64),
        avg_turns: round2(turn_total as f64 / n as f64),
        max_turns,
        avg_utterance_len: round2(utt_len_total as f64 / utt_count.max(1) as f64),
        max_utterance_len: max_utt,
    })
}

/// Statistics per department, overall (`Total`) and per split (`Train.`,
/// `Dev.`, `Test.`). Groups with no dialogues are omitted. A turn is one
/// utterance; utterance length counts [`pretokenize`] pieces.
pub fn corpus_stats(corpus: &Corpus) -> Result<StatsRecord> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("statistics of an empty corpus".into()));
    }
    let mut rows = Vec::new();
    for dep in Department::ALL {
        if let Some(s) = group_stats(corpus.dialogues.iter().filter(|d| d.department == dep)) {
            rows.push((dep.short_label().to_string(), s));
        }
    }
    if let Some(s) = group_stats(corpus.dialogues.iter()) {
        rows.push(("Total".to_string(), s));
    }
    for (label, split) in [("Train.", Split::Train), ("Dev.", Split::Dev), ("Test.", Split::Test)] {
        if let Some(s) = group_stats(corpus.split(split)) {
            rows.push((label.to_string(), s));
        }
    }
    Ok(StatsRecord { rows })
}
