//! Text file formats: corpus JSON lines, TSV tables and vocabulary lists.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use dialrec_core::corpus::{Corpus, Department, Dialogue, NormalizationMap, Speaker, Split};
use dialrec_core::kg::{KgBuilder, KnowledgeGraph};
use dialrec_core::metrics::DdiGraph;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: String,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    department: String,
    disease: String,
    medications: Vec<String>,
    utterances: Vec<UtteranceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn data_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}:{line}: {msg}", path.display()))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn tsv_fields<'a>(path: &Path, line: usize, l: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
    if fields.len() != n || fields.iter().any(|f| f.is_empty()) {
        return Err(data_err(path, line, format!("expected {n} non-empty tab-separated fields")));
    }
    Ok(fields)
}

/// Maps source field names to the canonical corpus field names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldRemap {
    /// Source name to canonical name.
    pub fields: BTreeMap<String, String>,
}

impl FieldRemap {
    /// Reads `canonical<TAB>source` lines.
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut fields = BTreeMap::new();
        for (n, l) in content_lines(&text) {
            let f = tsv_fields(path, n, l, 2)?;
            fields.insert(f[1].to_string(), f[0].to_string());
        }
        Ok(FieldRemap { fields })
    }

    fn apply(&self, v: &mut Value) {
        if self.fields.is_empty() {
            return;
        }
        if let Value::Object(map) = v {
            let old = std::mem::take(map);
            for (k, mut val) in old {
                if k == "utterances" || self.fields.get(&k).map(String::as_str) == Some("utterances") {
                    if let Value::Array(items) = &mut val {
                        items.iter_mut().for_each(|u| self.apply(u));
                    }
                }
                let key = self.fields.get(&k).cloned().unwrap_or(k);
                map.insert(key, val);
            }
        }
    }
}

fn to_dialogue(r: DialogueRecord) -> std::result::Result<Dialogue, String> {
    let department = Department::parse(&r.department).ok_or_else(|| format!("unknown department {:?}", r.department))?;
    let mut utterances = Vec::with_capacity(r.utterances.len());
    for u in r.utterances {
        let s = Speaker::parse(&u.speaker).ok_or_else(|| format!("unknown speaker {:?}", u.speaker))?;
        utterances.push((s, u.text));
    }
    let mut d = Dialogue::new(r.id, department, r.disease, r.medications, utterances);
    if let Some(s) = r.split {
        d.split = Some(Split::parse(&s).ok_or_else(|| format!("unknown split {s:?}"))?);
    }
    Ok(d)
}

fn to_record(d: &Dialogue) -> DialogueRecord {
    DialogueRecord {
        id: d.id.clone(),
        department: d.department.as_str().to_string(),
        disease: d.disease.clone(),
        medications: d.medications.iter().cloned().collect(),
        utterances: d
            .utterances
            .iter()
            .map(|u| UtteranceRecord { speaker: u.speaker.as_str().to_string(), text: u.text.clone() })
            .collect(),
        split: d.split.map(|s| s.as_str().to_string()),
    }
}

/// Parses JSON-lines dialogues. Vocabularies are the labels observed.
pub fn parse_corpus(path: &Path, text: &str, remap: Option<&FieldRemap>) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    for (n, l) in content_lines(text) {
        let mut v: Value = serde_json::from_str(l).map_err(|e| data_err(path, n, e))?;
        if let Some(r) = remap {
            r.apply(&mut v);
        }
        let rec: DialogueRecord = serde_json::from_value(v).map_err(|e| data_err(path, n, e))?;
        dialogues.push(to_dialogue(rec).map_err(|e| data_err(path, n, e))?);
    }
    Ok(Corpus::new(dialogues))
}

pub fn read_corpus(path: &Path, remap: Option<&FieldRemap>) -> Result<Corpus> {
    parse_corpus(path, &read_text(path)?, remap)
}

pub fn dialogue_json(d: &Dialogue) -> String {
    serde_json::to_string(&to_record(d)).expect("dialogue records always serialize")
}

pub fn write_dialogues<'a>(path: &Path, dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Result<()> {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&dialogue_json(d));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_dialogues(path, &corpus.dialogues)
}

/// `alias<TAB>canonical` lines.
pub fn read_normalization(path: &Path) -> Result<NormalizationMap> {
    let text = read_text(path)?;
    let mut map = NormalizationMap::new();
    for (n, l) in content_lines(&text) {
        let f = tsv_fields(path, n, l, 2)?;
        map.insert(f[0], f[1]).map_err(|e| data_err(path, n, e))?;
    }
    Ok(map)
}

pub fn write_normalization(path: &Path, map: &NormalizationMap) -> Result<()> {
    let text: String = map.iter().map(|(a, c)| format!("{a}\t{c}\n")).collect();
    write_text(path, &text)
}

/// `head<TAB>relation<TAB>tail` lines, plus optional `alias<TAB>entity` lines.
pub fn read_kg(path: &Path, aliases: Option<&Path>) -> Result<KnowledgeGraph> {
    let text = read_text(path)?;
    let mut b = KgBuilder::new();
    for (n, l) in content_lines(&text) {
        let f = tsv_fields(path, n, l, 3)?;
        b.triple(f[0], f[1], f[2]);
    }
    let mut kg = b.build()?;
    if let Some(ap) = aliases {
        let text = read_text(ap)?;
        for (n, l) in content_lines(&text) {
            let f = tsv_fields(ap, n, l, 2)?;
            kg.add_alias(f[0], f[1]).map_err(|e| data_err(ap, n, e))?;
        }
    }
    Ok(kg)
}

pub fn write_kg(path: &Path, kg: &KnowledgeGraph) -> Result<()> {
    let text: String = kg.named_triples().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    write_text(path, &text)
}

pub fn write_kg_aliases(path: &Path, kg: &KnowledgeGraph) -> Result<()> {
    let text: String = kg.aliases().map(|(a, e)| format!("{a}\t{e}\n")).collect();
    write_text(path, &text)
}

/// `drug<TAB>drug` lines; order within a pair does not matter.
pub fn read_ddi(path: &Path) -> Result<DdiGraph> {
    let text = read_text(path)?;
    let mut g = DdiGraph::new();
    for (n, l) in content_lines(&text) {
        let f = tsv_fields(path, n, l, 2)?;
        g.insert(f[0], f[1]).map_err(|e| data_err(path, n, e))?;
    }
    Ok(g)
}

pub fn write_ddi(path: &Path, ddi: &DdiGraph) -> Result<()> {
    let text: String = ddi.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    write_text(path, &text)
}

/// One entry per line, in order.
pub fn read_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

pub fn write_list(path: &Path, items: &[String]) -> Result<()> {
    if let Some(bad) = items.iter().find(|s| s.contains('\n')) {
        return Err(HarnessError::Data(format!("list entry {bad:?} contains a newline")));
    }
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in items {
        writeln!(w, "{s}").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
