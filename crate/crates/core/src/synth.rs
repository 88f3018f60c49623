//! Templated synthetic corpus with a matching knowledge graph.
//!
//! Diseases are grouped into drug classes. Every disease dialogue is labeled
//! with its class medication plus one medication per symptom the patient
//! confirms. The class of a disease is stated only in the knowledge graph, and
//! some diseases occur only in the dev and test splits, so their class
//! medication is reachable only through a KG neighbour. Answers to symptom
//! questions never repeat the symptom keyword; linking each answer to its
//! question takes the dialogue structure. Asked symptoms are drawn from the
//! whole symptom list, so the text carries no hint of the disease class.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{mask_and_truncate, Corpus, Department, Dialogue, NormalizationMap, Speaker, Split, Vocabulary, NONE_OR_OTHERS};
use crate::error::{Error, Result};
use crate::kg::{KgBuilder, KnowledgeGraph};
use crate::metrics::DdiGraph;
use crate::rng;

pub const REL_TREATED_BY: &str = "treated_by";
pub const REL_INCLUDES: &str = "includes";
pub const REL_HAS_SYMPTOM: &str = "has_symptom";
pub const REL_RELIEVED_BY: &str = "relieved_by";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    pub n_diseases: usize,
    pub n_medications: usize,
    /// Size of the filler vocabulary used in complaints.
    pub vocab_size: usize,
    /// Symptoms linked to each disease in the knowledge graph.
    pub kg_fanout: usize,
    pub seed: u64,
    /// Drug classes; each owns one medication.
    pub n_classes: usize,
    /// Diseases per class that never appear in the training split.
    pub novel_per_class: usize,
    /// Symptom questions per dialogue.
    pub questions: usize,
    pub none_or_others_rate: f64,
    pub ddi_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dialogues: 500,
            n_diseases: 16,
            n_medications: 16,
            vocab_size: 40,
            kg_fanout: 3,
            seed: 7,
            n_classes: 4,
            novel_per_class: 1,
            questions: 2,
            none_or_others_rate: 0.05,
            ddi_pairs: 12,
        }
    }
}

/// Ground-truth labeling rule of the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    /// Disease name to class index.
    pub disease_class: BTreeMap<String, usize>,
    pub class_medication: Vec<String>,
    /// Symptom keyword to its medication.
    pub symptom_medication: BTreeMap<String, String>,
    pub disease_symptoms: BTreeMap<String, Vec<String>>,
    pub novel_diseases: BTreeSet<String>,
}

impl RuleTable {
    /// Medications for a dialogue about `disease` in which the patient
    /// confirmed `confirmed` symptoms.
    pub fn medications<'a>(&self, disease: &str, confirmed: impl IntoIterator<Item = &'a str>) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        if disease != NONE_OR_OTHERS {
            let c = self
                .disease_class
                .get(disease)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic disease {disease}")))?;
            out.insert(self.class_medication[*c].clone());
        }
        for k in confirmed {
            let m = self
                .symptom_medication
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic symptom {k}")))?;
            out.insert(m.clone());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Masked and truncated dialogues with explicit splits.
    pub corpus: Corpus,
    /// The same dialogues before masking.
    pub raw: Vec<Dialogue>,
    pub kg: KnowledgeGraph,
    pub ddi: DdiGraph,
    pub normalization: NormalizationMap,
    pub rules: RuleTable,
    /// Confirmed symptom keywords per dialogue id.
    pub confirmed: BTreeMap<String, Vec<String>>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Draws a fresh pseudo-word of `syllables` syllables not yet in `used`.
fn fresh_word(r: &mut ChaCha8Rng, syllables: usize, suffix: &str, used: &mut BTreeSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[r.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[r.gen_range(0..VOWELS.len())]);
        }
        w.push_str(suffix);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

const RESERVED_WORDS: [&str; 24] = [
    "hello", "doctor", "i", "have", "been", "feeling", "for", "days", "do", "you", "any", "is", "there", "yes", "no",
    "not", "really", "a", "little", "take", "and", "thank", "tablets", "mask",
];

fn validate(c: &SynthConfig) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidArgument(format!("infeasible synthetic config: {m}")));
    if c.n_dialogues == 0 || c.n_diseases == 0 || c.n_medications == 0 || c.vocab_size == 0 || c.kg_fanout == 0 {
        return bad("all counts must be at least 1");
    }
    if c.n_medications < c.n_diseases {
        return bad("n_medications must be at least n_diseases");
    }
    if c.n_classes == 0 || c.n_classes > c.n_diseases {
        return bad("n_classes must lie in 1..=n_diseases");
    }
    if c.n_medications <= c.n_classes {
        return bad("need at least one symptom medication beyond the class medications");
    }
    if c.novel_per_class * c.n_classes >= c.n_diseases {
        return bad("every disease would be novel");
    }
    if c.questions == 0 {
        return bad("questions must be at least 1");
    }
    if !(0.0..1.0).contains(&c.none_or_others_rate) {
        return bad("none_or_others_rate must lie in [0, 1)");
    }
    let n = c.n_medications;
    if c.ddi_pairs > n * (n - 1) / 2 {
        return bad("more DDI pairs than medication pairs");
    }
    Ok(())
}

fn assign_split(r: &mut ChaCha8Rng) -> Split {
    match r.gen_range(0..10) {
        0..=7 => Split::Train,
        8 => Split::Dev,
        _ => Split::Test,
    }
}

pub fn generate_synthetic(c: &SynthConfig) -> Result<SyntheticData> {
    validate(c)?;
    let mut names = rng::stream(c.seed, "synth.names");
    let mut used: BTreeSet<String> = RESERVED_WORDS.iter().map(|s| s.to_string()).collect();
    let n_symptoms = c.n_medications - c.n_classes;

    let diseases: Vec<String> = (0..c.n_diseases).map(|_| fresh_word(&mut names, 2, "itis", &mut used)).collect();
    let classes: Vec<String> = (0..c.n_classes).map(|_| fresh_word(&mut names, 2, "class", &mut used)).collect();
    let meds: Vec<String> = (0..c.n_medications).map(|_| fresh_word(&mut names, 3, "", &mut used)).collect();
    let symptoms: Vec<String> = (0..n_symptoms).map(|_| fresh_word(&mut names, 2, "", &mut used)).collect();
    let filler: Vec<String> = (0..c.vocab_size).map(|_| fresh_word(&mut names, 2, "", &mut used)).collect();

    let class_medication: Vec<String> = meds[..c.n_classes].to_vec();
    let symptom_medication: BTreeMap<String, String> =
        symptoms.iter().cloned().zip(meds[c.n_classes..].iter().cloned()).collect();

    // disease i belongs to class i % n_classes; the first novel_per_class
    // rounds of each class are held out of training
    let mut links = rng::stream(c.seed, "synth.links");
    let mut disease_class = BTreeMap::new();
    let mut disease_symptoms = BTreeMap::new();
    let mut novel_diseases = BTreeSet::new();
    let per_disease = c.kg_fanout.min(n_symptoms);
    for (i, d) in diseases.iter().enumerate() {
        disease_class.insert(d.clone(), i % c.n_classes);
        if i < c.novel_per_class * c.n_classes {
            novel_diseases.insert(d.clone());
        }
        let mut pool = symptoms.clone();
        pool.shuffle(&mut links);
        pool.truncate(per_disease);
        pool.sort();
        disease_symptoms.insert(d.clone(), pool);
    }
    let rules = RuleTable { disease_class, class_medication, symptom_medication, disease_symptoms, novel_diseases };

    let mut kb = KgBuilder::new();
    for d in &diseases {
        kb.triple(d, REL_TREATED_BY, &classes[rules.disease_class[d]]);
        for s in &rules.disease_symptoms[d] {
            kb.triple(d, REL_HAS_SYMPTOM, s);
        }
    }
    for (k, cls) in classes.iter().enumerate() {
        kb.triple(cls, REL_INCLUDES, &rules.class_medication[k]);
    }
    for (s, m) in &rules.symptom_medication {
        kb.triple(s, REL_RELIEVED_BY, m);
    }
    let kg = kb.build()?;

    let mut normalization = NormalizationMap::new();
    for m in &meds {
        normalization.insert(&format!("{m} tablets"), m)?;
    }

    let mut ddi_rng = rng::stream(c.seed, "synth.ddi");
    let mut ddi = DdiGraph::new();
    while ddi.len() < c.ddi_pairs {
        let a = ddi_rng.gen_range(0..meds.len());
        let b = ddi_rng.gen_range(0..meds.len());
        if a != b {
            ddi.insert(&meds[a], &meds[b])?;
        }
    }

    let trainable: Vec<&String> = diseases.iter().filter(|d| !rules.novel_diseases.contains(*d)).collect();
    let mut r = rng::stream(c.seed, "synth.dialogues");
    let mut raw = Vec::with_capacity(c.n_dialogues);
    let mut dialogues = Vec::with_capacity(c.n_dialogues);
    let mut confirmed_by_id = BTreeMap::new();
    let width = format!("{}", c.n_dialogues).len();
    for i in 0..c.n_dialogues {
        let id = format!("syn-{i:0width$}");
        let split = assign_split(&mut r);
        let none = r.gen_bool(c.none_or_others_rate);
        let disease = if none {
            NONE_OR_OTHERS.to_string()
        } else if split == Split::Train {
            trainable[r.gen_range(0..trainable.len())].clone()
        } else {
            diseases[r.gen_range(0..diseases.len())].clone()
        };
        let department = if none {
            Department::ALL[r.gen_range(0..3)]
        } else {
            Department::ALL[diseases.iter().position(|d| *d == disease).unwrap() % 3]
        };
        let mut asked = symptoms.clone();
        asked.shuffle(&mut r);
        asked.truncate(c.questions);
        let mut answers: Vec<bool> = asked.iter().map(|_| r.gen_bool(0.5)).collect();
        if none && !answers.iter().any(|&a| a) {
            let k = r.gen_range(0..answers.len());
            answers[k] = true;
        }

        let mut utts: Vec<(Speaker, String)> = Vec::new();
        let f1 = &filler[r.gen_range(0..filler.len())];
        let f2 = &filler[r.gen_range(0..filler.len())];
        utts.push((Speaker::Patient, format!("hello doctor i have been feeling {f1} {f2} for {} days", r.gen_range(1..8))));
        for (kw, &yes) in asked.iter().zip(&answers) {
            let q = match r.gen_range(0..3) {
                0 => format!("do you have {kw}"),
                1 => format!("any {kw}"),
                _ => format!("is there {kw}"),
            };
            utts.push((Speaker::Doctor, q));
            let a = match (yes, r.gen_range(0..3)) {
                (true, 0) => "yes",
                (true, 1) => "yes i do",
                (true, _) => "yes a little",
                (false, 0) => "no",
                (false, 1) => "not really",
                (false, _) => "no i do not",
            };
            utts.push((Speaker::Patient, a.to_string()));
        }
        let confirmed: Vec<String> = asked.iter().zip(&answers).filter(|(_, &y)| y).map(|(k, _)| k.clone()).collect();
        let labels = rules.medications(&disease, confirmed.iter().map(String::as_str))?;
        let mentions: Vec<String> = labels
            .iter()
            .map(|m| if r.gen_bool(0.5) { format!("{m} tablets") } else { m.clone() })
            .collect();
        utts.push((Speaker::Doctor, format!("you can take {}", mentions.join(" and "))));
        utts.push((Speaker::Patient, "thank you doctor".to_string()));

        let mut d = Dialogue::new(id.clone(), department, disease, labels.iter().cloned(), utts);
        d.split = Some(split);
        let masked = mask_and_truncate(&d, &normalization)?;
        debug_assert_eq!(masked.medications, labels);
        raw.push(d);
        dialogues.push(masked);
        confirmed_by_id.insert(id, confirmed);
    }

    let corpus = Corpus::with_vocabularies(dialogues, Vocabulary::from_names(meds.iter().cloned()), Vocabulary::from_names(diseases.iter().cloned()));
    Ok(SyntheticData { corpus, raw, kg, ddi, normalization, rules, confirmed: confirmed_by_id })
}
