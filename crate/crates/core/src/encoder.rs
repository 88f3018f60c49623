//! Utterance encoder: token + position + speaker embeddings, mixed into a
//! single `[CLS]` vector per utterance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::corpus::{pretokenize, Speaker};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::params::{ParamId, ParamStore};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
/// Reserved tokens occupy ids 0..5 in this order.
pub const RESERVED: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Whitespace/character tokenizer with a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    max_len: usize,
}

impl Tokenizer {
    /// Vocabulary from training texts: reserved tokens first, then pieces
    /// seen at least `min_count` times by descending frequency, ties broken
    /// lexicographically.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, max_len: usize, min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for piece in pretokenize(t) {
                *counts.entry(piece).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_count.max(1) && !RESERVED.contains(&tok.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens, max_len)
    }

    /// Restores a tokenizer from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len < 3 {
            return Err(Error::Config(format!("max_len {max_len} leaves no room for text")));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Validation(format!("vocabulary id {i} must be {r}")));
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Tokenizer { tokens, index, max_len })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// `[CLS] pieces.. [SEP]`, truncated to `max_len`; unknown pieces map to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(CLS_ID);
        for piece in pretokenize(text).into_iter().take(self.max_len - 2) {
            ids.push(self.id(&piece).unwrap_or(UNK_ID));
        }
        ids.push(SEP_ID);
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixer {
    /// Single-head scaled dot-product attention from the `[CLS]` slot over
    /// all tokens, added back onto the `[CLS]` input.
    Attention,
    /// Mean of the token input embeddings.
    Mean,
}

impl Mixer {
    pub fn name(self) -> &'static str {
        match self {
            Mixer::Attention => "attention",
            Mixer::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" => Some(Mixer::Attention),
            "mean" => Some(Mixer::Mean),
            _ => None,
        }
    }
}

/// An utterance ready for encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedUtterance {
    pub speaker: Speaker,
    pub token_ids: Vec<u32>,
}

/// Anything that maps an utterance to a fixed-width row vector on the tape.
/// The built-in [`TokenEncoder`] is one implementation; a frozen pretrained
/// model can be plugged in through [`FixedEncoder`].
pub trait UtteranceEncoder {
    fn dim(&self) -> usize;

    /// Returns a `1 x dim` node.
    fn encode(&self, tape: &mut Tape, store: &ParamStore, utterance: &EncodedUtterance) -> Var;

    /// Stacks utterance encodings into a `len x dim` node. Each utterance is
    /// encoded on its own.
    fn encode_dialogue(&self, tape: &mut Tape, store: &ParamStore, utterances: &[EncodedUtterance]) -> Var {
        let rows: Vec<Var> = utterances.iter().map(|u| self.encode(tape, store, u)).collect();
        tape.concat_rows(&rows)
    }
}

/// Parameter handles of the built-in encoder, named `token_table`,
/// `position_table`, `speaker_table` and `mixer.*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEncoder {
    pub dim: usize,
    pub max_len: usize,
    pub mixer: Mixer,
    pub token_table: ParamId,
    pub position_table: ParamId,
    /// Row 0 is the doctor, row 1 the patient.
    pub speaker_table: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl TokenEncoder {
    pub fn register(store: &mut ParamStore, seed: u64, vocab_size: usize, max_len: usize, dim: usize, mixer: Mixer) -> Self {
        let emb = 1.0 / math::sqrt(dim as f64);
        TokenEncoder {
            dim,
            max_len,
            mixer,
            token_table: store.add_uniform(seed, "token_table", vocab_size, dim, emb),
            position_table: store.add_uniform(seed, "position_table", max_len, dim, 0.1 * emb),
            speaker_table: store.add_uniform(seed, "speaker_table", 2, dim, emb),
            w_q: store.add_glorot(seed, "mixer.W_q", dim, dim),
            w_k: store.add_glorot(seed, "mixer.W_k", dim, dim),
            w_v: store.add_glorot(seed, "mixer.W_v", dim, dim),
            w_o: store.add_glorot(seed, "mixer.W_o", dim, dim),
        }
    }

    /// Re-binds handles to parameters already present in `store`.
    pub fn bind(store: &ParamStore, max_len: usize, mixer: Mixer) -> Result<Self> {
        let get = |name: &str| store.id(name).ok_or_else(|| Error::MissingParam(name.to_string()));
        let token_table = get("token_table")?;
        let dim = store.get(token_table).cols();
        let enc = TokenEncoder {
            dim,
            max_len,
            mixer,
            token_table,
            position_table: get("position_table")?,
            speaker_table: get("speaker_table")?,
            w_q: get("mixer.W_q")?,
            w_k: get("mixer.W_k")?,
            w_v: get("mixer.W_v")?,
            w_o: get("mixer.W_o")?,
        };
        let pos = store.get(enc.position_table);
        if pos.rows() < max_len || pos.cols() != dim {
            return Err(Error::Shape { what: "position_table".into(), expected: (max_len, dim), found: pos.shape() });
        }
        let spk = store.get(enc.speaker_table);
        if spk.shape() != (2, dim) {
            return Err(Error::Shape { what: "speaker_table".into(), expected: (2, dim), found: spk.shape() });
        }
        Ok(enc)
    }

    pub fn speaker_row(speaker: Speaker) -> usize {
        match speaker {
            Speaker::Doctor => 0,
            Speaker::Patient => 1,
        }
    }

    /// Sum of token, position and speaker embeddings: `len x dim`.
    pub fn input_embeddings(&self, tape: &mut Tape, store: &ParamStore, u: &EncodedUtterance) -> Var {
        let len = u.token_ids.len().min(self.max_len);
        let ids: Rc<[usize]> = u.token_ids[..len].iter().map(|&t| t as usize).collect();
        let positions: Rc<[usize]> = (0..len).collect();
        let speakers: Rc<[usize]> = core::iter::repeat_n(Self::speaker_row(u.speaker), len).collect();
        let tok = tape.param(store, self.token_table);
        let pos = tape.param(store, self.position_table);
        let spk = tape.param(store, self.speaker_table);
        let tok = tape.gather(tok, ids);
        let pos = tape.gather(pos, positions);
        let spk = tape.gather(spk, speakers);
        let x = tape.add(tok, pos);
        tape.add(x, spk)
    }
}

impl TokenEncoder {
    /// Encodes every utterance of a dialogue with one set of tape operations.
    /// Tokens of all utterances are stacked and attention is restricted to
    /// each utterance through segment softmax.
    fn encode_batch(&self, tape: &mut Tape, store: &ParamStore, utterances: &[EncodedUtterance]) -> Var {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut speakers = Vec::new();
        let mut segment = Vec::new();
        let mut first = Vec::with_capacity(utterances.len());
        let mut inv_len = Vec::new();
        for (u_idx, u) in utterances.iter().enumerate() {
            let len = u.token_ids.len().min(self.max_len).max(1);
            first.push(ids.len());
            for p in 0..len {
                ids.push(u.token_ids.get(p).map_or(0, |&t| t as usize));
                positions.push(p);
                speakers.push(Self::speaker_row(u.speaker));
                segment.push(u_idx);
                inv_len.push(1.0 / len as f64);
            }
        }
        let n = utterances.len();
        let segment: Rc<[usize]> = Rc::from(segment);
        let token_index: Rc<[usize]> = (0..segment.len()).collect();
        let tok = tape.param(store, self.token_table);
        let pos = tape.param(store, self.position_table);
        let spk = tape.param(store, self.speaker_table);
        let tok = tape.gather(tok, Rc::from(ids));
        let pos = tape.gather(pos, Rc::from(positions));
        let spk = tape.gather(spk, Rc::from(speakers));
        let x = tape.add(tok, pos);
        let x = tape.add(x, spk);
        match self.mixer {
            Mixer::Mean => {
                let w = tape.constant(Matrix::col_vector(inv_len));
                tape.edge_aggregate(w, x, token_index, segment, n)
            }
            Mixer::Attention => {
                let cls = tape.gather(x, Rc::from(first));
                let wq = tape.param(store, self.w_q);
                let wk = tape.param(store, self.w_k);
                let wv = tape.param(store, self.w_v);
                let wo = tape.param(store, self.w_o);
                let q = tape.matmul(cls, wq);
                let k = tape.matmul(x, wk);
                let v = tape.matmul(x, wv);
                let q = tape.gather(q, segment.clone());
                let scores = tape.mul(q, k);
                let scores = tape.row_sum(scores);
                let scores = tape.scale(scores, 1.0 / math::sqrt(self.dim as f64));
                let attn = tape.segment_softmax(scores, segment.clone());
                let mixed = tape.edge_aggregate(attn, v, token_index, segment, n);
                let out = tape.matmul(mixed, wo);
                tape.add(cls, out)
            }
        }
    }
}

impl UtteranceEncoder for TokenEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tape: &mut Tape, store: &ParamStore, u: &EncodedUtterance) -> Var {
        self.encode_batch(tape, store, core::slice::from_ref(u))
    }

    fn encode_dialogue(&self, tape: &mut Tape, store: &ParamStore, utterances: &[EncodedUtterance]) -> Var {
        self.encode_batch(tape, store, utterances)
    }
}

/// Adapter for externally computed utterance vectors (for example a frozen
/// pretrained language model). Vectors enter the tape as constants.
pub struct FixedEncoder<F> {
    dim: usize,
    embed: F,
}

impl<F> FixedEncoder<F>
where
    F: Fn(&EncodedUtterance) -> Vec<f64>,
{
    pub fn new(dim: usize, embed: F) -> Self {
        FixedEncoder { dim, embed }
    }
}

impl<F> UtteranceEncoder for FixedEncoder<F>
where
    F: Fn(&EncodedUtterance) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tape: &mut Tape, _store: &ParamStore, u: &EncodedUtterance) -> Var {
        let v = (self.embed)(u);
        assert_eq!(v.len(), self.dim, "external encoder returned the wrong width");
        tape.constant(Matrix::row_vector(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tokenizer() -> Tokenizer {
        Tokenizer::fit(["do you have a fever", "yes a fever", "take [MASK]"], 16, 1).unwrap()
    }

    #[test]
    fn reserved_ids_are_stable() {
        let t = tokenizer();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(t.id(r), Some(i as u32));
        }
        // "a" and "fever" appear twice and rank first
        assert_eq!(t.tokens()[5], "a");
        assert_eq!(t.tokens()[6], "fever");
        let again = Tokenizer::from_tokens(t.tokens().to_vec(), 16).unwrap();
        assert_eq!(again, t);
        assert!(Tokenizer::from_tokens(vec!["x".into()], 16).is_err());
    }

    #[test]
    fn encode_adds_cls_sep_and_unk() {
        let t = tokenizer();
        let ids = t.encode("Fever zzz [MASK]");
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
        assert_eq!(ids[1], t.id("fever").unwrap());
        assert_eq!(ids[2], UNK_ID);
        assert_eq!(ids[3], t.id(MASK).unwrap());
        let long = "a ".repeat(100);
        assert_eq!(t.encode(&long).len(), 16);
    }

    fn setup() -> (ParamStore, TokenEncoder) {
        let mut store = ParamStore::new();
        let enc = TokenEncoder::register(&mut store, 3, 12, 8, 4, Mixer::Attention);
        (store, enc)
    }

    #[test]
    fn speaker_changes_the_encoding() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let p = EncodedUtterance { speaker: Speaker::Patient, token_ids: vec![2, 7, 3] };
        let d = EncodedUtterance { speaker: Speaker::Doctor, ..p.clone() };
        let hp = enc.encode(&mut tape, &store, &p);
        let hd = enc.encode(&mut tape, &store, &d);
        assert!(tape.value(hp).max_abs_diff(tape.value(hd)) > 1e-6);
    }

    #[test]
    fn zero_mixer_single_token_is_the_input_sum() {
        let (mut store, enc) = setup();
        *store.get_mut(enc.w_o) = Matrix::zeros(4, 4);
        let u = EncodedUtterance { speaker: Speaker::Doctor, token_ids: vec![9] };
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &u);
        for c in 0..4 {
            let expected = store.get(enc.token_table)[(9, c)]
                + store.get(enc.position_table)[(0, c)]
                + store.get(enc.speaker_table)[(0, c)];
            assert!((tape.value(h)[(0, c)] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_mixer_averages_inputs() {
        let mut store = ParamStore::new();
        let enc = TokenEncoder::register(&mut store, 3, 12, 8, 4, Mixer::Mean);
        let u = EncodedUtterance { speaker: Speaker::Patient, token_ids: vec![2, 5, 3] };
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &u);
        let x = enc.input_embeddings(&mut tape, &store, &u);
        let x = tape.value(x).clone();
        for c in 0..4 {
            let mean = (x[(0, c)] + x[(1, c)] + x[(2, c)]) / 3.0;
            assert!((tape.value(h)[(0, c)] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn dialogue_rows_are_independent_encodings() {
        let (store, enc) = setup();
        let a = EncodedUtterance { speaker: Speaker::Patient, token_ids: vec![2, 5, 6, 3] };
        let b = EncodedUtterance { speaker: Speaker::Doctor, token_ids: vec![2, 7, 3] };
        let mut tape = Tape::new();
        let ab = enc.encode_dialogue(&mut tape, &store, &[a.clone(), b.clone()]);
        let ba = enc.encode_dialogue(&mut tape, &store, &[b, a]);
        let (ab, ba) = (tape.value(ab).clone(), tape.value(ba).clone());
        assert_eq!(ab.shape(), (2, 4));
        assert_eq!(ab.row(0), ba.row(1));
        assert_eq!(ab.row(1), ba.row(0));
    }

    #[test]
    fn attention_matches_dense_reference() {
        let (store, enc) = setup();
        let u = EncodedUtterance { speaker: Speaker::Patient, token_ids: vec![2, 5, 6, 9, 3] };
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &u);
        let x = enc.input_embeddings(&mut tape, &store, &u);
        let x = tape.value(x).clone();
        let p = |id| store.get(id).clone();
        let cls = Matrix::from_rows(&[x.row(0).to_vec()]);
        let q = cls.matmul(&p(enc.w_q));
        let k = x.matmul(&p(enc.w_k));
        let v = x.matmul(&p(enc.w_v));
        let mut scores = q.matmul_bt(&k);
        scores.scale_assign(0.5);
        crate::linalg::softmax_in_place(scores.as_mut_slice());
        let mut expected = scores.matmul(&v).matmul(&p(enc.w_o));
        expected.add_assign(&cls);
        assert!(tape.value(h).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn fixed_encoder_plugs_in() {
        let enc = FixedEncoder::new(3, |u: &EncodedUtterance| vec![u.token_ids.len() as f64, 0.0, 1.0]);
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let u = EncodedUtterance { speaker: Speaker::Patient, token_ids: vec![2, 3] };
        let h = enc.encode_dialogue(&mut tape, &store, &[u.clone(), u]);
        assert_eq!(tape.value(h).shape(), (2, 3));
        assert_eq!(tape.value(h)[(1, 0)], 2.0);
    }
}
