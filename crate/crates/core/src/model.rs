//! The end-to-end recommender: dialogue encoder, disease encoder, decoder,
//! loss and the training loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{bce_value, Activation, Tape, Var};
use crate::corpus::{Dialogue, Vocabulary};
use crate::encoder::{EncodedUtterance, Mixer, TokenEncoder, Tokenizer, UtteranceEncoder};
use crate::error::{Error, Result};
use crate::gat::{AttentionPool, Edges, GatLayer, KnowledgeGatDims, KnowledgeGatLayer};
use crate::kg::{lookup_disease_entity, sample_subgraph, KnowledgeGraph, Subgraph, TransRParams};
use crate::linalg::Matrix;
use crate::metrics::{evaluate_run, jaccard, sample_f1, DdiGraph, EvaluationReport};
use crate::optim::{clip_global_norm, Adam};
use crate::params::{Grads, ParamId, ParamStore};
use crate::qa_graph::build_qa_graph;
use crate::rng;

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Pool encoder outputs directly, skipping the dialogue GAT stack.
    pub no_dialogue_graph: bool,
    /// Replace the disease encoder by a per-disease embedding table.
    pub no_kg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdnConfig {
    /// Width of utterance, dialogue and disease vectors.
    pub dim: usize,
    pub max_len: usize,
    pub mixer: Mixer,
    pub dialogue_layers: usize,
    pub kg_layers: usize,
    /// Width of the fused attention space in the knowledge GAT.
    pub kg_att_dim: usize,
    pub hops: usize,
    pub fanout: usize,
    pub activation: Activation,
    pub self_loops: bool,
    pub threshold: f64,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for DdnConfig {
    fn default() -> Self {
        DdnConfig {
            dim: 32,
            max_len: 64,
            mixer: Mixer::Attention,
            dialogue_layers: 2,
            kg_layers: 2,
            kg_att_dim: 32,
            hops: 2,
            fanout: 8,
            activation: Activation::Elu,
            self_loops: true,
            threshold: 0.5,
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

/// How a dialogue's disease enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiseaseInput {
    /// Root entity in the knowledge graph.
    Entity(usize),
    /// Row of the ablation embedding table.
    TableRow(usize),
    /// NoneOrOthers or not found: the learnable fallback vector.
    Fallback,
}

/// A dialogue converted to model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDialogue {
    pub id: String,
    pub utterances: Vec<EncodedUtterance>,
    pub disease: DiseaseInput,
    /// Multi-hot target over the medication vocabulary.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub probabilities: Vec<f64>,
    pub predicted: BTreeSet<usize>,
}

/// Nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub probs: Var,
    pub dialogue: Var,
    pub disease: Var,
}

#[derive(Debug, Clone, PartialEq)]
struct KgHandles {
    entity_emb: ParamId,
    relation_emb: ParamId,
    self_relation: ParamId,
    layers: Vec<KnowledgeGatLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdnModel {
    pub config: DdnConfig,
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
    pub medications: Vocabulary,
    pub diseases: Vocabulary,
    encoder: TokenEncoder,
    dialogue_gat: Vec<GatLayer>,
    pool: AttentionPool,
    kg: Option<KgHandles>,
    disease_table: Option<ParamId>,
    s_hat: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

fn get(store: &ParamStore, name: &str) -> Result<ParamId> {
    store.id(name).ok_or_else(|| Error::MissingParam(name.to_string()))
}

fn expect_shape(store: &ParamStore, id: ParamId, expected: (usize, usize)) -> Result<()> {
    let found = store.get(id).shape();
    if found != expected {
        return Err(Error::Shape { what: store.name(id).to_string(), expected, found });
    }
    Ok(())
}

impl DdnModel {
    /// Registers fresh parameters. `transr` supplies the initial entity and
    /// relation embeddings and is required unless the KG path is ablated.
    pub fn new(
        config: DdnConfig,
        tokenizer: Tokenizer,
        medications: Vocabulary,
        diseases: Vocabulary,
        transr: Option<&TransRParams>,
    ) -> Result<Self> {
        validate_config(&config)?;
        if medications.is_empty() {
            return Err(Error::Config("empty medication vocabulary".into()));
        }
        let seed = config.seed;
        let d = config.dim;
        let mut store = ParamStore::new();
        TokenEncoder::register(&mut store, seed, tokenizer.vocab_size(), config.max_len, d, config.mixer);
        if !config.ablation.no_dialogue_graph {
            for l in 1..=config.dialogue_layers {
                GatLayer::register(&mut store, seed, &format!("gat.l{l}"), d, d, config.activation);
            }
        }
        AttentionPool::register(&mut store, seed, d);
        if config.ablation.no_kg {
            store.add_uniform(seed, "nokg.disease_table", diseases.len().max(1), d, 0.1);
        } else {
            let t = transr.ok_or_else(|| Error::Config("knowledge path needs TransR embeddings".into()))?;
            store.add("kg.entity_emb", t.entity_emb.clone());
            store.add("kg.relation_emb", t.relation_emb.clone());
            for (r, m) in t.projections.iter().enumerate() {
                store.add(format!("kg.proj.{r}"), m.clone());
            }
            store.add_uniform(seed, "kgat.self_rel", 1, t.d_r(), 0.1);
            for l in 1..=config.kg_layers {
                let dims = KnowledgeGatDims {
                    d_in: if l == 1 { t.d_e() } else { d },
                    d_out: d,
                    d_att: config.kg_att_dim,
                    d_rel: t.d_r(),
                    d_dialogue: d,
                };
                KnowledgeGatLayer::register(&mut store, seed, &format!("kgat.l{l}"), &dims, config.activation);
            }
        }
        store.add_uniform(seed, "s_hat", 1, d, 0.1);
        store.add_glorot(seed, "decoder.W_o", medications.len(), 2 * d);
        store.add("decoder.b_o", Matrix::zeros(1, medications.len()));
        Self::from_store(config, tokenizer, medications, diseases, store)
    }

    /// Binds a model to an existing parameter store, checking every width.
    pub fn from_store(
        config: DdnConfig,
        tokenizer: Tokenizer,
        medications: Vocabulary,
        diseases: Vocabulary,
        store: ParamStore,
    ) -> Result<Self> {
        validate_config(&config)?;
        let d = config.dim;
        let encoder = TokenEncoder::bind(&store, config.max_len, config.mixer)?;
        if encoder.dim != d {
            return Err(Error::Config(format!("encoder width {} differs from dim {d}", encoder.dim)));
        }
        expect_shape(&store, encoder.token_table, (tokenizer.vocab_size(), d))?;
        let mut dialogue_gat = Vec::new();
        if !config.ablation.no_dialogue_graph {
            for l in 1..=config.dialogue_layers {
                let layer = GatLayer::bind(&store, &format!("gat.l{l}"), config.activation)?;
                expect_shape(&store, layer.w_h, (d, d))?;
                dialogue_gat.push(layer);
            }
        }
        let pool = AttentionPool::bind(&store)?;
        expect_shape(&store, pool.w_a, (1, d))?;
        let (kg, disease_table) = if config.ablation.no_kg {
            let t = get(&store, "nokg.disease_table")?;
            expect_shape(&store, t, (diseases.len().max(1), d))?;
            (None, Some(t))
        } else {
            let entity_emb = get(&store, "kg.entity_emb")?;
            let relation_emb = get(&store, "kg.relation_emb")?;
            let self_relation = get(&store, "kgat.self_rel")?;
            let d_e = store.get(entity_emb).cols();
            let d_r = store.get(relation_emb).cols();
            expect_shape(&store, self_relation, (1, d_r))?;
            let mut layers = Vec::new();
            for l in 1..=config.kg_layers {
                let layer = KnowledgeGatLayer::bind(&store, &format!("kgat.l{l}"), config.activation)?;
                let d_in = if l == 1 { d_e } else { d };
                expect_shape(&store, layer.w_k, (d, d_in))?;
                expect_shape(&store, layer.w_r, (config.kg_att_dim, d_r))?;
                expect_shape(&store, layer.w_d, (config.kg_att_dim, d))?;
                layers.push(layer);
            }
            (Some(KgHandles { entity_emb, relation_emb, self_relation, layers }), None)
        };
        let s_hat = get(&store, "s_hat")?;
        expect_shape(&store, s_hat, (1, d))?;
        let w_o = get(&store, "decoder.W_o")?;
        expect_shape(&store, w_o, (medications.len(), 2 * d))?;
        let b_o = get(&store, "decoder.b_o")?;
        expect_shape(&store, b_o, (1, medications.len()))?;
        Ok(DdnModel {
            config,
            store,
            tokenizer,
            medications,
            diseases,
            encoder,
            dialogue_gat,
            pool,
            kg,
            disease_table,
            s_hat,
            w_o,
            b_o,
        })
    }

    /// Entity and relation embedding handles, absent under the KG ablation.
    pub fn kg_params(&self) -> Option<(ParamId, ParamId)> {
        self.kg.as_ref().map(|k| (k.entity_emb, k.relation_emb))
    }

    pub fn s_hat(&self) -> ParamId {
        self.s_hat
    }

    pub fn decoder(&self) -> (ParamId, ParamId) {
        (self.w_o, self.b_o)
    }

    pub fn prepare(&self, dialogue: &Dialogue, kg: Option<&KnowledgeGraph>) -> Result<PreparedDialogue> {
        if dialogue.utterances.is_empty() {
            return Err(Error::InvalidArgument(format!("dialogue {} has no utterances", dialogue.id)));
        }
        let utterances = dialogue
            .utterances
            .iter()
            .map(|u| EncodedUtterance { speaker: u.speaker, token_ids: self.tokenizer.encode(&u.text) })
            .collect();
        let disease = if dialogue.is_none_or_others() {
            DiseaseInput::Fallback
        } else if self.config.ablation.no_kg {
            self.diseases.index(&dialogue.disease).map_or(DiseaseInput::Fallback, DiseaseInput::TableRow)
        } else {
            let kg = kg.ok_or_else(|| Error::Config("knowledge path needs a knowledge graph".into()))?;
            lookup_disease_entity(&dialogue.disease, kg).map_or(DiseaseInput::Fallback, DiseaseInput::Entity)
        };
        Ok(PreparedDialogue {
            id: dialogue.id.clone(),
            utterances,
            disease,
            targets: self.medications.multi_hot(&dialogue.medications),
        })
    }

    /// Samples the disease subgraph for `input`, if it has a KG root.
    pub fn subgraph(&self, input: &PreparedDialogue, kg: Option<&KnowledgeGraph>, seed: u64) -> Result<Option<Subgraph>> {
        match (input.disease, kg) {
            (DiseaseInput::Entity(root), Some(kg)) => {
                Ok(Some(sample_subgraph(kg, root, self.config.hops, self.config.fanout, seed)?))
            }
            (DiseaseInput::Entity(_), None) => Err(Error::Config("knowledge path needs a knowledge graph".into())),
            _ => Ok(None),
        }
    }

    /// Dialogue vector `h_D` (`1 x d`).
    pub fn encode_dialogue(&self, tape: &mut Tape, input: &PreparedDialogue) -> Result<Var> {
        let mut h = self.encoder.encode_dialogue(tape, &self.store, &input.utterances);
        if !self.config.ablation.no_dialogue_graph && !self.dialogue_gat.is_empty() {
            let speakers: Vec<_> = input.utterances.iter().map(|u| u.speaker).collect();
            let graph = build_qa_graph(&speakers, self.config.self_loops)?;
            let edges = Edges::from_graph(&graph)?;
            for layer in &self.dialogue_gat {
                h = layer.forward(tape, &self.store, h, &edges);
            }
        }
        Ok(self.pool.forward(tape, &self.store, h).1)
    }

    /// Disease vector `s_d` (`1 x d`).
    pub fn encode_disease(
        &self,
        tape: &mut Tape,
        input: &PreparedDialogue,
        dialogue: Var,
        subgraph: Option<&Subgraph>,
    ) -> Result<Var> {
        match input.disease {
            DiseaseInput::Fallback => Ok(tape.param(&self.store, self.s_hat)),
            DiseaseInput::TableRow(row) => {
                let table = self.disease_table.ok_or_else(|| Error::Config("no disease table in this model".into()))?;
                let t = tape.param(&self.store, table);
                Ok(tape.gather(t, Rc::from([row])))
            }
            DiseaseInput::Entity(root) => {
                let handles = self.kg.as_ref().ok_or_else(|| Error::Config("knowledge path is ablated".into()))?;
                let sub = subgraph.ok_or_else(|| Error::InvalidArgument("missing disease subgraph".into()))?;
                if sub.root() != root {
                    return Err(Error::InvalidArgument(format!("subgraph root {} is not {root}", sub.root())));
                }
                let n_rel = self.store.get(handles.relation_emb).rows();
                let edges = sub.message_edges(n_rel);
                let entities = tape.param(&self.store, handles.entity_emb);
                let mut h = tape.gather(entities, sub.nodes.iter().copied().collect());
                let rel = tape.param(&self.store, handles.relation_emb);
                let self_rel = tape.param(&self.store, handles.self_relation);
                let relations = tape.concat_rows(&[rel, self_rel]);
                for layer in &handles.layers {
                    h = layer.forward(tape, &self.store, h, relations, dialogue, &edges)?;
                }
                Ok(tape.gather(h, Rc::from([0usize])))
            }
        }
    }

    /// `y = sigmoid(W_o [h_D ; s_d] + b_o)` as a `1 x |M|` node.
    pub fn forward(&self, tape: &mut Tape, input: &PreparedDialogue, subgraph: Option<&Subgraph>) -> Result<ForwardOutput> {
        let dialogue = self.encode_dialogue(tape, input)?;
        let disease = self.encode_disease(tape, input, dialogue, subgraph)?;
        let joint = tape.concat_cols(&[dialogue, disease]);
        let w_o = tape.param(&self.store, self.w_o);
        let b_o = tape.param(&self.store, self.b_o);
        let logits = tape.matmul_bt(joint, w_o);
        let logits = tape.add_row(logits, b_o);
        let probs = tape.activation(logits, Activation::Sigmoid);
        Ok(ForwardOutput { probs, dialogue, disease })
    }

    /// Summed BCE of one example, returned as a scalar node.
    pub fn loss(&self, tape: &mut Tape, input: &PreparedDialogue, subgraph: Option<&Subgraph>) -> Result<Var> {
        let out = self.forward(tape, input, subgraph)?;
        Ok(tape.bce(out.probs, Matrix::row_vector(input.targets.clone()), BCE_EPS))
    }

    /// Seed of the evaluation-time subgraph for a dialogue.
    pub fn eval_subgraph_seed(&self, id: &str) -> u64 {
        rng::derive(rng::derive(self.config.seed, "subgraph.eval"), id)
    }

    pub fn probabilities(&self, dialogue: &Dialogue, kg: Option<&KnowledgeGraph>) -> Result<Vec<f64>> {
        let input = self.prepare(dialogue, kg)?;
        let sub = self.subgraph(&input, kg, self.eval_subgraph_seed(&dialogue.id))?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &input, sub.as_ref())?;
        Ok(tape.value(out.probs).as_slice().to_vec())
    }

    pub fn predict(&self, dialogue: &Dialogue, kg: Option<&KnowledgeGraph>) -> Result<Prediction> {
        let probabilities = self.probabilities(dialogue, kg)?;
        let predicted = predict_set(&probabilities, self.config.threshold);
        Ok(Prediction { id: dialogue.id.clone(), probabilities, predicted })
    }

    /// Predicted medication names.
    pub fn predict_names(&self, dialogue: &Dialogue, kg: Option<&KnowledgeGraph>) -> Result<BTreeSet<String>> {
        let p = self.predict(dialogue, kg)?;
        Ok(p.predicted.iter().map(|&i| self.medications.name(i).to_string()).collect())
    }

    pub fn predict_all<'a>(
        &self,
        dialogues: impl IntoIterator<Item = &'a Dialogue>,
        kg: Option<&KnowledgeGraph>,
    ) -> Result<BTreeMap<String, BTreeSet<String>>> {
        dialogues.into_iter().map(|d| Ok((d.id.clone(), self.predict_names(d, kg)?))).collect()
    }

    pub fn evaluate<'a>(
        &self,
        dialogues: impl IntoIterator<Item = &'a Dialogue> + Clone,
        kg: Option<&KnowledgeGraph>,
        ddi: &DdiGraph,
    ) -> Result<EvaluationReport> {
        let predictions = self.predict_all(dialogues.clone(), kg)?;
        evaluate_run(&predictions, dialogues, ddi)
    }

    /// Loss and gradients of a batch, summed over its examples.
    pub fn batch_gradients(&self, batch: &[(&PreparedDialogue, Option<&Subgraph>)]) -> Result<(f64, Grads)> {
        let mut grads = Grads::new(self.store.len());
        let mut total = 0.0;
        for (input, sub) in batch {
            let mut tape = Tape::new();
            let loss = self.loss(&mut tape, input, *sub)?;
            total += tape.value(loss).as_slice()[0];
            grads.merge(&tape.backward(loss, self.store.len()));
        }
        Ok((total, grads))
    }
}

fn validate_config(c: &DdnConfig) -> Result<()> {
    if c.dim == 0 || c.max_len == 0 || c.kg_att_dim == 0 {
        return Err(Error::Config("dim, max_len and kg_att_dim must be positive".into()));
    }
    if !c.ablation.no_kg && (c.kg_layers == 0 || c.hops == 0 || c.fanout == 0) {
        return Err(Error::Config("the knowledge path needs kg_layers, hops and fanout of at least 1".into()));
    }
    if !(0.0..=1.0).contains(&c.threshold) {
        return Err(Error::Config(format!("threshold {} outside [0, 1]", c.threshold)));
    }
    Ok(())
}

/// Indices with probability strictly above `threshold`.
pub fn predict_set(probabilities: &[f64], threshold: f64) -> BTreeSet<usize> {
    probabilities.iter().enumerate().filter(|(_, &p)| p > threshold).map(|(i, _)| i).collect()
}

/// Summed binary cross-entropy over a batch with probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_loss(predicted: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != targets.len() {
        return Err(Error::InvalidArgument("batch sizes differ".into()));
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::InvalidArgument("label widths differ".into()));
        }
        total += bce_value(p, t, BCE_EPS);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Keep the TransR entity and relation embeddings fixed.
    pub freeze_kg: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 2e-5, batch_size: 8, epochs: 20, seed: 0, clip_norm: Some(1.0), freeze_kg: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_jaccard: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Mean Jaccard and F1 of `model` on `dialogues`.
pub fn quick_scores(model: &DdnModel, dialogues: &[Dialogue], kg: Option<&KnowledgeGraph>) -> Result<(f64, f64)> {
    if dialogues.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for d in dialogues {
        let p = model.predict_names(d, kg)?;
        j += jaccard(&p, &d.medications);
        f += sample_f1(&p, &d.medications);
    }
    let n = dialogues.len() as f64;
    Ok((j / n, f / n))
}

/// Trains with Adam on summed batch losses and keeps the parameters of the
/// epoch with the best dev Jaccard (the last epoch when `dev` is empty).
pub fn train_model(
    model: &mut DdnModel,
    train: &[Dialogue],
    dev: &[Dialogue],
    kg: Option<&KnowledgeGraph>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let prepared: Vec<PreparedDialogue> = train.iter().map(|d| model.prepare(d, kg)).collect::<Result<_>>()?;
    let mut adam = Adam::new(&model.store, config.lr);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let frozen: Vec<ParamId> = if config.freeze_kg { model.kg_params().map_or(vec![], |(e, r)| vec![e, r]) } else { vec![] };
    for epoch in 1..=config.epochs {
        let mut shuffle = rng::stream(rng::derive_n(config.seed, "train.order", epoch as u64), "shuffle");
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle);
        let epoch_seed = rng::derive_n(config.seed, "subgraph.train", epoch as u64);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let subs: Vec<Option<Subgraph>> = chunk
                .iter()
                .map(|&i| model.subgraph(&prepared[i], kg, rng::derive(epoch_seed, &prepared[i].id)))
                .collect::<Result<_>>()?;
            let batch: Vec<(&PreparedDialogue, Option<&Subgraph>)> =
                chunk.iter().zip(&subs).map(|(&i, s)| (&prepared[i], s.as_ref())).collect();
            let (loss, mut grads) = model.batch_gradients(&batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("non-finite loss {loss}") });
            }
            for &id in &frozen {
                grads.clear(id);
            }
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(&mut model.store, &grads);
            epoch_loss += loss;
        }
        if !model.store.all_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite parameters".into() });
        }
        let (dev_jaccard, dev_f1) = quick_scores(model, dev, kg)?;
        log.epochs.push(EpochLog { epoch, train_loss: epoch_loss / prepared.len() as f64, dev_jaccard, dev_f1 });
        let better = best.as_ref().is_none_or(|(j, _)| dev.is_empty() || dev_jaccard > *j);
        if better {
            best = Some((dev_jaccard, model.store.clone()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(log)
}
