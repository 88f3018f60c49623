//! Knowledge graph store, TransR pretraining, disease lookup and K-hop sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::NONE_OR_OTHERS;
use crate::error::{Error, Result};
use crate::gat::{Edges, TypedEdges};
use crate::linalg::{dot, Matrix};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Directed, deduplicated triple store with an alias index over entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: BTreeMap<String, usize>,
    aliases: BTreeMap<String, usize>,
    relations: Vec<String>,
    relation_index: BTreeMap<String, usize>,
    triples: Vec<Triple>,
    /// Triple indices touching each entity, as head or tail.
    incident: Vec<Vec<usize>>,
}

/// Collects named triples; duplicates are dropped and counted.
#[derive(Debug, Default, Clone)]
pub struct KgBuilder {
    triples: BTreeSet<(String, String, String)>,
    aliases: Vec<(String, String)>,
    duplicates: usize,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triple(&mut self, head: &str, relation: &str, tail: &str) -> &mut Self {
        if !self.triples.insert((head.to_string(), relation.to_string(), tail.to_string())) {
            self.duplicates += 1;
        }
        self
    }

    pub fn alias(&mut self, alias: &str, entity: &str) -> &mut Self {
        self.aliases.push((alias.to_string(), entity.to_string()));
        self
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Entities and relations are numbered in sorted name order.
    pub fn build(&self) -> Result<KnowledgeGraph> {
        let mut entity_names = BTreeSet::new();
        let mut relation_names = BTreeSet::new();
        for (h, r, t) in &self.triples {
            entity_names.insert(h.as_str());
            entity_names.insert(t.as_str());
            relation_names.insert(r.as_str());
        }
        let entities: Vec<String> = entity_names.into_iter().map(String::from).collect();
        let relations: Vec<String> = relation_names.into_iter().map(String::from).collect();
        let entity_index: BTreeMap<String, usize> = entities.iter().cloned().zip(0..).collect();
        let relation_index: BTreeMap<String, usize> = relations.iter().cloned().zip(0..).collect();
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .map(|(h, r, t)| Triple { head: entity_index[h], relation: relation_index[r], tail: entity_index[t] })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut incident = vec![Vec::new(); entities.len()];
        for (i, t) in triples.iter().enumerate() {
            incident[t.head].push(i);
            if t.tail != t.head {
                incident[t.tail].push(i);
            }
        }
        let mut kg = KnowledgeGraph {
            entities,
            entity_index,
            aliases: BTreeMap::new(),
            relations,
            relation_index,
            triples,
            incident,
        };
        for (alias, entity) in &self.aliases {
            kg.add_alias(alias, entity)?;
        }
        Ok(kg)
    }
}

impl KnowledgeGraph {
    pub fn add_alias(&mut self, alias: &str, entity: &str) -> Result<()> {
        let id = self
            .entity_id(entity)
            .ok_or_else(|| Error::Validation(format!("alias {alias} points at unknown entity {entity}")))?;
        match self.aliases.get(alias) {
            Some(&existing) if existing != id => Err(Error::Validation(format!(
                "alias {alias} maps to both {} and {entity}",
                self.entities[existing]
            ))),
            _ => {
                self.aliases.insert(alias.to_string(), id);
                Ok(())
            }
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entities[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(a, &id)| (a.as_str(), self.entities[id].as_str()))
    }

    pub fn incident(&self, entity: usize) -> &[usize] {
        &self.incident[entity]
    }

    pub fn named_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.triples
            .iter()
            .map(|t| (self.entities[t.head].as_str(), self.relations[t.relation].as_str(), self.entities[t.tail].as_str()))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }
}

/// Entity for a disease label: exact name first, then the alias index.
/// The none-or-others sentinel never resolves.
pub fn lookup_disease_entity(disease: &str, kg: &KnowledgeGraph) -> Option<usize> {
    if disease == NONE_OR_OTHERS {
        return None;
    }
    kg.entity_id(disease).or_else(|| kg.aliases.get(disease).copied())
}

/// TransR embeddings. Projections map entity space (`d_e`) to relation space (`d_r`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransRParams {
    pub entity_emb: Matrix,
    pub relation_emb: Matrix,
    /// One `d_r x d_e` matrix per relation.
    pub projections: Vec<Matrix>,
}

impl TransRParams {
    pub fn d_e(&self) -> usize {
        self.entity_emb.cols()
    }

    pub fn d_r(&self) -> usize {
        self.relation_emb.cols()
    }

    /// `M_r (e_h - e_t) + e_r`.
    fn residual(&self, h: usize, r: usize, t: usize) -> Vec<f64> {
        let m = &self.projections[r];
        let diff: Vec<f64> = self.entity_emb.row(h).iter().zip(self.entity_emb.row(t)).map(|(a, b)| a - b).collect();
        (0..m.rows()).map(|i| dot(m.row(i), &diff) + self.relation_emb[(r, i)]).collect()
    }

    pub fn max_entity_norm(&self) -> f64 {
        (0..self.entity_emb.rows()).map(|i| math::sqrt(dot(self.entity_emb.row(i), self.entity_emb.row(i)))).fold(0.0, f64::max)
    }
}

/// `|| M_r e_h + e_r - M_r e_t ||^2`; lower is more plausible.
pub fn transr_score(h: usize, r: usize, t: usize, p: &TransRParams) -> Result<f64> {
    let n_e = p.entity_emb.rows();
    if h >= n_e {
        return Err(Error::UnknownEntity(h));
    }
    if t >= n_e {
        return Err(Error::UnknownEntity(t));
    }
    if r >= p.relation_emb.rows() || r >= p.projections.len() {
        return Err(Error::UnknownRelation(r));
    }
    Ok(p.residual(h, r, t).iter().map(|x| x * x).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransRConfig {
    pub d_e: usize,
    pub d_r: usize,
    pub margin: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TransRConfig {
    fn default() -> Self {
        TransRConfig { d_e: 32, d_r: 32, margin: 1.0, epochs: 50, negatives_per_positive: 1, lr: 0.01, seed: 0 }
    }
}

fn clip_rows_to_unit(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = math::sqrt(dot(row, row));
        if norm > 1.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
}

impl TransRParams {
    pub fn init(kg: &KnowledgeGraph, d_e: usize, d_r: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "transr.init");
        let bound = 6.0 / math::sqrt(d_e.max(d_r) as f64);
        let mut entity_emb = Matrix::uniform(kg.n_entities(), d_e, bound, &mut r);
        let mut relation_emb = Matrix::uniform(kg.n_relations(), d_r, bound, &mut r);
        clip_rows_to_unit(&mut entity_emb);
        clip_rows_to_unit(&mut relation_emb);
        let projections = (0..kg.n_relations())
            .map(|_| {
                let mut m = Matrix::zeros(d_r, d_e);
                for i in 0..d_r.min(d_e) {
                    m[(i, i)] = 1.0;
                }
                m
            })
            .collect();
        TransRParams { entity_emb, relation_emb, projections }
    }
}

fn corrupt(kg: &KnowledgeGraph, t: &Triple, rng: &mut ChaCha8Rng) -> Triple {
    let n = kg.n_entities();
    let mut neg = *t;
    for _ in 0..16 {
        neg = *t;
        if rng.gen_bool(0.5) {
            neg.head = rng.gen_range(0..n);
        } else {
            neg.tail = rng.gen_range(0..n);
        }
        if !kg.contains(&neg) {
            break;
        }
    }
    neg
}

/// Accumulates `sign * d score / d params` scaled by `lr` into `p` (one SGD step).
fn sgd_step(p: &mut TransRParams, t: &Triple, sign: f64, lr: f64) {
    let v = p.residual(t.head, t.relation, t.tail);
    let d_e = p.d_e();
    let m = p.projections[t.relation].clone();
    // d f / d e_h = 2 M^T v, d f / d e_t = -2 M^T v, d f / d e_r = 2 v, d f / d M = 2 v (e_h - e_t)^T
    let mut mtv = vec![0.0; d_e];
    for (i, vi) in v.iter().enumerate() {
        for (k, acc) in mtv.iter_mut().enumerate() {
            *acc += m[(i, k)] * vi;
        }
    }
    let diff: Vec<f64> = p.entity_emb.row(t.head).iter().zip(p.entity_emb.row(t.tail)).map(|(a, b)| a - b).collect();
    let step = 2.0 * lr * sign;
    for k in 0..d_e {
        p.entity_emb[(t.head, k)] -= step * mtv[k];
        p.entity_emb[(t.tail, k)] += step * mtv[k];
    }
    for (i, vi) in v.iter().enumerate() {
        p.relation_emb[(t.relation, i)] -= step * vi;
        let row = p.projections[t.relation].row_mut(i);
        for (k, x) in row.iter_mut().enumerate() {
            *x -= step * vi * diff[k];
        }
    }
}

/// Margin-ranking TransR training with uniform head/tail corruption.
/// Returns the parameters and the mean hinge loss of every epoch.
pub fn train_transr(kg: &KnowledgeGraph, config: &TransRConfig) -> Result<(TransRParams, Vec<f64>)> {
    if kg.is_empty() {
        return Err(Error::InvalidArgument("cannot train TransR on an empty graph".into()));
    }
    let mut p = TransRParams::init(kg, config.d_e, config.d_r, config.seed);
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut r = rng::stream(rng::derive_n(config.seed, "transr.epoch", epoch as u64), "transr");
        order.shuffle(&mut r);
        let mut total = 0.0;
        for &i in &order {
            let pos = kg.triples()[i];
            for _ in 0..config.negatives_per_positive.max(1) {
                let neg = corrupt(kg, &pos, &mut r);
                let loss = config.margin + transr_score(pos.head, pos.relation, pos.tail, &p)?
                    - transr_score(neg.head, neg.relation, neg.tail, &p)?;
                if loss > 0.0 {
                    total += loss;
                    sgd_step(&mut p, &pos, 1.0, config.lr);
                    sgd_step(&mut p, &neg, -1.0, config.lr);
                }
            }
        }
        clip_rows_to_unit(&mut p.entity_emb);
        losses.push(total / (order.len() * config.negatives_per_positive.max(1)) as f64);
    }
    Ok((p, losses))
}

/// A sampled neighbourhood. Node 0 is the root; `triples` use local node
/// indices and keep the direction of the original triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub triples: Vec<Triple>,
}

impl Subgraph {
    pub fn root(&self) -> usize {
        self.nodes[0]
    }

    /// Message edges for attention: every triple in both directions sharing
    /// its relation id, plus a self loop per node carrying `self_relation`.
    pub fn message_edges(&self, self_relation: usize) -> TypedEdges {
        let mut triples: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * self.triples.len() + self.nodes.len());
        for i in 0..self.nodes.len() {
            triples.push((i, i, self_relation));
        }
        for t in &self.triples {
            triples.push((t.tail, t.head, t.relation));
            if t.head != t.tail {
                triples.push((t.head, t.tail, t.relation));
            }
        }
        // (dst, src, relation) order groups edges by destination
        triples.sort_unstable();
        triples.dedup();
        let dst: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let src: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let relation: Rc<[usize]> = triples.iter().map(|t| t.2).collect();
        let edges = Edges::new(self.nodes.len(), src, dst).expect("self loops cover every node");
        TypedEdges { edges, relation }
    }
}

/// Breadth-first expansion from `root` for `hops` levels, keeping at most
/// `fanout` incident triples per expanded node, drawn uniformly without
/// replacement.
pub fn sample_subgraph(kg: &KnowledgeGraph, root: usize, hops: usize, fanout: usize, seed: u64) -> Result<Subgraph> {
    if root >= kg.n_entities() {
        return Err(Error::UnknownEntity(root));
    }
    if hops == 0 || fanout == 0 {
        return Err(Error::InvalidArgument("hops and fanout must be at least 1".into()));
    }
    let mut r = rng::stream(seed, "subgraph");
    let mut local: BTreeMap<usize, usize> = BTreeMap::new();
    local.insert(root, 0);
    let mut nodes = vec![root];
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let mut triples = Vec::new();
    let mut frontier = vec![root];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &node in &frontier {
            let mut candidates: Vec<usize> = kg.incident(node).to_vec();
            let take = candidates.len().min(fanout);
            // partial Fisher-Yates
            for i in 0..take {
                let j = r.gen_range(i..candidates.len());
                candidates.swap(i, j);
            }
            candidates.truncate(take);
            candidates.sort_unstable();
            for ti in candidates {
                if !chosen.insert(ti) {
                    continue;
                }
                let t = kg.triples()[ti];
                for end in [t.head, t.tail] {
                    if let alloc::collections::btree_map::Entry::Vacant(v) = local.entry(end) {
                        v.insert(nodes.len());
                        nodes.push(end);
                        next.push(end);
                    }
                }
                triples.push(Triple { head: local[&t.head], relation: t.relation, tail: local[&t.tail] });
            }
        }
        frontier = next;
    }
    Ok(Subgraph { nodes, triples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_kg() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        b.triple("Gastritis", "treated_by", "PPI")
            .triple("Gastritis", "treated_by", "PPI")
            .triple("PPI", "includes", "Omeprazole")
            .alias("急性胃炎", "Gastritis");
        assert_eq!(b.duplicates(), 1);
        b.build().unwrap()
    }

    #[test]
    fn duplicates_are_dropped_and_aliases_resolve() {
        let kg = small_kg();
        assert_eq!(kg.triples().len(), 2);
        let g = kg.entity_id("Gastritis").unwrap();
        assert_eq!(lookup_disease_entity("Gastritis", &kg), Some(g));
        assert_eq!(lookup_disease_entity("急性胃炎", &kg), Some(g));
        assert_eq!(lookup_disease_entity(NONE_OR_OTHERS, &kg), None);
        assert_eq!(lookup_disease_entity("Eczema", &kg), None);
    }

    #[test]
    fn alias_to_unknown_entity_fails() {
        let mut b = KgBuilder::new();
        b.triple("a", "r", "b").alias("x", "nope");
        assert!(b.build().is_err());
    }

    #[test]
    fn score_examples() {
        let p = TransRParams {
            entity_emb: Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]),
            relation_emb: Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]),
            projections: vec![Matrix::identity(2), Matrix::from_rows(&[vec![2.0, -1.0], vec![0.5, 3.0]])],
        };
        assert_eq!(transr_score(0, 0, 1, &p).unwrap(), 0.0);
        assert_eq!(transr_score(1, 1, 1, &p).unwrap(), 0.0);
        assert!(transr_score(0, 0, 2, &p).is_err());
        assert!(transr_score(0, 2, 1, &p).is_err());
    }

    fn star(n: usize) -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        for i in 0..n {
            b.triple("hub", "r", &format!("leaf{i:02}"));
        }
        b.triple("lonely", "self", "lonely");
        b.build().unwrap()
    }

    #[test]
    fn fanout_caps_the_root() {
        let kg = star(10);
        let root = kg.entity_id("hub").unwrap();
        let sg = sample_subgraph(&kg, root, 1, 3, 9).unwrap();
        assert_eq!(sg.triples.len(), 3);
        assert_eq!(sg.nodes.len(), 4);
        assert!(sg.triples.iter().all(|t| t.head == 0));
        assert_eq!(sg, sample_subgraph(&kg, root, 1, 3, 9).unwrap());
    }

    #[test]
    fn isolated_root_is_alone() {
        let mut b = KgBuilder::new();
        b.triple("a", "r", "b");
        let mut kg = b.build().unwrap();
        // an entity with no triples can only come from a hand-built graph
        kg.entities.push("iso".into());
        kg.entity_index.insert("iso".into(), 2);
        kg.incident.push(Vec::new());
        let sg = sample_subgraph(&kg, 2, 2, 4, 1).unwrap();
        assert_eq!(sg.nodes, vec![2]);
        assert!(sg.triples.is_empty());
        let edges = sg.message_edges(kg.n_relations());
        assert_eq!(edges.edges.len(), 1);
    }

    #[test]
    fn message_edges_are_bidirectional_with_self_loops() {
        let kg = small_kg();
        let sg = sample_subgraph(&kg, kg.entity_id("Gastritis").unwrap(), 2, 8, 0).unwrap();
        assert_eq!(sg.nodes.len(), 3);
        let te = sg.message_edges(kg.n_relations());
        // 3 self loops + 2 triples in both directions
        assert_eq!(te.edges.len(), 7);
        assert!(te.edges.dst.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn transr_norm_constraint_and_determinism() {
        let kg = star(6);
        let cfg = TransRConfig { d_e: 4, d_r: 3, epochs: 5, seed: 3, ..Default::default() };
        let (p, losses) = train_transr(&kg, &cfg).unwrap();
        assert_eq!(losses.len(), 5);
        assert!(p.max_entity_norm() <= 1.0 + 1e-6);
        assert_eq!(p.projections[0].shape(), (3, 4));
        let (p2, losses2) = train_transr(&kg, &cfg).unwrap();
        assert_eq!(p, p2);
        assert_eq!(losses, losses2);
    }
}
