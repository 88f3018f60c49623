//! Graph attention layers.
//!
//! * [`GatLayer`]: single-head graph attention over an utterance graph.
//!   Logits are `LeakyReLU(a^T [W_h h_i || W_h h_j])`, normalised over the
//!   neighbourhood of `i`; the output is `act(sum_j alpha_ij W_h h_j)`.
//! * [`AttentionPool`]: softmax-weighted sum of node rows.
//! * [`KnowledgeGatLayer`]: attention over a typed knowledge subgraph whose
//!   logits fuse the node pair, the relation and the dialogue vector:
//!   `LeakyReLU(a^T [W [h_i; h_j] || W_r r_ij || W_D h_D])`, aggregated as
//!   `act(sum_j beta_ij W_k h_j)`.
//!
//! Every layer works on message edges grouped by destination node: `dst[e]`
//! receives from `src[e]`.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::qa_graph::DialogueGraph;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Directed message edges of one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edges {
    pub n: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
}

impl Edges {
    /// Fails with [`Error::EmptyNeighbourhood`] for any node with no incoming edge.
    pub fn new(n: usize, src: Vec<usize>, dst: Vec<usize>) -> Result<Self> {
        assert_eq!(src.len(), dst.len());
        let mut indegree = vec![0usize; n];
        for (&s, &d) in src.iter().zip(&dst) {
            if s >= n || d >= n {
                return Err(Error::InvalidArgument(format!("edge ({s}, {d}) outside {n} nodes")));
            }
            indegree[d] += 1;
        }
        if let Some(i) = indegree.iter().position(|&c| c == 0) {
            return Err(Error::EmptyNeighbourhood(i));
        }
        Ok(Edges { n, src: src.into(), dst: dst.into() })
    }

    pub fn from_graph(g: &DialogueGraph) -> Result<Self> {
        let (src, dst) = g.message_edges();
        Self::new(g.n(), src, dst)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

fn split_rows(tape: &mut Tape, v: Var, parts: &[usize]) -> Vec<Var> {
    let mut out = Vec::with_capacity(parts.len());
    let mut start = 0;
    for &len in parts {
        let idx: Rc<[usize]> = (start..start + len).collect();
        out.push(tape.gather(v, idx));
        start += len;
    }
    out
}

fn check_shape(store: &ParamStore, id: ParamId, expected: (usize, usize)) -> Result<()> {
    let found = store.get(id).shape();
    if found != expected {
        return Err(Error::Shape { what: store.name(id).to_string(), expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatLayer {
    /// `d_out x d_in`.
    pub w_h: ParamId,
    /// `2 d_out x 1`.
    pub a: ParamId,
    pub activation: Activation,
}

impl GatLayer {
    pub fn register(store: &mut ParamStore, seed: u64, prefix: &str, d_in: usize, d_out: usize, activation: Activation) -> Self {
        GatLayer {
            w_h: store.add_glorot(seed, &format!("{prefix}.W_h"), d_out, d_in),
            a: store.add_glorot(seed, &format!("{prefix}.a"), 2 * d_out, 1),
            activation,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str, activation: Activation) -> Result<Self> {
        let get = |n: &str| store.id(&format!("{prefix}.{n}")).ok_or_else(|| Error::MissingParam(format!("{prefix}.{n}")));
        let layer = GatLayer { w_h: get("W_h")?, a: get("a")?, activation };
        check_shape(store, layer.a, (2 * layer.d_out(store), 1))?;
        Ok(layer)
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.get(self.w_h).cols()
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.w_h).rows()
    }

    /// Returns `(alpha, z)`: per-edge attention (`E x 1`) and the transformed
    /// node features `z = h W_h^T`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, h: Var, edges: &Edges) -> (Var, Var) {
        assert_eq!(tape.value(h).rows(), edges.n, "feature rows must match node count");
        let d = self.d_out(store);
        let w = tape.param(store, self.w_h);
        let a = tape.param(store, self.a);
        let z = tape.matmul_bt(h, w);
        let halves = split_rows(tape, a, &[d, d]);
        let s_dst = tape.matmul(z, halves[0]);
        let s_src = tape.matmul(z, halves[1]);
        let e_dst = tape.gather(s_dst, edges.dst.clone());
        let e_src = tape.gather(s_src, edges.src.clone());
        let logits = tape.add(e_dst, e_src);
        let logits = tape.activation(logits, Activation::LeakyRelu(LEAKY_SLOPE));
        (tape.segment_softmax(logits, edges.dst.clone()), z)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, edges: &Edges) -> Var {
        let (alpha, z) = self.attention(tape, store, h, edges);
        let agg = tape.edge_aggregate(alpha, z, edges.src.clone(), edges.dst.clone(), edges.n);
        tape.activation(agg, self.activation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionPool {
    /// `1 x d`.
    pub w_a: ParamId,
}

impl AttentionPool {
    pub fn register(store: &mut ParamStore, seed: u64, d: usize) -> Self {
        AttentionPool { w_a: store.add_glorot(seed, "pool.W_a", 1, d) }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        Ok(AttentionPool { w_a: store.id("pool.W_a").ok_or_else(|| Error::MissingParam("pool.W_a".into()))? })
    }

    /// Returns `(weights, pooled)`: `n x 1` softmax weights and the `1 x d` vector.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> (Var, Var) {
        let n = tape.value(h).rows();
        let w = tape.param(store, self.w_a);
        let scores = tape.matmul_bt(h, w);
        let weights = tape.segment_softmax(scores, Rc::from(vec![0usize; n]));
        let wt = tape.transpose(weights);
        (weights, tape.matmul(wt, h))
    }
}

/// Message edges of a knowledge subgraph with a relation id per edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedEdges {
    pub edges: Edges,
    pub relation: Rc<[usize]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnowledgeGatLayer {
    /// `d_att x 2 d_in`, applied to the concatenation `[h_i; h_j]`.
    pub w: ParamId,
    /// `d_att x d_rel`.
    pub w_r: ParamId,
    /// `d_att x d_dialogue`.
    pub w_d: ParamId,
    /// `d_out x d_in`.
    pub w_k: ParamId,
    /// `3 d_att x 1`.
    pub a: ParamId,
    pub activation: Activation,
}

pub struct KnowledgeGatDims {
    pub d_in: usize,
    pub d_out: usize,
    pub d_att: usize,
    pub d_rel: usize,
    pub d_dialogue: usize,
}

impl KnowledgeGatLayer {
    pub fn register(store: &mut ParamStore, seed: u64, prefix: &str, dims: &KnowledgeGatDims, activation: Activation) -> Self {
        let name = |n: &str| format!("{prefix}.{n}");
        KnowledgeGatLayer {
            w: store.add_glorot(seed, &name("W"), dims.d_att, 2 * dims.d_in),
            w_r: store.add_glorot(seed, &name("W_r"), dims.d_att, dims.d_rel),
            w_d: store.add_glorot(seed, &name("W_D"), dims.d_att, dims.d_dialogue),
            w_k: store.add_glorot(seed, &name("W_k"), dims.d_out, dims.d_in),
            a: store.add_glorot(seed, &name("a"), 3 * dims.d_att, 1),
            activation,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str, activation: Activation) -> Result<Self> {
        let get = |n: &str| store.id(&format!("{prefix}.{n}")).ok_or_else(|| Error::MissingParam(format!("{prefix}.{n}")));
        let layer = KnowledgeGatLayer {
            w: get("W")?,
            w_r: get("W_r")?,
            w_d: get("W_D")?,
            w_k: get("W_k")?,
            a: get("a")?,
            activation,
        };
        let d_att = store.get(layer.w).rows();
        check_shape(store, layer.a, (3 * d_att, 1))?;
        check_shape(store, layer.w, (d_att, 2 * layer.d_in(store)))?;
        if store.get(layer.w_r).rows() != d_att || store.get(layer.w_d).rows() != d_att {
            return Err(Error::Config(format!("{prefix}: fused attention parts disagree in width")));
        }
        Ok(layer)
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.get(self.w_k).cols()
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.w_k).rows()
    }

    /// Per-edge attention `beta` (`E x 1`).
    ///
    /// `relations` is the relation embedding table (`n_rel x d_rel`) and
    /// `dialogue` the `1 x d_dialogue` dialogue vector.
    pub fn attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        relations: Var,
        dialogue: Var,
        edges: &TypedEdges,
    ) -> Result<Var> {
        let n_rel = tape.value(relations).rows();
        if let Some(&r) = edges.relation.iter().find(|&&r| r >= n_rel) {
            return Err(Error::MissingRelation(r));
        }
        let d_dialogue = store.get(self.w_d).cols();
        if tape.value(dialogue).shape() != (1, d_dialogue) {
            return Err(Error::Shape {
                what: "dialogue vector".into(),
                expected: (1, d_dialogue),
                found: tape.value(dialogue).shape(),
            });
        }
        let e = &edges.edges;
        let w = tape.param(store, self.w);
        let w_r = tape.param(store, self.w_r);
        let w_d = tape.param(store, self.w_d);
        let a = tape.param(store, self.a);

        let h_i = tape.gather(h, e.dst.clone());
        let h_j = tape.gather(h, e.src.clone());
        let pair = tape.concat_cols(&[h_i, h_j]);
        let pair = tape.matmul_bt(pair, w);
        let rel = tape.gather(relations, edges.relation.clone());
        let rel = tape.matmul_bt(rel, w_r);
        let dlg = tape.matmul_bt(dialogue, w_d);
        let dlg = tape.gather(dlg, Rc::from(vec![0usize; e.len()]));
        let fused = tape.concat_cols(&[pair, rel, dlg]);
        let logits = tape.matmul(fused, a);
        let logits = tape.activation(logits, Activation::LeakyRelu(LEAKY_SLOPE));
        Ok(tape.segment_softmax(logits, e.dst.clone()))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        relations: Var,
        dialogue: Var,
        edges: &TypedEdges,
    ) -> Result<Var> {
        let beta = self.attention(tape, store, h, relations, dialogue, edges)?;
        let w_k = tape.param(store, self.w_k);
        let msgs = tape.matmul_bt(h, w_k);
        let e = &edges.edges;
        let agg = tape.edge_aggregate(beta, msgs, e.src.clone(), e.dst.clone(), e.n);
        Ok(tape.activation(agg, self.activation))
    }
}
