//! QA dialogue graph: utterances are nodes, maximal same-speaker runs are
//! blocks, every pair inside a block is connected, and every node of a block
//! is connected to every node of the neighbouring blocks.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::corpus::Speaker;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub speaker: Speaker,
    pub range: Range<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

pub fn segment_blocks(speakers: &[Speaker]) -> Result<Vec<Block>> {
    let Some(&first) = speakers.first() else {
        return Err(Error::InvalidArgument("cannot segment an empty speaker sequence".into()));
    };
    let mut blocks = Vec::new();
    let mut current = Block { speaker: first, range: 0..1 };
    for (i, &s) in speakers.iter().enumerate().skip(1) {
        if s == current.speaker {
            current.range.end = i + 1;
        } else {
            blocks.push(core::mem::replace(&mut current, Block { speaker: s, range: i..i + 1 }));
        }
    }
    blocks.push(current);
    Ok(blocks)
}

/// Undirected utterance graph stored as sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueGraph {
    neighbours: Vec<Vec<usize>>,
    self_loops: bool,
}

impl DialogueGraph {
    /// Builds a graph from an explicit undirected edge list.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, self_loops: bool) -> Self {
        let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|_| BTreeSet::new()).collect();
        for (i, j) in edges {
            sets[i].insert(j);
            sets[j].insert(i);
        }
        if self_loops {
            for (i, s) in sets.iter_mut().enumerate() {
                s.insert(i);
            }
        }
        DialogueGraph { neighbours: sets.into_iter().map(|s| s.into_iter().collect()).collect(), self_loops }
    }

    pub fn n(&self) -> usize {
        self.neighbours.len()
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Sorted neighbours of `i`, including `i` itself when self-loops are on.
    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbours[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    /// Unordered pairs `(i, j)` with `i <= j`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for (i, ns) in self.neighbours.iter().enumerate() {
            for &j in ns {
                out.insert((i.min(j), i.max(j)));
            }
        }
        out
    }

    /// Directed `(src, dst)` message edges grouped by destination, in
    /// destination order: the layout the attention layers consume.
    pub fn message_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (i, ns) in self.neighbours.iter().enumerate() {
            for &j in ns {
                src.push(j);
                dst.push(i);
            }
        }
        (src, dst)
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        (0..n).map(|i| (0..n).map(|j| self.has_edge(i, j)).collect()).collect()
    }

    /// Adjacency as rows of `0`/`1` separated by spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.adjacency() {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = alloc::vec![false; n];
        let mut stack = alloc::vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbours[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn build_qa_graph(speakers: &[Speaker], self_loops: bool) -> Result<DialogueGraph> {
    let blocks = segment_blocks(speakers)?;
    let mut edges = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        for i in block.range.clone() {
            for j in block.range.clone().filter(|&j| j > i) {
                edges.push((i, j));
            }
            if let Some(next) = blocks.get(b + 1) {
                for j in next.range.clone() {
                    edges.push((i, j));
                }
            }
        }
    }
    Ok(DialogueGraph::from_edges(speakers.len(), edges, self_loops))
}
