//! Acyclic weighted word lattices.
//!
//! A [`Lattice`] is the output of a first-pass decoder: node 0 is the start
//! state, any number of nodes may be final, and every arc carries a word label
//! together with an acoustic and a language-model natural-log score. Scores
//! are combined linearly through a [`ScaleConfig`].
//!
//! Search routines (best path, N-best, forward-backward posteriors and keyword
//! lookup) live in [`search`]; the line-oriented text format lives in [`text`].

pub mod search;
pub mod text;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbols::WordId;

pub use search::{KeywordAcceptor, KeywordMatch, Path};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice contains a cycle")]
    CycleDetected,
    #[error("lattice has no start-to-final path")]
    EmptyLattice,
    #[error("node {node} out of range for lattice with {num_nodes} nodes")]
    NodeOutOfRange { node: NodeId, num_nodes: usize },
    #[error("non-finite score on arc {from}->{to}")]
    NonFiniteScore { from: NodeId, to: NodeId },
    #[error("lattice must have at least one node")]
    NoNodes,
    #[error("invalid scales: acoustic={acoustic} lm={lm}")]
    InvalidScales { acoustic: f64, lm: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance id `{0}`")]
    DuplicateUtteranceId(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LatticeError {
    fn from(e: std::io::Error) -> Self {
        LatticeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LatticeError>;

/// Linear weights applied to the acoustic and LM scores of an arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    pub acoustic_scale: f64,
    pub lm_scale: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            acoustic_scale: 1.0,
            lm_scale: 1.0,
        }
    }
}

impl ScaleConfig {
    pub fn new(acoustic_scale: f64, lm_scale: f64) -> Result<Self> {
        let s = Self {
            acoustic_scale,
            lm_scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.acoustic_scale)
            || !ok(self.lm_scale)
            || (self.acoustic_scale == 0.0 && self.lm_scale == 0.0)
        {
            return Err(LatticeError::InvalidScales {
                acoustic: self.acoustic_scale,
                lm: self.lm_scale,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn combine(&self, acoustic: f64, lm: f64) -> f64 {
        self.acoustic_scale * acoustic + self.lm_scale * lm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeArc {
    pub from: NodeId,
    pub to: NodeId,
    pub word: WordId,
    pub acoustic: f64,
    pub lm: f64,
}

impl LatticeArc {
    #[inline]
    pub fn score(&self, scales: &ScaleConfig) -> f64 {
        scales.combine(self.acoustic, self.lm)
    }
}

/// Word lattice with start node 0.
///
/// Construction checks node bounds and score finiteness; acyclicity is checked
/// lazily by the operations that need a topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    utterance_id: String,
    num_nodes: usize,
    finals: BTreeSet<NodeId>,
    arcs: Vec<LatticeArc>,
}

impl Lattice {
    pub fn new(utterance_id: impl Into<String>, num_nodes: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(LatticeError::NoNodes);
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            num_nodes,
            finals: BTreeSet::new(),
            arcs: Vec::new(),
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn set_utterance_id(&mut self, id: impl Into<String>) {
        self.utterance_id = id.into();
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn start(&self) -> NodeId {
        0
    }

    pub fn arcs(&self) -> &[LatticeArc] {
        &self.arcs
    }

    pub fn finals(&self) -> &BTreeSet<NodeId> {
        &self.finals
    }

    pub fn is_final(&self, node: NodeId) -> bool {
        self.finals.contains(&node)
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node >= self.num_nodes {
            return Err(LatticeError::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(())
    }

    /// Appends an arc and returns its index.
    pub fn add_arc(
        &mut self,
        from: NodeId,
        to: NodeId,
        word: WordId,
        acoustic: f64,
        lm: f64,
    ) -> Result<usize> {
        self.check_node(from)?;
        self.check_node(to)?;
        if !acoustic.is_finite() || !lm.is_finite() {
            return Err(LatticeError::NonFiniteScore { from, to });
        }
        self.arcs.push(LatticeArc {
            from,
            to,
            word,
            acoustic,
            lm,
        });
        Ok(self.arcs.len() - 1)
    }

    pub fn set_final(&mut self, node: NodeId) -> Result<()> {
        self.check_node(node)?;
        self.finals.insert(node);
        Ok(())
    }

    /// Overwrites the LM score of arc `index`.
    pub fn set_lm_score(&mut self, index: usize, lm: f64) -> Result<()> {
        if !lm.is_finite() {
            let a = &self.arcs[index];
            return Err(LatticeError::NonFiniteScore {
                from: a.from,
                to: a.to,
            });
        }
        self.arcs[index].lm = lm;
        Ok(())
    }

    pub fn out_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.from].push(i);
        }
        out
    }

    pub fn in_arcs(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes];
        for (i, a) in self.arcs.iter().enumerate() {
            inc[a.to].push(i);
        }
        inc
    }

    /// Topological order of all nodes. Among nodes that are ready at the same
    /// time the smallest id comes first, so a chain numbered 0..n yields 0..n.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree = vec![0usize; self.num_nodes];
        for a in &self.arcs {
            indegree[a.to] += 1;
        }
        let out = self.out_arcs();
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(n, _)| Reverse(n))
            .collect();
        let mut order = Vec::with_capacity(self.num_nodes);
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &ai in &out[n] {
                let t = self.arcs[ai].to;
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    ready.push(Reverse(t));
                }
            }
        }
        if order.len() != self.num_nodes {
            return Err(LatticeError::CycleDetected);
        }
        Ok(order)
    }

    /// Checks acyclicity; node bounds and score finiteness hold by construction.
    pub fn validate(&self) -> Result<()> {
        self.topo_order().map(|_| ())
    }

    /// Nodes reachable from the start and co-reachable from a final node.
    pub fn useful_nodes(&self) -> Vec<bool> {
        let out = self.out_arcs();
        let inc = self.in_arcs();
        let mut fwd = vec![false; self.num_nodes];
        let mut stack = vec![0];
        fwd[0] = true;
        while let Some(n) = stack.pop() {
            for &ai in &out[n] {
                let t = self.arcs[ai].to;
                if !fwd[t] {
                    fwd[t] = true;
                    stack.push(t);
                }
            }
        }
        let mut bwd = vec![false; self.num_nodes];
        let mut stack: Vec<NodeId> = self.finals.iter().copied().collect();
        for &f in &stack {
            bwd[f] = true;
        }
        while let Some(n) = stack.pop() {
            for &ai in &inc[n] {
                let s = self.arcs[ai].from;
                if !bwd[s] {
                    bwd[s] = true;
                    stack.push(s);
                }
            }
        }
        fwd.iter().zip(&bwd).map(|(&a, &b)| a && b).collect()
    }

    /// Drops nodes and arcs that lie on no start-to-final path and renumbers
    /// the survivors in increasing old-id order. The start node is always kept,
    /// so a lattice without any complete path becomes a single non-final node.
    pub fn connect(&self) -> Lattice {
        let useful = self.useful_nodes();
        let mut map = vec![usize::MAX; self.num_nodes];
        map[0] = 0;
        let mut next = 1;
        for (n, &u) in useful.iter().enumerate().skip(1) {
            if u {
                map[n] = next;
                next += 1;
            }
        }
        let mut out = Lattice {
            utterance_id: self.utterance_id.clone(),
            num_nodes: next,
            finals: BTreeSet::new(),
            arcs: Vec::new(),
        };
        if !useful[0] {
            return out;
        }
        for a in &self.arcs {
            if useful[a.from] && useful[a.to] {
                out.arcs.push(LatticeArc {
                    from: map[a.from],
                    to: map[a.to],
                    ..a.clone()
                });
            }
        }
        for &f in &self.finals {
            if useful[f] {
                out.finals.insert(map[f]);
            }
        }
        out
    }

    /// Applies `map[old] = new`; `map` must be a permutation fixing node 0.
    pub fn renumber(&self, map: &[NodeId]) -> Lattice {
        assert_eq!(map.len(), self.num_nodes);
        Lattice {
            utterance_id: self.utterance_id.clone(),
            num_nodes: self.num_nodes,
            finals: self.finals.iter().map(|&f| map[f]).collect(),
            arcs: self
                .arcs
                .iter()
                .map(|a| LatticeArc {
                    from: map[a.from],
                    to: map[a.to],
                    ..a.clone()
                })
                .collect(),
        }
    }

    /// Topological node numbering plus arcs sorted by
    /// `(from, to, word, acoustic, lm)`. Two lattices that differ only in node
    /// ids and arc order canonicalize to equal values when their topological
    /// orders agree.
    pub fn canonicalize(&self) -> Result<Lattice> {
        let order = self.topo_order()?;
        let mut map = vec![0; self.num_nodes];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        // the start node has incoming arcs: keep the numbering so node 0 stays the start
        if order[0] != 0 {
            map = (0..self.num_nodes).collect();
        }
        let mut out = self.renumber(&map);
        out.arcs.sort_by(|a, b| {
            (a.from, a.to, a.word)
                .cmp(&(b.from, b.to, b.word))
                .then(a.acoustic.total_cmp(&b.acoustic))
                .then(a.lm.total_cmp(&b.lm))
        });
        Ok(out)
    }

    /// Rounds every score to the precision of the text format.
    pub fn quantized(&self) -> Lattice {
        let q = |x: f64| -> f64 { format!("{x:.6}").parse().unwrap_or(x) };
        let mut out = self.clone();
        for a in &mut out.arcs {
            a.acoustic = q(a.acoustic);
            a.lm = q(a.lm);
        }
        out
    }

    /// Distinct arc labels.
    pub fn word_set(&self) -> BTreeSet<WordId> {
        self.arcs.iter().map(|a| a.word).collect()
    }
}
