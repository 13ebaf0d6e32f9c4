//! Path search over lattices: Viterbi best path, exact N-best, log-space
//! forward-backward posteriors and keyword occurrence lookup.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use super::{Lattice, LatticeError, NodeId, Result, ScaleConfig};
use crate::symbols::WordId;

/// A complete start-to-final path.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub words: Vec<WordId>,
    pub nodes: Vec<NodeId>,
    /// Indices into [`Lattice::arcs`], one per word.
    pub arcs: Vec<usize>,
    /// Scaled total, `Σ acoustic_scale·acoustic + lm_scale·lm`.
    pub total_score: f64,
    pub acoustic_score: f64,
    pub lm_score: f64,
}

impl Path {
    fn from_arcs(lattice: &Lattice, arcs: Vec<usize>, scales: &ScaleConfig) -> Path {
        let mut nodes = vec![lattice.start()];
        let mut words = Vec::with_capacity(arcs.len());
        let (mut ac, mut lm, mut total) = (0.0, 0.0, 0.0);
        for &ai in &arcs {
            let a = &lattice.arcs[ai];
            nodes.push(a.to);
            words.push(a.word);
            ac += a.acoustic;
            lm += a.lm;
            total += a.score(scales);
        }
        Path {
            words,
            nodes,
            arcs,
            total_score: total,
            acoustic_score: ac,
            lm_score: lm,
        }
    }

    pub fn contains_any(&self, keywords: &BTreeSet<WordId>) -> bool {
        self.words.iter().any(|w| keywords.contains(w))
    }
}

/// One occurrence of a keyword in a lattice, as a node span.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordMatch {
    pub keyword: WordId,
    pub entry: NodeId,
    pub exit: NodeId,
    pub arc_index: usize,
    /// Score of the best complete path through this arc.
    pub best_score: f64,
}

/// Single-state acceptor with one self-loop per keyword.
///
/// Composing it with a lattice keeps exactly the lattice arcs whose label the
/// acceptor can read, so the composition reduces to a labelled-arc filter over
/// arcs that lie on some complete path.
#[derive(Debug, Clone, Default)]
pub struct KeywordAcceptor {
    keywords: BTreeSet<WordId>,
}

impl KeywordAcceptor {
    pub fn new(keywords: impl IntoIterator<Item = WordId>) -> Self {
        Self {
            keywords: keywords.into_iter().collect(),
        }
    }

    pub fn accepts(&self, word: WordId) -> bool {
        self.keywords.contains(&word)
    }

    pub fn keywords(&self) -> &BTreeSet<WordId> {
        &self.keywords
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Tropical (max) forward and backward scores.
pub(crate) struct Viterbi {
    pub scales: ScaleConfig,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
}

impl Viterbi {
    pub fn new(lattice: &Lattice, scales: &ScaleConfig) -> Result<Self> {
        scales.validate()?;
        let order = lattice.topo_order()?;
        let out = lattice.out_arcs();
        let inc = lattice.in_arcs();
        let n = lattice.num_nodes();
        let mut forward = vec![f64::NEG_INFINITY; n];
        forward[lattice.start()] = 0.0;
        for &u in &order {
            if forward[u] == f64::NEG_INFINITY {
                continue;
            }
            for &ai in &out[u] {
                let a = &lattice.arcs[ai];
                let s = forward[u] + a.score(scales);
                if s > forward[a.to] {
                    forward[a.to] = s;
                }
            }
        }
        let mut backward = vec![f64::NEG_INFINITY; n];
        for &u in order.iter().rev() {
            let mut best = if lattice.is_final(u) {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            for &ai in &out[u] {
                let a = &lattice.arcs[ai];
                let s = a.score(scales) + backward[a.to];
                if s > best {
                    best = s;
                }
            }
            backward[u] = best;
        }
        Ok(Self {
            scales: *scales,
            forward,
            backward,
            out,
            inc,
        })
    }

    /// Score of the best complete path through arc `ai`.
    pub fn through(&self, lattice: &Lattice, ai: usize) -> f64 {
        let a = &lattice.arcs[ai];
        self.forward[a.from] + a.score(&self.scales) + self.backward[a.to]
    }

    /// Best suffix from `node` to a final node. Among optimal continuations the
    /// smallest next node wins, and stopping (a prefix) beats continuing, which
    /// yields the lexicographically smallest node sequence.
    pub fn best_suffix(&self, lattice: &Lattice, mut node: NodeId) -> Vec<usize> {
        let mut arcs = Vec::new();
        loop {
            let target = self.backward[node];
            if target == f64::NEG_INFINITY || (lattice.is_final(node) && target == 0.0) {
                break;
            }
            let mut chosen: Option<usize> = None;
            for &ai in &self.out[node] {
                let a = &lattice.arcs[ai];
                if a.score(&self.scales) + self.backward[a.to] != target {
                    continue;
                }
                let better = match chosen {
                    None => true,
                    Some(c) => {
                        let ca = &lattice.arcs[c];
                        (a.to, a.word, ai) < (ca.to, ca.word, c)
                    }
                };
                if better {
                    chosen = Some(ai);
                }
            }
            match chosen {
                Some(ai) => {
                    arcs.push(ai);
                    node = lattice.arcs[ai].to;
                }
                None => break,
            }
        }
        arcs
    }

    /// Best prefix from the start to `node`, smallest predecessor on ties.
    pub fn best_prefix(&self, lattice: &Lattice, mut node: NodeId) -> Vec<usize> {
        let mut arcs = Vec::new();
        while node != lattice.start() {
            let target = self.forward[node];
            let mut chosen: Option<usize> = None;
            for &ai in &self.inc[node] {
                let a = &lattice.arcs[ai];
                if self.forward[a.from] + a.score(&self.scales) != target {
                    continue;
                }
                let better = match chosen {
                    None => true,
                    Some(c) => {
                        let ca = &lattice.arcs[c];
                        (a.from, a.word, ai) < (ca.from, ca.word, c)
                    }
                };
                if better {
                    chosen = Some(ai);
                }
            }
            match chosen {
                Some(ai) => {
                    arcs.push(ai);
                    node = lattice.arcs[ai].from;
                }
                None => break,
            }
        }
        arcs.reverse();
        arcs
    }
}

#[derive(Debug)]
struct Candidate {
    priority: f64,
    seq: usize,
    node: NodeId,
    entry: usize,
    complete: bool,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap on priority; earlier insertion wins ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl Lattice {
    /// Highest-scoring complete path, ties broken by the lexicographically
    /// smallest node sequence.
    pub fn best_path(&self, scales: &ScaleConfig) -> Result<Path> {
        let vit = Viterbi::new(self, scales)?;
        if vit.backward[self.start()] == f64::NEG_INFINITY {
            return Err(LatticeError::EmptyLattice);
        }
        let arcs = vit.best_suffix(self, self.start());
        Ok(Path::from_arcs(self, arcs, scales))
    }

    /// The `n` best distinct word sequences in descending score order, each
    /// represented by its best path.
    ///
    /// Runs an A* search whose heuristic is the exact best completion score,
    /// so complete paths are popped in non-increasing score order.
    pub fn n_best(&self, n: usize, scales: &ScaleConfig) -> Result<Vec<Path>> {
        let vit = Viterbi::new(self, scales)?;
        if vit.backward[self.start()] == f64::NEG_INFINITY {
            return Err(LatticeError::EmptyLattice);
        }
        // arena of partial paths: (parent entry, arc, accumulated score)
        let mut arena: Vec<(usize, usize, f64)> = vec![(usize::MAX, usize::MAX, 0.0)];
        let mut heap = BinaryHeap::new();
        let mut seq = 0;
        heap.push(Candidate {
            priority: vit.backward[self.start()],
            seq,
            node: self.start(),
            entry: 0,
            complete: false,
        });
        let mut seen: HashSet<Vec<WordId>> = HashSet::new();
        let mut result = Vec::new();
        while let Some(c) = heap.pop() {
            if result.len() >= n {
                break;
            }
            if c.complete {
                let mut arcs = Vec::new();
                let mut e = c.entry;
                while e != 0 {
                    arcs.push(arena[e].1);
                    e = arena[e].0;
                }
                arcs.reverse();
                let words: Vec<WordId> = arcs.iter().map(|&ai| self.arcs[ai].word).collect();
                if seen.insert(words) {
                    result.push(Path::from_arcs(self, arcs, scales));
                }
                continue;
            }
            let g = arena[c.entry].2;
            if self.is_final(c.node) {
                seq += 1;
                heap.push(Candidate {
                    priority: g,
                    seq,
                    node: c.node,
                    entry: c.entry,
                    complete: true,
                });
            }
            for &ai in &vit.out[c.node] {
                let a = &self.arcs[ai];
                if vit.backward[a.to] == f64::NEG_INFINITY {
                    continue;
                }
                let g2 = g + a.score(scales);
                arena.push((c.entry, ai, g2));
                seq += 1;
                heap.push(Candidate {
                    priority: g2 + vit.backward[a.to],
                    seq,
                    node: a.to,
                    entry: arena.len() - 1,
                    complete: false,
                });
            }
        }
        Ok(result)
    }

    /// Arc posteriors from log-space forward-backward, indexed like
    /// [`Lattice::arcs`]. Arcs on no complete path get 0.
    pub fn arc_posteriors(&self, scales: &ScaleConfig) -> Result<Vec<f64>> {
        scales.validate()?;
        let order = self.topo_order()?;
        let out = self.out_arcs();
        let n = self.num_nodes();
        let mut alpha = vec![f64::NEG_INFINITY; n];
        alpha[self.start()] = 0.0;
        for &u in &order {
            if alpha[u] == f64::NEG_INFINITY {
                continue;
            }
            for &ai in &out[u] {
                let a = &self.arcs[ai];
                alpha[a.to] = log_add(alpha[a.to], alpha[u] + a.score(scales));
            }
        }
        let mut beta = vec![f64::NEG_INFINITY; n];
        for &u in order.iter().rev() {
            let mut acc = if self.is_final(u) {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            for &ai in &out[u] {
                let a = &self.arcs[ai];
                acc = log_add(acc, a.score(scales) + beta[a.to]);
            }
            beta[u] = acc;
        }
        let total = beta[self.start()];
        if total == f64::NEG_INFINITY {
            return Err(LatticeError::EmptyLattice);
        }
        Ok(self
            .arcs
            .iter()
            .map(|a| {
                let s = alpha[a.from] + a.score(scales) + beta[a.to];
                if s == f64::NEG_INFINITY {
                    0.0
                } else {
                    (s - total).exp().min(1.0)
                }
            })
            .collect())
    }

    /// Log of the total path probability mass, `log Σ_paths exp(score)`.
    pub fn total_log_mass(&self, scales: &ScaleConfig) -> Result<f64> {
        let order = self.topo_order()?;
        let out = self.out_arcs();
        let mut beta = vec![f64::NEG_INFINITY; self.num_nodes()];
        for &u in order.iter().rev() {
            let mut acc = if self.is_final(u) {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            for &ai in &out[u] {
                let a = &self.arcs[ai];
                acc = log_add(acc, a.score(scales) + beta[a.to]);
            }
            beta[u] = acc;
        }
        Ok(beta[self.start()])
    }

    /// Keyword occurrences: the composition of the lattice with a
    /// [`KeywordAcceptor`], one match per lattice arc on a complete path whose
    /// label is a keyword. Sorted by arc index.
    pub fn find_keywords(
        &self,
        acceptor: &KeywordAcceptor,
        scales: &ScaleConfig,
    ) -> Result<Vec<KeywordMatch>> {
        if acceptor.is_empty() {
            return Ok(Vec::new());
        }
        let vit = Viterbi::new(self, scales)?;
        let mut matches = Vec::new();
        for (ai, a) in self.arcs.iter().enumerate() {
            if !acceptor.accepts(a.word) {
                continue;
            }
            let best = vit.through(self, ai);
            if best == f64::NEG_INFINITY {
                continue;
            }
            matches.push(KeywordMatch {
                keyword: a.word,
                entry: a.from,
                exit: a.to,
                arc_index: ai,
                best_score: best,
            });
        }
        Ok(matches)
    }

    /// Best complete path constrained to traverse at least one arc accepted by
    /// `acceptor`; `None` when no such path exists.
    pub fn best_path_through_keywords(
        &self,
        acceptor: &KeywordAcceptor,
        scales: &ScaleConfig,
    ) -> Result<Option<Path>> {
        let vit = Viterbi::new(self, scales)?;
        let mut best: Option<(f64, usize)> = None;
        for (ai, a) in self.arcs.iter().enumerate() {
            if !acceptor.accepts(a.word) {
                continue;
            }
            let s = vit.through(self, ai);
            if s == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, ai));
            }
        }
        let Some((_, ai)) = best else {
            return Ok(None);
        };
        let a = &self.arcs[ai];
        let mut arcs = vit.best_prefix(self, a.from);
        arcs.push(ai);
        arcs.extend(vit.best_suffix(self, a.to));
        Ok(Some(Path::from_arcs(self, arcs, scales)))
    }
}
