//! Synthetic first-pass decoder.
//!
//! Reference transcripts are turned into position-synchronous lattices: slot
//! `i` offers the reference word and its most confusable neighbours, scored by
//! a grapheme-similarity "acoustic" model plus per-utterance noise and by the
//! first-pass n-gram LM. Search states are `(slot, LM history)`, so every arc
//! carries its exact context LM score. Pruning is a lattice beam: a
//! transition survives when the best complete hypothesis through it scores
//! within `beam` of the overall best.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Utterance;
use crate::lattice::{Lattice, LatticeError, ScaleConfig};
use crate::ngram::NGramModel;
use crate::par::{self, Exec};
use crate::seed::{derive_seed, rng_for};
use crate::symbols::SymbolTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("utterance `{0}` has an empty reference")]
    EmptyReference(String),
    #[error("confusion vocabulary is empty")]
    EmptyVocabulary,
    #[error("word `{0}` is missing from the symbol table")]
    UnknownWord(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfusionParams {
    /// Words within this normalised edit distance are confusable.
    pub max_distance: f64,
    /// Log-score penalty per unit of normalised edit distance.
    pub sharpness: f64,
    /// Scale of the symmetric per-pair noise subtracted from each score.
    pub noise_scale: f64,
}

impl Default for ConfusionParams {
    fn default() -> Self {
        Self {
            max_distance: 0.5,
            sharpness: 4.0,
            noise_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    params: ConfusionParams,
    seed: u64,
    /// Confusion sets sorted by descending score, then by word.
    sets: BTreeMap<String, Vec<(String, f64)>>,
}

pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length (0 for two empty strings).
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        0.0
    } else {
        edit_distance(a, b) as f64 / n as f64
    }
}

fn pair_noise(seed: u64, a: &str, b: &str) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let h = derive_seed(seed, &format!("{lo}\u{1f}{hi}"));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl ConfusionModel {
    /// Score of hearing `candidate` when `reference` was spoken: 0 for the
    /// word itself, `None` when the pair is not confusable.
    pub fn score(&self, reference: &str, candidate: &str) -> Option<f64> {
        if reference == candidate {
            return Some(0.0);
        }
        self.sets
            .get(reference)?
            .iter()
            .find(|(w, _)| w == candidate)
            .map(|(_, s)| *s)
    }

    /// Confusable words of `word`, best first (the word itself excluded).
    pub fn confusions(&self, word: &str) -> &[(String, f64)] {
        self.sets.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.sets.contains_key(word)
    }

    pub fn params(&self) -> &ConfusionParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One `word\tconfusable\tscore` line per confusable pair.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "word\tconfusable\tlog_score")?;
        for (word, set) in &self.sets {
            for (c, s) in set {
                writeln!(w, "{word}\t{c}\t{s:.6}")?;
            }
        }
        Ok(())
    }
}

/// Builds confusion sets from all pairs of distinct vocabulary words.
/// Scores are `-sharpness · ned - noise_scale · u` where `u ∈ [0, 1)` is a
/// seeded hash of the unordered pair, so `score(a, b) == score(b, a)`.
pub fn build_confusion_model<S: AsRef<str> + Sync>(
    vocab: &[S],
    seed: u64,
    params: ConfusionParams,
    exec: Exec,
) -> Result<ConfusionModel> {
    let words: Vec<&str> = vocab
        .iter()
        .map(AsRef::as_ref)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if words.is_empty() {
        return Err(SimError::EmptyVocabulary);
    }
    if !(params.max_distance >= 0.0 && params.sharpness >= 0.0 && params.noise_scale >= 0.0) {
        return Err(SimError::InvalidConfig(
            "confusion parameters must be non-negative".into(),
        ));
    }
    let rows = par::map(exec, &words, |&w| {
        let wlen = w.chars().count();
        let mut set: Vec<(String, f64)> = words
            .iter()
            .filter(|&&c| c != w)
            .filter(|&&c| {
                // a length gap alone already bounds the distance from below
                let clen = c.chars().count();
                let n = wlen.max(clen).max(1) as f64;
                (wlen.abs_diff(clen) as f64) / n <= params.max_distance
            })
            .filter_map(|&c| {
                let ned = normalized_edit_distance(w, c);
                (ned <= params.max_distance).then(|| {
                    let s = -params.sharpness * ned - params.noise_scale * pair_noise(seed, w, c);
                    (c.to_string(), s)
                })
            })
            .collect();
        set.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        (w.to_string(), set)
    });
    Ok(ConfusionModel {
        params,
        seed,
        sets: rows.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Transitions whose best complete path falls more than `beam` below the
    /// best path are pruned. `f64::INFINITY` disables pruning.
    pub beam: f64,
    pub max_arcs_per_slot: usize,
    pub scales: ScaleConfig,
    /// Standard deviation of the per-utterance Gaussian acoustic noise.
    pub acoustic_noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            beam: 6.0,
            max_arcs_per_slot: 4,
            scales: ScaleConfig::default(),
            acoustic_noise: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beam > 0.0) {
            return Err(SimError::InvalidConfig("beam must be positive".into()));
        }
        if self.max_arcs_per_slot == 0 {
            return Err(SimError::InvalidConfig(
                "max_arcs_per_slot must be at least 1".into(),
            ));
        }
        if !(self.acoustic_noise.is_finite() && self.acoustic_noise >= 0.0) {
            return Err(SimError::InvalidConfig(
                "acoustic_noise must be finite and non-negative".into(),
            ));
        }
        self.scales.validate()?;
        Ok(())
    }
}

struct Candidate {
    word: u32,
    lm_id: u32,
    acoustic: f64,
}

struct Transition {
    from: usize,
    to: usize,
    cand: usize,
    lm: f64,
}

/// Simulates one lattice. All candidate words must already be interned in
/// `symbols` (see [`simulation_symbols`]).
pub fn simulate_lattice<S: AsRef<str>>(
    utterance_id: &str,
    reference: &[S],
    confusion: &ConfusionModel,
    lm: &NGramModel,
    symbols: &SymbolTable,
    config: &SimConfig,
) -> Result<Lattice> {
    config.validate()?;
    if reference.is_empty() {
        return Err(SimError::EmptyReference(utterance_id.to_string()));
    }
    let mut rng = rng_for(config.seed, &format!("sim:{utterance_id}"));
    let noise = Normal::new(0.0, config.acoustic_noise)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let lookup = |w: &str| -> Result<(u32, u32)> {
        let id = symbols
            .get(w)
            .ok_or_else(|| SimError::UnknownWord(w.to_string()))?;
        Ok((id.0, lm.id_or_unk(w)))
    };

    let mut slots: Vec<Vec<Candidate>> = Vec::with_capacity(reference.len());
    for r in reference {
        let r = r.as_ref();
        let mut cands = Vec::with_capacity(config.max_arcs_per_slot);
        let (word, lm_id) = lookup(r)?;
        cands.push(Candidate {
            word,
            lm_id,
            acoustic: noise.sample(&mut rng),
        });
        for (c, s) in confusion
            .confusions(r)
            .iter()
            .take(config.max_arcs_per_slot - 1)
        {
            let (word, lm_id) = lookup(c)?;
            cands.push(Candidate {
                word,
                lm_id,
                acoustic: s + noise.sample(&mut rng),
            });
        }
        slots.push(cands);
    }

    let ln10 = std::f64::consts::LN_10;
    let scales = config.scales;
    let n = slots.len();
    // states[i] maps an LM history to its state index for slot boundary i
    let mut histories: Vec<Vec<u32>> = vec![vec![lm.bos()]];
    let mut slot_of: Vec<usize> = vec![0];
    let mut layer: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    layer.insert(vec![lm.bos()], 0);
    let final_state = usize::MAX;
    let mut transitions: Vec<Transition> = Vec::new();
    for (i, cands) in slots.iter().enumerate() {
        let mut next: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        let last = i + 1 == n;
        for (h, &s) in &layer {
            for (ci, c) in cands.iter().enumerate() {
                let mut lm_score = lm.logprob_ids(h, c.lm_id);
                let h2 = lm.advance(h, c.lm_id);
                let to = if last {
                    lm_score += lm.logprob_ids(&h2, lm.eos());
                    final_state
                } else {
                    *next.entry(h2.clone()).or_insert_with(|| {
                        histories.push(h2);
                        slot_of.push(i + 1);
                        histories.len() - 1
                    })
                };
                transitions.push(Transition {
                    from: s,
                    to,
                    cand: ci,
                    lm: ln10 * lm_score,
                });
            }
        }
        layer = next;
    }
    let num_states = histories.len() + 1;
    let fin = num_states - 1;
    for t in transitions.iter_mut() {
        if t.to == final_state {
            t.to = fin;
        }
    }
    let arc_score = |t: &Transition| {
        let c = &slots[slot_of[t.from]][t.cand];
        scales.combine(c.acoustic, t.lm)
    };

    // states are created in slot order, so index order is topological
    let mut fwd = vec![f64::NEG_INFINITY; num_states];
    fwd[0] = 0.0;
    for t in &transitions {
        let v = fwd[t.from] + arc_score(t);
        if v > fwd[t.to] {
            fwd[t.to] = v;
        }
    }
    let mut bwd = vec![f64::NEG_INFINITY; num_states];
    bwd[fin] = 0.0;
    for t in transitions.iter().rev() {
        let v = bwd[t.to] + arc_score(t);
        if v > bwd[t.from] {
            bwd[t.from] = v;
        }
    }
    let best = fwd[fin];
    let keep: Vec<&Transition> = transitions
        .iter()
        .filter(|t| fwd[t.from] + arc_score(t) + bwd[t.to] >= best - config.beam)
        .collect();

    let mut node_of: HashMap<usize, usize> = HashMap::new();
    node_of.insert(0, 0);
    for t in &keep {
        for s in [t.from, t.to] {
            let next = node_of.len();
            node_of.entry(s).or_insert(next);
        }
    }
    let mut lattice = Lattice::new(utterance_id, node_of.len())?;
    for t in &keep {
        let c = &slots[slot_of[t.from]][t.cand];
        lattice.add_arc(
            node_of[&t.from],
            node_of[&t.to],
            crate::symbols::WordId(c.word),
            c.acoustic,
            t.lm,
        )?;
    }
    lattice.set_final(node_of[&fin])?;
    Ok(lattice.canonicalize()?)
}

/// Symbol table holding every confusion-vocabulary word and every reference
/// token, interned in sorted order.
pub fn simulation_symbols(confusion: &ConfusionModel, references: &[Utterance]) -> SymbolTable {
    let mut words: BTreeSet<&str> = confusion.vocab().collect();
    for u in references {
        words.extend(u.tokens.iter().map(String::as_str));
    }
    let mut symbols = SymbolTable::new();
    for w in words {
        symbols.intern(w);
    }
    symbols
}

/// Simulates every utterance; output order follows `references`.
pub fn simulate_corpus(
    references: &[Utterance],
    confusion: &ConfusionModel,
    lm: &NGramModel,
    config: &SimConfig,
    exec: Exec,
) -> Result<(Vec<Lattice>, SymbolTable)> {
    let symbols = simulation_symbols(confusion, references);
    let lattices = par::try_map(exec, references, |u| {
        simulate_lattice(&u.id, &u.tokens, confusion, lm, &symbols, config)
    })?;
    Ok((lattices, symbols))
}
