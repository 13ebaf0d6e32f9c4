//! WER, NE-WER, lattice occurrence of under-represented NEs, and corpus
//! statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{Corpus, CountThresholds, NeInventory, Utterance};
use crate::lattice::Lattice;
use crate::symbols::SymbolTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no lattice for utterance `{0}`")]
    MissingLattice(String),
    #[error("no hypothesis for utterance `{0}`")]
    MissingHypothesis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditOp {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
    pub op: EditOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentResult {
    pub pairs: Vec<AlignedPair>,
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl AlignmentResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn ref_len(&self) -> usize {
        self.matches + self.substitutions + self.deletions
    }

    pub fn hyp_len(&self) -> usize {
        self.matches + self.substitutions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        Rate::new(self.errors() as u64, self.ref_len() as u64).percent()
    }

    /// Operation applied to each reference token, in reference order.
    pub fn reference_ops(&self) -> impl Iterator<Item = (&str, EditOp)> {
        self.pairs
            .iter()
            .filter_map(|p| p.reference.as_deref().map(|r| (r, p.op)))
    }
}

/// Unit-cost minimum edit distance alignment. On ties the backtrace prefers
/// match, then substitution, deletion and insertion.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> AlignmentResult {
    let (n, m) = (reference.len(), hypothesis.len());
    let eq = |i: usize, j: usize| reference[i].as_ref() == hypothesis[j].as_ref();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(!eq(i - 1, j - 1));
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut out = AlignmentResult::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i][j];
        let op = if i > 0 && j > 0 && eq(i - 1, j - 1) && d[i - 1][j - 1] == here {
            EditOp::Match
        } else if i > 0 && j > 0 && d[i - 1][j - 1] + 1 == here {
            EditOp::Substitution
        } else if i > 0 && d[i - 1][j] + 1 == here {
            EditOp::Deletion
        } else {
            EditOp::Insertion
        };
        let (r, h) = match op {
            EditOp::Match | EditOp::Substitution => {
                i -= 1;
                j -= 1;
                (Some(reference[i].as_ref()), Some(hypothesis[j].as_ref()))
            }
            EditOp::Deletion => {
                i -= 1;
                (Some(reference[i].as_ref()), None)
            }
            EditOp::Insertion => {
                j -= 1;
                (None, Some(hypothesis[j].as_ref()))
            }
        };
        match op {
            EditOp::Match => out.matches += 1,
            EditOp::Substitution => out.substitutions += 1,
            EditOp::Deletion => out.deletions += 1,
            EditOp::Insertion => out.insertions += 1,
        }
        out.pairs.push(AlignedPair {
            reference: r.map(str::to_string),
            hypothesis: h.map(str::to_string),
            op,
        });
    }
    out.pairs.reverse();
    out
}

/// A ratio reported as a percentage; 0 when the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Self {
            numerator,
            denominator,
        }
    }

    pub fn percent(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            100.0 * self.numerator as f64 / self.denominator as f64
        }
    }

    pub fn add(self, other: Rate) -> Rate {
        Rate::new(
            self.numerator + other.numerator,
            self.denominator + other.denominator,
        )
    }
}

/// NE-WER buckets over reference NE tokens with training count in
/// `[0, ur_max]`. `all` is the micro-average of `rare` and `absent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NeWer {
    pub rare: Rate,
    pub absent: Rate,
    pub all: Rate,
}

/// Counts a reference NE token as an error when its aligned operation is not
/// a match. Hypothesis-side NE insertions are not counted.
pub fn ne_wer(
    alignments: &[AlignmentResult],
    inventory: &NeInventory,
    thresholds: &CountThresholds,
) -> NeWer {
    let mut rare = Rate::default();
    let mut absent = Rate::default();
    for a in alignments {
        for (tok, op) in a.reference_ops() {
            let Some(ne) = inventory.get(tok) else {
                continue;
            };
            if !thresholds.is_under_represented(ne.train_count) {
                continue;
            }
            let bucket = if ne.train_count == 0 {
                &mut absent
            } else {
                &mut rare
            };
            bucket.denominator += 1;
            if op != EditOp::Match {
                bucket.numerator += 1;
            }
        }
    }
    NeWer {
        rare,
        absent,
        all: rare.add(absent),
    }
}

/// Share of reference NE tokens with training count in `[lo, hi]` whose word
/// labels at least one arc of that utterance's lattice.
pub fn ur_ne_occurrence(
    lattices: &[Lattice],
    symbols: &SymbolTable,
    references: &[Utterance],
    inventory: &NeInventory,
    count_range: (u64, u64),
) -> Result<Rate, MetricsError> {
    let by_id: HashMap<&str, &Lattice> = lattices.iter().map(|l| (l.utterance_id(), l)).collect();
    let (lo, hi) = count_range;
    let mut rate = Rate::default();
    for r in references {
        let mut words: Option<BTreeSet<&str>> = None;
        for tok in &r.tokens {
            let Some(ne) = inventory.get(tok) else {
                continue;
            };
            if ne.train_count < lo || ne.train_count > hi {
                continue;
            }
            if words.is_none() {
                let lat = by_id
                    .get(r.id.as_str())
                    .ok_or_else(|| MetricsError::MissingLattice(r.id.clone()))?;
                words = Some(
                    lat.arcs()
                        .iter()
                        .filter_map(|a| symbols.try_word(a.word))
                        .collect(),
                );
            }
            rate.denominator += 1;
            if words.as_ref().is_some_and(|w| w.contains(tok.as_str())) {
                rate.numerator += 1;
            }
        }
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorpusStats {
    pub utterances: usize,
    pub tokens: u64,
    pub ne_tokens: u64,
    pub oov_tokens: u64,
}

impl CorpusStats {
    pub fn ne_rate(&self) -> f64 {
        Rate::new(self.ne_tokens, self.tokens).percent()
    }

    pub fn oov_rate(&self) -> f64 {
        Rate::new(self.oov_tokens, self.tokens).percent()
    }
}

/// Token-level NE and OOV rates of `corpus` against a training vocabulary.
pub fn corpus_stats(
    corpus: &Corpus,
    inventory: &NeInventory,
    train_vocab: &BTreeSet<String>,
) -> CorpusStats {
    let mut s = CorpusStats {
        utterances: corpus.len(),
        ..Default::default()
    };
    for u in corpus.utterances() {
        for t in &u.tokens {
            s.tokens += 1;
            if inventory.contains(t) {
                s.ne_tokens += 1;
            }
            if !train_vocab.contains(t) {
                s.oov_tokens += 1;
            }
        }
    }
    s
}

/// One system's scores on a test set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub system: String,
    pub wer: Rate,
    pub ne_wer: NeWer,
    /// Lattice occurrence of reference NEs with count in `[0, ur_max]`.
    pub occurrence: Rate,
    pub utterances: usize,
}

impl EvalReport {
    pub const TSV_HEADER: &'static str =
        "system\twer\tne_wer_rare\tne_wer_absent\tne_wer_all\tur_ne_occurrence\twer_errors\twer_ref_words\tne_rare_errors\tne_rare_total\tne_absent_errors\tne_absent_total\toccurrence_hits\toccurrence_total";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.system,
            self.wer.percent(),
            self.ne_wer.rare.percent(),
            self.ne_wer.absent.percent(),
            self.ne_wer.all.percent(),
            self.occurrence.percent(),
            self.wer.numerator,
            self.wer.denominator,
            self.ne_wer.rare.numerator,
            self.ne_wer.rare.denominator,
            self.ne_wer.absent.numerator,
            self.ne_wer.absent.denominator,
            self.occurrence.numerator,
            self.occurrence.denominator,
        )
    }

    pub fn table(reports: &[EvalReport]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "system", "WER%", "Rare%", "Absent%", "ALL%", "Occ%"
        );
        for r in reports {
            let _ = writeln!(
                s,
                "{:<28} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                r.system,
                r.wer.percent(),
                r.ne_wer.rare.percent(),
                r.ne_wer.absent.percent(),
                r.ne_wer.all.percent(),
                r.occurrence.percent()
            );
        }
        s
    }
}

/// Scores hypotheses (keyed by utterance id) against references.
pub fn evaluate(
    system: &str,
    references: &[Utterance],
    hypotheses: &HashMap<String, Vec<String>>,
    lattices: Option<(&[Lattice], &SymbolTable)>,
    inventory: &NeInventory,
    thresholds: &CountThresholds,
) -> Result<EvalReport, MetricsError> {
    let mut alignments = Vec::with_capacity(references.len());
    let mut wer = Rate::default();
    for r in references {
        let h = hypotheses
            .get(&r.id)
            .ok_or_else(|| MetricsError::MissingHypothesis(r.id.clone()))?;
        let a = align(&r.tokens, h);
        wer = wer.add(Rate::new(a.errors() as u64, a.ref_len() as u64));
        alignments.push(a);
    }
    let occurrence = match lattices {
        Some((lats, syms)) => {
            ur_ne_occurrence(lats, syms, references, inventory, (0, thresholds.ur_max))?
        }
        None => Rate::default(),
    };
    Ok(EvalReport {
        system: system.to_string(),
        wer,
        ne_wer: ne_wer(&alignments, inventory, thresholds),
        occurrence,
        utterances: references.len(),
    })
}
