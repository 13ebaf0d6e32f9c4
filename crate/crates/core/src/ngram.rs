//! Witten-Bell back-off n-gram language model with ARPA text I/O.
//!
//! Probabilities are stored as base-10 logs, matching ARPA files. For an
//! observed history `h` with `c(h)` tokens and `T(h)` distinct followers:
//!
//! ```text
//! P(w|h)   = c(h,w) / (c(h) + T(h))                         if c(h,w) > 0
//! P(w|h)   = bow(h) · P(w|h')                                otherwise
//! bow(h)   = [T(h) / (c(h) + T(h))] / [1 − Σ_{w: c(h,w)>0} P(w|h')]
//! ```
//!
//! where `h'` drops the oldest word. At the unigram level the unseen mass
//! `T/(N+T)` is shared uniformly by vocabulary words with zero count, which
//! always includes `<unk>`, so no query returns −∞.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// ARPA convention for log10(0), used for `<s>` as a predicted word.
pub const LOG10_ZERO: f64 = -99.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NGramError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{order}-gram section lists {found} entries but the header declares {expected}")]
    SectionCountMismatch {
        order: usize,
        expected: usize,
        found: usize,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NGramError {
    fn from(e: std::io::Error) -> Self {
        NGramError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NGramError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Smoothing {
    #[default]
    WittenBell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    prob: f64,
    bow: Option<f64>,
}

/// Word ids are model-internal; use [`NGramModel::id`] to map words.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    bos: u32,
    eos: u32,
    unk: u32,
    /// `tables[k - 1]` holds the k-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

/// Trains a model on `corpus`.
pub fn train_ngram(corpus: &Corpus, order: usize, smoothing: Smoothing) -> Result<NGramModel> {
    train_ngram_with_vocab(corpus, order, smoothing, std::iter::empty::<&str>())
}

/// Trains a model whose vocabulary additionally contains `extra_vocab`
/// (e.g. a pronunciation lexicon). Extra words are unseen and share the
/// unigram unseen mass with `<unk>`.
pub fn train_ngram_with_vocab<'a>(
    corpus: &'a Corpus,
    order: usize,
    smoothing: Smoothing,
    extra_vocab: impl IntoIterator<Item = &'a str>,
) -> Result<NGramModel> {
    let Smoothing::WittenBell = smoothing;
    if order == 0 {
        return Err(NGramError::InvalidOrder);
    }
    if corpus.is_empty() {
        return Err(NGramError::EmptyCorpus);
    }
    let mut words: BTreeSet<&str> = corpus.counts().keys().map(String::as_str).collect();
    words.extend(extra_vocab);
    for special in [BOS, EOS, UNK] {
        words.remove(special);
    }
    let mut model = NGramModel::empty(order, words.into_iter());

    let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for u in corpus.utterances() {
        let mut seq = Vec::with_capacity(u.tokens.len() + 2);
        seq.push(model.bos);
        seq.extend(u.tokens.iter().map(|t| model.id_or_unk(t)));
        seq.push(model.eos);
        for j in 1..seq.len() {
            for k in 1..=order.min(j + 1) {
                *counts[k - 1].entry(seq[j + 1 - k..=j].to_vec()).or_insert(0) += 1;
            }
        }
    }

    // unigrams
    let total: u64 = counts[0].values().sum();
    let distinct = counts[0].len() as u64;
    let unseen: Vec<u32> = (0..model.vocab.len() as u32)
        .filter(|&w| w != model.bos && !counts[0].contains_key(&vec![w]))
        .collect();
    let denom = if unseen.is_empty() {
        total as f64
    } else {
        (total + distinct) as f64
    };
    let share = distinct as f64 / denom / unseen.len().max(1) as f64;
    let mut unigrams = HashMap::new();
    for (g, &c) in &counts[0] {
        unigrams.insert(
            g.clone(),
            Entry {
                prob: (c as f64 / denom).log10(),
                bow: None,
            },
        );
    }
    for &w in &unseen {
        unigrams.insert(
            vec![w],
            Entry {
                prob: share.log10(),
                bow: None,
            },
        );
    }
    unigrams.insert(
        vec![model.bos],
        Entry {
            prob: LOG10_ZERO,
            bow: None,
        },
    );
    model.tables[0] = unigrams;

    for k in 2..=order {
        // history -> (token count, followers)
        let mut by_hist: HashMap<&[u32], (u64, Vec<(u32, u64)>)> = HashMap::new();
        for (g, &c) in &counts[k - 1] {
            let e = by_hist.entry(&g[..k - 1]).or_default();
            e.0 += c;
            e.1.push((g[k - 1], c));
        }
        let mut table = HashMap::new();
        let mut bows = Vec::new();
        for (hist, (ch, mut followers)) in by_hist {
            // fixed summation order keeps training bit-reproducible
            followers.sort_unstable();
            let th = followers.len() as f64;
            let denom = ch as f64 + th;
            let lower_seen: f64 = followers
                .iter()
                .map(|&(w, _)| 10f64.powf(model.logprob_ids(&hist[1..], w)))
                .sum();
            let remaining = 1.0 - lower_seen;
            let degenerate = remaining <= 1e-12;
            for &(w, c) in &followers {
                let p = if degenerate {
                    c as f64 / ch as f64
                } else {
                    c as f64 / denom
                };
                let mut g = hist.to_vec();
                g.push(w);
                table.insert(
                    g,
                    Entry {
                        prob: p.log10(),
                        bow: None,
                    },
                );
            }
            let bow = if degenerate {
                LOG10_ZERO
            } else {
                ((th / denom) / remaining).log10()
            };
            bows.push((hist.to_vec(), bow));
        }
        model.tables[k - 1] = table;
        for (hist, bow) in bows {
            if let Some(e) = model.tables[k - 2].get_mut(&hist) {
                e.bow = Some(bow);
            }
        }
    }
    Ok(model)
}

impl NGramModel {
    fn empty<'a>(order: usize, words: impl Iterator<Item = &'a str>) -> Self {
        let mut m = NGramModel {
            order,
            vocab: Vec::new(),
            ids: HashMap::new(),
            bos: 0,
            eos: 0,
            unk: 0,
            tables: vec![HashMap::new(); order],
        };
        m.bos = m.intern(BOS);
        m.eos = m.intern(EOS);
        m.unk = m.intern(UNK);
        for w in words {
            m.intern(w);
        }
        m
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary size including `<s>`, `</s>` and `<unk>`.
    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(self.unk)
    }

    pub fn bos(&self) -> u32 {
        self.bos
    }

    pub fn eos(&self) -> u32 {
        self.eos
    }

    pub fn unk(&self) -> u32 {
        self.unk
    }

    pub fn word(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn num_ngrams(&self, k: usize) -> usize {
        self.tables[k - 1].len()
    }

    /// Histories (as word strings) that have at least one explicit
    /// continuation, across all orders; the empty history is included.
    pub fn seen_histories(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new()];
        for k in 2..=self.order {
            let mut hs: BTreeSet<&[u32]> = BTreeSet::new();
            for g in self.tables[k - 1].keys() {
                hs.insert(&g[..k - 1]);
            }
            out.extend(
                hs.into_iter()
                    .map(|h| h.iter().map(|&w| self.vocab[w as usize].clone()).collect()),
            );
        }
        out
    }

    fn bow(&self, hist: &[u32]) -> f64 {
        if hist.is_empty() {
            return 0.0;
        }
        self.tables[hist.len() - 1]
            .get(hist)
            .and_then(|e| e.bow)
            .unwrap_or(0.0)
    }

    /// Back-off log10 probability over model ids. Only the rightmost
    /// `order − 1` history words are used.
    pub fn logprob_ids(&self, history: &[u32], word: u32) -> f64 {
        let keep = history.len().min(self.order - 1);
        let hist = &history[history.len() - keep..];
        let mut acc = 0.0;
        let mut key = Vec::with_capacity(hist.len() + 1);
        for start in 0..=hist.len() {
            let ctx = &hist[start..];
            key.clear();
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(e) = self.tables[ctx.len()].get(&key) {
                return acc + e.prob;
            }
            acc += self.bow(ctx);
        }
        // every vocabulary word has a unigram entry
        acc + LOG10_ZERO
    }

    /// Log10 P(word | history); out-of-vocabulary words map to `<unk>`.
    pub fn logprob<S: AsRef<str>>(&self, history: &[S], word: &str) -> f64 {
        let hist: Vec<u32> = history.iter().map(|w| self.id_or_unk(w.as_ref())).collect();
        self.logprob_ids(&hist, self.id_or_unk(word))
    }

    /// Log10 probability of `<s> tokens </s>`.
    pub fn sentence_logprob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut hist = vec![self.bos];
        let mut total = 0.0;
        for t in tokens {
            let w = self.id_or_unk(t.as_ref());
            total += self.logprob_ids(&hist, w);
            hist.push(w);
        }
        total + self.logprob_ids(&hist, self.eos)
    }

    /// Keeps the `order − 1` rightmost words of `history` followed by `word`.
    pub fn advance(&self, history: &[u32], word: u32) -> Vec<u32> {
        let mut h: Vec<u32> = history.to_vec();
        h.push(word);
        let keep = h.len().min(self.order - 1);
        h.split_off(h.len() - keep)
    }

    fn sorted_entries(&self, k: usize) -> Vec<(Vec<&str>, Entry)> {
        let mut v: Vec<(Vec<&str>, Entry)> = self.tables[k - 1]
            .iter()
            .map(|(g, e)| (g.iter().map(|&w| self.vocab[w as usize].as_str()).collect(), *e))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn write_arpa<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "\\data\\")?;
        for k in 1..=self.order {
            writeln!(w, "ngram {}={}", k, self.tables[k - 1].len())?;
        }
        for k in 1..=self.order {
            writeln!(w)?;
            writeln!(w, "\\{k}-grams:")?;
            for (words, e) in self.sorted_entries(k) {
                write!(w, "{:.8}\t{}", e.prob, words.join(" "))?;
                if let Some(b) = e.bow {
                    write!(w, "\t{b:.8}")?;
                }
                writeln!(w)?;
            }
        }
        writeln!(w)?;
        writeln!(w, "\\end\\")?;
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> NGramError {
    NGramError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads an ARPA file. Text before `\data\` is ignored.
pub fn read_arpa<R: BufRead>(reader: R) -> Result<NGramModel> {
    #[derive(PartialEq)]
    enum State {
        Preamble,
        Header,
        Section(usize),
        Done,
    }
    let mut state = State::Preamble;
    let mut declared: Vec<usize> = Vec::new();
    let mut raw: Vec<Vec<(Vec<String>, Entry)>> = Vec::new();
    let mut last_line = 0;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let t = line.trim();
        match state {
            State::Preamble => {
                if t == "\\data\\" {
                    state = State::Header;
                }
            }
            State::Header | State::Section(_) if t.is_empty() => {}
            State::Header if t.starts_with("ngram ") => {
                let counts = &t["ngram ".len()..];
                let (k, n) = counts
                    .split_once('=')
                    .ok_or_else(|| parse_err(lineno, "expected `ngram k=n`"))?;
                let k: usize = k.trim().parse().map_err(|_| parse_err(lineno, "bad order"))?;
                let n: usize = n.trim().parse().map_err(|_| parse_err(lineno, "bad count"))?;
                if k != declared.len() + 1 {
                    return Err(parse_err(lineno, "ngram orders must be consecutive from 1"));
                }
                declared.push(n);
                raw.push(Vec::new());
            }
            State::Header | State::Section(_) if t.starts_with('\\') => {
                if t == "\\end\\" {
                    state = State::Done;
                    continue;
                }
                let k: usize = t
                    .strip_prefix('\\')
                    .and_then(|s| s.strip_suffix("-grams:"))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(lineno, format!("unknown section `{t}`")))?;
                if k == 0 || k > declared.len() {
                    return Err(parse_err(lineno, format!("undeclared section {k}-grams")));
                }
                state = State::Section(k);
            }
            State::Section(k) => {
                let fields: Vec<&str> = t.split_whitespace().collect();
                if fields.len() != k + 1 && fields.len() != k + 2 {
                    return Err(parse_err(
                        lineno,
                        format!("{k}-gram entry needs {} or {} fields", k + 1, k + 2),
                    ));
                }
                let num = |s: &str| -> Result<f64> {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(lineno, format!("bad number `{s}`")))
                };
                let prob = num(fields[0])?;
                let bow = if fields.len() == k + 2 {
                    Some(num(fields[k + 1])?)
                } else {
                    None
                };
                raw[k - 1].push((
                    fields[1..=k].iter().map(|s| s.to_string()).collect(),
                    Entry { prob, bow },
                ));
            }
            State::Header => return Err(parse_err(lineno, format!("unexpected `{t}`"))),
            State::Done => {}
        }
    }
    if state != State::Done {
        return Err(parse_err(last_line, "missing \\end\\"));
    }
    if declared.is_empty() {
        return Err(parse_err(last_line, "no ngram counts declared"));
    }
    for (k, (&expected, entries)) in declared.iter().zip(&raw).enumerate() {
        if expected != entries.len() {
            return Err(NGramError::SectionCountMismatch {
                order: k + 1,
                expected,
                found: entries.len(),
            });
        }
    }
    let unigram_words: Vec<&str> = raw[0]
        .iter()
        .map(|(w, _)| w[0].as_str())
        .filter(|w| ![BOS, EOS, UNK].contains(w))
        .collect();
    let mut model = NGramModel::empty(declared.len(), unigram_words.into_iter());
    for (k, entries) in raw.iter().enumerate() {
        for (words, e) in entries {
            let mut ids = Vec::with_capacity(words.len());
            for w in words {
                match model.id(w) {
                    Some(id) => ids.push(id),
                    None => {
                        return Err(parse_err(0, format!("word `{w}` missing from 1-grams")));
                    }
                }
            }
            model.tables[k].insert(ids, *e);
        }
    }
    let unk = model.unk;
    model.tables[0].entry(vec![unk]).or_insert(Entry {
        prob: LOG10_ZERO,
        bow: None,
    });
    let bos = model.bos;
    model.tables[0].entry(vec![bos]).or_insert(Entry {
        prob: LOG10_ZERO,
        bow: None,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;

    fn corpus(text: &str) -> Corpus {
        load_corpus(text.as_bytes()).unwrap()
    }

    #[test]
    fn unigram_mass_follows_counts() {
        let m = train_ngram(&corpus("a a b\n"), 1, Smoothing::WittenBell).unwrap();
        let pa = m.logprob::<&str>(&[], "a");
        let pb = m.logprob::<&str>(&[], "b");
        assert!((10f64.powf(pa) / 10f64.powf(pb) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_word_backs_off() {
        let m = train_ngram(&corpus("a b\na c\n"), 2, Smoothing::WittenBell).unwrap();
        // "c" never follows "b"
        let bow_b = m.bow(&[m.id("b").unwrap()]);
        let direct = m.logprob(&["b"], "c");
        let lower = m.logprob::<&str>(&[], "c");
        assert!((direct - (bow_b + lower)).abs() < 1e-12);
    }

    #[test]
    fn history_is_truncated() {
        let m = train_ngram(&corpus("a b c d\nb c a\n"), 3, Smoothing::WittenBell).unwrap();
        assert_eq!(m.logprob(&["x", "y", "b", "c"], "d"), m.logprob(&["b", "c"], "d"));
    }

    #[test]
    fn sentence_chain_rule() {
        let m = train_ngram(&corpus("a b\nb a\na a b\n"), 3, Smoothing::WittenBell).unwrap();
        let expected = m.logprob(&[BOS], "a") + m.logprob(&[BOS, "a"], "b") + m.logprob(&["a", "b"], EOS);
        assert!((m.sentence_logprob(&["a", "b"]) - expected).abs() < 1e-12);
        assert_eq!(m.sentence_logprob::<&str>(&[]), m.logprob(&[BOS], EOS));
    }

    #[test]
    fn oov_is_finite() {
        let m = train_ngram(&corpus("a b\n"), 2, Smoothing::WittenBell).unwrap();
        assert!(m.logprob(&["a"], "zzz").is_finite());
        assert_eq!(m.logprob(&["a"], "zzz"), m.logprob(&["a"], UNK));
    }

    #[test]
    fn extra_vocab_shares_unseen_mass() {
        let m = train_ngram_with_vocab(&corpus("a b\n"), 1, Smoothing::WittenBell, ["simei"]).unwrap();
        assert_eq!(m.logprob::<&str>(&[], "simei"), m.logprob::<&str>(&[], UNK));
        let total: f64 = m
            .vocab()
            .iter()
            .filter(|w| w.as_str() != BOS)
            .map(|w| 10f64.powf(m.logprob::<&str>(&[], w)))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arpa_count_mismatch() {
        let text = "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.5\ta\n-0.5\tb\n\n\\end\\\n";
        assert_eq!(
            read_arpa(text.as_bytes()),
            Err(NGramError::SectionCountMismatch {
                order: 1,
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn arpa_round_trip_queries() {
        let m = train_ngram(&corpus("a b c\nb c a\nc a b b\n"), 3, Smoothing::WittenBell).unwrap();
        let mut buf = Vec::new();
        m.write_arpa(&mut buf).unwrap();
        let back = read_arpa(buf.as_slice()).unwrap();
        for s in [vec!["a", "b", "c"], vec!["c", "c", "x"], vec![]] {
            assert!((m.sentence_logprob(&s) - back.sentence_logprob(&s)).abs() < 1e-6);
        }
        let mut again = Vec::new();
        back.write_arpa(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn arpa_parse_errors() {
        assert!(matches!(
            read_arpa("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\n\\end\\\n".as_bytes()),
            Err(NGramError::Parse { line: 5, .. })
        ));
        assert!(read_arpa("nothing here\n".as_bytes()).is_err());
        assert_eq!(
            train_ngram(&Corpus::default(), 3, Smoothing::WittenBell),
            Err(NGramError::EmptyCorpus)
        );
    }
}
