//! Second-pass rescoring: n-gram LM score replacement on lattices, N-best
//! rescoring with the RNN LM, and keyword-biased best-path extraction
//! ("lattice boosting"), composed by a stage plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{KeywordAcceptor, Lattice, LatticeError, NodeId, Path, ScaleConfig};
use crate::ngram::NGramModel;
use crate::par::{self, Exec};
use crate::rnnlm::RnnLmModel;
use crate::symbols::{SymbolTable, WordId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RescoreError {
    #[error("invalid rescoring config: {0}")]
    InvalidConfig(String),
    #[error("invalid stage plan: {0}")]
    InvalidPlan(String),
    #[error("stage {0} needs a model that was not supplied")]
    MissingModel(Stage),
    #[error("utterance `{utterance}`: {source}")]
    Lattice {
        utterance: String,
        source: LatticeError,
    },
}

pub type Result<T> = std::result::Result<T, RescoreError>;

fn in_utt(lattice: &Lattice) -> impl Fn(LatticeError) -> RescoreError + '_ {
    move |source| RescoreError::Lattice {
        utterance: lattice.utterance_id().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub scales: ScaleConfig,
    pub nbest_n: usize,
    /// Weight of the neural LM in the interpolated LM score.
    pub neural_interp_lambda: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            scales: ScaleConfig::default(),
            nbest_n: 50,
            neural_interp_lambda: 0.5,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nbest_n == 0 {
            return Err(RescoreError::InvalidConfig("nbest_n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.neural_interp_lambda) {
            return Err(RescoreError::InvalidConfig(format!(
                "neural_interp_lambda must lie in [0, 1], got {}",
                self.neural_interp_lambda
            )));
        }
        self.scales
            .validate()
            .map_err(|e| RescoreError::InvalidConfig(e.to_string()))
    }
}

/// Replaces every arc's LM score with the natural-log conditional probability
/// under `model`. Nodes are split by their last `order − 1` words so that each
/// arc has a unique context; arcs entering a final node also carry
/// `P(</s> | history)`. Each original path maps to exactly one new path whose
/// LM total equals the model's sentence score of its words.
pub fn replace_lm_scores(
    lattice: &Lattice,
    symbols: &SymbolTable,
    model: &NGramModel,
) -> std::result::Result<Lattice, LatticeError> {
    let order = lattice.topo_order()?;
    let useful = lattice.useful_nodes();
    if !useful[lattice.start()] {
        return Err(LatticeError::EmptyLattice);
    }
    let out_arcs = lattice.out_arcs();
    let ln10 = std::f64::consts::LN_10;
    let lm_ids: Vec<u32> = (0..symbols.len())
        .map(|i| model.id_or_unk(symbols.word(WordId(i as u32))))
        .collect();

    // state = (node, history, is_end); end copies are final and have no successors
    type State = (NodeId, Vec<u32>, bool);
    let mut ids: BTreeMap<State, usize> = BTreeMap::new();
    let mut per_node: Vec<Vec<Vec<u32>>> = vec![Vec::new(); lattice.num_nodes()];
    let start: State = (lattice.start(), vec![model.bos()], false);
    ids.insert(start, 0);
    per_node[lattice.start()].push(vec![model.bos()]);
    let mut arcs: Vec<(usize, usize, WordId, f64, f64)> = Vec::new();
    let mut finals: Vec<usize> = Vec::new();

    for &u in &order {
        if !useful[u] {
            continue;
        }
        let mut hists = std::mem::take(&mut per_node[u]);
        hists.sort();
        for h in hists {
            let from = ids[&(u, h.clone(), false)];
            for &ai in &out_arcs[u] {
                let a = &lattice.arcs()[ai];
                if !useful[a.to] {
                    continue;
                }
                let w = lm_ids[a.word.index()];
                let lp = model.logprob_ids(&h, w);
                let h2 = model.advance(&h, w);
                if lattice.is_final(a.to) {
                    let key = (a.to, h2.clone(), true);
                    let next = ids.len();
                    let to = *ids.entry(key).or_insert_with(|| {
                        finals.push(next);
                        next
                    });
                    let end = model.logprob_ids(&h2, model.eos());
                    arcs.push((from, to, a.word, a.acoustic, ln10 * (lp + end)));
                }
                if !out_arcs[a.to].is_empty() {
                    let key = (a.to, h2.clone(), false);
                    let next = ids.len();
                    let mut fresh = false;
                    let to = *ids.entry(key).or_insert_with(|| {
                        fresh = true;
                        next
                    });
                    if fresh {
                        per_node[a.to].push(h2);
                    }
                    arcs.push((from, to, a.word, a.acoustic, ln10 * lp));
                }
            }
        }
    }

    let mut out = Lattice::new(lattice.utterance_id(), ids.len())?;
    for (from, to, w, ac, lm) in arcs {
        out.add_arc(from, to, w, ac, lm)?;
    }
    for f in finals {
        out.set_final(f)?;
    }
    let out = out.connect();
    if out.finals().is_empty() {
        return Err(LatticeError::EmptyLattice);
    }
    out.canonicalize()
}

/// An N-best entry after neural rescoring.
#[derive(Debug, Clone, PartialEq)]
pub struct RescoredPath {
    pub path: Path,
    /// Natural-log neural sentence score.
    pub neural_lm: f64,
    /// `(1 − λ)·ngram + λ·neural`.
    pub combined_lm: f64,
    /// `acoustic_scale·acoustic + lm_scale·combined_lm`.
    pub score: f64,
}

/// Rescores the `nbest_n` best paths with interpolated LM scores and sorts
/// them by descending new score (stable with respect to the N-best order).
pub fn nbest_neural_rescore(
    lattice: &Lattice,
    symbols: &SymbolTable,
    rnn: &RnnLmModel,
    config: &RescoreConfig,
) -> Result<Vec<RescoredPath>> {
    config.validate()?;
    let lambda = config.neural_interp_lambda;
    let paths = lattice
        .n_best(config.nbest_n, &config.scales)
        .map_err(in_utt(lattice))?;
    let mut out: Vec<RescoredPath> = paths
        .into_iter()
        .map(|path| {
            let words = symbols.words(&path.words);
            let neural_lm = rnn.sentence_logprob(&words);
            let combined_lm = (1.0 - lambda) * path.lm_score + lambda * neural_lm;
            let score = config.scales.combine(path.acoustic_score, combined_lm);
            RescoredPath {
                path,
                neural_lm,
                combined_lm,
                score,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Best path constrained to pass through a keyword arc when the lattice has
/// one (`boosted = true`), otherwise the unconstrained best path.
pub fn ne_biased_best_path(
    lattice: &Lattice,
    keywords: &KeywordAcceptor,
    scales: &ScaleConfig,
) -> std::result::Result<(Path, bool), LatticeError> {
    if let Some(p) = lattice.best_path_through_keywords(keywords, scales)? {
        return Ok((p, true));
    }
    Ok((lattice.best_path(scales)?, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NgramSwap,
    NeuralRescore,
    NeuralEnrichedRescore,
    LatticeBoost,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::NgramSwap,
        Stage::NeuralRescore,
        Stage::NeuralEnrichedRescore,
        Stage::LatticeBoost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::NgramSwap => "ngram_swap",
            Stage::NeuralRescore => "neural_rescore",
            Stage::NeuralEnrichedRescore => "neural_enriched_rescore",
            Stage::LatticeBoost => "lattice_boost",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = RescoreError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RescoreError::InvalidPlan(format!("unknown stage `{s}`")))
    }
}

/// Stages in pipeline order. Valid plans list stages in the order of
/// [`Stage::ALL`] without repeats and hold at most one neural stage.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StagePlan(Vec<Stage>);

impl StagePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RescoreError::InvalidPlan(format!(
                "stages must follow the order {} without repeats",
                Stage::ALL.map(Stage::as_str).join(",")
            )));
        }
        if stages.contains(&Stage::NeuralRescore) && stages.contains(&Stage::NeuralEnrichedRescore)
        {
            return Err(RescoreError::InvalidPlan(
                "at most one neural rescoring stage".into(),
            ));
        }
        Ok(Self(stages))
    }

    pub fn stages(&self) -> &[Stage] {
        &self.0
    }

    pub fn contains(&self, stage: Stage) -> bool {
        self.0.contains(&stage)
    }

    fn neural(&self) -> Option<Stage> {
        self.0
            .iter()
            .copied()
            .find(|s| matches!(s, Stage::NeuralRescore | Stage::NeuralEnrichedRescore))
    }
}

impl fmt::Display for StagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.0.iter().map(|s| s.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for StagePlan {
    type Err = RescoreError;

    /// Parses a comma-separated list; an empty string or `none` is the empty
    /// plan.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::default());
        }
        StagePlan::new(
            s.split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Models available to a pipeline run. Stages whose model is missing fail
/// with [`RescoreError::MissingModel`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineModels<'a> {
    pub ngram: Option<&'a NGramModel>,
    pub rnn: Option<&'a RnnLmModel>,
    pub enriched_rnn: Option<&'a RnnLmModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub utterance_id: String,
    pub words: Vec<String>,
    pub boosted: bool,
    pub score: f64,
    /// Stages that were applied, in order.
    pub provenance: Vec<Stage>,
}

fn rescore_one(
    lattice: &Lattice,
    symbols: &SymbolTable,
    plan: &StagePlan,
    models: &PipelineModels<'_>,
    keywords: &KeywordAcceptor,
    config: &RescoreConfig,
) -> Result<Hypothesis> {
    let scales = &config.scales;
    let mut lat = std::borrow::Cow::Borrowed(lattice);
    if plan.contains(Stage::NgramSwap) {
        let m = models.ngram.ok_or(RescoreError::MissingModel(Stage::NgramSwap))?;
        lat = std::borrow::Cow::Owned(replace_lm_scores(lattice, symbols, m).map_err(in_utt(lattice))?);
    }
    let boost = plan.contains(Stage::LatticeBoost);
    let (words, score, boosted) = match plan.neural() {
        None if boost => {
            let (p, b) = ne_biased_best_path(&lat, keywords, scales).map_err(in_utt(lattice))?;
            (p.words, p.total_score, b)
        }
        None => {
            let p = lat.best_path(scales).map_err(in_utt(lattice))?;
            (p.words, p.total_score, false)
        }
        Some(stage) => {
            let rnn = match stage {
                Stage::NeuralRescore => models.rnn,
                _ => models.enriched_rnn,
            }
            .ok_or(RescoreError::MissingModel(stage))?;
            let ranked = nbest_neural_rescore(&lat, symbols, rnn, config)?;
            let top = &ranked[0];
            if !boost {
                (top.path.words.clone(), top.score, false)
            } else if let Some(hit) = ranked
                .iter()
                .find(|r| r.path.contains_any(keywords.keywords()))
            {
                (hit.path.words.clone(), hit.score, true)
            } else if let Some(p) = lat
                .best_path_through_keywords(keywords, scales)
                .map_err(in_utt(lattice))?
            {
                (p.words, p.total_score, true)
            } else {
                (top.path.words.clone(), top.score, false)
            }
        }
    };
    Ok(Hypothesis {
        utterance_id: lattice.utterance_id().to_string(),
        words: symbols.words(&words),
        boosted,
        score,
        provenance: plan.stages().to_vec(),
    })
}

/// Applies `plan` to every lattice. With lattice boosting after a neural
/// stage, the best rescored N-best entry containing a keyword is chosen; if
/// none of the N-best entries has one, the keyword-constrained lattice path
/// is used instead.
pub fn run_pipeline(
    lattices: &[Lattice],
    symbols: &SymbolTable,
    plan: &StagePlan,
    models: &PipelineModels<'_>,
    keywords: &KeywordAcceptor,
    config: &RescoreConfig,
    exec: Exec,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    par::try_map(exec, lattices, |l| {
        rescore_one(l, symbols, plan, models, keywords, config)
    })
}

/// Keyword acceptor over the given surfaces; surfaces missing from
/// `symbols` cannot occur in any lattice and are skipped.
pub fn keyword_acceptor<'a>(
    surfaces: impl IntoIterator<Item = &'a str>,
    symbols: &SymbolTable,
) -> KeywordAcceptor {
    KeywordAcceptor::new(surfaces.into_iter().filter_map(|s| symbols.get(s)))
}

/// `<utterance_id>\t<boosted 0|1>\t<words>` per hypothesis.
pub fn write_hypotheses<W: Write>(mut w: W, hyps: &[Hypothesis]) -> std::io::Result<()> {
    for h in hyps {
        writeln!(
            w,
            "{}\t{}\t{}",
            h.utterance_id,
            u8::from(h.boosted),
            h.words.join(" ")
        )?;
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("hypothesis line {line}: {message}")]
pub struct HypothesisParseError {
    pub line: usize,
    pub message: String,
}

/// Reads the hypothesis format back as `(id, boosted, words)`, skipping `#`
/// comment lines. A missing boosted column is read as `0`.
pub fn read_hypotheses(
    text: &str,
) -> std::result::Result<Vec<(String, bool, Vec<String>)>, HypothesisParseError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| HypothesisParseError {
            line: i + 1,
            message,
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default().trim().to_string();
        if id.is_empty() {
            return Err(err("missing utterance id".into()));
        }
        let (boosted, words) = match (cols.next(), cols.next()) {
            (Some(b), Some(ws)) => (b, ws),
            (Some(ws), None) => ("0", ws),
            _ => ("0", ""),
        };
        let boosted = match boosted.trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("boosted flag must be 0 or 1, got `{other}`"))),
        };
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicate utterance id `{id}`")));
        }
        out.push((id, boosted, words.split_whitespace().map(String::from).collect()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Utterance};
    use crate::ngram::{train_ngram, Smoothing};
    use crate::rnnlm::RnnConfig;

    fn diamond(syms: &mut SymbolTable) -> Lattice {
        let a = syms.intern("a");
        let b = syms.intern("b");
        let mut l = Lattice::new("d", 2).unwrap();
        l.add_arc(0, 1, a, -1.0, -1.0).unwrap();
        l.add_arc(0, 1, b, -0.5, -2.0).unwrap();
        l.set_final(1).unwrap();
        l
    }

    #[test]
    fn biased_path_takes_the_keyword() {
        let mut syms = SymbolTable::new();
        let l = diamond(&mut syms);
        let s = ScaleConfig::default();
        let kw = keyword_acceptor(["b"], &syms);
        let (p, boosted) = ne_biased_best_path(&l, &kw, &s).unwrap();
        assert!(boosted);
        assert_eq!(syms.words(&p.words), ["b"]);
        let none = keyword_acceptor(["zzz"], &syms);
        let (p, boosted) = ne_biased_best_path(&l, &none, &s).unwrap();
        assert!(!boosted);
        assert_eq!(p, l.best_path(&s).unwrap());
    }

    #[test]
    fn swap_on_linear_lattice_matches_sentence_score() {
        let c = Corpus::from_utterances(vec![
            Utterance::from_text("1", "a b"),
            Utterance::from_text("2", "a c b"),
        ])
        .unwrap();
        let m = train_ngram(&c, 3, Smoothing::WittenBell).unwrap();
        let mut syms = SymbolTable::new();
        let mut l = Lattice::new("x", 3).unwrap();
        l.add_arc(0, 1, syms.intern("a"), -1.5, 0.0).unwrap();
        l.add_arc(1, 2, syms.intern("b"), -0.5, 0.0).unwrap();
        l.set_final(2).unwrap();
        let r = replace_lm_scores(&l, &syms, &m).unwrap();
        let p = r.best_path(&ScaleConfig::default()).unwrap();
        let expect = std::f64::consts::LN_10 * m.sentence_logprob(&["a", "b"]);
        assert!((p.lm_score - expect).abs() < 1e-12);
        assert_eq!(p.acoustic_score, -2.0);
    }

    #[test]
    fn final_node_with_successors_keeps_both_paths() {
        let c = Corpus::from_utterances(vec![Utterance::from_text("1", "a b")]).unwrap();
        let m = train_ngram(&c, 2, Smoothing::WittenBell).unwrap();
        let mut syms = SymbolTable::new();
        let mut l = Lattice::new("x", 3).unwrap();
        l.add_arc(0, 1, syms.intern("a"), 0.0, 0.0).unwrap();
        l.add_arc(1, 2, syms.intern("b"), 0.0, 0.0).unwrap();
        l.set_final(1).unwrap();
        l.set_final(2).unwrap();
        let r = replace_lm_scores(&l, &syms, &m).unwrap();
        let paths = r.n_best(10, &ScaleConfig::default()).unwrap();
        assert_eq!(paths.len(), 2);
        for p in paths {
            let w = syms.words(&p.words);
            let expect = std::f64::consts::LN_10 * m.sentence_logprob(&w);
            assert!((p.lm_score - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_zero_keeps_nbest_order() {
        let mut syms = SymbolTable::new();
        let l = diamond(&mut syms);
        let rnn = RnnLmModel::new(&["a", "b"], RnnConfig::default()).unwrap();
        let cfg = RescoreConfig {
            neural_interp_lambda: 0.0,
            ..RescoreConfig::default()
        };
        let r = nbest_neural_rescore(&l, &syms, &rnn, &cfg).unwrap();
        let nb = l.n_best(50, &cfg.scales).unwrap();
        assert_eq!(
            r.iter().map(|x| &x.path).collect::<Vec<_>>(),
            nb.iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn plans_parse_and_validate() {
        let p: StagePlan = "ngram_swap,neural_enriched_rescore,lattice_boost".parse().unwrap();
        assert_eq!(p.to_string(), "ngram_swap,neural_enriched_rescore,lattice_boost");
        assert_eq!("none".parse::<StagePlan>().unwrap(), StagePlan::default());
        assert!("lattice_boost,ngram_swap".parse::<StagePlan>().is_err());
        assert!("neural_rescore,neural_enriched_rescore".parse::<StagePlan>().is_err());
        assert!("bogus".parse::<StagePlan>().is_err());
    }

    #[test]
    fn empty_plan_is_first_pass_and_missing_models_error() {
        let mut syms = SymbolTable::new();
        let l = diamond(&mut syms);
        let kw = keyword_acceptor(["b"], &syms);
        let cfg = RescoreConfig::default();
        let models = PipelineModels::default();
        let h = run_pipeline(
            std::slice::from_ref(&l),
            &syms,
            &StagePlan::default(),
            &models,
            &kw,
            &cfg,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(h[0].words, ["a"]);
        let plan: StagePlan = "ngram_swap".parse().unwrap();
        assert_eq!(
            run_pipeline(&[l], &syms, &plan, &models, &kw, &cfg, Exec::Sequential),
            Err(RescoreError::MissingModel(Stage::NgramSwap))
        );
    }

    #[test]
    fn hypotheses_round_trip() {
        let h = vec![Hypothesis {
            utterance_id: "u1".into(),
            words: vec!["x".into(), "y".into()],
            boosted: true,
            score: 0.0,
            provenance: vec![],
        }];
        let mut buf = Vec::new();
        write_hypotheses(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "u1\t1\tx y\n");
        let back = read_hypotheses(&format!("# header\n{text}")).unwrap();
        assert_eq!(back, vec![("u1".into(), true, vec!["x".into(), "y".into()])]);
    }
}
