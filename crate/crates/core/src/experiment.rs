//! Experiment harness on the synthetic benchmark: first-pass decoding with a
//! baseline or exemplar-augmented LM, the S1–S11 system grid and the sweeps
//! behind the lattice-occurrence and enrichment curves.
//!
//! A single trial seed drives exemplar sampling, acoustic noise, RNN
//! initialisation and donor selection; the benchmark world itself is fixed by
//! [`SynthConfig::seed`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_index, Corpus, CorpusError, CountThresholds, NeInventory};
use crate::exemplar::{augment_corpus_with, build_pool, AugmentedCorpus, ExemplarConfig, ExemplarError};
use crate::lattice::{KeywordAcceptor, Lattice, LatticeError};
use crate::metrics::{evaluate, ur_ne_occurrence, EvalReport, MetricsError, Rate};
use crate::ngram::{train_ngram_with_vocab, NGramError, NGramModel, Smoothing};
use crate::par::Exec;
use crate::rescore::{
    keyword_acceptor, run_pipeline, write_hypotheses, Hypothesis, PipelineModels, RescoreConfig,
    RescoreError, Stage, StagePlan,
};
use crate::rnnlm::{enrich_embeddings, train_rnnlm_with_vocab, EnrichmentConfig, RnnConfig, RnnError, RnnLmModel};
use crate::seed::derive_seed;
use crate::simdecode::{build_confusion_model, simulate_corpus, ConfusionModel, ConfusionParams, SimConfig, SimError};
use crate::symbols::SymbolTable;
use crate::synth::{generate, SynthConfig, SyntheticBenchmark};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    NGram(#[from] NGramError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rescore(#[from] RescoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub thresholds: CountThresholds,
    pub exemplar: ExemplarConfig,
    /// Order of the LM used to build first-pass lattices.
    pub first_pass_order: usize,
    /// Order of the LM swapped in by the `ngram_swap` stage.
    pub rescore_order: usize,
    pub confusion: ConfusionParams,
    pub sim: SimConfig,
    pub rnn: RnnConfig,
    pub enrichment: EnrichmentConfig,
    pub rescore: RescoreConfig,
    /// Number of trial seeds in sweeps (`0..num_seeds`).
    pub num_seeds: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            thresholds: CountThresholds::default(),
            exemplar: ExemplarConfig::default(),
            first_pass_order: 2,
            rescore_order: 3,
            confusion: ConfusionParams::default(),
            sim: SimConfig::default(),
            rnn: RnnConfig::default(),
            enrichment: EnrichmentConfig::default(),
            rescore: RescoreConfig::default(),
            num_seeds: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.exemplar.validate()?;
        self.sim.validate()?;
        self.rnn.validate()?;
        self.rescore.validate()?;
        if self.first_pass_order == 0 || self.rescore_order == 0 {
            return Err(ExperimentError::InvalidConfig(
                "LM orders must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Copy of the config with every seeded component keyed to `trial`.
    pub fn for_trial(&self, trial: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.exemplar.rng_seed = derive_seed(trial, "exemplar");
        c.sim.seed = derive_seed(trial, "acoustic");
        c.rnn.seed = derive_seed(trial, "rnnlm");
        c.enrichment.donor_seed = derive_seed(trial, "donors");
        c
    }
}

/// The fixed part of an experiment: benchmark data, the lexicon shared by
/// every LM and the confusion model.
#[derive(Debug, Clone)]
pub struct World {
    pub bench: SyntheticBenchmark,
    pub confusion: ConfusionModel,
    /// Words every LM knows besides its training words: all inventory NEs.
    pub lexicon: Vec<String>,
}

impl World {
    pub fn new(config: &ExperimentConfig, exec: Exec) -> Result<World> {
        config.validate()?;
        let bench = generate(&config.synth);
        Self::from_benchmark(bench, config, exec)
    }

    pub fn from_benchmark(
        bench: SyntheticBenchmark,
        config: &ExperimentConfig,
        exec: Exec,
    ) -> Result<World> {
        let lexicon: Vec<String> = bench
            .inventory
            .entities()
            .iter()
            .map(|e| e.surface.clone())
            .collect();
        let mut vocab: Vec<&str> = lexicon.iter().map(String::as_str).collect();
        for c in [&bench.train, &bench.test] {
            vocab.extend(c.counts().keys().map(String::as_str));
        }
        let confusion = build_confusion_model(
            &vocab,
            derive_seed(config.synth.seed, "confusion"),
            config.confusion,
            exec,
        )?;
        Ok(World {
            bench,
            confusion,
            lexicon,
        })
    }

    pub fn inventory(&self) -> &NeInventory {
        &self.bench.inventory
    }

    fn lm(&self, corpus: &Corpus, order: usize) -> Result<NGramModel> {
        Ok(train_ngram_with_vocab(
            corpus,
            order,
            Smoothing::WittenBell,
            self.lexicon.iter().map(String::as_str),
        )?)
    }

    fn rnn(&self, corpus: &Corpus, config: &RnnConfig) -> Result<RnnLmModel> {
        let (m, report) =
            train_rnnlm_with_vocab(corpus, config, self.lexicon.iter().map(String::as_str))?;
        log::debug!(
            "rnnlm perplexity {:.2} -> {:?}",
            report.initial_perplexity,
            report.epoch_perplexities.last()
        );
        Ok(m)
    }

    /// Training corpus plus exemplar utterances.
    pub fn augment(&self, config: &ExemplarConfig, thresholds: &CountThresholds, exec: Exec) -> Result<AugmentedCorpus> {
        let train = &self.bench.train;
        let index = build_index(train, self.inventory(), thresholds);
        let pool = build_pool(train, self.inventory(), &index, thresholds, config)?;
        Ok(augment_corpus_with(train, self.inventory(), &pool, config, exec)?)
    }

    /// Decodes the test set with a first-pass LM trained on `corpus`.
    pub fn decode(&self, corpus: &Corpus, config: &ExperimentConfig, exec: Exec) -> Result<Decoded> {
        let first_pass = self.lm(corpus, config.first_pass_order)?;
        let (lattices, symbols) = simulate_corpus(
            self.bench.test.utterances(),
            &self.confusion,
            &first_pass,
            &config.sim,
            exec,
        )?;
        Ok(Decoded {
            lattices,
            symbols,
            first_pass,
        })
    }

    /// Occurrence tallies of reference UR-NEs, one per training count in
    /// `0..=ur_max`.
    pub fn occurrence_by_count(&self, decoded: &Decoded, thresholds: &CountThresholds) -> Result<Vec<Rate>> {
        (0..=thresholds.ur_max)
            .map(|c| {
                Ok(ur_ne_occurrence(
                    &decoded.lattices,
                    &decoded.symbols,
                    self.bench.test.utterances(),
                    self.inventory(),
                    (c, c),
                )?)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub lattices: Vec<Lattice>,
    pub symbols: SymbolTable,
    pub first_pass: NGramModel,
}

/// Sums per-count tallies over `[lo, hi]`.
pub fn sum_rates(by_count: &[Rate], lo: u64, hi: u64) -> Rate {
    by_count
        .iter()
        .enumerate()
        .filter(|(c, _)| (lo..=hi).contains(&(*c as u64)))
        .fold(Rate::default(), |acc, (_, r)| acc.add(*r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LatticeSource {
    /// First pass with the LM trained on the original transcripts.
    Baseline,
    /// First pass with the exemplar-augmented LM.
    Exemplar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RnnCorpus {
    Original,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SystemId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
    S8,
    S9,
    S10,
    S11,
}

impl SystemId {
    pub const ALL: [SystemId; 11] = [
        SystemId::S1,
        SystemId::S2,
        SystemId::S3,
        SystemId::S4,
        SystemId::S5,
        SystemId::S6,
        SystemId::S7,
        SystemId::S8,
        SystemId::S9,
        SystemId::S10,
        SystemId::S11,
    ];

    pub fn description(self) -> &'static str {
        match self {
            SystemId::S1 => "baseline",
            SystemId::S2 => "S1 + exemplar utterances",
            SystemId::S3 => "S2 + RNNLM",
            SystemId::S4 => "S2 + RNNLM-enriched",
            SystemId::S5 => "S4 + lattice boosting",
            SystemId::S6 => "S1 + RNNLM",
            SystemId::S7 => "S6 + RNNLM-enriched",
            SystemId::S8 => "S7 + lattice boosting",
            SystemId::S9 => "exemplar lattices + original-data RNNLM",
            SystemId::S10 => "S9 with RNNLM-enriched",
            SystemId::S11 => "S10 + lattice boosting",
        }
    }

    pub fn lattices(self) -> LatticeSource {
        use SystemId::*;
        match self {
            S1 | S6 | S7 | S8 => LatticeSource::Baseline,
            _ => LatticeSource::Exemplar,
        }
    }

    /// Corpus of the RNN LM the plan uses, if any.
    pub fn rnn_corpus(self) -> Option<RnnCorpus> {
        use SystemId::*;
        match self {
            S1 | S2 => None,
            S3 | S4 | S5 => Some(RnnCorpus::Augmented),
            _ => Some(RnnCorpus::Original),
        }
    }

    pub fn plan(self) -> StagePlan {
        use Stage::*;
        use SystemId::*;
        let stages = match self {
            S1 => vec![],
            S2 => vec![NgramSwap],
            S3 | S6 | S9 => vec![NgramSwap, NeuralRescore],
            S4 | S7 | S10 => vec![NgramSwap, NeuralEnrichedRescore],
            S5 | S8 | S11 => vec![NgramSwap, NeuralEnrichedRescore, LatticeBoost],
        };
        StagePlan::new(stages).expect("built-in plans are valid")
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SystemId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown system `{s}` (expected S1..S11)"))
    }
}

/// Where a system's hypotheses came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub system: SystemId,
    pub lattices: LatticeSource,
    pub rnn_corpus: Option<RnnCorpus>,
    pub plan: StagePlan,
    pub trial: u64,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rnn = match self.rnn_corpus {
            None => "none",
            Some(RnnCorpus::Original) => "original",
            Some(RnnCorpus::Augmented) => "augmented",
        };
        let lat = match self.lattices {
            LatticeSource::Baseline => "baseline",
            LatticeSource::Exemplar => "exemplar",
        };
        write!(
            f,
            "system={} lattices={lat} rnn_corpus={rnn} plan={} trial={}",
            self.system, self.plan, self.trial
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun {
    pub provenance: Provenance,
    pub report: EvalReport,
    pub hypotheses: Vec<Hypothesis>,
}

impl SystemRun {
    /// Provenance comment, TSV header and score row.
    pub fn render_report(&self) -> String {
        format!(
            "# {}\n# {}\n{}\n{}\n",
            self.provenance,
            self.provenance.system.description(),
            EvalReport::TSV_HEADER,
            self.report.tsv_row()
        )
    }

    pub fn render_hypotheses(&self) -> String {
        let mut buf = format!("# {}\n", self.provenance).into_bytes();
        write_hypotheses(&mut buf, &self.hypotheses).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }
}

/// Models and lattices shared by the systems of one trial, built on demand.
struct TrialState<'w> {
    world: &'w World,
    config: ExperimentConfig,
    trial: u64,
    exec: Exec,
    augmented: Option<Corpus>,
    decoded: BTreeMap<LatticeSource, Decoded>,
    swap_lm: BTreeMap<LatticeSource, NGramModel>,
    rnn: BTreeMap<RnnCorpus, RnnLmModel>,
    enriched: BTreeMap<RnnCorpus, RnnLmModel>,
}

impl<'w> TrialState<'w> {
    fn corpus(&mut self, src: LatticeSource) -> Result<Corpus> {
        Ok(match src {
            LatticeSource::Baseline => self.world.bench.train.clone(),
            LatticeSource::Exemplar => {
                if self.augmented.is_none() {
                    let a = self
                        .world
                        .augment(&self.config.exemplar, &self.config.thresholds, self.exec)?;
                    self.augmented = Some(a.corpus);
                }
                self.augmented.clone().expect("set above")
            }
        })
    }

    fn prepare(&mut self, id: SystemId) -> Result<()> {
        let src = id.lattices();
        if !self.decoded.contains_key(&src) {
            let corpus = self.corpus(src)?;
            let d = self.world.decode(&corpus, &self.config, self.exec)?;
            let swap = self.world.lm(&corpus, self.config.rescore_order)?;
            self.decoded.insert(src, d);
            self.swap_lm.insert(src, swap);
        }
        if let Some(rc) = id.rnn_corpus() {
            if !self.rnn.contains_key(&rc) {
                let corpus = match rc {
                    RnnCorpus::Original => self.corpus(LatticeSource::Baseline)?,
                    RnnCorpus::Augmented => self.corpus(LatticeSource::Exemplar)?,
                };
                let m = self.world.rnn(&corpus, &self.config.rnn)?;
                let e = enrich_embeddings(
                    &m,
                    self.world.inventory(),
                    &self.config.thresholds,
                    &self.config.enrichment,
                )?
                .model;
                self.rnn.insert(rc, m);
                self.enriched.insert(rc, e);
            }
        }
        Ok(())
    }

    fn run(&mut self, id: SystemId) -> Result<SystemRun> {
        self.prepare(id)?;
        let src = id.lattices();
        let decoded = &self.decoded[&src];
        let models = PipelineModels {
            ngram: self.swap_lm.get(&src),
            rnn: id.rnn_corpus().and_then(|rc| self.rnn.get(&rc)),
            enriched_rnn: id.rnn_corpus().and_then(|rc| self.enriched.get(&rc)),
        };
        let keywords = ur_keywords(self.world.inventory(), &self.config.thresholds, &decoded.symbols);
        let plan = id.plan();
        let hypotheses = run_pipeline(
            &decoded.lattices,
            &decoded.symbols,
            &plan,
            &models,
            &keywords,
            &self.config.rescore,
            self.exec,
        )?;
        let by_id: HashMap<String, Vec<String>> = hypotheses
            .iter()
            .map(|h| (h.utterance_id.clone(), h.words.clone()))
            .collect();
        let report = evaluate(
            &id.to_string(),
            self.world.bench.test.utterances(),
            &by_id,
            Some((&decoded.lattices, &decoded.symbols)),
            self.world.inventory(),
            &self.config.thresholds,
        )?;
        Ok(SystemRun {
            provenance: Provenance {
                system: id,
                lattices: src,
                rnn_corpus: id.rnn_corpus(),
                plan,
                trial: self.trial,
            },
            report,
            hypotheses,
        })
    }
}

/// Keyword acceptor over every inventory NE with count in `[0, ur_max]`.
pub fn ur_keywords(
    inventory: &NeInventory,
    thresholds: &CountThresholds,
    symbols: &SymbolTable,
) -> KeywordAcceptor {
    keyword_acceptor(
        inventory
            .with_count_in(0, thresholds.ur_max)
            .map(|e| e.surface.as_str()),
        symbols,
    )
}

/// Runs `systems` for one trial seed. Lattices and models are shared between
/// systems that use the same inputs.
pub fn run_systems(
    world: &World,
    config: &ExperimentConfig,
    trial: u64,
    systems: &[SystemId],
    exec: Exec,
) -> Result<Vec<SystemRun>> {
    let mut state = TrialState {
        world,
        config: config.for_trial(trial),
        trial,
        exec,
        augmented: None,
        decoded: BTreeMap::new(),
        swap_lm: BTreeMap::new(),
        rnn: BTreeMap::new(),
        enriched: BTreeMap::new(),
    };
    systems.iter().map(|&id| state.run(id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig1ExemplarCount,
    Fig2CountThreshold,
    Fig3PoolSize,
    Fig4EnrichmentRange,
}

impl Figure {
    pub const ALL: [Figure; 4] = [
        Figure::Fig1ExemplarCount,
        Figure::Fig2CountThreshold,
        Figure::Fig3PoolSize,
        Figure::Fig4EnrichmentRange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Figure::Fig1ExemplarCount => "fig1_exemplar_count",
            Figure::Fig2CountThreshold => "fig2_count_threshold",
            Figure::Fig3PoolSize => "fig3_pool_size",
            Figure::Fig4EnrichmentRange => "fig4_enrichment_range",
        }
    }
}

impl FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.as_str() == s || f.as_str().split('_').next() == Some(s))
            .ok_or_else(|| format!("unknown figure `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub const SWEEP_CSV_HEADER: &str = "x,metric,value,seed";

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{}", r.x, r.metric, r.value, r.seed)?;
    }
    Ok(())
}

/// Mean value of `metric` at `x` over all seeds.
pub fn sweep_mean(rows: &[SweepRow], x: f64, metric: &str) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.x == x && r.metric == metric)
        .map(|r| r.value)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Values swept on the x axis of each figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub exemplar_counts: Vec<usize>,
    pub pool_rr_nes: Vec<usize>,
    pub pool_utts: Vec<usize>,
    pub enrichment_max_counts: Vec<u64>,
    /// Trials used by the enrichment sweep, which trains RNN LMs.
    pub enrichment_seeds: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            exemplar_counts: vec![0, 5, 10, 15, 20],
            pool_rr_nes: vec![10, 20, 30, 36],
            pool_utts: vec![10, 20, 30],
            enrichment_max_counts: (0..=9).collect(),
            enrichment_seeds: 3,
        }
    }
}

/// Occurrence of every UR-NE bucket after decoding with `exemplar`-augmented
/// data (`None` = baseline LM).
fn occurrence_trial(
    world: &World,
    config: &ExperimentConfig,
    exemplar: Option<&ExemplarConfig>,
    exec: Exec,
) -> Result<Vec<Rate>> {
    let corpus = match exemplar {
        Some(ex) if ex.exemplars_per_ur_ne > 0 => {
            world.augment(ex, &config.thresholds, exec)?.corpus
        }
        _ => world.bench.train.clone(),
    };
    let decoded = world.decode(&corpus, config, exec)?;
    world.occurrence_by_count(&decoded, &config.thresholds)
}

fn push_buckets(rows: &mut Vec<SweepRow>, x: f64, seed: u64, by_count: &[Rate], ur_max: u64) {
    for (name, lo, hi) in [
        ("occurrence_0_1", 0, 1.min(ur_max)),
        ("occurrence_2_9", 2.min(ur_max), ur_max),
        ("occurrence_ur", 0, ur_max),
    ] {
        rows.push(SweepRow {
            x,
            metric: name.into(),
            value: sum_rates(by_count, lo, hi).percent(),
            seed,
        });
    }
}

/// Runs one figure sweep over trials `0..config.num_seeds`.
pub fn sweep(
    world: &World,
    config: &ExperimentConfig,
    sweep: &SweepConfig,
    figure: Figure,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let ur_max = config.thresholds.ur_max;
    let mut rows = Vec::new();
    match figure {
        Figure::Fig1ExemplarCount => {
            for seed in 0..config.num_seeds {
                let tc = config.for_trial(seed);
                for &n in &sweep.exemplar_counts {
                    let ex = ExemplarConfig {
                        exemplars_per_ur_ne: n,
                        ur_boost_max_count: ur_max,
                        ..tc.exemplar
                    };
                    let by_count = occurrence_trial(world, &tc, Some(&ex), exec)?;
                    push_buckets(&mut rows, n as f64, seed, &by_count, ur_max);
                }
            }
        }
        Figure::Fig2CountThreshold => {
            for seed in 0..config.num_seeds {
                let tc = config.for_trial(seed);
                let ex = ExemplarConfig {
                    ur_boost_max_count: ur_max,
                    ..tc.exemplar
                };
                let base = occurrence_trial(world, &tc, None, exec)?;
                let boosted = occurrence_trial(world, &tc, Some(&ex), exec)?;
                for b in 0..=ur_max {
                    for (name, by_count) in [("baseline", &base), ("exemplar", &boosted)] {
                        rows.push(SweepRow {
                            x: b as f64,
                            metric: format!("occurrence_{name}"),
                            value: sum_rates(by_count, 0, b).percent(),
                            seed,
                        });
                        rows.push(SweepRow {
                            x: b as f64,
                            metric: format!("bucket_{name}"),
                            value: sum_rates(by_count, b, b).percent(),
                            seed,
                        });
                    }
                }
            }
        }
        Figure::Fig3PoolSize => {
            let available = world.inventory().rich(&config.thresholds).count();
            for seed in 0..config.num_seeds {
                let tc = config.for_trial(seed);
                for &utts in &sweep.pool_utts {
                    for &k in &sweep.pool_rr_nes {
                        let ex = ExemplarConfig {
                            num_rr_nes: k.min(available),
                            utts_per_rr_ne: utts,
                            ..tc.exemplar
                        };
                        let by_count = occurrence_trial(world, &tc, Some(&ex), exec)?;
                        let hi = ex.ur_boost_max_count.min(ur_max);
                        rows.push(SweepRow {
                            x: k as f64,
                            metric: format!("occurrence_utts{utts}"),
                            value: sum_rates(&by_count, 0, hi).percent(),
                            seed,
                        });
                    }
                }
            }
        }
        Figure::Fig4EnrichmentRange => {
            for seed in 0..sweep.enrichment_seeds.min(config.num_seeds) {
                let tc = config.for_trial(seed);
                let decoded = world.decode(&world.bench.train, &tc, exec)?;
                let swap = world.lm(&world.bench.train, tc.rescore_order)?;
                let rnn = world.rnn(&world.bench.train, &tc.rnn)?;
                let keywords = ur_keywords(world.inventory(), &tc.thresholds, &decoded.symbols);
                let score = |model: &RnnLmModel, stage: Stage| -> Result<EvalReport> {
                    let plan = StagePlan::new(vec![Stage::NgramSwap, stage])?;
                    let models = PipelineModels {
                        ngram: Some(&swap),
                        rnn: Some(model),
                        enriched_rnn: Some(model),
                    };
                    let hyps = run_pipeline(
                        &decoded.lattices,
                        &decoded.symbols,
                        &plan,
                        &models,
                        &keywords,
                        &tc.rescore,
                        exec,
                    )?;
                    let by_id = hyps
                        .into_iter()
                        .map(|h| (h.utterance_id, h.words))
                        .collect();
                    Ok(evaluate(
                        "fig4",
                        world.bench.test.utterances(),
                        &by_id,
                        None,
                        world.inventory(),
                        &tc.thresholds,
                    )?)
                };
                let base = score(&rnn, Stage::NeuralRescore)?;
                let mut push = |x: f64, r: &EvalReport| {
                    rows.push(SweepRow {
                        x,
                        metric: "ne_wer_all".into(),
                        value: r.ne_wer.all.percent(),
                        seed,
                    });
                    rows.push(SweepRow {
                        x,
                        metric: "wer".into(),
                        value: r.wer.percent(),
                        seed,
                    });
                };
                push(-1.0, &base);
                for &max in &sweep.enrichment_max_counts {
                    let ec = EnrichmentConfig {
                        ur_target_max_count: max,
                        ..tc.enrichment.clone()
                    };
                    let enriched =
                        enrich_embeddings(&rnn, world.inventory(), &tc.thresholds, &ec)?.model;
                    let r = score(&enriched, Stage::NeuralEnrichedRescore)?;
                    push(max as f64, &r);
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig {
                rr_per_category: 2,
                ur_low_per_category: 2,
                ur_mid_per_category: 1,
                filler_utterances: 30,
                ..SynthConfig::default()
            },
            rnn: RnnConfig {
                embed_dim: 4,
                hidden_dim: 4,
                epochs: 1,
                ..RnnConfig::default()
            },
            num_seeds: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn systems_ids_and_plans() {
        assert_eq!("s5".parse::<SystemId>().unwrap(), SystemId::S5);
        assert_eq!(
            SystemId::S5.plan().to_string(),
            "ngram_swap,neural_enriched_rescore,lattice_boost"
        );
        assert_eq!(SystemId::S1.plan(), StagePlan::default());
        assert_eq!(SystemId::S11.plan(), SystemId::S5.plan());
        assert_ne!(SystemId::S11.rnn_corpus(), SystemId::S5.rnn_corpus());
    }

    #[test]
    fn small_grid_runs_and_is_repeatable() {
        let cfg = tiny();
        let world = World::new(&cfg, Exec::Parallel).unwrap();
        let a = run_systems(&world, &cfg, 0, &SystemId::ALL, Exec::Parallel).unwrap();
        let b = run_systems(&world, &cfg, 0, &SystemId::ALL, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
        assert!(a[4].render_report().contains("plan=ngram_swap,neural_enriched_rescore,lattice_boost"));
    }

    #[test]
    fn zero_exemplars_equal_baseline() {
        let cfg = tiny();
        let world = World::new(&cfg, Exec::Parallel).unwrap();
        let sc = SweepConfig {
            exemplar_counts: vec![0],
            ..SweepConfig::default()
        };
        let rows = sweep(&world, &cfg, &sc, Figure::Fig1ExemplarCount, Exec::Parallel).unwrap();
        let base = occurrence_trial(&world, &cfg.for_trial(0), None, Exec::Parallel).unwrap();
        let v = rows
            .iter()
            .find(|r| r.seed == 0 && r.metric == "occurrence_ur")
            .unwrap()
            .value;
        assert_eq!(v, sum_rates(&base, 0, 9).percent());
    }
}
