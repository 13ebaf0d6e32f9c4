//! Acceptance harness: one PASS/FAIL line per criterion with the measured
//! value, the threshold and the elapsed time. Exits non-zero when any
//! criterion fails.
//!
//! Every expected value is computed here from first principles (path
//! enumeration, direct sums, finite differences, reruns) rather than taken
//! from the library.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use nebias::corpus::{CountThresholds, NamedEntity, NeCategory, NeInventory};
use nebias::experiment::{
    run_systems, sweep, sweep_mean, write_sweep_csv, ExperimentConfig, Figure, SweepConfig,
    SweepRow, SystemId, World,
};
use nebias::ngram::{read_arpa, train_ngram, train_ngram_with_vocab, Smoothing, BOS};
use nebias::par::Exec;
use nebias::rescore::{ne_biased_best_path, replace_lm_scores};
use nebias::rnnlm::{enrich_embeddings, EmbeddingSide, EnrichmentConfig, RnnConfig, RnnLmModel, Tensor};
use nebias::{KeywordAcceptor, ScaleConfig, WordId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: whether it held and a one-line measurement.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Harness {
    started: Instant,
    failures: usize,
}

impl Harness {
    fn run(&mut self, id: u32, name: &str, budget: Duration, check: impl FnOnce() -> Verdict) {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let elapsed = t0.elapsed();
        let (pass, detail) = match outcome {
            Ok(v) if elapsed > budget => (
                false,
                format!("{}; over the {:.0?} budget", v.detail, budget),
            ),
            Ok(v) => (v.pass, v.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "{} criterion {id} ({name}): {detail} [{:.2?}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed
        );
    }
}

// ---------------------------------------------------------------------------
// 1. embedding enrichment
// ---------------------------------------------------------------------------

fn entity(surface: &str, category: NeCategory, train_count: u64) -> NamedEntity {
    NamedEntity {
        surface: surface.into(),
        category,
        train_count,
    }
}

/// Two-dimensional model whose input and output rows for `rows` are set
/// explicitly.
fn tiny_model(rows: &[(&str, [f64; 2])]) -> RnnLmModel {
    let words: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let config = RnnConfig {
        embed_dim: 2,
        hidden_dim: 2,
        ..RnnConfig::default()
    };
    let mut m = RnnLmModel::new(&words, config).unwrap();
    for (w, v) in rows {
        let id = m.id(w).unwrap() as usize;
        for t in [Tensor::InputEmbedding, Tensor::OutputEmbedding] {
            m.params_mut().tensor_mut(t)[id * 2..id * 2 + 2].copy_from_slice(v);
        }
    }
    m
}

fn enrichment_exactness() -> Verdict {
    let thresholds = CountThresholds::default();
    let weights = EnrichmentConfig {
        m_same: 0.7,
        m_diff: 0.3,
        apply_to: EmbeddingSide::Both,
        ur_target_max_count: 9,
        ..EnrichmentConfig::default()
    };
    // (rows, inventory, donors, expected row of "target")
    let cases: Vec<(Vec<(&str, [f64; 2])>, Vec<NamedEntity>, Vec<&str>, [f64; 2])> = vec![
        (
            vec![("target", [0.3, -1.2]), ("rich", [5.0, 5.0])],
            vec![
                entity("target", NeCategory::Person, 2),
                entity("rich", NeCategory::Person, 50),
            ],
            vec![],
            [0.3, -1.2],
        ),
        (
            vec![("target", [1.0, 0.0]), ("same", [0.0, 1.0])],
            vec![
                entity("target", NeCategory::Person, 0),
                entity("same", NeCategory::Person, 40),
            ],
            vec!["same"],
            [0.5, 0.35],
        ),
        (
            vec![("target", [2.0, 0.0]), ("same", [0.0, 1.0]), ("other", [1.0, 1.0])],
            vec![
                entity("target", NeCategory::Person, 3),
                entity("same", NeCategory::Person, 40),
                entity("other", NeCategory::City, 12),
            ],
            vec!["same", "other"],
            [2.3 / 3.0, 1.0 / 3.0],
        ),
    ];
    let mut max_err: f64 = 0.0;
    let mut untouched_ok = true;
    for (rows, entities, donors, want) in cases {
        let model = tiny_model(&rows);
        let inventory = NeInventory::new(entities).unwrap();
        let config = EnrichmentConfig {
            rr_ne_donors: donors.iter().map(|d| d.to_string()).collect(),
            num_donors: donors.len(),
            allow_empty_donors: donors.is_empty(),
            ..weights.clone()
        };
        let out = enrich_embeddings(&model, &inventory, &thresholds, &config).unwrap();
        let target = model.id("target").unwrap() as usize;
        for t in Tensor::ALL {
            let (before, after) = (model.params().tensor(t), out.model.params().tensor(t));
            let is_embedding = matches!(t, Tensor::InputEmbedding | Tensor::OutputEmbedding);
            for (i, (b, a)) in before.iter().zip(after).enumerate() {
                if is_embedding && i / 2 == target {
                    max_err = max_err.max((a - want[i % 2]).abs());
                } else {
                    untouched_ok &= b.to_bits() == a.to_bits();
                }
            }
        }
    }
    Verdict::new(
        max_err <= 1e-12 && untouched_ok,
        format!(
            "3 examples, max abs error {max_err:.1e} (<= 1e-12), non-target params bit-identical: {untouched_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. lattice search vs exhaustive enumeration
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Tally {
    worst: f64,
    mismatches: usize,
}

impl Tally {
    fn note(&mut self, got: f64, want: f64) {
        let err = (got - want).abs() / (1.0 + want.abs());
        if !(err <= 1e-9) {
            self.mismatches += 1;
        }
        self.worst = self.worst.max(err);
    }
}

fn lattice_oracle_equivalence() -> Verdict {
    const LATTICES: u64 = 120;
    let sc = ScaleConfig::new(0.8, 1.2).unwrap();
    let keywords = KeywordAcceptor::new([WordId(1), WordId(3)]);
    let mut t = Tally::default();
    let mut max_paths = 0;
    for seed in 0..LATTICES {
        let lat = random_lattice(1000 + seed, 12);
        let paths = all_paths(&lat);
        max_paths = max_paths.max(paths.len());
        let scores: Vec<f64> = paths.iter().map(|p| path_score(&lat, p, &sc)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        t.note(lat.best_path(&sc).unwrap().total_score, best);

        let mut by_words: BTreeMap<Vec<WordId>, f64> = BTreeMap::new();
        for (p, &s) in paths.iter().zip(&scores) {
            let e = by_words.entry(path_words(&lat, p)).or_insert(f64::NEG_INFINITY);
            *e = e.max(s);
        }
        let mut ranked: Vec<f64> = by_words.values().copied().collect();
        ranked.sort_by(|a, b| b.total_cmp(a));
        let nbest = lat.n_best(5, &sc).unwrap();
        if nbest.len() != ranked.len().min(5) {
            t.mismatches += 1;
        }
        for (p, want) in nbest.iter().zip(&ranked) {
            t.note(p.total_score, *want);
        }

        let z = log_sum_exp(&scores);
        let post = lat.arc_posteriors(&sc).unwrap();
        for (ai, got) in post.iter().enumerate() {
            let want: f64 = paths
                .iter()
                .zip(&scores)
                .filter(|(p, _)| p.contains(&ai))
                .map(|(_, s)| (s - z).exp())
                .sum();
            t.note(*got, want);
        }

        let mut kw_best: BTreeMap<usize, f64> = BTreeMap::new();
        for (p, &s) in paths.iter().zip(&scores) {
            for &ai in p.iter().filter(|&&ai| keywords.accepts(lat.arcs()[ai].word)) {
                let e = kw_best.entry(ai).or_insert(f64::NEG_INFINITY);
                *e = e.max(s);
            }
        }
        let found = lat.find_keywords(&keywords, &sc).unwrap();
        if found.len() != kw_best.len() {
            t.mismatches += 1;
        }
        for m in &found {
            match kw_best.get(&m.arc_index) {
                Some(&want) => t.note(m.best_score, want),
                None => t.mismatches += 1,
            }
        }

        let constrained = kw_best.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let (path, boosted) = ne_biased_best_path(&lat, &keywords, &sc).unwrap();
        if boosted != (constrained > f64::NEG_INFINITY) {
            t.mismatches += 1;
        }
        t.note(path.total_score, if boosted { constrained } else { best });
    }
    Verdict::new(
        t.mismatches == 0 && max_paths > 100,
        format!(
            "{LATTICES} lattices (<= 12 nodes, up to {max_paths} paths), {} mismatches, worst rel error {:.1e} (<= 1e-9)",
            t.mismatches, t.worst
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. n-gram LM
// ---------------------------------------------------------------------------

fn ngram_correctness() -> Verdict {
    let corpus = markov_corpus(11);
    let tokens = corpus.total_tokens();
    let mut norm_err: f64 = 0.0;
    let mut histories = 0usize;
    let mut arpa_drift: f64 = 0.0;
    for order in 1..=3 {
        let lm = train_ngram(&corpus, order, Smoothing::WittenBell).unwrap();
        let targets: Vec<&String> = lm.vocab().iter().filter(|w| w.as_str() != BOS).collect();
        let mut buf = Vec::new();
        lm.write_arpa(&mut buf).unwrap();
        let back = read_arpa(buf.as_slice()).unwrap();
        for h in lm.seen_histories() {
            histories += 1;
            let total: f64 = targets.iter().map(|w| 10f64.powf(lm.logprob(&h, w))).sum();
            norm_err = norm_err.max((total - 1.0).abs());
            for w in &targets {
                arpa_drift = arpa_drift.max((lm.logprob(&h, w) - back.logprob(&h, w)).abs());
            }
        }
    }

    let syms = symbols();
    let small = nebias::corpus::Corpus::from_utterances(
        ["a b c", "a b d", "b c a", "c a b c", "d a e"]
            .iter()
            .enumerate()
            .map(|(i, s)| nebias::corpus::Utterance::from_text(format!("u{i}"), s))
            .collect(),
    )
    .unwrap();
    let mut swap_err: f64 = 0.0;
    let mut same_sequences = true;
    for order in 1..=3 {
        let lm = train_ngram(&small, order, Smoothing::WittenBell).unwrap();
        for seed in 0..30 {
            let lat = random_lattice(2000 + seed, 9);
            let swapped = replace_lm_scores(&lat, &syms, &lm).unwrap();
            let words_of = |l: &nebias::Lattice| -> BTreeSet<Vec<WordId>> {
                all_paths(l).iter().map(|p| path_words(l, p)).collect()
            };
            same_sequences &= words_of(&lat) == words_of(&swapped);
            for p in all_paths(&swapped) {
                let got: f64 = p.iter().map(|&i| swapped.arcs()[i].lm).sum();
                let text = syms.words(&path_words(&swapped, &p));
                let want = std::f64::consts::LN_10 * lm.sentence_logprob(&text);
                swap_err = swap_err.max((got - want).abs());
            }
        }
    }
    Verdict::new(
        norm_err <= 1e-6 && arpa_drift <= 1e-6 && swap_err <= 1e-9 && same_sequences,
        format!(
            "{tokens}-token corpus, {histories} seen histories: normalization error {norm_err:.1e} (<= 1e-6), \
             ARPA drift {arpa_drift:.1e} (<= 1e-6), LM swap error {swap_err:.1e} (<= 1e-9)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. RNN LM
// ---------------------------------------------------------------------------

fn rnn_correctness() -> Verdict {
    let config = RnnConfig {
        embed_dim: 4,
        hidden_dim: 5,
        init_scale: 0.5,
        ..RnnConfig::default()
    };
    let m = RnnLmModel::new(&["a", "b", "c", "d", "e"], config).unwrap();
    let data: Vec<Vec<&str>> = vec![
        vec!["a", "b", "c"],
        vec!["d", "a", "e", "e"],
        vec!["c", "zz", "b", "a", "d"],
    ];
    let (_, grad) = m.loss_and_gradient(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = Tensor::ALL[rng.random_range(0..Tensor::ALL.len())];
        let i = rng.random_range(0..m.params().tensor(t).len());
        let mut plus = m.clone();
        plus.params_mut().tensor_mut(t)[i] += eps;
        let mut minus = m.clone();
        minus.params_mut().tensor_mut(t)[i] -= eps;
        let numeric = (plus.loss(&data) - minus.loss(&data)) / (2.0 * eps);
        let analytic = grad.tensor(t)[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    let mut softmax_err: f64 = 0.0;
    for s in &data {
        for dist in m.step_distributions(s) {
            softmax_err = softmax_err.max((dist.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Verdict::new(
        worst < 1e-4 && softmax_err <= 1e-9,
        format!(
            "20 random parameters, worst gradient rel error {worst:.1e} (< 1e-4), softmax normalization error {softmax_err:.1e} (<= 1e-9)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5, 6. exemplar sweeps on the synthetic benchmark
// ---------------------------------------------------------------------------

struct Benchmark {
    world: World,
    config: ExperimentConfig,
}

fn fig1_sweep(bench: &Benchmark, exec: Exec) -> Vec<SweepRow> {
    let counts = SweepConfig {
        exemplar_counts: vec![0, 10],
        ..SweepConfig::default()
    };
    sweep(&bench.world, &bench.config, &counts, Figure::Fig1ExemplarCount, exec).unwrap()
}

fn mean(rows: &[SweepRow], x: f64, metric: &str) -> f64 {
    sweep_mean(rows, x, metric).unwrap_or_else(|| panic!("no {metric} rows at x={x}"))
}

fn exemplar_direction(bench: &Benchmark, rows: &[SweepRow]) -> Verdict {
    let planted = bench
        .world
        .inventory()
        .with_count_in(0, bench.config.thresholds.ur_max)
        .count();
    let (before, after) = (mean(rows, 0.0, "occurrence_ur"), mean(rows, 10.0, "occurrence_ur"));
    Verdict::new(
        after - before >= 20.0 && planted >= 30 && bench.config.num_seeds == 50,
        format!(
            "{planted} planted UR-NEs, {} seeds: mean occurrence {before:.2}% at 0 exemplars, {after:.2}% at 10 (gain {:.2} pp, >= 20)",
            bench.config.num_seeds,
            after - before
        ),
    )
}

fn bucket_direction(rows: &[SweepRow]) -> Verdict {
    let gain = |m: &str| mean(rows, 10.0, m) - mean(rows, 0.0, m);
    let (low, high) = (gain("occurrence_0_1"), gain("occurrence_2_9"));
    Verdict::new(
        low > high,
        format!("occurrence gain [0,1] = {low:.2} pp, [2,9] = {high:.2} pp (same 50 seeds)"),
    )
}

// ---------------------------------------------------------------------------
// 7. lattice boosting
// ---------------------------------------------------------------------------

fn boosting_direction(bench: &Benchmark) -> Verdict {
    let exec = Exec::default();
    let (world, config) = (&bench.world, &bench.config);
    let mut drops = Vec::new();
    for trial in 0..3 {
        let runs = run_systems(world, config, trial, &[SystemId::S4, SystemId::S5], exec).unwrap();
        drops.push((runs[0].report.ne_wer.all.percent(), runs[1].report.ne_wer.all.percent()));
    }

    let tc = config.for_trial(0);
    let augmented = world.augment(&tc.exemplar, &tc.thresholds, exec).unwrap().corpus;
    let decoded = world.decode(&augmented, &tc, exec).unwrap();
    let swap = train_ngram_with_vocab(
        &augmented,
        tc.rescore_order,
        Smoothing::WittenBell,
        world.lexicon.iter().map(String::as_str),
    )
    .unwrap();
    let keywords = KeywordAcceptor::new(
        world
            .inventory()
            .with_count_in(0, tc.thresholds.ur_max)
            .filter_map(|e| decoded.symbols.get(&e.surface)),
    );
    let mut boosted = 0;
    let mut violations = 0;
    for lat in &decoded.lattices {
        let lat = replace_lm_scores(lat, &decoded.symbols, &swap).unwrap();
        let free = lat.best_path(&tc.rescore.scales).unwrap();
        let (path, b) = ne_biased_best_path(&lat, &keywords, &tc.rescore.scales).unwrap();
        boosted += usize::from(b);
        if path.total_score > free.total_score {
            violations += 1;
        }
    }
    let strictly = drops.iter().all(|(s4, s5)| s5 < s4);
    let shown: Vec<String> = drops.iter().map(|(a, b)| format!("{a:.2}->{b:.2}")).collect();
    Verdict::new(
        strictly && violations == 0 && boosted > 0,
        format!(
            "NE-WER(ALL) S4->S5 over 3 trials: {}; score(boosted) > score(unconstrained) on {violations} of {} lattices ({boosted} boosted)",
            shown.join(", "),
            decoded.lattices.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. coupled vs decoupled systems
// ---------------------------------------------------------------------------

fn decoupling_harness(bench: &Benchmark) -> Verdict {
    use SystemId::*;
    let systems = [S2, S3, S4, S5, S9, S10, S11];
    let run = || run_systems(&bench.world, &bench.config, 0, &systems, Exec::default()).unwrap();
    let (first, second) = (run(), run());
    let reports: BTreeSet<String> = first.iter().map(|r| r.render_report()).collect();
    let headers: BTreeSet<String> = first
        .iter()
        .map(|r| r.render_report().lines().next().unwrap().to_string())
        .collect();
    let rerun_exact = first.iter().zip(&second).all(|(a, b)| {
        a.render_report() == b.render_report() && a.render_hypotheses() == b.render_hypotheses()
    });
    let shared_plans = [(S3, S9), (S4, S10), (S5, S11)]
        .iter()
        .all(|(a, b)| a.plan() == b.plan() && a.plan().to_string() == b.plan().to_string());
    Verdict::new(
        reports.len() == systems.len() && headers.len() == systems.len() && rerun_exact && shared_plans,
        format!(
            "{} distinct provenance headers and reports for S2-S5 and S9-S11; identical plans rerun byte-exact: {rerun_exact}",
            headers.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. determinism
// ---------------------------------------------------------------------------

fn csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, rows).unwrap();
    buf
}

fn determinism(bench: &Benchmark, fig1: &[SweepRow], started: Instant) -> Verdict {
    let render = |exec: Exec| -> String {
        run_systems(&bench.world, &bench.config, 1, &SystemId::ALL, exec)
            .unwrap()
            .iter()
            .map(|r| r.render_report() + &r.render_hypotheses())
            .collect()
    };
    let parallel = render(Exec::Parallel);
    let again = render(Exec::Parallel);
    let sequential = render(Exec::Sequential);
    let rebuilt = Benchmark {
        world: World::new(&bench.config, Exec::Sequential).unwrap(),
        config: bench.config.clone(),
    };
    let sweep_again = fig1_sweep(&rebuilt, Exec::Sequential);
    let grid_ok = parallel == again && parallel == sequential;
    let sweep_ok = csv(fig1) == csv(&sweep_again);
    let suite = started.elapsed();
    Verdict::new(
        grid_ok && sweep_ok && suite < Duration::from_secs(300),
        format!(
            "S1-S11 grid identical on rerun and sequentially: {grid_ok}; 50-seed sweep identical after rebuilding the benchmark: {sweep_ok}; \
             suite so far {suite:.1?} (< 5 min)"
        ),
    )
}

fn main() -> ExitCode {
    let mut h = Harness {
        started: Instant::now(),
        failures: 0,
    };
    let secs = Duration::from_secs;
    h.run(1, "enrichment exactness", secs(1), enrichment_exactness);
    h.run(2, "lattice oracle equivalence", secs(10), lattice_oracle_equivalence);
    h.run(3, "n-gram LM correctness", secs(10), ngram_correctness);
    h.run(4, "RNN LM correctness", secs(30), rnn_correctness);

    let config = ExperimentConfig::default();
    let bench = Benchmark {
        world: World::new(&config, Exec::default()).expect("synthetic benchmark builds"),
        config,
    };
    let mut fig1 = Vec::new();
    h.run(5, "exemplar count direction", secs(120), || {
        fig1 = fig1_sweep(&bench, Exec::default());
        exemplar_direction(&bench, &fig1)
    });
    h.run(6, "count bucket direction", secs(120), || bucket_direction(&fig1));
    h.run(7, "lattice boosting direction", secs(60), || boosting_direction(&bench));
    h.run(8, "coupled vs decoupled systems", secs(60), || decoupling_harness(&bench));
    let started = h.started;
    h.run(9, "determinism", secs(300), || determinism(&bench, &fig1, started));

    println!(
        "{} of 9 criteria passed in {:.1?}",
        9 - h.failures,
        h.started.elapsed()
    );
    if h.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
