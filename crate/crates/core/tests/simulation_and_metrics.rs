//! Synthetic decoder and scoring checked against brute-force references.

mod common;

use std::collections::{BTreeSet, HashMap};

use common::{all_paths, path_score, path_words};
use nebias::corpus::{Corpus, CountThresholds, NamedEntity, NeCategory, NeInventory, Utterance};
use nebias::lattice::Lattice;
use nebias::metrics::{align, evaluate, ne_wer, ur_ne_occurrence};
use nebias::ngram::{train_ngram, Smoothing};
use nebias::par::Exec;
use nebias::simdecode::{
    build_confusion_model, simulate_corpus, simulate_lattice, simulation_symbols, ConfusionParams,
    SimConfig,
};
use nebias::SymbolTable;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Top-down memoised Levenshtein distance over characters or tokens.
fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

const VOCAB: [&str; 14] = [
    "bedok", "bedak", "badok", "kallang", "kalang", "go", "to", "no", "two", "now", "tampines",
    "tampinas", "a", "ab",
];

#[test]
fn confusion_sets_match_all_pairs_edit_distances() {
    let params = ConfusionParams::default();
    let m = build_confusion_model(&VOCAB, 9, params, Exec::Parallel).unwrap();
    for a in VOCAB {
        let set = m.confusions(a);
        for w in set.windows(2) {
            assert!(w[0].1 >= w[1].1, "{a}: not sorted");
        }
        for b in VOCAB {
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            let ned = levenshtein(&ca, &cb) as f64 / ca.len().max(cb.len()) as f64;
            let s = m.score(a, b);
            if a == b {
                assert_eq!(s, Some(0.0));
                assert!(set.iter().all(|(w, _)| w != a));
            } else if ned <= params.max_distance {
                let s = s.unwrap_or_else(|| panic!("{a}/{b} should be confusable"));
                assert_eq!(Some(s), m.score(b, a), "asymmetric {a}/{b}");
                let hi = -params.sharpness * ned;
                assert!(s <= hi && s > hi - params.noise_scale, "{a}/{b}: {s}");
            } else {
                assert_eq!(s, None, "{a}/{b} too far apart");
            }
        }
    }
    let seq = build_confusion_model(&VOCAB, 9, params, Exec::Sequential).unwrap();
    assert_eq!(seq, m);
}

fn lm_setup() -> (nebias::ngram::NGramModel, nebias::simdecode::ConfusionModel) {
    let corpus = Corpus::from_utterances(
        [
            "go to bedok now",
            "go to kallang now",
            "go to tampines",
            "no go to bedok",
            "two to kallang",
        ]
        .iter()
        .enumerate()
        .map(|(i, s)| Utterance::from_text(format!("t{i}"), s))
        .collect(),
    )
    .unwrap();
    let lm = train_ngram(&corpus, 2, Smoothing::WittenBell).unwrap();
    let conf = build_confusion_model(&VOCAB, 4, ConfusionParams::default(), Exec::Sequential).unwrap();
    (lm, conf)
}

fn refs() -> Vec<Utterance> {
    ["go to bedak now", "no two kalang", "go to tampinas now", "bedok"]
        .iter()
        .enumerate()
        .map(|(i, s)| Utterance::from_text(format!("r{i}"), s))
        .collect()
}

type Scored = Vec<(Vec<String>, f64)>;

fn scored_paths(lat: &Lattice, syms: &SymbolTable, cfg: &SimConfig) -> Scored {
    let mut out: Scored = all_paths(lat)
        .iter()
        .map(|p| (syms.words(&path_words(lat, p)), path_score(lat, p, &cfg.scales)))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn unpruned_lattice_holds_every_candidate_sequence_with_exact_scores() {
    let (lm, conf) = lm_setup();
    let syms = simulation_symbols(&conf, &refs());
    let cfg = SimConfig {
        beam: f64::INFINITY,
        acoustic_noise: 0.0,
        max_arcs_per_slot: 3,
        ..SimConfig::default()
    };
    for r in refs() {
        let lat = simulate_lattice(&r.id, &r.tokens, &conf, &lm, &syms, &cfg).unwrap();
        let paths = scored_paths(&lat, &syms, &cfg);
        let expected: usize = r
            .tokens
            .iter()
            .map(|t| 1 + conf.confusions(t).len().min(cfg.max_arcs_per_slot - 1))
            .product();
        assert_eq!(paths.len(), expected, "{}", r.id);
        let distinct: BTreeSet<&Vec<String>> = paths.iter().map(|p| &p.0).collect();
        assert_eq!(distinct.len(), paths.len(), "each sequence appears once");
        for (words, score) in &paths {
            let acoustic: f64 = r
                .tokens
                .iter()
                .zip(words)
                .map(|(rt, w)| conf.score(rt, w).unwrap())
                .sum();
            let lm_part = std::f64::consts::LN_10 * lm.sentence_logprob(words);
            assert!((score - (acoustic + lm_part)).abs() < 1e-9, "{words:?}");
        }
    }
}

#[test]
fn beam_keeps_exactly_the_paths_within_the_beam_and_is_monotone() {
    let (lm, conf) = lm_setup();
    let syms = simulation_symbols(&conf, &refs());
    for seed in 0..20 {
        let base = SimConfig {
            beam: f64::INFINITY,
            seed,
            ..SimConfig::default()
        };
        for r in refs() {
            let full = simulate_lattice(&r.id, &r.tokens, &conf, &lm, &syms, &base).unwrap();
            let full_paths = scored_paths(&full, &syms, &base);
            let best = full_paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let mut previous: Option<BTreeSet<Vec<String>>> = None;
            for beam in [0.5, 1.0, 2.0, 4.0, 8.0] {
                let cfg = SimConfig { beam, ..base };
                let lat = simulate_lattice(&r.id, &r.tokens, &conf, &lm, &syms, &cfg).unwrap();
                let paths = scored_paths(&lat, &syms, &cfg);
                let kept: BTreeSet<Vec<String>> = paths.iter().map(|p| p.0.clone()).collect();
                for (w, s) in &full_paths {
                    if *s >= best - beam + 1e-9 {
                        assert!(kept.contains(w), "seed {seed} beam {beam}: lost {w:?}");
                    }
                }
                for (w, s) in &paths {
                    let orig = full_paths.iter().find(|p| &p.0 == w).expect("path from the full lattice");
                    assert!((orig.1 - s).abs() < 1e-9);
                }
                let top = lat.best_path(&cfg.scales).unwrap();
                assert!((top.total_score - best).abs() < 1e-9);
                if let Some(prev) = &previous {
                    assert!(prev.is_subset(&kept), "seed {seed} beam {beam} not monotone");
                }
                previous = Some(kept);
            }
        }
    }
}

#[test]
fn corpus_simulation_is_order_stable_and_seeded() {
    let (lm, conf) = lm_setup();
    let cfg = SimConfig::default();
    let (a, sa) = simulate_corpus(&refs(), &conf, &lm, &cfg, Exec::Parallel).unwrap();
    let (b, sb) = simulate_corpus(&refs(), &conf, &lm, &cfg, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let ids: Vec<&str> = a.iter().map(|l| l.utterance_id()).collect();
    assert_eq!(ids, ["r0", "r1", "r2", "r3"]);
    let other = SimConfig { seed: 1, ..cfg };
    let (c, _) = simulate_corpus(&refs(), &conf, &lm, &other, Exec::Parallel).unwrap();
    assert_ne!(a, c);
}

#[test]
fn alignment_cost_matches_levenshtein() {
    let words = ["a", "b", "c", "d"];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let r: Vec<&str> = (0..rng.random_range(0..8)).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let h: Vec<&str> = (0..rng.random_range(0..8)).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let a = align(&r, &h);
        assert_eq!(a.errors(), levenshtein(&r, &h), "{r:?} / {h:?}");
        assert_eq!(a.ref_len(), r.len());
        assert_eq!(a.hyp_len(), h.len());
        let refs: Vec<&str> = a.reference_ops().map(|x| x.0).collect();
        assert_eq!(refs, r);
        if !r.is_empty() {
            let expected = 100.0 * levenshtein(&r, &h) as f64 / r.len() as f64;
            assert!((a.wer() - expected).abs() < 1e-9);
        }
    }
}

fn ne(surface: &str, train_count: u64) -> NamedEntity {
    NamedEntity {
        surface: surface.into(),
        category: NeCategory::Location,
        train_count,
    }
}

#[test]
fn ne_wer_counts_substituted_reference_entities() {
    let inv = NeInventory::new(vec![
        ne("absent1", 0),
        ne("absent2", 0),
        ne("rare1", 1),
        ne("rare2", 5),
        ne("rich", 20),
    ])
    .unwrap();
    let pool = ["absent1", "absent2", "rare1", "rare2", "rich", "go", "to", "the"];
    let t = CountThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let mut alignments = Vec::new();
        let (mut rare, mut absent) = ((0u64, 0u64), (0u64, 0u64));
        for _ in 0..rng.random_range(1..5) {
            let r: Vec<String> = (0..rng.random_range(1..9))
                .map(|_| pool.choose(&mut rng).unwrap().to_string())
                .collect();
            let mut h = r.clone();
            for (k, tok) in h.iter_mut().enumerate() {
                let wrong = rng.random_bool(0.3);
                if wrong {
                    *tok = format!("fresh{k}");
                }
                if let Some(e) = inv.get(&r[k]) {
                    let b = match e.train_count {
                        0 => &mut absent,
                        1..=9 => &mut rare,
                        _ => continue,
                    };
                    b.1 += 1;
                    b.0 += u64::from(wrong);
                }
            }
            alignments.push(align(&r, &h));
        }
        let got = ne_wer(&alignments, &inv, &t);
        assert_eq!((got.rare.numerator, got.rare.denominator), rare);
        assert_eq!((got.absent.numerator, got.absent.denominator), absent);
        assert_eq!(got.all.numerator, rare.0 + absent.0);
        assert_eq!(got.all.denominator, rare.1 + absent.1);
    }
}

#[test]
fn occurrence_and_evaluation_match_direct_counts() {
    let (lm, conf) = lm_setup();
    let references = refs();
    let cfg = SimConfig::default();
    let (lats, syms) = simulate_corpus(&references, &conf, &lm, &cfg, Exec::Parallel).unwrap();
    let inv = NeInventory::new(vec![
        ne("bedak", 0),
        ne("kalang", 1),
        ne("tampinas", 4),
        ne("bedok", 12),
    ])
    .unwrap();
    for (lo, hi) in [(0, 0), (0, 1), (0, 9), (2, 9), (10, 20)] {
        let (mut hits, mut total) = (0, 0);
        for (r, l) in references.iter().zip(&lats) {
            let words: BTreeSet<String> = l.arcs().iter().map(|a| syms.word(a.word).to_string()).collect();
            for tok in &r.tokens {
                if let Some(e) = inv.get(tok) {
                    if (lo..=hi).contains(&e.train_count) {
                        total += 1;
                        hits += u64::from(words.contains(tok));
                    }
                }
            }
        }
        let got = ur_ne_occurrence(&lats, &syms, &references, &inv, (lo, hi)).unwrap();
        assert_eq!((got.numerator, got.denominator), (hits, total), "[{lo}, {hi}]");
    }

    let hyps: HashMap<String, Vec<String>> =
        references.iter().map(|r| (r.id.clone(), r.tokens.clone())).collect();
    let t = CountThresholds::default();
    let rep = evaluate("oracle", &references, &hyps, Some((&lats, &syms)), &inv, &t).unwrap();
    assert_eq!(rep.wer.numerator, 0);
    assert_eq!(rep.ne_wer.all.numerator, 0);
    assert_eq!(rep.ne_wer.all.denominator, 3);
    let mut partial = hyps.clone();
    partial.remove("r1");
    assert!(evaluate("x", &references, &partial, None, &inv, &t).is_err());
}
