#![allow(dead_code)]

use nebias::corpus::{Corpus, Utterance};
use nebias::{Lattice, ScaleConfig, SymbolTable, WordId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];

pub fn symbols() -> SymbolTable {
    let mut s = SymbolTable::new();
    for w in WORDS {
        s.intern(w);
    }
    s
}

/// Random acyclic lattice with `2..=max_nodes` nodes. Arcs only go forward
/// in node order; the start node is never final.
pub fn random_lattice(seed: u64, max_nodes: usize) -> Lattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let mut lat = Lattice::new(format!("rand-{seed}"), n).unwrap();
    let density = rng.random_range(0.2..0.6);
    for u in 0..n {
        for v in (u + 1)..n {
            // consecutive nodes are always linked so most nodes are reachable
            if v == u + 1 || rng.random_bool(density) {
                let copies = if rng.random_bool(0.2) { 2 } else { 1 };
                for _ in 0..copies {
                    let w = WordId(rng.random_range(0..WORDS.len() as u32));
                    let ac = -rng.random_range(0.0..5.0);
                    let lm = -rng.random_range(0.0..3.0);
                    lat.add_arc(u, v, w, ac, lm).unwrap();
                }
            }
        }
    }
    lat.set_final(n - 1).unwrap();
    for v in 1..n - 1 {
        if rng.random_bool(0.15) {
            lat.set_final(v).unwrap();
        }
    }
    lat
}

/// One complete path as arc indices.
pub type ArcPath = Vec<usize>;

/// Every start-to-final path, by depth-first enumeration.
pub fn all_paths(lat: &Lattice) -> Vec<ArcPath> {
    fn walk(lat: &Lattice, node: usize, prefix: &mut Vec<usize>, out: &mut Vec<ArcPath>) {
        if lat.is_final(node) {
            out.push(prefix.clone());
        }
        for (i, a) in lat.arcs().iter().enumerate() {
            if a.from == node {
                prefix.push(i);
                walk(lat, a.to, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(lat, lat.start(), &mut Vec::new(), &mut out);
    out
}

pub fn path_score(lat: &Lattice, path: &[usize], scales: &ScaleConfig) -> f64 {
    path.iter()
        .map(|&i| {
            let a = &lat.arcs()[i];
            scales.acoustic_scale * a.acoustic + scales.lm_scale * a.lm
        })
        .sum()
}

pub fn path_words(lat: &Lattice, path: &[usize]) -> Vec<WordId> {
    path.iter().map(|&i| lat.arcs()[i].word).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// About 1000 tokens from a 20-word Markov source.
pub fn markov_corpus(seed: u64) -> Corpus {
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utts = Vec::new();
    let mut tokens = 0;
    while tokens < 1000 {
        let len = rng.random_range(2..10);
        let mut prev = rng.random_range(0..words.len());
        let mut s = Vec::with_capacity(len);
        for _ in 0..len {
            let next = if rng.random_bool(0.6) {
                (prev * 7 + 3) % words.len()
            } else {
                rng.random_range(0..words.len() / 2)
            };
            s.push(words[next].clone());
            prev = next;
        }
        tokens += s.len();
        utts.push(Utterance::new(format!("m{}", utts.len()), s));
    }
    Corpus::from_utterances(utts).unwrap()
}
