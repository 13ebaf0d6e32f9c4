//! Synthetic benchmark: a training corpus, a test set and an NE inventory
//! with planted under-represented NEs.
//!
//! Every category owns a handful of richly represented NEs. Each planted
//! UR-NE is a one-letter mutation of one of them, so the first-pass decoder
//! always has a frequent, acoustically close competitor for it. UR-NEs appear
//! in training exactly `count` times and every one of them appears in the
//! test set.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, NamedEntity, NeCategory, NeInventory, Utterance};
use crate::seed::rng_for;
use crate::simdecode::normalized_edit_distance;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Carrier sentences per category; `@` marks the NE slot.
fn templates(category: NeCategory) -> &'static [&'static str] {
    match category {
        NeCategory::Location => &[
            "take me to @ please",
            "how far is @ from here",
            "i live near @",
            "is there a bus to @",
            "we drove to @ yesterday",
        ],
        NeCategory::Person => &[
            "please call @ now",
            "send a message to @",
            "i met @ yesterday",
            "where is @ today",
            "tell @ to wait for me",
        ],
        NeCategory::Organization => &[
            "i work at @",
            "the office of @ is closed",
            "@ is hiring new staff",
            "my friend joined @ last year",
            "call the help desk of @",
        ],
        NeCategory::Country => &[
            "i flew to @ last year",
            "the people of @ are friendly",
            "is it cold in @ now",
            "we export fruit to @",
            "my aunt lives in @",
        ],
        NeCategory::Company => &[
            "buy shares of @",
            "@ released a new phone",
            "i ordered it from @",
            "the price at @ is good",
            "call the help desk of @",
        ],
        NeCategory::City => &[
            "the train to @ is late",
            "book a hotel in @",
            "the weather in @ is good",
            "we stayed in @ for a week",
            "how far is @ from here by car",
        ],
    }
}

const FILLER: &[&str] = &[
    "good morning how are you",
    "what time is it now",
    "please turn on the light",
    "i am very tired today",
    "the weather is very good today",
    "can you help me please",
    "i will be late for dinner",
    "we need to buy some milk",
    "the meeting starts at nine",
    "call me when you are free",
    "is it going to rain today",
    "i left my phone at home",
    "the bus is late again",
    "turn off the music please",
    "what is the plan for today",
    "how much is this one",
    "i want to go home now",
    "the food here is very good",
    "my friend is waiting for me",
    "let me know when you are here",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Seed of the generated world (names, counts, sentences).
    pub seed: u64,
    pub rr_per_category: usize,
    /// Training count range of richly represented NEs.
    pub rr_min_count: u64,
    pub rr_max_count: u64,
    /// UR-NEs with count 0 or 1 per category (counts alternate).
    pub ur_low_per_category: usize,
    /// UR-NEs with count in `[2, 9]` per category.
    pub ur_mid_per_category: usize,
    pub filler_utterances: usize,
    /// Test utterances per UR-NE.
    pub test_per_ur_ne: usize,
    /// Test utterances per RR-NE.
    pub test_per_rr_ne: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            rr_per_category: 6,
            rr_min_count: 12,
            rr_max_count: 30,
            ur_low_per_category: 6,
            ur_mid_per_category: 3,
            filler_utterances: 300,
            test_per_ur_ne: 2,
            test_per_rr_ne: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub train: Corpus,
    pub test: Corpus,
    pub inventory: NeInventory,
    /// `(ur_ne, competitor)` pairs: the RR-NE each UR-NE was derived from.
    pub competitors: Vec<(String, String)>,
}

fn random_name<R: Rng>(rng: &mut R, syllables: usize) -> String {
    let mut s = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        s.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        s.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    s
}

/// Replaces one vowel of `base` with a different vowel.
fn mutate<R: Rng>(rng: &mut R, base: &str) -> String {
    let mut bytes = base.as_bytes().to_vec();
    let positions: Vec<usize> = (0..bytes.len())
        .filter(|&i| VOWELS.contains(&bytes[i]))
        .collect();
    let pos = *positions.choose(rng).expect("names contain vowels");
    let others: Vec<u8> = VOWELS.iter().copied().filter(|&v| v != bytes[pos]).collect();
    bytes[pos] = *others.choose(rng).expect("several vowels");
    String::from_utf8(bytes).expect("ascii")
}

fn fill(template: &str, ne: &str) -> Vec<String> {
    template
        .split_whitespace()
        .map(|t| if t == "@" { ne.to_string() } else { t.to_string() })
        .collect()
}

/// Generates the benchmark deterministically from `config.seed`.
pub fn generate(config: &SynthConfig) -> SyntheticBenchmark {
    let mut rng = rng_for(config.seed, "synth-world");
    let mut taken: BTreeSet<String> = FILLER
        .iter()
        .chain(NeCategory::ALL.iter().flat_map(|&c| templates(c).iter()))
        .flat_map(|s| s.split_whitespace())
        .filter(|w| *w != "@")
        .map(String::from)
        .collect();
    let far_from_all = |name: &str, taken: &BTreeSet<String>| {
        taken
            .iter()
            .all(|t| normalized_edit_distance(name, t) > 0.5)
    };

    let mut entities: Vec<NamedEntity> = Vec::new();
    let mut competitors = Vec::new();
    let mut train: Vec<Utterance> = Vec::new();
    let mut test: Vec<Utterance> = Vec::new();
    let mut train_n = 0usize;
    let mut test_n = 0usize;
    let push = |set: &mut Vec<Utterance>, n: &mut usize, prefix: &str, toks: Vec<String>| {
        *n += 1;
        set.push(Utterance::new(format!("{prefix}-{:05}", *n), toks));
    };

    for &category in &NeCategory::ALL {
        let tpl = templates(category);
        let mut bases = Vec::with_capacity(config.rr_per_category);
        while bases.len() < config.rr_per_category {
            let name = random_name(&mut rng, 3);
            if far_from_all(&name, &taken) {
                taken.insert(name.clone());
                bases.push(name);
            }
        }
        for base in &bases {
            let count = rng.random_range(config.rr_min_count..=config.rr_max_count);
            for _ in 0..count {
                let t = tpl.choose(&mut rng).expect("templates");
                push(&mut train, &mut train_n, "train", fill(t, base));
            }
            for _ in 0..config.test_per_rr_ne {
                let t = tpl.choose(&mut rng).expect("templates");
                push(&mut test, &mut test_n, "test", fill(t, base));
            }
            entities.push(NamedEntity {
                surface: base.clone(),
                category,
                train_count: count,
            });
        }
        let planted = config.ur_low_per_category + config.ur_mid_per_category;
        for k in 0..planted {
            let base = &bases[k % bases.len()];
            let name = loop {
                let m = mutate(&mut rng, base);
                if !taken.contains(&m) {
                    break m;
                }
            };
            taken.insert(name.clone());
            let count = if k < config.ur_low_per_category {
                (k % 2) as u64
            } else {
                rng.random_range(2..=9)
            };
            for _ in 0..count {
                let t = tpl.choose(&mut rng).expect("templates");
                push(&mut train, &mut train_n, "train", fill(t, &name));
            }
            let mut order: Vec<&str> = tpl.to_vec();
            order.sort_by_cached_key(|_| rng.random::<u32>());
            for t in order.iter().cycle().take(config.test_per_ur_ne) {
                push(&mut test, &mut test_n, "test", fill(t, &name));
            }
            competitors.push((name.clone(), base.clone()));
            entities.push(NamedEntity {
                surface: name,
                category,
                train_count: count,
            });
        }
    }
    for _ in 0..config.filler_utterances {
        let s = FILLER.choose(&mut rng).expect("filler");
        push(
            &mut train,
            &mut train_n,
            "train",
            s.split_whitespace().map(String::from).collect(),
        );
    }
    // interleave categories so that corpus order carries no structure
    let mut keyed: Vec<(u64, Utterance)> = train.into_iter().map(|u| (rng.random(), u)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let train: Vec<Utterance> = keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, u))| Utterance::new(format!("train-{:05}", i + 1), u.tokens))
        .collect();

    entities.sort_by(|a, b| a.surface.cmp(&b.surface));
    competitors.sort();
    SyntheticBenchmark {
        train: Corpus::from_utterances(train).expect("generated ids are unique"),
        test: Corpus::from_utterances(test).expect("generated ids are unique"),
        inventory: NeInventory::new(entities).expect("generated names are unique"),
        competitors,
    }
}
