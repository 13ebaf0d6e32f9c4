//! Exemplar utterances for under-represented NEs.
//!
//! A pool of training utterances is collected around randomly chosen richly
//! represented NEs. Each eligible UR-NE then receives copies of same-category
//! pool utterances with the RR-NE token replaced by the UR-NE, and those
//! copies are appended to the LM training corpus.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    Corpus, CorpusError, CountThresholds, NamedEntity, NeCategory, NeInventory, NeUtteranceIndex,
    Utterance,
};
use crate::par::{self, Exec};
use crate::seed::rng_for;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExemplarError {
    #[error("no richly represented NE has an indexed utterance")]
    NoRrNes,
    #[error("`{surface}` has count {count} above the boosting limit {limit}")]
    NotEligible {
        surface: String,
        count: u64,
        limit: u64,
    },
    #[error("invalid exemplar config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, ExemplarError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExemplarConfig {
    pub num_rr_nes: usize,
    pub utts_per_rr_ne: usize,
    pub exemplars_per_ur_ne: usize,
    /// UR-NEs with a training count up to this value are boosted.
    pub ur_boost_max_count: u64,
    pub rng_seed: u64,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            num_rr_nes: 20,
            utts_per_rr_ne: 30,
            exemplars_per_ur_ne: 10,
            ur_boost_max_count: 1,
            rng_seed: 0,
        }
    }
}

impl ExemplarConfig {
    /// `exemplars_per_ur_ne = 0` is allowed and turns augmentation into a no-op.
    pub fn validate(&self) -> Result<()> {
        if self.num_rr_nes == 0 || self.utts_per_rr_ne == 0 {
            return Err(ExemplarError::InvalidConfig(
                "num_rr_nes and utts_per_rr_ne must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub source_id: String,
    pub tokens: Vec<String>,
    /// Index of the RR-NE token inside `tokens`.
    pub position: usize,
    pub rr_ne: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExemplarPool {
    pub by_category: BTreeMap<NeCategory, Vec<PoolEntry>>,
    /// Selected RR-NEs and how many source utterances each contributed.
    pub provenance: Vec<(String, usize)>,
}

impl ExemplarPool {
    pub fn len(&self) -> usize {
        self.by_category.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self, category: NeCategory) -> &[PoolEntry] {
        self.by_category
            .get(&category)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Selects `num_rr_nes` RR-NEs uniformly at random, then up to
/// `utts_per_rr_ne` of each one's indexed utterances. Every occurrence of the
/// RR-NE inside a selected utterance becomes one pool entry.
pub fn build_pool(
    corpus: &Corpus,
    inventory: &NeInventory,
    index: &NeUtteranceIndex,
    thresholds: &CountThresholds,
    config: &ExemplarConfig,
) -> Result<ExemplarPool> {
    config.validate()?;
    let mut candidates: Vec<&NamedEntity> = inventory
        .rich(thresholds)
        .filter(|e| !index.utterances_of(&e.surface).is_empty())
        .collect();
    if candidates.is_empty() {
        return Err(ExemplarError::NoRrNes);
    }
    candidates.sort_by(|a, b| a.surface.cmp(&b.surface));
    let mut rng = rng_for(config.rng_seed, "exemplar-pool");
    let take = config.num_rr_nes.min(candidates.len());
    let chosen = index::sample(&mut rng, candidates.len(), take);

    let mut pool = ExemplarPool::default();
    for ci in chosen.iter() {
        let ne = candidates[ci];
        let utts = index.utterances_of(&ne.surface);
        let k = config.utts_per_rr_ne.min(utts.len());
        let picked = index::sample(&mut rng, utts.len(), k);
        let entries = pool.by_category.entry(ne.category).or_default();
        for ui in picked.iter() {
            let Some(u) = corpus.get(&utts[ui]) else {
                continue;
            };
            for (pos, tok) in u.tokens.iter().enumerate() {
                if *tok == ne.surface {
                    entries.push(PoolEntry {
                        source_id: u.id.clone(),
                        tokens: u.tokens.clone(),
                        position: pos,
                        rr_ne: ne.surface.clone(),
                    });
                }
            }
        }
        pool.provenance.push((ne.surface.clone(), k));
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub ur_ne: String,
    pub tokens: Vec<String>,
    pub source_id: String,
    pub rr_ne: String,
    pub position: usize,
}

/// Samples up to `exemplars_per_ur_ne` same-category pool entries without
/// replacement and substitutes the UR-NE at the recorded position. Returns an
/// empty list (with a warning) when the category has no pool entries.
pub fn generate_exemplars(
    ur_ne: &NamedEntity,
    pool: &ExemplarPool,
    config: &ExemplarConfig,
) -> Result<Vec<Exemplar>> {
    if ur_ne.train_count > config.ur_boost_max_count {
        return Err(ExemplarError::NotEligible {
            surface: ur_ne.surface.clone(),
            count: ur_ne.train_count,
            limit: config.ur_boost_max_count,
        });
    }
    let entries = pool.entries(ur_ne.category);
    if entries.is_empty() {
        warn!(
            "no {} entries in the exemplar pool; `{}` gets no exemplars",
            ur_ne.category, ur_ne.surface
        );
        return Ok(Vec::new());
    }
    let mut rng = rng_for(config.rng_seed, &format!("exemplar:{}", ur_ne.surface));
    let k = config.exemplars_per_ur_ne.min(entries.len());
    Ok(index::sample(&mut rng, entries.len(), k)
        .iter()
        .map(|i| {
            let e = &entries[i];
            let mut tokens = e.tokens.clone();
            tokens[e.position] = ur_ne.surface.clone();
            Exemplar {
                ur_ne: ur_ne.surface.clone(),
                tokens,
                source_id: e.source_id.clone(),
                rr_ne: e.rr_ne.clone(),
                position: e.position,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarRecord {
    pub exemplar_id: String,
    pub ur_ne: String,
    pub source_id: String,
    pub rr_ne: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCorpus {
    pub corpus: Corpus,
    pub records: Vec<ExemplarRecord>,
}

/// Appends exemplars for every inventory NE with count `<= ur_boost_max_count`
/// under ids `exemplar-<ne>-<k>` (k from 1).
pub fn augment_corpus(
    corpus: &Corpus,
    inventory: &NeInventory,
    pool: &ExemplarPool,
    config: &ExemplarConfig,
) -> Result<AugmentedCorpus> {
    augment_corpus_with(corpus, inventory, pool, config, Exec::default())
}

pub fn augment_corpus_with(
    corpus: &Corpus,
    inventory: &NeInventory,
    pool: &ExemplarPool,
    config: &ExemplarConfig,
    exec: Exec,
) -> Result<AugmentedCorpus> {
    let targets: Vec<&NamedEntity> = inventory
        .with_count_in(0, config.ur_boost_max_count)
        .collect();
    let generated = par::try_map(exec, &targets, |ne| generate_exemplars(ne, pool, config))?;
    let mut extra = Vec::new();
    let mut records = Vec::new();
    for (ne, exemplars) in targets.iter().zip(generated) {
        for (k, ex) in exemplars.into_iter().enumerate() {
            let id = format!("exemplar-{}-{}", ne.surface, k + 1);
            records.push(ExemplarRecord {
                exemplar_id: id.clone(),
                ur_ne: ex.ur_ne,
                source_id: ex.source_id,
                rr_ne: ex.rr_ne,
            });
            extra.push(Utterance::new(id, ex.tokens));
        }
    }
    Ok(AugmentedCorpus {
        corpus: corpus.extended(extra)?,
        records,
    })
}

/// Provenance sidecar: `exemplar_id  ur_ne  source_id  rr_ne`.
pub fn write_provenance<W: Write>(mut w: W, records: &[ExemplarRecord]) -> std::io::Result<()> {
    writeln!(w, "exemplar_id\tur_ne\tsource_id\trr_ne")?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.exemplar_id, r.ur_ne, r.source_id, r.rr_ne
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_index, load_corpus, load_ne_inventory};

    fn setup(corpus_text: &str, inv_text: &str) -> (Corpus, NeInventory, NeUtteranceIndex) {
        let c = load_corpus(corpus_text.as_bytes()).unwrap();
        let inv = load_ne_inventory(inv_text.as_bytes(), &c).unwrap();
        let idx = build_index(&c, &inv, &CountThresholds::default());
        (c, inv, idx)
    }

    fn repeated(ne: &str, n: usize, template: &str) -> String {
        (0..n)
            .map(|i| format!("{ne}{i}\t{}\n", template.replace("{}", ne)))
            .collect()
    }

    #[test]
    fn sentence_substitution_example() {
        let text = repeated(
            "kallang",
            10,
            "please look for makaila when you reach {} wave mall",
        );
        let (c, inv, idx) = setup(&text, "kallang\tlocation\nsimei\tlocation\n");
        let cfg = ExemplarConfig::default();
        let pool = build_pool(&c, &inv, &idx, &CountThresholds::default(), &cfg).unwrap();
        assert_eq!(pool.len(), 10);
        let ex = generate_exemplars(inv.get("simei").unwrap(), &pool, &cfg).unwrap();
        assert_eq!(ex.len(), 10);
        assert_eq!(
            ex[0].tokens.join(" "),
            "please look for makaila when you reach simei wave mall"
        );
    }

    #[test]
    fn fewer_utterances_than_requested() {
        let mut text = repeated("kallang", 10, "at {} now");
        // only 4 distinct utterances contain bedok, but it still needs 10 counts
        text.push_str("b1\tbedok bedok bedok bedok bedok\nb2\tbedok x\nb3\tbedok bedok y\nb4\tz bedok bedok\n");
        let (c, inv, idx) = setup(&text, "kallang\tlocation\nbedok\tlocation\n");
        let cfg = ExemplarConfig {
            num_rr_nes: 2,
            utts_per_rr_ne: 30,
            ..Default::default()
        };
        let pool = build_pool(&c, &inv, &idx, &CountThresholds::default(), &cfg).unwrap();
        let bedok = pool.provenance.iter().find(|(n, _)| n == "bedok").unwrap();
        assert_eq!(bedok.1, 4);
        // one entry per occurrence
        assert_eq!(
            pool.entries(NeCategory::Location)
                .iter()
                .filter(|e| e.rr_ne == "bedok")
                .count(),
            10
        );
    }

    #[test]
    fn pool_is_seed_deterministic() {
        let text: String = (0..5)
            .map(|k| repeated(&format!("ne{k}"), 12, "go to {} please"))
            .collect();
        let inv: String = (0..5).map(|k| format!("ne{k}\tlocation\n")).collect();
        let (c, inv, idx) = setup(&text, &inv);
        let cfg = ExemplarConfig {
            num_rr_nes: 3,
            utts_per_rr_ne: 5,
            ..Default::default()
        };
        let t = CountThresholds::default();
        let a = build_pool(&c, &inv, &idx, &t, &cfg).unwrap();
        let b = build_pool(&c, &inv, &idx, &t, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
    }

    #[test]
    fn no_rich_entities() {
        let (c, inv, idx) = setup("u\tgo to simei\n", "simei\tlocation\n");
        assert_eq!(
            build_pool(&c, &inv, &idx, &CountThresholds::default(), &ExemplarConfig::default()),
            Err(ExemplarError::NoRrNes)
        );
    }

    #[test]
    fn category_mismatch_and_exhaustion() {
        let mut text = repeated("kallang", 10, "at {} now");
        text.push_str("p\tmakaila\n");
        let (c, inv, idx) = setup(&text, "kallang\tlocation\nmakaila\tperson\nsimei\tlocation\n");
        let cfg = ExemplarConfig {
            utts_per_rr_ne: 3,
            ..Default::default()
        };
        let pool = build_pool(&c, &inv, &idx, &CountThresholds::default(), &cfg).unwrap();
        assert!(generate_exemplars(inv.get("makaila").unwrap(), &pool, &cfg)
            .unwrap()
            .is_empty());
        assert_eq!(
            generate_exemplars(inv.get("simei").unwrap(), &pool, &cfg)
                .unwrap()
                .len(),
            3
        );
        let rich = inv.get("kallang").unwrap();
        assert!(matches!(
            generate_exemplars(rich, &pool, &cfg),
            Err(ExemplarError::NotEligible { .. })
        ));
    }

    #[test]
    fn augmentation_grows_corpus() {
        let text = repeated("kallang", 12, "we meet at {} tonight");
        let (c, inv, idx) = setup(
            &text,
            "kallang\tlocation\nsimei\tlocation\nbedok\tlocation\n",
        );
        let cfg = ExemplarConfig::default();
        let pool = build_pool(&c, &inv, &idx, &CountThresholds::default(), &cfg).unwrap();
        let aug = augment_corpus(&c, &inv, &pool, &cfg).unwrap();
        assert_eq!(aug.corpus.len(), c.len() + 20);
        assert_eq!(aug.corpus.count("simei"), 10);
        assert!(aug.corpus.get("exemplar-bedok-10").is_some());
        let none = ExemplarConfig {
            ur_boost_max_count: 0,
            exemplars_per_ur_ne: 0,
            ..cfg
        };
        assert_eq!(augment_corpus(&c, &inv, &pool, &none).unwrap().corpus, c);
    }
}
