//! Training transcripts, the named-entity inventory, count classes and the
//! NE-to-utterance hash index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate utterance id `{id}`")]
    DuplicateUtteranceId { line: usize, id: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: unknown category `{category}`")]
    UnknownCategory { line: usize, category: String },
    #[error("line {line}: named entity `{surface}` listed twice")]
    DuplicateEntity { line: usize, surface: String },
    #[error("invalid thresholds: ur_max={ur_max}, rr_min={rr_min} (need ur_max + 1 = rr_min)")]
    InvalidThresholds { ur_max: u64, rr_min: u64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            id: id.into(),
            tokens,
        }
    }

    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Self::new(id, text.split_whitespace().map(str::to_string).collect())
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Utterances plus token counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    by_id: HashMap<String, usize>,
    counts: BTreeMap<String, u64>,
    total_tokens: u64,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and malformed tokens.
    /// `line` numbers in errors are 1-based positions in `utterances`.
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, u) in utterances.into_iter().enumerate() {
            corpus.push(u, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, u: Utterance, line: usize) -> Result<()> {
        if u.id.is_empty() || u.id.chars().any(char::is_whitespace) {
            return Err(CorpusError::Parse {
                line,
                message: format!("bad utterance id `{}`", u.id),
            });
        }
        if let Some(t) = u
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(CorpusError::Parse {
                line,
                message: format!("bad token `{t}`"),
            });
        }
        if self.by_id.contains_key(&u.id) {
            return Err(CorpusError::DuplicateUtteranceId { line, id: u.id });
        }
        for t in &u.tokens {
            *self.counts.entry(t.clone()).or_insert(0) += 1;
        }
        self.total_tokens += u.tokens.len() as u64;
        self.by_id.insert(u.id.clone(), self.utterances.len());
        self.utterances.push(u);
        Ok(())
    }

    /// Returns a copy with `extra` appended.
    pub fn extended(&self, extra: Vec<Utterance>) -> Result<Corpus> {
        let mut out = self.clone();
        let base = self.utterances.len();
        for (i, u) in extra.into_iter().enumerate() {
            out.push(u, base + i + 1)?;
        }
        Ok(out)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.by_id.get(id).map(|&i| &self.utterances[i])
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for u in &self.utterances {
            writeln!(w, "{}\t{}", u.id, u.text())?;
        }
        Ok(())
    }
}

/// Reads `<id>\t<token token ...>` lines. Without a tab the whole line is the
/// token sequence and the id is `auto-<line>`. Blank lines and lines starting
/// with `#` are skipped.
pub fn load_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, text) = match line.split_once('\t') {
            Some((id, text)) if !id.trim().is_empty() => (id.trim().to_string(), text),
            Some((_, text)) => (format!("auto-{lineno}"), text),
            None => (format!("auto-{lineno}"), line.as_str()),
        };
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("utterance `{id}` has no tokens"),
            });
        }
        corpus.push(Utterance { id, tokens }, lineno)?;
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeCategory {
    Location,
    Person,
    Country,
    Company,
    Organization,
    City,
}

impl NeCategory {
    pub const ALL: [NeCategory; 6] = [
        NeCategory::Location,
        NeCategory::Person,
        NeCategory::Country,
        NeCategory::Company,
        NeCategory::Organization,
        NeCategory::City,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NeCategory::Location => "location",
            NeCategory::Person => "person",
            NeCategory::Country => "country",
            NeCategory::Company => "company",
            NeCategory::Organization => "organization",
            NeCategory::City => "city",
        }
    }
}

impl fmt::Display for NeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        NeCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| s.to_string())
    }
}

/// A single-token named entity. Multi-word names are joined with `_`
/// upstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedEntity {
    pub surface: String,
    pub category: NeCategory,
    pub train_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CountClass {
    Absent,
    Rare,
    RichlyRepresented,
}

/// Count boundaries: Absent = 0, Rare = 1..=ur_max, RR = rr_min.. .
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountThresholds {
    pub ur_max: u64,
    pub rr_min: u64,
}

impl Default for CountThresholds {
    fn default() -> Self {
        Self {
            ur_max: 9,
            rr_min: 10,
        }
    }
}

impl CountThresholds {
    pub fn new(ur_max: u64, rr_min: u64) -> Result<Self> {
        let t = Self { ur_max, rr_min };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ur_max.checked_add(1) != Some(self.rr_min) {
            return Err(CorpusError::InvalidThresholds {
                ur_max: self.ur_max,
                rr_min: self.rr_min,
            });
        }
        Ok(())
    }

    pub fn class_of(&self, count: u64) -> CountClass {
        if count == 0 {
            CountClass::Absent
        } else if count <= self.ur_max {
            CountClass::Rare
        } else {
            CountClass::RichlyRepresented
        }
    }

    pub fn is_under_represented(&self, count: u64) -> bool {
        count <= self.ur_max
    }
}

pub fn classify(ne: &NamedEntity, thresholds: &CountThresholds) -> Result<CountClass> {
    thresholds.validate()?;
    Ok(thresholds.class_of(ne.train_count))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeInventory {
    entities: Vec<NamedEntity>,
    by_surface: HashMap<String, usize>,
}

impl NeInventory {
    pub fn new(entities: Vec<NamedEntity>) -> Result<Self> {
        let mut by_surface = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            if by_surface.insert(e.surface.clone(), i).is_some() {
                return Err(CorpusError::DuplicateEntity {
                    line: i + 1,
                    surface: e.surface.clone(),
                });
            }
        }
        Ok(Self {
            entities,
            by_surface,
        })
    }

    pub fn entities(&self) -> &[NamedEntity] {
        &self.entities
    }

    pub fn get(&self, surface: &str) -> Option<&NamedEntity> {
        self.by_surface.get(surface).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.by_surface.contains_key(surface)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities whose training count lies in `lo..=hi`, in inventory order.
    pub fn with_count_in(&self, lo: u64, hi: u64) -> impl Iterator<Item = &NamedEntity> {
        self.entities
            .iter()
            .filter(move |e| e.train_count >= lo && e.train_count <= hi)
    }

    pub fn rich(&self, thresholds: &CountThresholds) -> impl Iterator<Item = &NamedEntity> {
        let t = *thresholds;
        self.entities
            .iter()
            .filter(move |e| t.class_of(e.train_count) == CountClass::RichlyRepresented)
    }

    /// Same entities with counts taken from `corpus`.
    pub fn recounted(&self, corpus: &Corpus) -> NeInventory {
        let entities = self
            .entities
            .iter()
            .map(|e| NamedEntity {
                train_count: corpus.count(&e.surface),
                ..e.clone()
            })
            .collect();
        NeInventory {
            entities,
            by_surface: self.by_surface.clone(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.entities {
            writeln!(w, "{}\t{}", e.surface, e.category)?;
        }
        Ok(())
    }
}

/// Reads `surface\tcategory` lines and fills counts from `corpus`.
pub fn load_ne_inventory<R: BufRead>(reader: R, corpus: &Corpus) -> Result<NeInventory> {
    let mut entities = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[0].contains(' ') {
            return Err(CorpusError::Parse {
                line: lineno,
                message: "expected `surface<TAB>category`".into(),
            });
        }
        let category = fields[1]
            .parse::<NeCategory>()
            .map_err(|category| CorpusError::UnknownCategory {
                line: lineno,
                category,
            })?;
        if !seen.insert(fields[0].to_string()) {
            return Err(CorpusError::DuplicateEntity {
                line: lineno,
                surface: fields[0].to_string(),
            });
        }
        entities.push(NamedEntity {
            surface: fields[0].to_string(),
            category,
            train_count: corpus.count(fields[0]),
        });
    }
    NeInventory::new(entities)
}

/// NE surface -> utterances containing it, and category -> RR-NE surfaces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeUtteranceIndex {
    pub by_ne: BTreeMap<String, Vec<String>>,
    pub rr_by_category: BTreeMap<NeCategory, Vec<String>>,
}

impl NeUtteranceIndex {
    pub fn utterances_of(&self, surface: &str) -> &[String] {
        self.by_ne.get(surface).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn build_index(
    corpus: &Corpus,
    inventory: &NeInventory,
    thresholds: &CountThresholds,
) -> NeUtteranceIndex {
    let mut by_ne: BTreeMap<String, Vec<String>> = inventory
        .entities()
        .iter()
        .map(|e| (e.surface.clone(), Vec::new()))
        .collect();
    for u in corpus.utterances() {
        let mut seen = HashSet::new();
        for t in &u.tokens {
            if !seen.insert(t.as_str()) {
                continue;
            }
            if let Some(list) = by_ne.get_mut(t) {
                list.push(u.id.clone());
            }
        }
    }
    let mut rr_by_category: BTreeMap<NeCategory, Vec<String>> = BTreeMap::new();
    for e in inventory.rich(thresholds) {
        rr_by_category
            .entry(e.category)
            .or_default()
            .push(e.surface.clone());
    }
    NeUtteranceIndex {
        by_ne,
        rr_by_category,
    }
}
