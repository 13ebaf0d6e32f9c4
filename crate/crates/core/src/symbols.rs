use std::collections::HashMap;
use std::fmt;

/// Integer label of a word in a [`SymbolTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordId(pub u32);

impl WordId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bidirectional word <-> id interner shared by lattices and keyword sets.
///
/// Ids are dense and assigned in first-seen order, so two tables built from
/// the same sequence of `intern` calls are identical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    words: Vec<String>,
    ids: HashMap<String, WordId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = WordId(self.words.len() as u32);
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    pub fn get(&self, word: &str) -> Option<WordId> {
        self.ids.get(word).copied()
    }

    /// Panics if `id` was not produced by this table.
    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn try_word(&self, id: WordId) -> Option<&str> {
        self.words.get(id.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self, ids: &[WordId]) -> Vec<String> {
        ids.iter().map(|&id| self.word(id).to_string()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, &str)> {
        self.words
            .iter()
            .enumerate()
            .map(|(i, w)| (WordId(i as u32), w.as_str()))
    }
}
