use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const UNKNOWN_ID: usize = 0;

/// Word/id bijection with a reserved unknown id `0`.
///
/// Lookup tries the lowercased token first, then the verbatim token, then
/// falls back to [`UNKNOWN_ID`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let mut v = Vocabulary::new();
        for w in r.words.into_iter().skip(1) {
            v.insert(&w);
        }
        v
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { words: v.words }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            words: vec![UNKNOWN_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }

    /// Builds a vocabulary from tokens in first-seen order.
    pub fn from_tokens<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut v = Vocabulary::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    /// Id of `word` with no case folding.
    pub fn exact(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn lookup(&self, token: &str) -> usize {
        let lower = token.to_lowercase();
        self.exact(&lower)
            .or_else(|| self.exact(token))
            .unwrap_or(UNKNOWN_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of ids, including the unknown id.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == 1
    }
}
