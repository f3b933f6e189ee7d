//! Closed whitespace vocabulary: one word, one token.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("unknown word {0:?} (closed vocabulary)")]
    UnknownWord(String),
    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownId { id: usize, size: usize },
    #[error("duplicate token {0:?} while building vocabulary")]
    Duplicate(String),
}

/// Token table with dense ids 0..|V|-1 and a per-token capitalized mask
/// (true iff the first character is an uppercase ASCII letter).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    capitalized: Vec<bool>,
}

pub fn is_capitalized_word(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        let mut capitalized = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
            capitalized.push(is_capitalized_word(t));
        }
        Ok(Self {
            tokens,
            index,
            capitalized,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Result<&str, VocabError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(VocabError::UnknownId {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn id(&self, word: &str) -> Result<usize, VocabError> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| VocabError::UnknownWord(word.to_string()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn is_capitalized(&self, id: usize) -> bool {
        self.capitalized[id]
    }

    /// Ids of all capitalized tokens, ascending.
    pub fn capitalized_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.capitalized[i]).collect()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String, VocabError> {
        let words: Result<Vec<&str>, _> = ids.iter().map(|&id| self.token(id)).collect();
        Ok(words?.join(" "))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().enumerate().map(|(i, t)| (i, t.as_str()))
    }
}
