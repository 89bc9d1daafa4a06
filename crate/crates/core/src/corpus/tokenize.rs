use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::VisualWordLexicon;
use crate::error::{MadsError, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases and strips leading/trailing punctuation.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Splits on whitespace and punctuation; apostrophes and hyphens inside a
/// word are kept. Every returned word is normalized and non-empty.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word → row mapping for the embedding table. Id 0 is always the UNK row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut v = Vocabulary::new();
        for w in words {
            v.insert(&w);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), 0);
        Self { words: vec![UNK_TOKEN.to_string()], index }
    }

    /// Inserts a normalized word and returns its id.
    pub fn insert(&mut self, word: &str) -> usize {
        let w = if word == UNK_TOKEN { word.to_string() } else { normalize_word(word) };
        if let Some(&id) = self.index.get(&w) {
            return id;
        }
        let id = self.words.len();
        self.index.insert(w.clone(), id);
        self.words.push(w);
        id
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedParagraph {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    /// 1 when the token is a visual word.
    pub visual_mask: Vec<u8>,
}

impl TokenizedParagraph {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unknown_count(&self) -> usize {
        self.token_ids.iter().filter(|&&id| id == 0).count()
    }

    /// Keeps the first `max` tokens.
    pub fn truncate(&mut self, max: usize) {
        self.tokens.truncate(max);
        self.token_ids.truncate(max);
        self.visual_mask.truncate(max);
    }
}

/// Tokenizes a paragraph; unknown words embed through the UNK row but keep
/// their lexical visual flag.
pub fn tokenize(paragraph: &str, lexicon: &VisualWordLexicon, vocab: &Vocabulary) -> Result<TokenizedParagraph> {
    let tokens = split_words(paragraph);
    if tokens.is_empty() {
        return Err(MadsError::EmptyInput("paragraph has no tokens".into()));
    }
    let token_ids = tokens.iter().map(|t| vocab.id(t).unwrap_or(0)).collect();
    let visual_mask = tokens.iter().map(|t| lexicon.contains(t) as u8).collect();
    Ok(TokenizedParagraph { tokens, token_ids, visual_mask })
}
