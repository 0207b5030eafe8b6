//! Word vocabulary with reserved ids and the sentence tokenizer.

use std::collections::HashMap;
use std::path::Path;

use densecap_core::heads::tokens;

use crate::error::{io_err, DataError, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order, duplicates skipped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED {
            v.insert(w);
        }
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    fn insert(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len());
            self.words.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Lowercases, strips punctuation, maps unknown words to the unknown
    /// token and appends the end token.
    pub fn tokenize(&self, sentence: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = normalize(sentence)
            .iter()
            .map(|w| self.id(w).unwrap_or(tokens::UNK))
            .collect();
        ids.push(tokens::EOS);
        ids
    }

    /// Words of `ids` joined by spaces, stopping at the end token and
    /// skipping padding and begin tokens.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = Vec::new();
        for &id in ids {
            match id {
                tokens::EOS => break,
                tokens::PAD | tokens::BOS => {}
                _ => out.push(self.word(id)),
            }
        }
        out.join(" ")
    }

    /// Newline-delimited tokens; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let words: Vec<&str> = text.lines().collect();
        if words.len() < RESERVED.len() || words[..RESERVED.len()] != RESERVED {
            return Err(DataError::Format(format!(
                "{}: vocabulary must start with {}",
                path.display(),
                RESERVED.join(", ")
            )));
        }
        let v = Self::new(&words[RESERVED.len()..]);
        if v.len() != words.len() {
            return Err(DataError::Format(format!("{}: duplicate vocabulary entries", path.display())));
        }
        Ok(v)
    }
}

/// Lowercase words with punctuation removed.
pub fn normalize(sentence: &str) -> Vec<String> {
    sentence
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(|w| w.trim_matches('\'').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::new(["a"]);
        assert_eq!(v.id(PAD_TOKEN), Some(tokens::PAD));
        assert_eq!(v.id(BOS_TOKEN), Some(tokens::BOS));
        assert_eq!(v.id(EOS_TOKEN), Some(tokens::EOS));
        assert_eq!(v.id(UNK_TOKEN), Some(tokens::UNK));
        assert_eq!(v.id("a"), Some(4));
    }

    #[test]
    fn tokenize_rules() {
        let v = Vocabulary::new(["a", "man", "runs"]);
        let ids = v.tokenize("A man runs.");
        assert_eq!(ids, vec![4, 5, 6, tokens::EOS]);
        assert_eq!(v.tokenize("A dog runs")[1], tokens::UNK);
        assert_eq!(v.detokenize(&ids), "a man runs");
        assert_eq!(normalize("  Hello, World!! it's "), vec!["hello", "world", "it's"]);
    }
}
