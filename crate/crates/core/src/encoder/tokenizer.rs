use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Lowercased word and punctuation vocabulary with BERT-style boundary
/// tokens. Ids 0..4 are the special tokens in [`SPECIALS`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens followed by every distinct token of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(text::words_and_punct).collect();
        words.sort();
        words.dedup();
        let tokens: Vec<String> =
            SPECIALS.iter().map(|s| s.to_string()).chain(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str()))).collect();
        Self::from(tokens)
    }

    /// Rebuilds a vocabulary from its token list; the first four entries
    /// must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return None;
        }
        Some(Self::from(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(1)
    }

    /// `[CLS] content... [SEP]`, keeping the prefix of the content so the
    /// whole sequence fits in `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Vec<u32> {
        let budget = max_tokens.saturating_sub(2);
        let mut ids = Vec::with_capacity(budget.min(256) + 2);
        ids.push(self.id(CLS));
        ids.extend(text::words_and_punct(text).iter().take(budget).map(|w| self.id(w)));
        ids.push(self.id(SEP));
        ids
    }
}
