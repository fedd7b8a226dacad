//! Word-level tokenization shared by the baselines and the toy encoder.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercased alphanumeric runs. Apostrophes inside a word are kept so that
/// "can't" stays one token; everything else separates words.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if c == '\'' && !current.is_empty() && chars.peek().is_some_and(|n| n.is_alphanumeric()) {
            current.push(c);
        } else if !current.is_empty() {
            out.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Like [`words`] but punctuation characters become tokens of their own,
/// which is what the encoder tokenizer wants.
pub fn words_and_punct(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || (c == '\'' && !current.is_empty()) {
            current.extend(c.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            out.push(core::mem::take(&mut current));
        }
        if !c.is_whitespace() && !c.is_control() {
            out.push(String::from(c));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}
