//! Word-level tokenizer with character offsets.
//!
//! Runs of alphanumeric characters form one token; every other non-space
//! character is a token of its own. A token written without a preceding space
//! is "glued" and stored in the vocabulary with a `##` prefix, which makes
//! decoding an exact inverse for single-spaced text.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];
const GLUE: &str = "##";

/// A token with its character span `[start, end)` in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub glued: bool,
}

impl Token {
    pub fn key(&self) -> String {
        if self.glued {
            format!("{GLUE}{}", self.text)
        } else {
            self.text.clone()
        }
    }
}

pub fn pretokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    let mut after_space = true;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            if let Some(t) = current.take() {
                tokens.push(t);
            }
            after_space = true;
            continue;
        }
        if ch.is_alphanumeric() {
            match &mut current {
                Some(t) => {
                    t.text.push(ch);
                    t.end = pos + 1;
                }
                None => {
                    current = Some(Token {
                        text: ch.to_string(),
                        start: pos,
                        end: pos + 1,
                        glued: !after_space && !tokens.is_empty(),
                    })
                }
            }
        } else {
            if let Some(t) = current.take() {
                tokens.push(t);
            }
            tokens.push(Token {
                text: ch.to_string(),
                start: pos,
                end: pos + 1,
                glued: !after_space && !tokens.is_empty(),
            });
        }
        after_space = false;
    }
    if let Some(t) = current {
        tokens.push(t);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary from raw texts. Ordering is by descending frequency,
    /// then lexicographic, so the result is independent of input order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in pretokenize(text) {
                *counts.entry(tok.key()).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> =
            counts.into_iter().filter(|(k, c)| *c >= min_freq && !SPECIALS.contains(&k.as_str())).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let room = max_size.map(|m| m.saturating_sub(tokens.len())).unwrap_or(usize::MAX);
        tokens.extend(entries.into_iter().take(room).map(|(k, _)| k));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, key: &str) -> usize {
        self.index.get(key).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }

    pub fn separator(&self) -> &str {
        SPECIALS[SEP]
    }

    /// Token ids together with their source spans.
    pub fn encode(&self, text: &str) -> (Vec<usize>, Vec<Token>) {
        let tokens = pretokenize(text);
        let ids = tokens.iter().map(|t| self.id(&t.key())).collect();
        (ids, tokens)
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary, single-spaced text.
    /// Special tokens other than `<unk>` are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id != UNK && id < SPECIALS.len() {
                continue;
            }
            let tok = self.token(id);
            match tok.strip_prefix(GLUE) {
                Some(rest) if !rest.is_empty() && !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok.strip_prefix(GLUE).filter(|r| !r.is_empty()).unwrap_or(tok));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.tokens)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::from_tokens(tokens))
    }
}
