use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

/// Placeholder spelling for the pseudo token in templates and renders.
pub const PSEUDO_TOKEN: &str = "[*]";

/// Closed word-level vocabulary. The pseudo-token placeholder takes the last
/// id and has no row in the embedding table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>"].map(String::from).to_vec();
        for w in words {
            assert!(
                !w.is_empty() && !w.contains(char::is_whitespace) && w != PSEUDO_TOKEN,
                "invalid vocabulary word {w:?}"
            );
            if !tokens.iter().any(|t| t == w) {
                tokens.push(w.to_string());
            }
        }
        tokens.push(PSEUDO_TOKEN.to_string());
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows of the embedding table: every token except the placeholder.
    pub fn table_rows(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn pseudo(&self) -> TokenId {
        (self.tokens.len() - 1) as TokenId
    }

    pub fn id(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[3..self.tokens.len() - 1].iter().map(String::as_str)
    }

    /// Splits on whitespace and peels commas off into their own tokens.
    pub fn split(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut rest = word;
            while let Some(r) = rest.strip_prefix(',') {
                out.push(",");
                rest = r;
            }
            let mut trailing = 0;
            while let Some(r) = rest.strip_suffix(',') {
                trailing += 1;
                rest = r;
            }
            if !rest.is_empty() {
                out.push(rest);
            }
            out.extend(std::iter::repeat_n(",", trailing));
        }
        out
    }

    pub fn ids(&self, text: &str) -> Result<Vec<TokenId>> {
        Self::split(text).into_iter().map(|w| self.id(w)).collect()
    }
}
