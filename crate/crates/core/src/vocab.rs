//! Token vocabulary with fixed reserved control tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const BLANK: TokenId = 4;
pub const SEP: TokenId = 5;

/// String forms used in corpus files.
pub const RESERVED: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", "<blank>", "<sep>"];

/// Bidirectional token <-> id map. Ids 0..6 are always the reserved control
/// tokens, regardless of corpus content; corpus tokens follow in insertion
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Build a vocabulary from corpus tokens. Duplicates are ignored; a
    /// corpus token colliding with a reserved form keeps the reserved id.
    pub fn new<I, S>(corpus_tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t);
        }
        for t in corpus_tokens {
            v.push(t.as_ref());
        }
        v
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_err(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::Usage(format!("token {token:?} not in vocabulary")))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// All tokens in id order, reserved ones first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(["x", "y"]);
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("<blank>"), Some(BLANK));
        assert_eq!(v.id("<sep>"), Some(SEP));
        assert_eq!(v.id("x"), Some(6));
        assert_eq!(v.id("y"), Some(7));
    }

    #[test]
    fn round_trips_every_token() {
        let v = Vocabulary::new(["7", "q", "7", "z"]);
        assert_eq!(v.len(), 9); // duplicates collapse
        for id in 0..v.len() {
            let tok = v.token(id).unwrap();
            assert_eq!(v.id(tok), Some(id));
        }
    }

    #[test]
    fn corpus_token_matching_reserved_form_keeps_reserved_id() {
        let v = Vocabulary::new(["<sep>", "a"]);
        assert_eq!(v.id("<sep>"), Some(SEP));
        assert_eq!(v.len(), 7);
    }
}
