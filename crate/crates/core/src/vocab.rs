//! Tokens, token sequences and the shared vocabulary.
//!
//! Every dataset in this crate is a whitespace-delimited token stream, so a
//! [`TokenSequence`] is built by splitting on whitespace and rendered by
//! joining with single spaces. The vocabulary reserves the lowest ids for
//! the special tokens, in a fixed order that never changes between runs.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const SEP2: TokenId = 4;
pub const EOI: TokenId = 5;
pub const UNK: TokenId = 6;

/// Surface forms of the special tokens, indexed by id.
pub const SPECIALS: [&str; 7] = ["[PAD]", "[BOS]", "[EOS]", "[SEP]", "[SEP2]", "[END]", "[UNK]"];

pub const SEP_STR: &str = SPECIALS[SEP];
pub const SEP2_STR: &str = SPECIALS[SEP2];
pub const EOI_STR: &str = SPECIALS[EOI];
pub const EOS_STR: &str = SPECIALS[EOS];

/// A single whitespace-free symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(symbol: impl Into<String>) -> Result<Self> {
        let symbol = symbol.into();
        if symbol.is_empty() || symbol.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(symbol));
        }
        Ok(Token(symbol))
    }

    /// Builds a token from text already known to be a single symbol.
    pub(crate) fn from_valid(symbol: &str) -> Self {
        debug_assert!(!symbol.is_empty() && !symbol.chars().any(char::is_whitespace));
        Token(symbol.to_owned())
    }

    pub fn eoi() -> Self {
        Token::from_valid(EOI_STR)
    }

    pub fn sep() -> Self {
        Token::from_valid(SEP_STR)
    }

    pub fn sep2() -> Self {
        Token::from_valid(SEP2_STR)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_eoi(&self) -> bool {
        self.0 == EOI_STR
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for Token {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for Token {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// An ordered list of tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens)
    }

    /// Splits `text` on whitespace.
    pub fn from_text(text: &str) -> Self {
        TokenSequence(text.split_whitespace().map(Token::from_valid).collect())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, token: Token) {
        self.0.push(token);
    }

    pub fn extend_from(&mut self, other: &TokenSequence) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn with_eoi(mut self) -> Self {
        self.0.push(Token::eoi());
        self
    }

    pub fn ends_with_eoi(&self) -> bool {
        self.0.last().is_some_and(Token::is_eoi)
    }

    /// Returns the sequence without a trailing EOI, if one is present.
    pub fn without_eoi(&self) -> TokenSequence {
        if self.ends_with_eoi() {
            TokenSequence(self.0[..self.0.len() - 1].to_vec())
        } else {
            self.clone()
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.0.iter()
    }

    pub fn count_of(&self, symbol: &str) -> usize {
        self.0.iter().filter(|t| t.as_str() == symbol).count()
    }

    pub fn position_of(&self, symbol: &str) -> Option<usize> {
        self.0.iter().position(|t| t.as_str() == symbol)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

impl From<&str> for TokenSequence {
    fn from(text: &str) -> Self {
        TokenSequence::from_text(text)
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens)
    }
}

impl FromIterator<Token> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Bidirectional token/id map. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for s in SPECIALS {
            v.register(Token::from_valid(s));
        }
        v
    }

    /// Specials first, then corpus tokens in first-occurrence order.
    pub fn build<'a, I>(corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut v = Self::specials_only();
        for seq in corpus {
            for t in seq {
                v.register(t.clone());
            }
        }
        v
    }

    fn register(&mut self, token: Token) -> TokenId {
        if let Some(&id) = self.ids.get(token.as_str()) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(token.0.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, symbol: &str) -> Option<TokenId> {
        self.ids.get(symbol).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Maps each token to its id; unregistered tokens become [`UNK`].
    pub fn encode(&self, seq: &TokenSequence) -> Vec<TokenId> {
        seq.iter()
            .map(|t| self.id_of(t.as_str()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<TokenSequence> {
        ids.iter()
            .map(|&id| {
                self.tokens.get(id).cloned().ok_or(Error::BadTokenId {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let token = Token::new(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if i < SPECIALS.len() && line != SPECIALS[i] {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected special token {}", SPECIALS[i]),
                ));
            }
            if v.ids.contains_key(line) {
                return Err(Error::parse(path, i + 1, format!("duplicate token {line}")));
            }
            v.register(token);
        }
        if v.len() < SPECIALS.len() {
            return Err(Error::parse(path, v.len() + 1, "missing special tokens"));
        }
        Ok(v)
    }
}
