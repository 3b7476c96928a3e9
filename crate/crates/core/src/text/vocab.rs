use std::collections::HashMap;
use std::path::Path;

use super::escape::{escape, unescape};
use crate::error::{Error, IoContext, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;
pub const UNK: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<mask>", "<unk>"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

pub fn is_special(id: TokenId) -> bool {
    id < NUM_SPECIAL
}

/// Bidirectional id ↔ string table. Ids 0–4 are the reserved tokens and
/// never participate in string lookup, so text that happens to spell a
/// reserved name still encodes to ordinary subwords.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved tokens followed by `symbols` in order; repeated symbols keep
    /// their first id.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for s in symbols {
            let s = s.into();
            if index.contains_key(&s) {
                continue;
            }
            index.insert(s.clone(), tokens.len());
            tokens.push(s);
        }
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&escape(t));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIAL {
            return Err(Error::Data(format!(
                "vocabulary has {} entries, fewer than the {NUM_SPECIAL} reserved tokens",
                lines.len()
            )));
        }
        for (i, name) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *name {
                return Err(Error::Data(format!(
                    "vocabulary line {} must be {name}, found {:?}",
                    i + 1,
                    lines[i]
                )));
            }
        }
        let mut symbols = Vec::with_capacity(lines.len() - NUM_SPECIAL);
        for line in &lines[NUM_SPECIAL..] {
            symbols.push(unescape(line)?);
        }
        let vocab = Self::from_symbols(symbols);
        if vocab.len() != lines.len() {
            return Err(Error::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).at(path)?)
    }
}
