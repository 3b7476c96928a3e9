use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};

/// Dense word vectors in GloVe text format: `word v1 v2 … vd`.
#[derive(Debug, Clone, Default)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(format!(
                "vector for {word:?} has {} components, table uses {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("vector for {word:?} is not finite")));
        }
        self.vectors.insert(word.to_string(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Vector for a KG entity name: the whole name if present, otherwise the
    /// mean of its `_`-separated words when every word is known.
    pub fn entity_vector(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.get(name) {
            return Some(v.to_vec());
        }
        let words: Vec<&str> = name.split('_').filter(|w| !w.is_empty()).collect();
        if words.len() < 2 {
            return None;
        }
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            let v = self.get(w)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        Some(acc.into_iter().map(|a| a / n).collect())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut table: Option<WordVectorTable> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            if values.is_empty() {
                return Err(parse_err(format!("no vector components for {word:?}")));
            }
            let t = table.get_or_insert_with(|| WordVectorTable::new(values.len()));
            t.insert(word, values).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "noun" | "n" | "nn" => Ok(PosTag::Noun),
            "verb" | "v" | "vb" => Ok(PosTag::Verb),
            "adj" | "adjective" | "a" | "jj" => Ok(PosTag::Adjective),
            "adv" | "adverb" | "r" | "rb" => Ok(PosTag::Adverb),
            other => Err(Error::Config(format!(
                "unknown part-of-speech tag {other:?} (expected noun, verb, adj or adv)"
            ))),
        }
    }
}

/// Word → set of part-of-speech tags, from `word<TAB>tag[,tag…]` lines.
#[derive(Debug, Clone, Default)]
pub struct PosLexicon {
    tags: HashMap<String, Vec<PosTag>>,
}

impl PosLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        let entry = self.tags.entry(word.to_string()).or_default();
        if !entry.contains(&tag) {
            entry.push(tag);
        }
    }

    pub fn has(&self, word: &str, tag: PosTag) -> bool {
        self.tags.get(word).is_some_and(|t| t.contains(&tag))
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lex = PosLexicon::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (word, tags) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>tags".into()))?;
            for tag in tags.split([',', ' ']).filter(|t| !t.trim().is_empty()) {
                let tag = tag.parse().map_err(|e: Error| parse_err(e.to_string()))?;
                lex.insert(word.trim(), tag);
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glove_lines_parse() {
        let t = WordVectorTable::from_text("dog 1 0\ncat 0.5 -0.5\n", "v").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("cat"), Some(&[0.5, -0.5][..]));
    }

    #[test]
    fn ragged_vectors_are_rejected() {
        let err = WordVectorTable::from_text("dog 1 0\ncat 1\n", "v").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn multiword_entities_average_their_words() {
        let t = WordVectorTable::from_text("using 1 0\nnet 0 1\n", "v").unwrap();
        assert_eq!(t.entity_vector("using_net").unwrap(), vec![0.5, 0.5]);
        assert!(t.entity_vector("fishing_net").is_none());
        assert!(t.entity_vector("boat").is_none());
    }

    #[test]
    fn lexicon_tags() {
        let lex = PosLexicon::from_text("clean\tadj,verb\nquickly\tadv\n", "p").unwrap();
        assert!(lex.has("clean", PosTag::Adjective));
        assert!(lex.has("clean", PosTag::Verb));
        assert!(!lex.has("clean", PosTag::Noun));
        assert!(lex.has("quickly", PosTag::Adverb));
        assert!(PosLexicon::from_text("x\tbogus\n", "p").is_err());
    }
}
