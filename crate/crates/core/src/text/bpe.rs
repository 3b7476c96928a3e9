//! Trainable character-level byte-pair encoding.
//!
//! Text is first split into chunks at every space, with the space kept at the
//! front of the chunk that follows it (`"a dog"` → `["a", " dog"]`). Merges
//! never cross chunk boundaries, so concatenating decoded chunks reproduces
//! the input exactly.
//!
//! File format: line 1 is the alphabet, space separated; each further line is
//! one merge `left right` in rank order. Symbols are escaped (`\s` for space).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use super::escape::{escape, unescape};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    known: HashSet<char>,
}

/// One symbol of an encoded chunk; `None` for characters outside the alphabet.
pub type Piece = Option<String>;

/// Splits `text` before every space.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == ' ' && i > start {
            chunks.push(&text[start..i]);
            start = i;
        }
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let joined = format!("{left}{right}");
            symbols[i] = joined;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    pub fn new(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::Data(format!("duplicate merge {pair:?}")));
            }
        }
        let known = alphabet.iter().copied().collect::<HashSet<_>>();
        if known.len() != alphabet.len() {
            return Err(Error::Data("alphabet contains repeated characters".into()));
        }
        Ok(BpeModel {
            alphabet,
            merges,
            ranks,
            known,
        })
    }

    /// Greedy highest-frequency pair merging until the alphabet plus merges
    /// reaches `target_symbols` or no pair occurs twice. Ties go to the
    /// lexicographically smallest pair. `target_symbols` counts subword
    /// symbols only; the five reserved tokens come on top.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_symbols: usize) -> Result<Self> {
        let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for line in corpus {
            for chunk in pretokenize(line.as_ref()) {
                *word_counts.entry(chunk).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Data("cannot train BPE on an empty corpus".into()));
        }
        let mut alphabet: Vec<char> = word_counts
            .keys()
            .flat_map(|w| w.chars())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        alphabet.sort_unstable();
        if target_symbols < alphabet.len() {
            return Err(Error::Config(format!(
                "target of {target_symbols} symbols is below the alphabet size {}",
                alphabet.len()
            )));
        }

        let mut words: Vec<(Vec<String>, usize)> = word_counts
            .into_iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();
        let mut merges = Vec::new();
        while alphabet.len() + merges.len() < target_symbols {
            let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (symbols, count) in &words {
                for w in symbols.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_default() += count;
                }
            }
            let mut best: Option<((&str, &str), usize)> = None;
            for (pair, count) in pair_counts {
                if best.is_none_or(|(_, c)| count > c) {
                    best = Some((pair, count));
                }
            }
            let Some(((l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (symbols, _) in &mut words {
                merge_pair(symbols, &l, &r);
            }
            merges.push((l, r));
        }
        Self::new(alphabet, merges)
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Every subword symbol the model can emit, in id order: alphabet first,
    /// then merge results by rank.
    pub fn symbols(&self) -> impl Iterator<Item = String> + '_ {
        self.alphabet
            .iter()
            .map(|c| c.to_string())
            .chain(self.merges.iter().map(|(l, r)| format!("{l}{r}")))
    }

    /// Encodes a single chunk (no internal boundary handling).
    pub fn encode_chunk(&self, chunk: &str) -> Vec<Piece> {
        let mut pieces: Vec<Piece> = Vec::new();
        let mut run: Vec<String> = Vec::new();
        for c in chunk.chars() {
            if self.known.contains(&c) {
                run.push(c.to_string());
            } else {
                self.flush(&mut run, &mut pieces);
                pieces.push(None);
            }
        }
        self.flush(&mut run, &mut pieces);
        pieces
    }

    fn flush(&self, run: &mut Vec<String>, out: &mut Vec<Piece>) {
        if run.is_empty() {
            return;
        }
        let mut symbols = std::mem::take(run);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut symbols, l, r);
        }
        out.extend(symbols.into_iter().map(Some));
    }

    pub fn encode(&self, text: &str) -> Vec<Piece> {
        pretokenize(text)
            .into_iter()
            .flat_map(|c| self.encode_chunk(c))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = self
            .alphabet
            .iter()
            .map(|c| escape(&c.to_string()))
            .collect::<Vec<_>>()
            .join(" ");
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(&format!("{} {}\n", escape(l), escape(r)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Data("empty BPE model file".into()))?;
        let mut alphabet = Vec::new();
        for sym in first.split(' ').filter(|s| !s.is_empty()) {
            let s = unescape(sym)?;
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => {
                    return Err(Error::Data(format!(
                        "alphabet entry {sym:?} is not a single character"
                    )))
                }
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 2 {
                return Err(Error::Data(format!(
                    "BPE merge on line {} must have two symbols",
                    i + 2
                )));
            }
            merges.push((unescape(parts[0])?, unescape(parts[1])?));
        }
        Self::new(alphabet, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent pair counter: every adjacent character pair in every
    /// chunk, weighted by occurrence.
    fn brute_force_top_pair(corpus: &[&str]) -> (String, String) {
        let mut counts: Vec<((String, String), usize)> = Vec::new();
        for line in corpus {
            for chunk in pretokenize(line) {
                let chars: Vec<char> = chunk.chars().collect();
                for i in 0..chars.len().saturating_sub(1) {
                    let key = (chars[i].to_string(), chars[i + 1].to_string());
                    match counts.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, c)) => *c += 1,
                        None => counts.push((key, 1)),
                    }
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts[0].0.clone()
    }

    #[test]
    fn pretokenize_keeps_leading_spaces() {
        assert_eq!(pretokenize("a dog  runs"), vec!["a", " dog", " ", " runs"]);
        assert_eq!(pretokenize(" x"), vec![" x"]);
        assert!(pretokenize("").is_empty());
    }

    #[test]
    fn single_merge_on_repeated_letter() {
        let m = BpeModel::train(&["aaaa"], 2).unwrap();
        assert_eq!(m.alphabet(), &['a']);
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
        assert_eq!(brute_force_top_pair(&["aaaa"]), ("a".into(), "a".into()));
    }

    #[test]
    fn first_merge_matches_brute_force_count() {
        let corpus = ["ab ab ab"];
        let m = BpeModel::train(&corpus, 4).unwrap();
        assert_eq!(m.merges()[0], brute_force_top_pair(&corpus));
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn alphabet_sized_target_gives_character_tokenizer() {
        let m = BpeModel::train(&["hello world"], 8).unwrap();
        assert_eq!(m.alphabet().len(), 8);
        assert!(m.merges().is_empty());
        assert_eq!(m.encode("hello").len(), 5);
        assert!(BpeModel::train(&["hello world"], 7).is_err());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 1] = [""];
        assert!(matches!(BpeModel::train(&empty, 10), Err(Error::Data(_))));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = BpeModel::train(&["abcd"], 100).unwrap();
        assert!(m.merges().is_empty());
    }

    #[test]
    fn unknown_characters_become_none() {
        let m = BpeModel::train(&["ab ab"], 10).unwrap();
        let pieces = m.encode("azb");
        assert_eq!(pieces, vec![Some("a".into()), None, Some("b".into())]);
    }

    #[test]
    fn file_round_trip() {
        let m = BpeModel::train(&["the cat sat on the mat", "a  b\\c"], 30).unwrap();
        let back = BpeModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }
}
