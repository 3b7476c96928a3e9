//! Subword tokenization, concept span alignment and lemmatization.

mod align;
mod bpe;
mod escape;
mod lemma;
mod vocab;

use std::path::Path;

pub use align::{align_concepts, spans_partition, ConceptSpan};
pub use bpe::{pretokenize, BpeModel, Piece};
pub use escape::{escape, unescape};
pub use lemma::lemmatize;
pub use vocab::{
    is_special, TokenId, Vocabulary, BOS, EOS, MASK, NUM_SPECIAL, PAD, SPECIAL_TOKENS, UNK,
};

use crate::error::{Error, Result};

pub const MAX_ENCODER_LEN: usize = 32;
pub const MAX_DECODER_LEN: usize = 64;
pub const BPE_FILE: &str = "bpe.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Encoder input for one concept set.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedConcepts {
    pub ids: Vec<TokenId>,
    pub spans: Vec<ConceptSpan>,
}

/// BPE model paired with the vocabulary of its symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    bpe: BpeModel,
    vocab: Vocabulary,
}

impl Tokenizer {
    pub fn new(bpe: BpeModel, vocab: Vocabulary) -> Result<Self> {
        if let Some(missing) = bpe.symbols().find(|s| vocab.id(s).is_none()) {
            return Err(Error::Data(format!(
                "BPE symbol {missing:?} is missing from the vocabulary"
            )));
        }
        Ok(Tokenizer { bpe, vocab })
    }

    /// Trains BPE up to `target_symbols` subword symbols; the vocabulary
    /// holds the reserved tokens followed by every symbol.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_symbols: usize) -> Result<Self> {
        let bpe = BpeModel::train(corpus, target_symbols)?;
        let vocab = Vocabulary::from_symbols(bpe.symbols());
        Ok(Tokenizer { bpe, vocab })
    }

    pub fn bpe(&self) -> &BpeModel {
        &self.bpe
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.bpe
            .encode(text)
            .into_iter()
            .map(|p| p.and_then(|s| self.vocab.id(&s)).unwrap_or(UNK))
            .collect()
    }

    /// Concatenates subword strings, dropping every reserved token.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !is_special(id))
            .filter_map(|&id| self.vocab.token(id))
            .collect()
    }

    /// Human-readable form in which `MASK` shows as `[mask]` and `UNK` as
    /// `<unk>`; padding and sentence markers are dropped.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                MASK => {
                    if !out.is_empty() && !out.ends_with(' ') {
                        out.push(' ');
                    }
                    out.push_str("[mask]");
                }
                UNK => out.push_str(SPECIAL_TOKENS[UNK]),
                PAD | BOS | EOS => {}
                _ => out.push_str(self.vocab.token(id).unwrap_or("")),
            }
        }
        out
    }

    /// Encodes concepts joined by single spaces and aligns their spans.
    /// Sequences longer than `max_len` are truncated with a warning; a
    /// concept cut by the limit keeps its surviving prefix and concepts past
    /// it are dropped.
    pub fn encode_concepts<S: AsRef<str>>(
        &self,
        concepts: &[S],
        max_len: usize,
    ) -> Result<EncodedConcepts> {
        if concepts.is_empty() {
            return Err(Error::Data("concept set is empty".into()));
        }
        let joined = concepts
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ");
        let mut ids = self.encode(&joined);
        let mut spans = align_concepts(concepts, &ids, self)?;
        if ids.len() > max_len {
            log::warn!(
                "concept input {joined:?} has {} tokens; truncating to {max_len}",
                ids.len()
            );
            ids.truncate(max_len);
            spans.retain(|s| s.start < max_len);
            if let Some(last) = spans.last_mut() {
                last.end = last.end.min(max_len);
            }
        }
        Ok(EncodedConcepts { ids, spans })
    }

    /// `BOS text EOS`, truncated to `max_len` tokens (EOS kept last).
    pub fn encode_target(&self, text: &str, max_len: usize) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(max_len);
        ids.push(BOS);
        ids.extend(self.encode(text));
        if ids.len() + 1 > max_len {
            log::warn!("target {text:?} exceeds {max_len} tokens; truncating");
            ids.truncate(max_len.saturating_sub(1).max(1));
        }
        ids.push(EOS);
        ids
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.bpe.save(&dir.join(BPE_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let bpe = BpeModel::load(&dir.join(BPE_FILE))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        Self::new(bpe, vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> Vec<&'static str> {
        vec![
            "the fisherman throws a net into the river",
            "a fish is caught in the net",
            "the dog runs in the park",
            "fisherman fisherman fisherman",
        ]
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let t = Tokenizer::train(&corpus(), 40).unwrap();
        assert!(t.encode("").is_empty());
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let t = Tokenizer::train(&corpus(), 40).unwrap();
        let ids = t.encode("dog!");
        assert_eq!(*ids.last().unwrap(), UNK);
    }

    #[test]
    fn multi_subword_concept_gets_wide_span() {
        let t = Tokenizer::train(&corpus(), 30).unwrap();
        let pieces = t.encode("fisherman");
        assert!(pieces.len() >= 2, "{pieces:?}");
        let enc = t.encode_concepts(&["fisherman"], MAX_ENCODER_LEN).unwrap();
        assert_eq!(enc.spans.len(), 1);
        assert_eq!(enc.spans[0].width(), pieces.len());
    }

    #[test]
    fn single_concept_single_subword() {
        let t = Tokenizer::train(&["a a a"], 2).unwrap();
        let enc = t.encode_concepts(&["a"], MAX_ENCODER_LEN).unwrap();
        assert_eq!(
            enc.spans,
            vec![ConceptSpan {
                concept: 0,
                start: 0,
                end: 1
            }]
        );
    }

    #[test]
    fn four_character_concepts_give_unit_spans() {
        let t = Tokenizer::train(&["a b c d a b c d"], 8).unwrap();
        let enc = t.encode_concepts(&["a", "b", "c", "d"], MAX_ENCODER_LEN).unwrap();
        assert!(spans_partition(&enc.spans, enc.ids.len()));
        assert_eq!(enc.spans.len(), 4);
        assert!(enc.spans.iter().all(|s| s.width() == 1));
    }

    #[test]
    fn alignment_rejects_foreign_sequence() {
        let t = Tokenizer::train(&corpus(), 40).unwrap();
        let ids = t.encode("the dog");
        assert!(matches!(
            align_concepts(&["fish", "net"], &ids, &t),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn truncation_keeps_prefix_spans() {
        let t = Tokenizer::train(&corpus(), 20).unwrap();
        let concepts = ["fisherman", "river", "net", "fish"];
        let full = t.encode_concepts(&concepts, 1000).unwrap();
        let cut = full.spans[1].start + 1;
        let enc = t.encode_concepts(&concepts, cut).unwrap();
        assert_eq!(enc.ids.len(), cut);
        assert_eq!(enc.spans.len(), 2);
        assert!(spans_partition(&enc.spans, cut));
    }

    #[test]
    fn target_has_sentence_markers() {
        let t = Tokenizer::train(&corpus(), 40).unwrap();
        let ids = t.encode_target("the dog", MAX_DECODER_LEN);
        assert_eq!(ids[0], BOS);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(t.decode(&ids), "the dog");
        assert_eq!(t.encode_target("the dog runs", 4).len(), 4);
    }

    #[test]
    fn render_shows_masks() {
        let t = Tokenizer::train(&["student wound treat teach soldier"], 30).unwrap();
        let mut ids = vec![MASK];
        ids.extend(t.encode(" wound"));
        ids.push(MASK);
        ids.extend(t.encode(" teach soldier"));
        assert_eq!(t.render(&ids), "[mask] wound [mask] teach soldier");
    }

    #[test]
    fn directory_round_trip() {
        let t = Tokenizer::train(&corpus(), 45).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.save_dir(dir.path()).unwrap();
        assert_eq!(Tokenizer::load_dir(dir.path()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "[a-z ]{0,40}") {
            let t = Tokenizer::train(&["the quick brown fox jumps over the lazy dog"], 40).unwrap();
            prop_assert_eq!(t.decode(&t.encode(&s)), s);
        }

        #[test]
        fn spans_partition_tokens(words in proptest::collection::vec("[a-z]{1,8}", 1..6)) {
            let t = Tokenizer::train(&["the quick brown fox jumps over the lazy dog"], 40).unwrap();
            let enc = t.encode_concepts(&words, 1000).unwrap();
            prop_assert_eq!(enc.spans.len(), words.len());
            prop_assert!(spans_partition(&enc.spans, enc.ids.len()));
        }
    }
}
