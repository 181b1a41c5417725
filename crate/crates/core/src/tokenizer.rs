//! Tokenizer contract shared by the prefix tree and the generation backends.
//!
//! Two implementations ship: [`WordTokenizer`], a per-corpus whitespace word
//! vocabulary that keeps tries human readable, and [`ByteTokenizer`], a
//! byte-level tokenizer that encodes any text. Both reserve special ids for
//! the answer tags and the end-of-sequence marker, and both round-trip
//! exactly: `decode(encode(s)) == s`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::Tag;

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub tokenizer_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialToken {
    Eos,
    Tag(Tag),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("word {0:?} is not in the {1} vocabulary")]
    UnknownWord(String, &'static str),
    #[error("token id {0} is not in the {1} vocabulary")]
    UnknownId(TokenId, &'static str),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown tokenizer {0:?}")]
    UnknownTokenizer(String),
}

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn encode(&self, text: &str) -> Result<TokenSeq, TokenizeError>;
    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizeError>;
    fn special(&self, token: SpecialToken) -> TokenId;

    fn tag_id(&self, tag: Tag) -> TokenId {
        self.special(SpecialToken::Tag(tag))
    }
}

/// Builds a tokenizer by name. `word` needs the corpus it will encode.
pub fn by_name<'a>(
    name: &str,
    corpus: impl IntoIterator<Item = &'a str>,
) -> Result<Box<dyn Tokenizer>, TokenizeError> {
    match name {
        WordTokenizer::NAME => Ok(Box::new(WordTokenizer::from_corpus(corpus))),
        ByteTokenizer::NAME => Ok(Box::new(ByteTokenizer)),
        other => Err(TokenizeError::UnknownTokenizer(other.to_owned())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Word(&'a str),
    Space(&'a str),
}

/// Splits into words and whitespace runs. A single ASCII space between two
/// words is implicit and produces no piece.
fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut after_word = false;
    while !rest.is_empty() {
        let ws_len = rest.len() - rest.trim_start().len();
        if ws_len > 0 {
            let ws = &rest[..ws_len];
            rest = &rest[ws_len..];
            let implicit = ws == " " && after_word && !rest.is_empty();
            if !implicit {
                out.push(Piece::Space(ws));
            }
            after_word = false;
            continue;
        }
        let w_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        out.push(Piece::Word(&rest[..w_len]));
        rest = &rest[w_len..];
        after_word = true;
    }
    out
}

/// Whitespace word tokenizer with a vocabulary fixed at construction.
///
/// Id 0 is end-of-sequence; corpus pieces get ids from 1 in order of first
/// appearance; the four tags follow the corpus block.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    ids: HashMap<String, TokenId>,
    pieces: Vec<String>,
    tag_base: TokenId,
}

impl WordTokenizer {
    pub const NAME: &'static str = "word";

    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ids = HashMap::new();
        let mut table = vec![String::new()];
        for text in corpus {
            for piece in pieces(text) {
                let s = match piece {
                    Piece::Word(w) | Piece::Space(w) => w,
                };
                if Tag::from_literal(s).is_some() {
                    continue;
                }
                ids.entry(s.to_owned()).or_insert_with(|| {
                    table.push(s.to_owned());
                    (table.len() - 1) as TokenId
                });
            }
        }
        let tag_base = table.len() as TokenId;
        Self { ids, pieces: table, tag_base }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len() + Tag::ALL.len()
    }

    fn piece_text(&self, id: TokenId) -> Option<(&str, bool)> {
        if id == 0 {
            return None;
        }
        if let Some(tag) = id.checked_sub(self.tag_base).and_then(|k| Tag::ALL.get(k as usize)) {
            return Some((tag.literal(), true));
        }
        self.pieces
            .get(id as usize)
            .map(|p| (p.as_str(), !p.starts_with(char::is_whitespace)))
    }
}

impl Tokenizer for WordTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn encode(&self, text: &str) -> Result<TokenSeq, TokenizeError> {
        let ids = pieces(text)
            .into_iter()
            .map(|p| {
                let s = match p {
                    Piece::Word(w) | Piece::Space(w) => w,
                };
                if let Some(tag) = Tag::from_literal(s) {
                    return Ok(self.tag_id(tag));
                }
                self.ids
                    .get(s)
                    .copied()
                    .ok_or_else(|| TokenizeError::UnknownWord(s.to_owned(), Self::NAME))
            })
            .collect::<Result<_, _>>()?;
        Ok(TokenSeq {
            ids,
            tokenizer_name: Self::NAME.to_owned(),
        })
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizeError> {
        let mut out = String::new();
        let mut prev_word = false;
        for &id in ids {
            if id == 0 {
                continue;
            }
            let (text, is_word) = self
                .piece_text(id)
                .ok_or(TokenizeError::UnknownId(id, Self::NAME))?;
            if is_word && prev_word {
                out.push(' ');
            }
            out.push_str(text);
            prev_word = is_word;
        }
        Ok(out)
    }

    fn special(&self, token: SpecialToken) -> TokenId {
        match token {
            SpecialToken::Eos => 0,
            SpecialToken::Tag(tag) => self.tag_base + tag.ordinal() as TokenId,
        }
    }
}

/// UTF-8 byte tokenizer: ids 0..=255 are bytes, 256 is end-of-sequence,
/// 257..=260 are the tags.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const NAME: &'static str = "byte";
    const EOS: TokenId = 256;
    const TAG_BASE: TokenId = 257;
}

impl Tokenizer for ByteTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn encode(&self, text: &str) -> Result<TokenSeq, TokenizeError> {
        let mut ids = Vec::with_capacity(text.len());
        let mut rest = text;
        'outer: while !rest.is_empty() {
            if rest.starts_with('<') {
                for tag in Tag::ALL {
                    if let Some(after) = rest.strip_prefix(tag.literal()) {
                        ids.push(self.tag_id(tag));
                        rest = after;
                        continue 'outer;
                    }
                }
            }
            let ch_len = rest.chars().next().unwrap().len_utf8();
            ids.extend(rest.as_bytes()[..ch_len].iter().map(|&b| b as TokenId));
            rest = &rest[ch_len..];
        }
        Ok(TokenSeq {
            ids,
            tokenizer_name: Self::NAME.to_owned(),
        })
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizeError> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                0..=255 => bytes.push(id as u8),
                Self::EOS => {}
                _ => {
                    let tag = Tag::ALL
                        .get((id - Self::TAG_BASE) as usize)
                        .ok_or(TokenizeError::UnknownId(id, Self::NAME))?;
                    bytes.extend_from_slice(tag.literal().as_bytes());
                }
            }
        }
        String::from_utf8(bytes).map_err(|_| TokenizeError::InvalidUtf8)
    }

    fn special(&self, token: SpecialToken) -> TokenId {
        match token {
            SpecialToken::Eos => Self::EOS,
            SpecialToken::Tag(tag) => Self::TAG_BASE + tag.ordinal() as TokenId,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_ids_follow_first_appearance() {
        let tok = WordTokenizer::from_corpus(["a b", "a c"]);
        assert_eq!(tok.encode("a b").unwrap().ids, [1, 2]);
        assert_eq!(tok.encode("a c").unwrap().ids, [1, 3]);
        assert_eq!(tok.special(SpecialToken::Eos), 0);
        assert_eq!(tok.tag_id(Tag::OpenReference), 4);
        assert_eq!(tok.tag_id(Tag::CloseClaim), 7);
        assert_eq!(tok.decode(&[1, 2]).unwrap(), "a b");
    }

    #[test]
    fn word_tokenizer_keeps_odd_whitespace() {
        let text = " a  b\tc ";
        let tok = WordTokenizer::from_corpus([text]);
        let seq = tok.encode(text).unwrap();
        assert_eq!(tok.decode(&seq.ids).unwrap(), text);
    }

    #[test]
    fn word_tokenizer_rejects_unknown() {
        let tok = WordTokenizer::from_corpus(["a b"]);
        assert!(matches!(tok.encode("a z"), Err(TokenizeError::UnknownWord(w, _)) if w == "z"));
        assert!(tok.decode(&[99]).is_err());
    }

    #[test]
    fn tags_are_single_tokens() {
        let tok = WordTokenizer::from_corpus(["x"]);
        let seq = tok.encode("<reference> x </reference>").unwrap();
        assert_eq!(seq.ids, [tok.tag_id(Tag::OpenReference), 1, tok.tag_id(Tag::CloseReference)]);
        let byte = ByteTokenizer;
        let seq = byte.encode("<claim>é</claim>").unwrap();
        assert_eq!(seq.ids, [259, 0xc3, 0xa9, 260]);
        assert_eq!(byte.decode(&seq.ids).unwrap(), "<claim>é</claim>");
    }

    #[test]
    fn by_name_selects() {
        assert_eq!(by_name("byte", []).unwrap().name(), "byte");
        assert_eq!(by_name("word", ["q"]).unwrap().name(), "word");
        assert!(by_name("bpe", []).is_err());
    }

    proptest! {
        #[test]
        fn word_round_trip(text in "[a-c ,.\t\n]{0,30}") {
            let tok = WordTokenizer::from_corpus([text.as_str()]);
            let ids = tok.encode(&text).unwrap().ids;
            prop_assert_eq!(tok.decode(&ids).unwrap(), text);
        }

        #[test]
        fn byte_round_trip(text in "\\PC{0,30}") {
            let ids = ByteTokenizer.encode(&text).unwrap().ids;
            prop_assert_eq!(ByteTokenizer.decode(&ids).unwrap(), text);
        }
    }
}
