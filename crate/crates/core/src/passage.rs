use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{normalize, Segmenter, SentenceSpan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: None,
            text: text.into(),
        }
    }
}

/// Location of one inventory sentence. Serialized as `[passage_id, index]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, usize)", into = "(String, usize)")]
pub struct SentenceRef {
    pub passage_id: String,
    pub index: usize,
}

impl SentenceRef {
    pub fn new(passage_id: impl Into<String>, index: usize) -> Self {
        Self {
            passage_id: passage_id.into(),
            index,
        }
    }
}

impl From<(String, usize)> for SentenceRef {
    fn from((passage_id, index): (String, usize)) -> Self {
        Self { passage_id, index }
    }
}

impl From<SentenceRef> for (String, usize) {
    fn from(r: SentenceRef) -> Self {
        (r.passage_id, r.index)
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.passage_id, self.index)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PassageError {
    #[error("passage {0:?} has empty text")]
    EmptyText(String),
    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),
}

/// Retrieved passages plus their sentence inventory.
///
/// The inventory is in passage order, then sentence order. Lookups by
/// sentence text compare normalized forms.
#[derive(Debug, Clone)]
pub struct PassageSet {
    passages: Vec<Passage>,
    inventory: Vec<SentenceSpan>,
    by_text: HashMap<String, Vec<usize>>,
    by_ref: HashMap<SentenceRef, usize>,
}

impl PassageSet {
    pub fn new(passages: Vec<Passage>, segmenter: &Segmenter) -> Result<Self, PassageError> {
        let mut inventory = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for p in &passages {
            if p.text.trim().is_empty() {
                return Err(PassageError::EmptyText(p.id.clone()));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(PassageError::DuplicateId(p.id.clone()));
            }
            inventory.extend(segmenter.split(&p.id, &p.text));
        }
        let mut by_text: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_ref = HashMap::new();
        for (pos, s) in inventory.iter().enumerate() {
            by_text.entry(normalize(&s.text)).or_default().push(pos);
            by_ref.insert(SentenceRef::new(&s.passage_id, s.index), pos);
        }
        Ok(Self {
            passages,
            inventory,
            by_text,
            by_ref,
        })
    }

    /// Passages from bare texts, with ids `"1"`, `"2"`, ... in order.
    pub fn from_texts<S: Into<String>>(
        texts: impl IntoIterator<Item = S>,
        segmenter: &Segmenter,
    ) -> Result<Self, PassageError> {
        let passages = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Passage::new((i + 1).to_string(), t))
            .collect();
        Self::new(passages, segmenter)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn inventory(&self) -> &[SentenceSpan] {
        &self.inventory
    }

    pub fn sentence(&self, r: &SentenceRef) -> Option<&SentenceSpan> {
        self.by_ref.get(r).map(|&i| &self.inventory[i])
    }

    pub fn passage_sentences<'a>(&'a self, passage_id: &'a str) -> impl Iterator<Item = &'a SentenceSpan> + 'a {
        self.inventory.iter().filter(move |s| s.passage_id == passage_id)
    }

    /// Every inventory location whose normalized text equals the normalized
    /// input. Empty means the sentence is not in the passages.
    pub fn find_sentence(&self, sentence: &str) -> Vec<SentenceRef> {
        self.by_text
            .get(&normalize(sentence))
            .map(|hits| {
                hits.iter()
                    .map(|&i| SentenceRef::new(&self.inventory[i].passage_id, self.inventory[i].index))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn contains_sentence(&self, sentence: &str) -> bool {
        self.by_text.contains_key(&normalize(sentence))
    }
}

/// Free-function form of [`PassageSet::find_sentence`].
pub fn find_sentence_in_passages(sentence: &str, passages: &PassageSet) -> Vec<SentenceRef> {
    passages.find_sentence(sentence)
}
