//! Training-data construction: answer segmentation into reference/claim
//! pairs, citation filtering, claim-model records and statistics.
//!
//! Backend-dependent stages never fail outright on an unreachable backend;
//! they return what was finished plus the ids still pending, so callers can
//! checkpoint and resume without repeating model calls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{
    parse_attributed_with, render_attributed, AttributedAnswer, ParseMode, RefClaimPair, Tag, DEFAULT_BRIDGE,
    DEFAULT_LEAD,
};
use crate::backends::{BackendError, NliBackend, SegmenterBackend};
use crate::passage::{PassageError, PassageSet};
use crate::scalar::{mean, Scalar};
use crate::textproc::{normalize, word_count, Segmenter};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {id}: {source}")]
    Passages { id: String, source: PassageError },
    #[error("sample {id}: {reason}")]
    Invalid { id: String, reason: String },
}

/// Raw input line: question, reference passages, plain answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub references: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone)]
pub struct RawSample {
    pub id: String,
    pub question: String,
    pub passages: PassageSet,
    pub answer: String,
}

impl RawSample {
    /// Passage ids are `"1"`, `"2"`, ...; a record without an id gets its
    /// line position.
    pub fn from_record(record: &RawRecord, position: usize, segmenter: &Segmenter) -> Result<Self, DatasetError> {
        let id = record.id.clone().unwrap_or_else(|| position.to_string());
        let invalid = |reason: &str| DatasetError::Invalid {
            id: id.clone(),
            reason: reason.to_owned(),
        };
        if record.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        if record.answer.trim().is_empty() {
            return Err(invalid("empty answer"));
        }
        if record.references.is_empty() {
            return Err(invalid("no reference passages"));
        }
        let passages = PassageSet::from_texts(record.references.iter().cloned(), segmenter)
            .map_err(|source| DatasetError::Passages { id: id.clone(), source })?;
        Ok(Self {
            id,
            question: record.question.clone(),
            passages,
            answer: record.answer.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub id: String,
    pub question: String,
    pub passages: PassageSet,
    pub answer_tagged: String,
    pub pairs: Vec<RefClaimPair>,
}

/// Line-delimited training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
    pub answer_tagged: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<RefClaimPair>>,
}

impl TrainingSample {
    pub fn to_record(&self) -> TrainingRecord {
        TrainingRecord {
            id: self.id.clone(),
            question: self.question.clone(),
            references: self.passages.passages().iter().map(|p| p.text.clone()).collect(),
            answer_tagged: self.answer_tagged.clone(),
            pairs: Some(self.pairs.clone()),
        }
    }

    /// Rebuilds a sample; without stored pairs the tagged answer is parsed.
    pub fn from_record(record: &TrainingRecord, segmenter: &Segmenter) -> Result<Self, DatasetError> {
        let passages = PassageSet::from_texts(record.references.iter().cloned(), segmenter).map_err(|source| {
            DatasetError::Passages {
                id: record.id.clone(),
                source,
            }
        })?;
        let pairs = match &record.pairs {
            Some(p) => p.clone(),
            None => {
                parse_attributed_with(&record.answer_tagged, ParseMode::Strict, segmenter)
                    .map_err(|e| DatasetError::Invalid {
                        id: record.id.clone(),
                        reason: e.to_string(),
                    })?
                    .pairs
            }
        };
        Ok(Self {
            id: record.id.clone(),
            question: record.question.clone(),
            passages,
            answer_tagged: record.answer_tagged.clone(),
            pairs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

/// Result of a backend-dependent stage over many samples.
#[derive(Debug)]
pub struct StageOutcome<T> {
    /// Finished samples, in input order.
    pub done: Vec<T>,
    pub dropped: Vec<Dropped>,
    /// Ids not processed because the backend became unavailable.
    pub pending: Vec<String>,
    pub interrupted: Option<BackendError>,
}

/// Turns segmenter pairs into a tagged training answer.
pub fn assemble_sample(
    raw: &RawSample,
    clauses: &[crate::backends::ClauseCitation],
    segmenter: &Segmenter,
) -> Result<TrainingSample, String> {
    let mut pairs = Vec::with_capacity(clauses.len());
    for (i, cc) in clauses.iter().enumerate() {
        let sentences: Vec<String> = segmenter.sentences(&cc.citation).into_iter().map(normalize).collect();
        let claim = normalize(&cc.clause);
        if sentences.is_empty() || claim.is_empty() {
            return Err(format!("pair {i} has an empty citation or clause"));
        }
        let located: Option<Vec<_>> = sentences
            .iter()
            .map(|s| raw.passages.find_sentence(s).into_iter().next())
            .collect();
        pairs.push(RefClaimPair {
            reference_sentences: sentences,
            claim_text: claim,
            provenance: located,
        });
    }
    let answer_tagged = render_attributed(&AttributedAnswer {
        pairs: pairs.clone(),
        ..AttributedAnswer::default()
    });
    match parse_attributed_with(&answer_tagged, ParseMode::Strict, segmenter) {
        Ok(a) if a.pairs.len() == pairs.len() => {}
        Ok(_) => return Err("tagged answer does not round-trip".into()),
        Err(e) => return Err(format!("tagged answer does not parse: {e}")),
    }
    Ok(TrainingSample {
        id: raw.id.clone(),
        question: raw.question.clone(),
        passages: raw.passages.clone(),
        answer_tagged,
        pairs,
    })
}

enum Step<T> {
    Done(T),
    Dropped(Dropped),
    Pending(String, BackendError),
}

fn collect<T>(steps: Vec<Step<T>>) -> StageOutcome<T> {
    let mut out = StageOutcome {
        done: Vec::new(),
        dropped: Vec::new(),
        pending: Vec::new(),
        interrupted: None,
    };
    for step in steps {
        match step {
            Step::Done(t) => out.done.push(t),
            Step::Dropped(d) => out.dropped.push(d),
            Step::Pending(id, e) => {
                out.pending.push(id);
                out.interrupted.get_or_insert(e);
            }
        }
    }
    out
}

/// Segments each answer and assembles tagged training samples.
///
/// Unparseable segmenter replies drop the sample with a reason; an
/// unavailable segmenter leaves the sample pending.
pub fn build_training_samples(raws: &[RawSample], segmenter: &dyn SegmenterBackend) -> StageOutcome<TrainingSample> {
    let sentence_splitter = Segmenter::default();
    let steps = raws
        .par_iter()
        .map(|raw| match segmenter.segment_answer(&raw.question, &raw.passages, &raw.answer) {
            Ok(clauses) => match assemble_sample(raw, &clauses, &sentence_splitter) {
                Ok(s) => Step::Done(s),
                Err(reason) => Step::Dropped(Dropped {
                    id: raw.id.clone(),
                    reason,
                }),
            },
            Err(e @ BackendError::Unavailable { .. }) => Step::Pending(raw.id.clone(), e),
            Err(e) => {
                log::info!("dropping sample {}: {e}", raw.id);
                Step::Dropped(Dropped {
                    id: raw.id.clone(),
                    reason: e.to_string(),
                })
            }
        })
        .collect();
    collect(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    StringMismatch,
    NliFail,
}

impl std::fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RemovalReason::StringMismatch => "string-mismatch",
            RemovalReason::NliFail => "nli-fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub reason: RemovalReason,
    /// Index of the first failing pair.
    pub pair: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub removed_string_mismatch: usize,
    pub removed_nli_fail: usize,
    pub removals: Vec<Removal>,
}

impl FilterReport {
    pub fn is_consistent(&self) -> bool {
        self.input_count == self.kept_count + self.removed_string_mismatch + self.removed_nli_fail
            && self.removals.len() == self.removed_string_mismatch + self.removed_nli_fail
    }
}

/// Verdict for one sample: `None` keeps it. Every pair is sent to the NLI
/// model, as in the tuple-level flag; a citation sentence missing from the
/// passages takes precedence as the reason.
pub fn check_sample(sample: &TrainingSample, nli: &dyn NliBackend) -> Result<Option<Removal>, BackendError> {
    let splitter = Segmenter::default();
    let mut mismatch = None;
    let mut nli_fail = None;
    for (i, pair) in sample.pairs.iter().enumerate() {
        let reference = pair.reference_text();
        let missing = splitter
            .sentences(&reference)
            .into_iter()
            .any(|s| !sample.passages.contains_sentence(s));
        if missing && mismatch.is_none() {
            mismatch = Some(i);
        }
        if !nli.entails(&reference, &pair.claim_text)?.entailed && nli_fail.is_none() {
            nli_fail = Some(i);
        }
    }
    let removal = |reason, pair| Removal {
        id: sample.id.clone(),
        reason,
        pair,
    };
    Ok(match (mismatch, nli_fail) {
        (Some(p), _) => Some(removal(RemovalReason::StringMismatch, p)),
        (None, Some(p)) => Some(removal(RemovalReason::NliFail, p)),
        (None, None) => None,
    })
}

/// Removes every sample with any unlocatable citation sentence or any
/// non-entailed pair. Pending samples (NLI unavailable) are neither kept
/// nor counted in the report.
pub fn filter_citations(
    samples: &[TrainingSample],
    nli: &dyn NliBackend,
) -> (StageOutcome<TrainingSample>, FilterReport) {
    let steps: Vec<Step<Result<TrainingSample, Removal>>> = samples
        .par_iter()
        .map(|s| match check_sample(s, nli) {
            Ok(None) => Step::Done(Ok(s.clone())),
            Ok(Some(r)) => Step::Done(Err(r)),
            Err(e) => Step::Pending(s.id.clone(), e),
        })
        .collect();
    let stage = collect(steps);
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for verdict in stage.done {
        report.input_count += 1;
        match verdict {
            Ok(s) => {
                report.kept_count += 1;
                kept.push(s);
            }
            Err(r) => {
                match r.reason {
                    RemovalReason::StringMismatch => report.removed_string_mismatch += 1,
                    RemovalReason::NliFail => report.removed_nli_fail += 1,
                }
                report.removals.push(r);
            }
        }
    }
    let dropped = report
        .removals
        .iter()
        .map(|r| Dropped {
            id: r.id.clone(),
            reason: format!("{} at pair {}", r.reason, r.pair),
        })
        .collect();
    (
        StageOutcome {
            done: kept,
            dropped,
            pending: stage.pending,
            interrupted: stage.interrupted,
        },
        report,
    )
}

/// Input/output pair for training the claim model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTrainingRecord {
    pub input_text: String,
    pub output_text: String,
}

fn reference_block(pair: &RefClaimPair) -> String {
    format!(
        "{DEFAULT_LEAD} {} {} {}",
        Tag::OpenReference,
        pair.reference_text(),
        Tag::CloseReference
    )
}

fn claim_block(pair: &RefClaimPair) -> String {
    format!("{DEFAULT_BRIDGE} {} {} {}", Tag::OpenClaim, pair.claim_text, Tag::CloseClaim)
}

/// One record per pair. The input is the pair's reference block, or with
/// `full_history` every earlier pair followed by it.
pub fn split_for_claim_model(samples: &[TrainingSample], full_history: bool) -> Vec<ClaimTrainingRecord> {
    let mut out = Vec::new();
    for sample in samples {
        let mut history: Vec<String> = Vec::new();
        for pair in &sample.pairs {
            let block = reference_block(pair);
            let input_text = if full_history && !history.is_empty() {
                format!("{} {block}", history.join(" "))
            } else {
                block.clone()
            };
            let output_text = claim_block(pair);
            out.push(ClaimTrainingRecord {
                input_text,
                output_text: output_text.clone(),
            });
            history.push(block);
            history.push(output_text);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats<S> {
    pub samples: usize,
    /// Words in the concatenated claims.
    pub avg_answer_words: S,
    /// Words in the concatenated reference sentences.
    pub avg_citation_words: S,
    /// Per sample, the mean passage length; then averaged over samples.
    pub avg_passage_words: S,
}

pub fn dataset_stats<S: Scalar>(samples: &[TrainingSample]) -> DatasetStats<S> {
    let answer = samples.iter().map(|s| {
        S::from_count(
            s.pairs
                .iter()
                .map(|p| word_count(&p.claim_text))
                .sum::<usize>(),
        )
    });
    let citation = samples.iter().map(|s| {
        S::from_count(
            s.pairs
                .iter()
                .flat_map(|p| &p.reference_sentences)
                .map(|r| word_count(r))
                .sum::<usize>(),
        )
    });
    let passage = samples.iter().map(|s| {
        let ps = s.passages.passages();
        let total: usize = ps.iter().map(|p| word_count(&p.text)).sum();
        if ps.is_empty() {
            S::zero()
        } else {
            S::ratio(total, ps.len())
        }
    });
    DatasetStats {
        samples: samples.len(),
        avg_answer_words: mean(answer).unwrap_or_else(S::zero),
        avg_citation_words: mean(citation).unwrap_or_else(S::zero),
        avg_passage_words: mean(passage).unwrap_or_else(S::zero),
    }
}
