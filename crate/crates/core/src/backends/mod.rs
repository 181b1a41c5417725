//! Model roles the pipeline talks to: candidate scoring and free generation,
//! NLI entailment, and answer segmentation.
//!
//! Each role is a trait with a thin required method and provided wrappers
//! that enforce the contract (candidate closure and renormalization, stop
//! strings, the empty-premise rule). HTTP clients live in [`http`];
//! deterministic stand-ins in [`mock`].

pub mod http;
pub mod mock;
pub mod segment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passage::PassageSet;
use crate::tokenizer::TokenId;

pub use segment::{parse_segmentation_reply, ClauseCitation, SegmentationPrompt};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("segmentation reply did not parse: {0}")]
    SegmentationFormat(String),
}

impl BackendError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub token_id: TokenId,
    /// Natural-log probability, normalized over the candidate set.
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    /// A stop string was produced (and removed from the text).
    Stop,
    /// The token limit was reached first.
    Length,
    /// The model ended on its own without producing a stop string.
    Eos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeText {
    pub text: String,
    pub tokens: usize,
    pub finish: FinishReason,
}

impl FreeText {
    pub fn truncated(&self) -> bool {
        self.finish == FinishReason::Length
    }

    /// Cuts `raw` at the first stop string, then at `max_tokens`
    /// whitespace-delimited words. Used by backends that produce a whole
    /// reply at once.
    pub fn from_reply(raw: &str, stop: &[&str], max_tokens: usize) -> Self {
        let cut = stop
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| raw.find(s))
            .min();
        let (body, mut finish) = match cut {
            Some(at) => (&raw[..at], FinishReason::Stop),
            None => (raw, FinishReason::Eos),
        };
        let words: Vec<(usize, &str)> = body
            .split_whitespace()
            .map(|w| (w.as_ptr() as usize - body.as_ptr() as usize, w))
            .collect();
        let text = if words.len() > max_tokens {
            finish = FinishReason::Length;
            let (start, last) = words[max_tokens - 1];
            &body[..start + last.len()]
        } else {
            body
        };
        Self {
            text: text.to_owned(),
            tokens: words.len().min(max_tokens),
            finish,
        }
    }
}

/// Log-softmax over the candidate set.
pub fn renormalize(scores: &mut [ScoredCandidate]) {
    let max = scores.iter().map(|s| s.logprob).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let uniform = -(scores.len() as f64).ln();
        scores.iter_mut().for_each(|s| s.logprob = uniform);
        return;
    }
    let lse = max + scores.iter().map(|s| (s.logprob - max).exp()).sum::<f64>().ln();
    scores.iter_mut().for_each(|s| s.logprob -= lse);
}

/// Autoregressive model behind candidate scoring and free generation.
pub trait GenerationBackend: Send + Sync {
    /// Raw scores for `candidates` given `context`; any monotone scale.
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError>;

    /// Raw continuation of `context`, honoring `stop` and `max_tokens`.
    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError>;

    /// Scores exactly the requested candidates, renormalized over the set.
    fn score_candidates(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::Usage("candidate set is empty".into()));
        }
        let reply = self.score(context, candidates)?;
        let mut ordered = Vec::with_capacity(candidates.len());
        for &id in candidates {
            let hit = reply
                .iter()
                .find(|s| s.token_id == id)
                .ok_or_else(|| BackendError::Protocol(format!("reply is missing candidate {id}")))?;
            if hit.logprob.is_nan() || hit.logprob == f64::INFINITY {
                return Err(BackendError::Protocol(format!("non-finite score for candidate {id}")));
            }
            ordered.push(*hit);
        }
        if let Some(extra) = reply.iter().find(|s| !candidates.contains(&s.token_id)) {
            return Err(BackendError::Protocol(format!(
                "reply scores unrequested token {}",
                extra.token_id
            )));
        }
        renormalize(&mut ordered);
        Ok(ordered)
    }

    /// Free generation up to (excluding) the first stop string or `max_tokens`.
    fn generate_free(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        if max_tokens == 0 {
            return Err(BackendError::Usage("max_tokens must be at least 1".into()));
        }
        let mut out = self.generate(context, stop, max_tokens)?;
        if let Some(at) = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| out.text.find(s)).min() {
            out.text.truncate(at);
            out.finish = FinishReason::Stop;
        }
        Ok(out)
    }
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for &T {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        (**self).score(context, candidates)
    }

    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        (**self).generate(context, stop, max_tokens)
    }
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for Box<T> {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        (**self).score(context, candidates)
    }

    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        (**self).generate(context, stop, max_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub entailed: bool,
    pub score: f64,
    pub threshold_used: f64,
}

impl EntailmentVerdict {
    pub fn from_score(score: f64, threshold: f64) -> Self {
        Self {
            entailed: score >= threshold,
            score,
            threshold_used: threshold,
        }
    }
}

pub const DEFAULT_NLI_THRESHOLD: f64 = 0.5;

/// Premise/hypothesis entailment model.
pub trait NliBackend: Send + Sync {
    /// Entailment probability in `[0, 1]`.
    fn entailment_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError>;

    fn threshold(&self) -> f64 {
        DEFAULT_NLI_THRESHOLD
    }

    /// An empty premise supports nothing and is never sent to the model.
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError> {
        if premise.trim().is_empty() {
            return Ok(EntailmentVerdict::from_score(0.0, self.threshold()).with_entailed(false));
        }
        let score = self.entailment_score(premise, hypothesis)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(BackendError::Protocol(format!("entailment score {score} outside [0, 1]")));
        }
        Ok(EntailmentVerdict::from_score(score, self.threshold()))
    }
}

impl EntailmentVerdict {
    fn with_entailed(mut self, entailed: bool) -> Self {
        self.entailed = entailed;
        self
    }
}

impl<T: NliBackend + ?Sized> NliBackend for &T {
    fn entailment_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        (**self).entailment_score(premise, hypothesis)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

impl<T: NliBackend + ?Sized> NliBackend for Box<T> {
    fn entailment_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        (**self).entailment_score(premise, hypothesis)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

/// LLM that splits a long answer into clauses with supporting citations.
pub trait SegmenterBackend: Send + Sync {
    fn segment_answer(
        &self,
        question: &str,
        passages: &PassageSet,
        answer: &str,
    ) -> Result<Vec<ClauseCitation>, BackendError>;
}

impl<T: SegmenterBackend + ?Sized> SegmenterBackend for Box<T> {
    fn segment_answer(
        &self,
        question: &str,
        passages: &PassageSet,
        answer: &str,
    ) -> Result<Vec<ClauseCitation>, BackendError> {
        (**self).segment_answer(question, passages, answer)
    }
}
