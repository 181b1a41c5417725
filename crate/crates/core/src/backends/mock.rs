//! Deterministic stand-ins for the model roles.
//!
//! All mocks are `Send + Sync` and give identical outputs for identical
//! inputs (and seed). [`ScriptedMock`] counts scoring calls, so share one
//! instance per session when a script refers to step numbers.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::segment::{parse_segmentation_reply, ClauseCitation};
use super::{BackendError, FreeText, GenerationBackend, NliBackend, ScoredCandidate, SegmenterBackend};
use crate::answer::{Tag, DEFAULT_BRIDGE, DEFAULT_LEAD};
use crate::passage::PassageSet;
use crate::textproc::Segmenter;
use crate::tokenizer::TokenId;

fn flat_scores(candidates: &[TokenId]) -> Vec<ScoredCandidate> {
    candidates
        .iter()
        .map(|&token_id| ScoredCandidate { token_id, logprob: 0.0 })
        .collect()
}

/// Scores every candidate equally; free generation returns a fixed reply.
#[derive(Debug, Clone, Default)]
pub struct UniformMock {
    reply: String,
}

impl UniformMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_reply(reply: impl Into<String>) -> Self {
        Self { reply: reply.into() }
    }
}

impl GenerationBackend for UniformMock {
    fn score(&self, _context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        Ok(flat_scores(candidates))
    }

    fn generate(&self, _context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        Ok(FreeText::from_reply(&self.reply, stop, max_tokens))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// At the n-th scoring call (0-based), prefer this token if offered.
    AtStep(usize, TokenId),
    /// Prefer this token whenever offered.
    Always(TokenId),
}

/// Follows a script of scoring preferences and a queue of free replies.
///
/// Rules are checked in order; the first one that applies to the call and
/// names an offered token wins. Unscripted calls score uniformly. When the
/// reply queue is empty the fallback reply (if any) is used.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    rules: Vec<ScoreRule>,
    replies: Mutex<VecDeque<String>>,
    fallback: Option<String>,
    step: AtomicUsize,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, rule: ScoreRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn reply(self, reply: impl Into<String>) -> Self {
        self.replies.lock().unwrap().push_back(reply.into());
        self
    }

    pub fn fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn score_calls(&self) -> usize {
        self.step.load(Ordering::SeqCst)
    }
}

impl GenerationBackend for ScriptedMock {
    fn score(&self, _context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        let step = self.step.fetch_add(1, Ordering::SeqCst);
        let preferred = self.rules.iter().find_map(|r| match *r {
            ScoreRule::AtStep(s, t) if s == step && candidates.contains(&t) => Some(t),
            ScoreRule::Always(t) if candidates.contains(&t) => Some(t),
            _ => None,
        });
        let mut scores = flat_scores(candidates);
        if let Some(t) = preferred {
            for s in &mut scores {
                s.logprob = if s.token_id == t { 0.0 } else { -5.0 };
            }
        }
        Ok(scores)
    }

    fn generate(&self, _context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        let reply = self.replies.lock().unwrap().pop_front();
        let reply = reply
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| BackendError::Protocol("scripted replies exhausted".into()))?;
        Ok(FreeText::from_reply(&reply, stop, max_tokens))
    }
}

fn hash_of(parts: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    parts.hash(&mut h);
    h.finish()
}

/// Pseudo-random but fully deterministic model.
///
/// Scores are a hash of `(seed, context, token)`. Free replies imitate a
/// fine-tuned answerer: claims restate a sentence of the last reference
/// block; unconstrained references copy passage sentences from the prompt
/// and sometimes drop a word, so they are not always verbatim.
#[derive(Debug, Clone)]
pub struct SeededMock {
    seed: u64,
    segmenter: Segmenter,
}

impl SeededMock {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            segmenter: Segmenter::default(),
        }
    }

    fn unit(&self, parts: impl Hash) -> f64 {
        (hash_of((self.seed, parts)) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn pick<'a, T>(&self, items: &'a [T], salt: impl Hash) -> Option<&'a T> {
        if items.is_empty() {
            return None;
        }
        let i = (hash_of((self.seed, salt)) % items.len() as u64) as usize;
        items.get(i)
    }

    /// Sentences of the numbered passage lines (`[k] ...`) in the context.
    fn passage_sentences<'a>(&self, context: &'a str) -> Vec<&'a str> {
        context
            .lines()
            .filter_map(|l| {
                let rest = l.strip_prefix('[')?;
                let close = rest.find("] ")?;
                rest[..close].chars().all(|c| c.is_ascii_digit()).then(|| &rest[close + 2..])
            })
            .flat_map(|body| self.segmenter.sentences(body))
            .collect()
    }

    fn last_reference(context: &str) -> &str {
        let open = Tag::OpenReference.literal();
        let close = Tag::CloseReference.literal();
        let Some(start) = context.rfind(open) else {
            return "";
        };
        let body = &context[start + open.len()..];
        body.find(close).map_or(body, |end| &body[..end])
    }

    fn claim_for(&self, context: &str) -> String {
        let reference = Self::last_reference(context);
        let sentences = self.segmenter.sentences(reference);
        let Some(sentence) = self.pick(&sentences, ("claim", context)) else {
            return "No further details.".to_owned();
        };
        let words: Vec<&str> = sentence.split_whitespace().collect();
        if words.len() > 4 && self.unit(("shorten", context)) < 0.5 {
            let keep = words.len() / 2 + 1;
            let mut s = words[..keep].join(" ");
            s = s.trim_end_matches([',', ';', ':', '.']).to_owned();
            s.push('.');
            s
        } else {
            sentence.to_string()
        }
    }

    fn reference_for(&self, context: &str, salt: usize) -> String {
        let sentences = self.passage_sentences(context);
        let n = 1 + (hash_of((self.seed, "n", context, salt)) % 2) as usize;
        let mut chosen = Vec::new();
        for k in 0..n {
            if let Some(s) = self.pick(&sentences, ("ref", context, salt, k)) {
                let s = s.to_string();
                let words: Vec<&str> = s.split_whitespace().collect();
                if words.len() > 3 && self.unit(("garble", context, salt, k)) < 0.25 {
                    chosen.push(words[..words.len() - 1].join(" ") + ".");
                } else {
                    chosen.push(s);
                }
            }
        }
        if chosen.is_empty() {
            "Nothing relevant.".to_owned()
        } else {
            chosen.join(" ")
        }
    }

    fn full_answer(&self, context: &str) -> String {
        let mut out = Vec::new();
        for i in 0..2 {
            let reference = self.reference_for(context, i);
            let claim = self.claim_for(&format!("<reference>{reference}</reference>"));
            out.push(format!(
                "{DEFAULT_LEAD} <reference> {reference} </reference> {DEFAULT_BRIDGE} <claim> {claim} </claim>"
            ));
        }
        out.join(" ")
    }
}

impl GenerationBackend for SeededMock {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        Ok(candidates
            .iter()
            .map(|&token_id| ScoredCandidate {
                token_id,
                logprob: self.unit((context, token_id)).max(1e-12).ln(),
            })
            .collect())
    }

    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        let has = |t: Tag| stop.contains(&t.literal());
        let reply = if has(Tag::CloseClaim) {
            format!("{} {}", self.claim_for(context), Tag::CloseClaim.literal())
        } else if has(Tag::CloseReference) {
            format!("{} {}", self.reference_for(context, 0), Tag::CloseReference.literal())
        } else {
            self.full_answer(context)
        };
        Ok(FreeText::from_reply(&reply, stop, max_tokens))
    }
}

/// Every call fails as if the endpoint were down.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unreachable;

impl Unreachable {
    fn err() -> BackendError {
        BackendError::Unavailable {
            attempts: 1,
            last: "mock endpoint is unreachable".into(),
        }
    }
}

impl GenerationBackend for Unreachable {
    fn score(&self, _: &str, _: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        Err(Self::err())
    }

    fn generate(&self, _: &str, _: &[&str], _: usize) -> Result<FreeText, BackendError> {
        Err(Self::err())
    }
}

impl NliBackend for Unreachable {
    fn entailment_score(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Err(Self::err())
    }
}

impl SegmenterBackend for Unreachable {
    fn segment_answer(&self, _: &str, _: &PassageSet, _: &str) -> Result<Vec<ClauseCitation>, BackendError> {
        Err(Self::err())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    Score { context: String, candidates: Vec<TokenId> },
    Generate { context: String, stop: Vec<String> },
}

impl Call {
    pub fn context(&self) -> &str {
        match self {
            Call::Score { context, .. } | Call::Generate { context, .. } => context,
        }
    }
}

/// Wraps a generation backend and records every call.
#[derive(Debug, Default)]
pub struct Recording<B> {
    inner: B,
    calls: Mutex<Vec<Call>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Call> {
        self.calls.lock().unwrap().clone()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: GenerationBackend> GenerationBackend for Recording<B> {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        self.calls.lock().unwrap().push(Call::Score {
            context: context.to_owned(),
            candidates: candidates.to_vec(),
        });
        self.inner.score(context, candidates)
    }

    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        self.calls.lock().unwrap().push(Call::Generate {
            context: context.to_owned(),
            stop: stop.iter().map(|s| s.to_string()).collect(),
        });
        self.inner.generate(context, stop, max_tokens)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "to", "in", "on", "at", "by", "for", "with", "as", "and", "or", "but", "is",
    "are", "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "from", "which",
];

/// Lowercased alphanumeric words minus a small stopword list.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Entailed iff the hypothesis's content words all occur in the premise.
#[derive(Debug, Clone, Copy)]
pub struct ContainmentNli {
    threshold: f64,
}

impl Default for ContainmentNli {
    fn default() -> Self {
        Self {
            threshold: super::DEFAULT_NLI_THRESHOLD,
        }
    }
}

impl ContainmentNli {
    pub fn new() -> Self {
        Self::default()
    }
}

impl NliBackend for ContainmentNli {
    fn entailment_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let premise = content_words(premise);
        Ok(if content_words(hypothesis).is_subset(&premise) { 1.0 } else { 0.0 })
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Returns canned replies keyed by answer text, parsed like a live reply.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSegmenter {
    replies: HashMap<String, String>,
}

impl ScriptedSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, answer: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies.insert(answer.into(), reply.into());
        self
    }

    /// Scripts a well-formed reply for `answer` from the given pairs.
    pub fn pairs(self, answer: impl Into<String>, pairs: &[ClauseCitation]) -> Self {
        let reply = serde_json::json!({ "pairs": pairs }).to_string();
        self.reply(answer, reply)
    }
}

impl SegmenterBackend for ScriptedSegmenter {
    fn segment_answer(&self, _question: &str, _passages: &PassageSet, answer: &str) -> Result<Vec<ClauseCitation>, BackendError> {
        parse_segmentation_reply(self.replies.get(answer).map_or("", String::as_str))
    }
}

/// Splits the answer into sentences and cites, for each, the inventory
/// sentence sharing the most content words (first on ties).
#[derive(Debug, Clone, Default)]
pub struct OverlapSegmenter {
    segmenter: Segmenter,
}

impl OverlapSegmenter {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SegmenterBackend for OverlapSegmenter {
    fn segment_answer(&self, _question: &str, passages: &PassageSet, answer: &str) -> Result<Vec<ClauseCitation>, BackendError> {
        let mut pairs = Vec::new();
        for clause in self.segmenter.sentences(answer) {
            let words = content_words(clause);
            let best = passages
                .inventory()
                .iter()
                .map(|s| (content_words(&s.text).intersection(&words).count(), s))
                .fold(None, |best: Option<(usize, _)>, cur| match best {
                    Some(b) if b.0 >= cur.0 => Some(b),
                    _ => Some(cur),
                });
            if let Some((_, s)) = best {
                pairs.push(ClauseCitation::new(clause, s.text.clone()));
            }
        }
        parse_segmentation_reply(&serde_json::json!({ "pairs": pairs }).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_are_equal() {
        let s = UniformMock::new().score_candidates("ctx", &[1, 2]).unwrap();
        assert!((s[0].logprob - 0.5f64.ln()).abs() < 1e-12);
        assert!((s[1].logprob - 0.5f64.ln()).abs() < 1e-12);
        assert!(matches!(UniformMock::new().score_candidates("ctx", &[]), Err(BackendError::Usage(_))));
    }

    #[test]
    fn scripted_prefers_token_at_step() {
        let m = ScriptedMock::new().rule(ScoreRule::AtStep(0, 1));
        let s = m.score_candidates("ctx", &[1, 2]).unwrap();
        assert!(s[0].logprob > s[1].logprob);
        let s = m.score_candidates("ctx", &[1, 2]).unwrap();
        assert_eq!(s[0].logprob, s[1].logprob);
        assert_eq!(m.score_calls(), 2);
    }

    #[test]
    fn scripted_free_replies() {
        let m = ScriptedMock::new().reply("B. </claim>").reply("x y z");
        let f = m.generate_free("ctx", &["</claim>"], 10).unwrap();
        assert_eq!(f.text, "B. ");
        let f = m.generate_free("ctx", &["</claim>"], 2).unwrap();
        assert_eq!(f.text, "x y");
        assert!(f.truncated());
        assert!(m.generate_free("ctx", &[], 5).is_err());
        assert!(matches!(UniformMock::new().generate_free("c", &[], 0), Err(BackendError::Usage(_))));
    }

    #[test]
    fn single_token_limit() {
        let f = UniformMock::with_reply("alpha beta").generate_free("c", &["</claim>"], 1).unwrap();
        assert_eq!(f.text, "alpha");
        assert_eq!(f.tokens, 1);
    }

    #[test]
    fn seeded_is_deterministic() {
        let a = SeededMock::new(7);
        let b = SeededMock::new(7);
        let c = SeededMock::new(8);
        let sa = a.score_candidates("some context", &[1, 2, 3]).unwrap();
        assert_eq!(sa, b.score_candidates("some context", &[1, 2, 3]).unwrap());
        assert_ne!(sa, c.score_candidates("some context", &[1, 2, 3]).unwrap());
        let total: f64 = sa.iter().map(|s| s.logprob.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let ctx = "<reference> The cat sat on the mat. Dogs bark. </reference> We can know that: <claim>";
        let f1 = a.generate_free(ctx, &["</claim>"], 64).unwrap();
        assert_eq!(f1, b.generate_free(ctx, &["</claim>"], 64).unwrap());
        assert!(!f1.text.trim().is_empty());
    }

    #[test]
    fn seeded_reference_comes_from_prompt_passages() {
        let m = SeededMock::new(1);
        let ctx = "Question: q\n[1] Alpha beta gamma. Delta epsilon.\n[2] Zeta eta theta.\nOutput:";
        assert_eq!(m.passage_sentences(ctx), ["Alpha beta gamma.", "Delta epsilon.", "Zeta eta theta."]);
        let f = m.generate_free(ctx, &["</reference>"], 64).unwrap();
        assert!(!f.text.trim().is_empty());
    }

    #[test]
    fn containment_oracle() {
        let nli = ContainmentNli::new();
        assert!(nli.entails("the cat sat on the mat", "the cat sat").unwrap().entailed);
        assert!(!nli.entails("", "the cat sat").unwrap().entailed);
        assert!(!nli.entails("dogs bark", "cats meow").unwrap().entailed);
        assert!(nli.entails("Some text here.", "Some text here.").unwrap().entailed);
        let v = nli.entails("dogs bark", "cats meow").unwrap();
        assert_eq!(v.threshold_used, 0.5);
        assert_eq!(v.score, 0.0);
    }

    #[test]
    fn scripted_segmenter() {
        let set = PassageSet::from_texts(["X one. Y two."], &Segmenter::default()).unwrap();
        let seg = ScriptedSegmenter::new()
            .pairs("ans", &[ClauseCitation::new("c1", "X one."), ClauseCitation::new("c2", "Y two.")])
            .reply("bad", "not json");
        let pairs = seg.segment_answer("q", &set, "ans").unwrap();
        assert_eq!(pairs.iter().map(|p| p.clause.as_str()).collect::<Vec<_>>(), ["c1", "c2"]);
        assert!(matches!(seg.segment_answer("q", &set, "bad"), Err(BackendError::SegmentationFormat(_))));
        assert!(matches!(seg.segment_answer("q", &set, "unknown"), Err(BackendError::SegmentationFormat(_))));
    }

    #[test]
    fn overlap_segmenter_cites_best_sentence() {
        let set = PassageSet::from_texts(["Cats purr softly. Dogs bark loudly."], &Segmenter::default()).unwrap();
        let pairs = OverlapSegmenter::new()
            .segment_answer("q", &set, "Dogs often bark. Cats purr.")
            .unwrap();
        assert_eq!(pairs[0].citation, "Dogs bark loudly.");
        assert_eq!(pairs[1].citation, "Cats purr softly.");
    }

    #[test]
    fn recording_logs_contexts() {
        let r = Recording::new(UniformMock::with_reply("x"));
        r.score_candidates("a", &[1]).unwrap();
        r.generate_free("b", &["</claim>"], 3).unwrap();
        let calls = r.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].context(), "b");
    }
}
