//! Answer generation: prompting passthrough, unified one-model generation,
//! and interleaved generation with separate reference and claim models.
//!
//! The engine owns all connectives and tags. Reference parts are decoded
//! either under the prefix-tree constraint (greedy argmax over the tokens
//! the walker allows) or freely and split into sentences afterwards. Claim
//! parts are always free generation up to `</claim>`.

mod prompt;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{
    parse_attributed_with, AnswerRecord, AttributedAnswer, ForcedKind, GenMode, GenerationTrace, MalformedOutput,
    ParseMode, Phase, RefClaimPair, Tag, DEFAULT_BRIDGE, DEFAULT_LEAD,
};
use crate::backends::{BackendError, GenerationBackend};
use crate::passage::{PassageSet, SentenceRef};
use crate::textproc::{normalize, Segmenter};
use crate::tokenizer::{self, SpecialToken, TokenId, TokenizeError, Tokenizer};
use crate::trie::{build_prefix_tree, Move, PrefixTree, TrieError, Walker};

pub use prompt::{PromptTemplate, DEFAULT_INSTRUCTION};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestTokenId,
}

/// What the claim model sees in interleave mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimContext {
    /// Only the current `lead <reference> ... </reference>` block.
    #[default]
    CurrentBlock,
    /// Every pair so far plus the current reference block (never the prompt).
    FullHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub mode: GenMode,
    /// Decode reference parts under the prefix-tree constraint.
    pub constrained: bool,
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub max_ref_sentences_per_pair: usize,
    pub max_claim_tokens: usize,
    /// Limit for unconstrained reference parts.
    pub max_reference_tokens: usize,
    /// Limit for the single free run of prompt-mode passthrough.
    pub max_answer_tokens: usize,
    pub tie_break: TieBreak,
    pub seed: u64,
    pub claim_context: ClaimContext,
    pub tokenizer: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            mode: GenMode::Interleave,
            constrained: true,
            min_pairs: 2,
            max_pairs: 5,
            max_ref_sentences_per_pair: 6,
            max_claim_tokens: 128,
            max_reference_tokens: 256,
            max_answer_tokens: 1024,
            tie_break: TieBreak::LowestTokenId,
            seed: 0,
            claim_context: ClaimContext::CurrentBlock,
            tokenizer: tokenizer::WordTokenizer::NAME.to_owned(),
        }
    }
}

impl GenConfig {
    /// Pair-count bounds by dataset: `asqa` 2–5, `eli5` 4–6.
    pub fn preset(name: &str) -> Option<Self> {
        let (min_pairs, max_pairs) = match name {
            "asqa" => (2, 5),
            "eli5" => (4, 6),
            _ => return None,
        };
        Some(Self {
            min_pairs,
            max_pairs,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Config(m));
        if self.min_pairs < 1 || self.min_pairs > self.max_pairs {
            return bad(format!(
                "pair bounds must satisfy 1 <= min_pairs <= max_pairs (got {}..{})",
                self.min_pairs, self.max_pairs
            ));
        }
        if self.max_ref_sentences_per_pair < 1 {
            return bad("max_ref_sentences_per_pair must be at least 1".into());
        }
        if self.max_claim_tokens < 1 || self.max_reference_tokens < 1 || self.max_answer_tokens < 1 {
            return bad("token limits must be at least 1".into());
        }
        Ok(())
    }
}

/// Sentences, their provenance when located, and the number of model decisions.
type RefOutcome = (Vec<String>, Option<Vec<SentenceRef>>, usize);

#[derive(Debug, Error)]
pub enum GenError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("backend failed after {} step(s): {source}", trace.steps.len())]
    Backend {
        source: BackendError,
        partial: String,
        trace: Box<GenerationTrace>,
    },
    #[error("generated answer is malformed: {source}")]
    Malformed {
        source: MalformedOutput,
        partial: String,
        trace: Box<GenerationTrace>,
    },
}

impl GenError {
    /// Trace and text produced before the failure, if generation had started.
    pub fn partial(&self) -> Option<(&str, &GenerationTrace)> {
        match self {
            GenError::Backend { partial, trace, .. } | GenError::Malformed { partial, trace, .. } => {
                Some((partial, trace))
            }
            _ => None,
        }
    }
}

/// Builds the tokenizer named in the config for one passage set. The word
/// tokenizer's vocabulary is the normalized inventory.
pub fn tokenizer_for(name: &str, passages: &PassageSet) -> Result<Box<dyn Tokenizer>, TokenizeError> {
    let texts: Vec<String> = passages.inventory().iter().map(|s| normalize(&s.text)).collect();
    tokenizer::by_name(name, texts.iter().map(String::as_str))
}

enum Fail {
    Backend(BackendError),
    Malformed(String),
    Trie(TrieError),
}

impl From<BackendError> for Fail {
    fn from(e: BackendError) -> Self {
        Fail::Backend(e)
    }
}

impl From<TrieError> for Fail {
    fn from(e: TrieError) -> Self {
        Fail::Trie(e)
    }
}

/// One generation session: the prompt, the tagged history so far, and the trace.
pub struct Session<'a> {
    pub prompt: String,
    pub history: String,
    pub trace: GenerationTrace,
    pairs: Vec<RefClaimPair>,
    block_start: usize,
    tokenizer: &'a dyn Tokenizer,
    tree: Option<&'a PrefixTree>,
    passages: &'a PassageSet,
    config: &'a GenConfig,
    segmenter: Segmenter,
}

impl<'a> Session<'a> {
    pub fn new(
        question: &str,
        passages: &'a PassageSet,
        tokenizer: &'a dyn Tokenizer,
        tree: Option<&'a PrefixTree>,
        config: &'a GenConfig,
        template: &PromptTemplate,
    ) -> Self {
        Self {
            prompt: template.render(question, passages),
            history: String::new(),
            trace: GenerationTrace::new(config.mode),
            pairs: Vec::new(),
            block_start: 0,
            tokenizer,
            tree,
            passages,
            config,
            segmenter: Segmenter::default(),
        }
    }

    pub fn pairs(&self) -> &[RefClaimPair] {
        &self.pairs
    }

    fn emit(&mut self, piece: &str, phase: Phase) {
        if !self.history.is_empty() {
            self.history.push(' ');
        }
        self.history.push_str(piece);
        if matches!(phase, Phase::Connective | Phase::Tag) {
            self.trace.step(phase, 0);
        }
    }

    fn with_prompt(&self, extra: &str) -> String {
        let mut s = format!("{} {}", self.prompt, self.history);
        if !extra.is_empty() {
            s.push(' ');
            s.push_str(extra);
        }
        s
    }

    fn open_reference(&mut self) {
        self.block_start = self.history.len() + usize::from(!self.history.is_empty());
        self.emit(DEFAULT_LEAD, Phase::Connective);
        self.emit(Tag::OpenReference.literal(), Phase::Tag);
    }

    /// Decodes one reference part; the history must end just after `<reference>`.
    /// Returns the sentences and, when known, their inventory locations.
    fn reference_part(&mut self, backend: &dyn GenerationBackend) -> Result<(Vec<String>, Option<Vec<SentenceRef>>), Fail> {
        let pair = self.pairs.len();
        let (sentences, provenance, tokens) = match (self.config.constrained, self.tree) {
            (true, Some(tree)) => self.constrained_reference(tree, backend, pair)?,
            (true, None) => return Err(Fail::Malformed("constrained decoding needs a prefix tree".into())),
            (false, _) => self.free_reference(backend)?,
        };
        self.trace.step(Phase::Reference, tokens);
        for s in &sentences {
            self.emit(s, Phase::Reference);
        }
        self.emit(Tag::CloseReference.literal(), Phase::Tag);
        Ok((sentences, provenance))
    }

    fn constrained_reference(
        &mut self,
        tree: &PrefixTree,
        backend: &dyn GenerationBackend,
        pair: usize,
    ) -> Result<RefOutcome, Fail> {
        let close = self.tokenizer.tag_id(Tag::CloseReference);
        let cap = self.config.max_ref_sentences_per_pair;
        let mut walker = tree.walker();
        let mut decisions = 0;
        loop {
            let completed = walker.state().completed.len();
            let mut valid = walker.valid_next_tokens(close);
            if walker.at_sentence_boundary() {
                // a commit-and-start move would exceed the sentence cap
                let pending = usize::from(!walker.at_root());
                if completed + pending >= cap {
                    valid.retain(|&t| t == close || walker.classify(t, close) == Some(Move::Continue) && !walker.at_root());
                }
            }
            if valid.is_empty() {
                return Err(Fail::Trie(TrieError::Invariant("walker offered no tokens".into())));
            }
            if valid.len() == 1 && valid.contains(&close) {
                self.trace.force(pair, ForcedKind::ForcedCloseReference);
                walker.close()?;
                break;
            }
            let token = if valid.len() == 1 {
                *valid.first().unwrap()
            } else {
                let context = self.with_prompt(&partial_text(&walker, self.tokenizer));
                pick(backend, &context, &valid)?
            };
            decisions += 1;
            if token == close {
                walker.close()?;
                break;
            }
            walker.advance(token)?;
        }
        let sentences = walker.completed().map(|l| l.text.clone()).collect();
        Ok((sentences, Some(walker.completed_refs()), decisions))
    }

    fn free_reference(&mut self, backend: &dyn GenerationBackend) -> Result<RefOutcome, Fail> {
        let out = backend.generate_free(
            &self.with_prompt(""),
            &[Tag::CloseReference.literal()],
            self.config.max_reference_tokens,
        )?;
        let body = cut_at_tag(&out.text);
        let sentences: Vec<String> = self.segmenter.sentences(body).into_iter().map(normalize).collect();
        if sentences.is_empty() {
            return Err(Fail::Malformed("reference part is empty".into()));
        }
        let located: Option<Vec<SentenceRef>> = sentences
            .iter()
            .map(|s| self.passages.find_sentence(s).into_iter().next())
            .collect();
        Ok((sentences, located, out.tokens))
    }

    /// Generates one claim; the history must end after `</reference>`.
    fn claim_part(&mut self, backend: &dyn GenerationBackend, sees_prompt: bool) -> Result<String, Fail> {
        let pair = self.pairs.len();
        let (context, bridge_in_reply) = if sees_prompt {
            self.emit(DEFAULT_BRIDGE, Phase::Connective);
            self.emit(Tag::OpenClaim.literal(), Phase::Tag);
            (self.with_prompt(""), false)
        } else {
            let context = match self.config.claim_context {
                ClaimContext::CurrentBlock => self.history[self.block_start..].to_owned(),
                ClaimContext::FullHistory => self.history.clone(),
            };
            (context, true)
        };
        let out = backend.generate_free(&context, &[Tag::CloseClaim.literal()], self.config.max_claim_tokens)?;
        let mut body = out.text.trim();
        if bridge_in_reply {
            // the claim model writes its own connective and opening tag
            body = body.strip_prefix(DEFAULT_BRIDGE).unwrap_or(body).trim_start();
            body = body.strip_prefix(Tag::OpenClaim.literal()).unwrap_or(body);
            self.emit(DEFAULT_BRIDGE, Phase::Connective);
            self.emit(Tag::OpenClaim.literal(), Phase::Tag);
        }
        let claim = normalize(cut_at_tag(body));
        if claim.is_empty() {
            return Err(Fail::Malformed(format!("claim {pair} is empty")));
        }
        if out.truncated() {
            self.trace.truncated_claims.push(pair);
        }
        self.trace.step(Phase::Claim, out.tokens);
        self.emit(&claim, Phase::Claim);
        self.emit(Tag::CloseClaim.literal(), Phase::Tag);
        Ok(claim)
    }

    /// True when another pair should follow the ones generated so far.
    fn continue_answer(&mut self, backend: &dyn GenerationBackend) -> Result<bool, Fail> {
        let count = self.pairs.len();
        if count >= self.config.max_pairs {
            self.trace.force(count, ForcedKind::ForcedEnd);
            return Ok(false);
        }
        let eos = self.tokenizer.special(SpecialToken::Eos);
        let next = self.tokenizer.tag_id(Tag::OpenReference);
        let candidates: BTreeSet<TokenId> = [eos, next].into();
        let wants_end = pick(backend, &self.with_prompt(""), &candidates)? == eos;
        if wants_end && count < self.config.min_pairs {
            self.trace.force(count, ForcedKind::SuppressedEnd);
            return Ok(true);
        }
        Ok(!wants_end)
    }

    fn run(&mut self, refer: &dyn GenerationBackend, claim: &dyn GenerationBackend, claim_sees_prompt: bool) -> Result<(), Fail> {
        loop {
            self.open_reference();
            let (sentences, provenance) = self.reference_part(refer)?;
            let claim_text = self.claim_part(claim, claim_sees_prompt)?;
            self.pairs.push(RefClaimPair {
                reference_sentences: sentences,
                claim_text,
                provenance,
            });
            if !self.continue_answer(refer)? {
                return Ok(());
            }
        }
    }

    fn finish(self) -> Result<(AttributedAnswer, GenerationTrace), GenError> {
        let parsed = match parse_attributed_with(&self.history, ParseMode::Strict, &self.segmenter) {
            Ok(a) if a.pairs.len() == self.pairs.len() => a,
            Ok(a) => {
                return Err(GenError::Malformed {
                    source: MalformedOutput {
                        offset: 0,
                        reason: format!("expected {} pairs, parsed {}", self.pairs.len(), a.pairs.len()),
                    },
                    partial: self.history,
                    trace: Box::new(self.trace),
                })
            }
            Err(source) => {
                return Err(GenError::Malformed {
                    source,
                    partial: self.history,
                    trace: Box::new(self.trace),
                })
            }
        };
        let answer = AttributedAnswer {
            pairs: self.pairs,
            ..parsed
        };
        Ok((answer, self.trace))
    }

    fn fail(self, f: Fail) -> GenError {
        match f {
            Fail::Backend(source) => GenError::Backend {
                source,
                partial: self.history,
                trace: Box::new(self.trace),
            },
            Fail::Malformed(reason) => GenError::Malformed {
                source: MalformedOutput {
                    offset: self.history.len(),
                    reason,
                },
                partial: self.history,
                trace: Box::new(self.trace),
            },
            Fail::Trie(e) => GenError::Trie(e),
        }
    }
}

/// Argmax over `candidates`; ties go to the lowest token id.
fn pick(backend: &dyn GenerationBackend, context: &str, candidates: &BTreeSet<TokenId>) -> Result<TokenId, BackendError> {
    let ids: Vec<TokenId> = candidates.iter().copied().collect();
    let scores = backend.score_candidates(context, &ids)?;
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.logprob > best.logprob {
            best = *s;
        }
    }
    Ok(best.token_id)
}

/// Text of the reference decoded so far: committed sentences, then the
/// longest decodable prefix of the current partial sentence.
fn partial_text(walker: &Walker<'_>, tokenizer: &dyn Tokenizer) -> String {
    let mut parts: Vec<String> = walker.completed().map(|l| l.text.clone()).collect();
    let emitted = &walker.state().emitted;
    if let Some(tail) = (0..=emitted.len()).rev().find_map(|k| tokenizer.decode(&emitted[..k]).ok()) {
        if !tail.is_empty() {
            parts.push(tail);
        }
    }
    parts.join(" ")
}

fn cut_at_tag(text: &str) -> &str {
    let at = Tag::ALL.iter().filter_map(|t| text.find(t.literal())).min();
    at.map_or(text, |i| &text[..i])
}

fn build_tree(passages: &PassageSet, tokenizer: &dyn Tokenizer, config: &GenConfig) -> Result<Option<PrefixTree>, GenError> {
    if config.constrained {
        Ok(Some(build_prefix_tree(passages.inventory(), tokenizer)?))
    } else {
        Ok(None)
    }
}

/// Interleaved generation: `refer` writes reference parts and decides when
/// to stop; `claim` writes each claim from the reference block alone.
pub fn generate_interleaved(
    question: &str,
    passages: &PassageSet,
    tokenizer: &dyn Tokenizer,
    refer: &dyn GenerationBackend,
    claim: &dyn GenerationBackend,
    config: &GenConfig,
    template: &PromptTemplate,
) -> Result<(AttributedAnswer, GenerationTrace), GenError> {
    config.validate()?;
    if config.mode != GenMode::Interleave {
        return Err(GenError::Config(format!("generate_interleaved called with mode {}", config.mode)));
    }
    let tree = build_tree(passages, tokenizer, config)?;
    let mut session = Session::new(question, passages, tokenizer, tree.as_ref(), config, template);
    match session.run(refer, claim, false) {
        Ok(()) => session.finish(),
        Err(f) => Err(session.fail(f)),
    }
}

/// One-model generation. In prompt mode without the constraint the model
/// output is returned as-is (parsed leniently) for baseline evaluation.
pub fn generate_unified(
    question: &str,
    passages: &PassageSet,
    tokenizer: &dyn Tokenizer,
    backend: &dyn GenerationBackend,
    config: &GenConfig,
    template: &PromptTemplate,
) -> Result<(AttributedAnswer, GenerationTrace), GenError> {
    config.validate()?;
    match config.mode {
        GenMode::Interleave => {
            return Err(GenError::Config("generate_unified called with mode interleave".into()));
        }
        GenMode::Prompt if !config.constrained => {
            let prompt = template.render(question, passages);
            let mut trace = GenerationTrace::new(config.mode);
            let out = backend
                .generate_free(&prompt, &[], config.max_answer_tokens)
                .map_err(|source| GenError::Backend {
                    source,
                    partial: String::new(),
                    trace: Box::new(trace.clone()),
                })?;
            trace.step(Phase::Claim, out.tokens);
            let answer = parse_attributed_with(&out.text, ParseMode::Lenient, &Segmenter::default()).map_err(|source| {
                GenError::Malformed {
                    source,
                    partial: out.text.clone(),
                    trace: Box::new(trace.clone()),
                }
            })?;
            return Ok((answer, trace));
        }
        _ => {}
    }
    let tree = build_tree(passages, tokenizer, config)?;
    let mut session = Session::new(question, passages, tokenizer, tree.as_ref(), config, template);
    match session.run(backend, backend, true) {
        Ok(()) => session.finish(),
        Err(f) => Err(session.fail(f)),
    }
}

/// One question to answer.
#[derive(Debug, Clone)]
pub struct GenInput {
    pub id: String,
    pub question: String,
    pub passages: PassageSet,
}

/// Line-delimited run manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub question: String,
    pub mode: GenMode,
    pub config_digest: String,
    pub raw_text: String,
    pub pairs: Vec<RefClaimPair>,
    pub trace: Option<GenerationTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestRecord {
    pub fn to_answer_record(&self) -> AnswerRecord {
        AnswerRecord {
            id: self.id.clone(),
            raw_text: self.raw_text.clone(),
            pairs: self.pairs.clone(),
            trace: self.trace.clone(),
        }
    }
}

/// Runs one input in the configured mode, building its tokenizer.
pub fn generate_one(
    input: &GenInput,
    refer: &dyn GenerationBackend,
    claim: &dyn GenerationBackend,
    config: &GenConfig,
    template: &PromptTemplate,
) -> Result<(AttributedAnswer, GenerationTrace), GenError> {
    let tok = tokenizer_for(&config.tokenizer, &input.passages)?;
    match config.mode {
        GenMode::Interleave => generate_interleaved(&input.question, &input.passages, &*tok, refer, claim, config, template),
        _ => generate_unified(&input.question, &input.passages, &*tok, refer, config, template),
    }
}

/// Generates answers for many inputs in parallel; results keep input order.
pub fn generate_batch(
    inputs: &[GenInput],
    refer: &dyn GenerationBackend,
    claim: &dyn GenerationBackend,
    config: &GenConfig,
    template: &PromptTemplate,
) -> Vec<Result<(AttributedAnswer, GenerationTrace), GenError>> {
    inputs
        .par_iter()
        .map(|input| generate_one(input, refer, claim, config, template))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{Call, Recording, ScoreRule, ScriptedMock, UniformMock};
    use crate::tokenizer::WordTokenizer;

    fn ab_ac() -> (PassageSet, WordTokenizer) {
        let set = PassageSet::from_texts(["A b. A c."], &Segmenter::default()).unwrap();
        let tok = WordTokenizer::from_corpus(set.inventory().iter().map(|s| s.text.as_str()));
        (set, tok)
    }

    fn cfg(mode: GenMode, min: usize, max: usize) -> GenConfig {
        GenConfig {
            mode,
            min_pairs: min,
            max_pairs: max,
            ..GenConfig::default()
        }
    }

    #[test]
    fn presets_and_validation() {
        let asqa = GenConfig::preset("asqa").unwrap();
        assert_eq!((asqa.min_pairs, asqa.max_pairs), (2, 5));
        let eli5 = GenConfig::preset("eli5").unwrap();
        assert_eq!((eli5.min_pairs, eli5.max_pairs), (4, 6));
        assert!(GenConfig::preset("other").is_none());
        assert!(cfg(GenMode::Unified, 3, 2).validate().is_err());
        assert!(cfg(GenMode::Unified, 0, 2).validate().is_err());
    }

    #[test]
    fn uniform_transcript_on_two_sentence_tree() {
        // a=1, b=2, c=3 ("A b." and "A c." as words: A, b., c.)
        let (set, tok) = ab_ac();
        let config = cfg(GenMode::Unified, 1, 1);
        let backend = Recording::new(UniformMock::with_reply("B. </claim>"));
        let (answer, trace) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs[0].reference_sentences, ["A b.", "A c."]);
        assert_eq!(answer.pairs[0].claim_text, "B.");
        assert!(trace
            .forced_events
            .iter()
            .any(|e| e.event == ForcedKind::ForcedCloseReference && e.pair == 0));
        // scored: {2,3} after "a", then {1, close} at the leaf; the rest is forced
        let scored: Vec<Vec<TokenId>> = backend
            .calls()
            .into_iter()
            .filter_map(|c| match c {
                Call::Score { candidates, .. } => Some(candidates),
                _ => None,
            })
            .collect();
        let close = tok.tag_id(Tag::CloseReference);
        assert_eq!(scored, [vec![2, 3], vec![1, close]]);
    }

    #[test]
    fn scripted_close_gives_single_sentence() {
        let (set, tok) = ab_ac();
        let close = tok.tag_id(Tag::CloseReference);
        let backend = ScriptedMock::new().rule(ScoreRule::Always(close)).fallback("B. </claim>");
        let config = cfg(GenMode::Unified, 1, 1);
        let (answer, _) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs[0].reference_sentences, ["A b."]);
        assert_eq!(answer.pairs[0].provenance.as_deref(), Some(&[SentenceRef::new("1", 0)][..]));
        assert_eq!(
            answer.raw_text,
            "According to the citation: <reference> A b. </reference> We can know that: <claim> B. </claim>"
        );
    }

    #[test]
    fn interleave_claim_sees_only_the_block() {
        let (set, tok) = ab_ac();
        let close = tok.tag_id(Tag::CloseReference);
        let refer = ScriptedMock::new().rule(ScoreRule::Always(close));
        let claim = Recording::new(UniformMock::with_reply("We can know that: <claim> B. </claim>"));
        let config = cfg(GenMode::Interleave, 2, 2);
        let (answer, trace) =
            generate_interleaved("q", &set, &tok, &refer, &claim, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs.len(), 2);
        assert!(trace.alternates());
        for call in claim.calls() {
            assert_eq!(call.context(), "According to the citation: <reference> A b. </reference>");
        }
    }

    #[test]
    fn end_before_minimum_is_suppressed() {
        let (set, tok) = ab_ac();
        let eos = tok.special(SpecialToken::Eos);
        let close = tok.tag_id(Tag::CloseReference);
        let refer = ScriptedMock::new().rule(ScoreRule::Always(eos)).rule(ScoreRule::Always(close));
        let claim = UniformMock::with_reply("B. </claim>");
        let config = cfg(GenMode::Interleave, 2, 5);
        let (answer, trace) =
            generate_interleaved("q", &set, &tok, &refer, &claim, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs.len(), 2);
        assert_eq!(trace.forced_events.iter().filter(|e| e.event == ForcedKind::SuppressedEnd).count(), 1);
    }

    #[test]
    fn maximum_forces_the_end() {
        let (set, tok) = ab_ac();
        let next = tok.tag_id(Tag::OpenReference);
        let refer = ScriptedMock::new().rule(ScoreRule::Always(next));
        let claim = UniformMock::with_reply("B. </claim>");
        let config = cfg(GenMode::Interleave, 1, 3);
        let (answer, trace) =
            generate_interleaved("q", &set, &tok, &refer, &claim, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs.len(), 3);
        assert_eq!(trace.forced_events.last().unwrap().event, ForcedKind::ForcedEnd);
    }

    #[test]
    fn sentence_cap_forces_close() {
        let (set, tok) = ab_ac();
        let mut config = cfg(GenMode::Unified, 1, 1);
        config.max_ref_sentences_per_pair = 1;
        let backend = UniformMock::with_reply("B. </claim>");
        let (answer, trace) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs[0].reference_sentences, ["A b."]);
        assert_eq!(trace.forced_events[0].event, ForcedKind::ForcedCloseReference);
    }

    #[test]
    fn truncated_claim_is_flagged() {
        let (set, tok) = ab_ac();
        let mut config = cfg(GenMode::Unified, 1, 1);
        config.max_claim_tokens = 2;
        let backend = UniformMock::with_reply("one two three four");
        let (answer, trace) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs[0].claim_text, "one two");
        assert_eq!(trace.truncated_claims, [0]);
    }

    #[test]
    fn unconstrained_reference_is_copied_and_split() {
        let (set, tok) = ab_ac();
        let mut config = cfg(GenMode::Unified, 1, 1);
        config.constrained = false;
        let backend = ScriptedMock::new().reply("A b. Made up. </reference>").reply("B. </claim>");
        let (answer, _) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.pairs[0].reference_sentences, ["A b.", "Made up."]);
        assert_eq!(answer.pairs[0].provenance, None);
    }

    #[test]
    fn prompt_passthrough_keeps_raw_text() {
        let (set, tok) = ab_ac();
        let mut config = cfg(GenMode::Prompt, 1, 1);
        config.constrained = false;
        let raw = "Plain answer [1]. Another sentence.";
        let backend = UniformMock::with_reply(raw);
        let (answer, _) = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap();
        assert_eq!(answer.raw_text, raw);
        assert_eq!(answer.pairs.len(), 2);
    }

    #[test]
    fn backend_failure_keeps_partial_trace() {
        let (set, tok) = ab_ac();
        let config = cfg(GenMode::Unified, 1, 1);
        let backend = ScriptedMock::new();
        let err = generate_unified("q", &set, &tok, &backend, &config, &PromptTemplate::default()).unwrap_err();
        let (partial, trace) = err.partial().unwrap();
        assert!(partial.ends_with("<claim>"));
        assert_eq!(trace.content_phases().collect::<Vec<_>>(), [Phase::Reference]);
    }
}
