//! Tagged answer format.
//!
//! An answer is a sequence of pairs, each rendered as
//!
//! ```text
//! <lead> <reference> s1 s2 ... </reference> <bridge> <claim> claim text </claim>
//! ```
//!
//! where the lead and bridge connectives are free filler text (by default
//! `According to the citation:` and `We can know that:`). Tags are exact
//! literals and never nest.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passage::SentenceRef;
use crate::textproc::{normalize, Segmenter};

pub const DEFAULT_LEAD: &str = "According to the citation:";
pub const DEFAULT_BRIDGE: &str = "We can know that:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    OpenReference,
    CloseReference,
    OpenClaim,
    CloseClaim,
}

impl Tag {
    pub const ALL: [Tag; 4] = [
        Tag::OpenReference,
        Tag::CloseReference,
        Tag::OpenClaim,
        Tag::CloseClaim,
    ];

    pub const fn literal(self) -> &'static str {
        match self {
            Tag::OpenReference => "<reference>",
            Tag::CloseReference => "</reference>",
            Tag::OpenClaim => "<claim>",
            Tag::CloseClaim => "</claim>",
        }
    }

    pub const fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_literal(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.literal() == s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.literal())
    }
}

/// One reference and the claim it supports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefClaimPair {
    pub reference_sentences: Vec<String>,
    pub claim_text: String,
    #[serde(default)]
    pub provenance: Option<Vec<SentenceRef>>,
}

impl RefClaimPair {
    pub fn new<S: Into<String>>(
        reference_sentences: impl IntoIterator<Item = S>,
        claim_text: impl Into<String>,
    ) -> Self {
        Self {
            reference_sentences: reference_sentences.into_iter().map(Into::into).collect(),
            claim_text: claim_text.into(),
            provenance: None,
        }
    }

    pub fn is_attributed(&self) -> bool {
        !self.reference_sentences.is_empty()
    }

    pub fn reference_text(&self) -> String {
        self.reference_sentences.join(" ")
    }
}

/// Filler text around the tags of one pair.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConnectives {
    /// Text before `<reference>`.
    pub lead: String,
    /// Text between `</reference>` and `<claim>`.
    pub bridge: String,
}

impl PairConnectives {
    pub fn defaults() -> Self {
        Self {
            lead: DEFAULT_LEAD.to_owned(),
            bridge: DEFAULT_BRIDGE.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributedAnswer {
    pub pairs: Vec<RefClaimPair>,
    pub raw_text: String,
    /// One entry per pair when parsed; empty means "use the defaults".
    pub connectives: Vec<PairConnectives>,
    /// Filler after the last closing claim tag.
    pub trailing: String,
    /// Byte offset in `raw_text` where each pair starts.
    pub pair_offsets: Vec<usize>,
}

impl AttributedAnswer {
    pub fn from_pairs(pairs: Vec<RefClaimPair>) -> Self {
        let mut answer = Self {
            pairs,
            ..Self::default()
        };
        answer.raw_text = render_attributed(&answer);
        answer
    }

    /// Non-empty connective strings in textual order.
    pub fn connective_strings(&self) -> Vec<&str> {
        self.connectives
            .iter()
            .flat_map(|c| [c.lead.as_str(), c.bridge.as_str()])
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn reference_sentence_count(&self) -> usize {
        self.pairs.iter().map(|p| p.reference_sentences.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Tags must form well-ordered reference/claim pairs.
    Strict,
    /// Out-of-grammar text becomes unattributed sentences; for baseline outputs.
    Lenient,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed output at byte {offset}: {reason}")]
pub struct MalformedOutput {
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Text(usize, usize),
    Tag(Tag, usize),
}

fn lex(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some(tag) = Tag::ALL.into_iter().find(|t| text[i..].starts_with(t.literal())) {
                if text_start < i {
                    out.push(Segment::Text(text_start, i));
                }
                out.push(Segment::Tag(tag, i));
                i += tag.literal().len();
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < text.len() {
        out.push(Segment::Text(text_start, text.len()));
    }
    out
}

fn strip_tags(text: &str) -> String {
    let mut s = text.to_owned();
    for tag in Tag::ALL {
        s = s.replace(tag.literal(), " ");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Outside,
    InReference,
    AfterReference,
    InClaim,
}

struct Pending {
    /// Start of the lead filler, or of the opening tag when there is no lead.
    start: usize,
    lead: String,
    reference: String,
    bridge: String,
    claim: String,
}

struct Parser<'a> {
    text: &'a str,
    mode: ParseMode,
    segmenter: &'a Segmenter,
    state: State,
    /// Unconsumed outside filler `(start, end)`.
    filler: Option<(usize, usize)>,
    pending: Option<Pending>,
    answer: AttributedAnswer,
}

impl<'a> Parser<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> MalformedOutput {
        MalformedOutput {
            offset,
            reason: reason.into(),
        }
    }

    fn loose(&mut self, start: usize, end: usize) {
        let stripped = strip_tags(&self.text[start..end]);
        for span in self.segmenter.spans(&stripped) {
            let claim = normalize(&stripped[span.clone()]);
            if claim.is_empty() {
                continue;
            }
            self.answer.pairs.push(RefClaimPair::new(Vec::<String>::new(), claim));
            self.answer.connectives.push(PairConnectives::default());
            self.answer.pair_offsets.push(start + span.start);
        }
    }

    /// Lenient recovery: everything from the open pair (or filler) up to `end` becomes loose text.
    fn abandon(&mut self, end: usize) {
        let start = match (self.pending.take(), self.filler.take()) {
            (Some(p), _) => Some(p.start),
            (None, Some((s, _))) => Some(s),
            (None, None) => None,
        };
        if let Some(start) = start {
            self.loose(start, end);
        }
        self.state = State::Outside;
    }

    fn feed(&mut self, seg: Segment) -> Result<(), MalformedOutput> {
        match (self.state, seg) {
            (State::Outside, Segment::Text(s, e)) => {
                let start = self.filler.map_or(s, |(fs, _)| fs);
                self.filler = Some((start, e));
            }
            (State::Outside, Segment::Tag(Tag::OpenReference, at)) => {
                let (start, lead) = match self.filler.take() {
                    Some((s, e)) if !strip_tags(&self.text[s..e]).trim().is_empty() => {
                        (s, normalize(&strip_tags(&self.text[s..e])))
                    }
                    _ => (at, String::new()),
                };
                self.pending = Some(Pending {
                    start,
                    lead,
                    reference: String::new(),
                    bridge: String::new(),
                    claim: String::new(),
                });
                self.state = State::InReference;
            }
            (State::InReference, Segment::Text(s, e)) => {
                self.pending.as_mut().unwrap().reference.push_str(&self.text[s..e]);
            }
            (State::InReference, Segment::Tag(Tag::CloseReference, at)) => {
                if self.mode == ParseMode::Strict
                    && self.pending.as_ref().unwrap().reference.trim().is_empty()
                {
                    return Err(self.fail(at, "empty reference"));
                }
                self.state = State::AfterReference;
            }
            (State::AfterReference, Segment::Text(s, e)) => {
                self.pending.as_mut().unwrap().bridge.push_str(&self.text[s..e]);
            }
            (State::AfterReference, Segment::Tag(Tag::OpenClaim, _)) => {
                self.state = State::InClaim;
            }
            (State::InClaim, Segment::Text(s, e)) => {
                self.pending.as_mut().unwrap().claim.push_str(&self.text[s..e]);
            }
            (State::InClaim, Segment::Tag(Tag::CloseClaim, at)) => {
                let p = self.pending.take().unwrap();
                let claim = normalize(&p.claim);
                self.state = State::Outside;
                if claim.is_empty() {
                    if self.mode == ParseMode::Strict {
                        return Err(self.fail(at, "empty claim"));
                    }
                    return Ok(());
                }
                let reference_sentences = self
                    .segmenter
                    .spans(&p.reference)
                    .into_iter()
                    .map(|r| normalize(&p.reference[r]))
                    .collect();
                self.answer.pairs.push(RefClaimPair {
                    reference_sentences,
                    claim_text: claim,
                    provenance: None,
                });
                self.answer.connectives.push(PairConnectives {
                    lead: p.lead,
                    bridge: normalize(&p.bridge),
                });
                self.answer.pair_offsets.push(p.start);
            }
            (state, Segment::Tag(tag, at)) => {
                if self.mode == ParseMode::Strict {
                    let context = match state {
                        State::Outside => "outside a pair",
                        State::InReference => "inside a reference",
                        State::AfterReference => "between reference and claim",
                        State::InClaim => "inside a claim",
                    };
                    return Err(self.fail(at, format!("unexpected {tag} {context}")));
                }
                self.abandon(at);
                if tag == Tag::OpenReference {
                    return self.feed(seg);
                }
                // stray tag: carried into the next loose region
                self.filler = Some((at, at + tag.literal().len()));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<AttributedAnswer, MalformedOutput> {
        let end = self.text.len();
        if self.state != State::Outside {
            if self.mode == ParseMode::Strict {
                let open = match self.state {
                    State::InReference => "reference",
                    State::AfterReference => "pair (missing claim)",
                    _ => "claim",
                };
                return Err(self.fail(end, format!("unclosed {open}")));
            }
            self.abandon(end);
        }
        if let Some((s, e)) = self.filler.take() {
            match self.mode {
                ParseMode::Strict => {
                    if self.answer.pairs.is_empty() && !self.text[s..e].trim().is_empty() {
                        return Err(self.fail(s, "no reference/claim pairs"));
                    }
                    self.answer.trailing = normalize(&self.text[s..e]);
                }
                ParseMode::Lenient => self.loose(s, e),
            }
        }
        self.answer.raw_text = self.text.to_owned();
        Ok(self.answer)
    }
}

/// Parses tagged model output with the default segmenter.
pub fn parse_attributed(text: &str, mode: ParseMode) -> Result<AttributedAnswer, MalformedOutput> {
    parse_attributed_with(text, mode, &Segmenter::default())
}

/// Parses tagged model output; reference bodies are split into sentences by `segmenter`.
///
/// Stored sentences, claims and connectives are whitespace-normalized;
/// `raw_text` keeps the input verbatim.
pub fn parse_attributed_with(
    text: &str,
    mode: ParseMode,
    segmenter: &Segmenter,
) -> Result<AttributedAnswer, MalformedOutput> {
    let mut parser = Parser {
        text,
        mode,
        segmenter,
        state: State::Outside,
        filler: None,
        pending: None,
        answer: AttributedAnswer::default(),
    };
    for seg in lex(text) {
        parser.feed(seg)?;
    }
    parser.finish()
}

/// Renders pairs back to tagged text, pieces separated by single spaces.
///
/// Unattributed pairs (no reference sentences) render as their bare claim.
pub fn render_attributed(answer: &AttributedAnswer) -> String {
    let defaults = PairConnectives::defaults();
    let mut pieces: Vec<&str> = Vec::new();
    let reference_texts: Vec<String> = answer.pairs.iter().map(RefClaimPair::reference_text).collect();
    for (i, pair) in answer.pairs.iter().enumerate() {
        if !pair.is_attributed() && answer.connectives.len() == answer.pairs.len() {
            pieces.push(&pair.claim_text);
            continue;
        }
        let conn = if answer.connectives.len() == answer.pairs.len() {
            &answer.connectives[i]
        } else {
            &defaults
        };
        pieces.extend([
            conn.lead.as_str(),
            Tag::OpenReference.literal(),
            reference_texts[i].as_str(),
            Tag::CloseReference.literal(),
            conn.bridge.as_str(),
            Tag::OpenClaim.literal(),
            pair.claim_text.as_str(),
            Tag::CloseClaim.literal(),
        ]);
    }
    pieces.push(&answer.trailing);
    pieces.retain(|p| !p.is_empty());
    pieces.join(" ")
}

/// Claims in order, joined by single spaces.
pub fn concat_claims(answer: &AttributedAnswer) -> String {
    answer
        .pairs
        .iter()
        .map(|p| p.claim_text.as_str())
        .filter(|c| !c.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Prompt,
    Unified,
    Interleave,
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenMode::Prompt => "prompt",
            GenMode::Unified => "unified",
            GenMode::Interleave => "interleave",
        })
    }
}

impl std::str::FromStr for GenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt" => Ok(GenMode::Prompt),
            "unified" => Ok(GenMode::Unified),
            "interleave" => Ok(GenMode::Interleave),
            other => Err(format!("unknown mode {other:?} (expected prompt, unified or interleave)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Reference,
    Claim,
    Connective,
    Tag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub phase: Phase,
    pub tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcedKind {
    /// Reference closed by the engine (sentence cap or exhausted tree).
    ForcedCloseReference,
    /// The model asked to end before the minimum pair count.
    SuppressedEnd,
    /// Generation stopped at the maximum pair count.
    ForcedEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedEvent {
    pub pair: usize,
    pub event: ForcedKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub mode: GenMode,
    pub steps: Vec<TraceStep>,
    pub forced_events: Vec<ForcedEvent>,
    /// Pairs whose claim hit the token limit before its closing tag.
    #[serde(default)]
    pub truncated_claims: Vec<usize>,
}

impl GenerationTrace {
    pub fn new(mode: GenMode) -> Self {
        Self {
            mode,
            steps: Vec::new(),
            forced_events: Vec::new(),
            truncated_claims: Vec::new(),
        }
    }

    pub fn step(&mut self, phase: Phase, tokens: usize) {
        self.steps.push(TraceStep { phase, tokens });
    }

    pub fn force(&mut self, pair: usize, event: ForcedKind) {
        self.forced_events.push(ForcedEvent { pair, event });
    }

    /// Reference/claim phases in order, ignoring connectives and tags.
    pub fn content_phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.steps
            .iter()
            .map(|s| s.phase)
            .filter(|p| matches!(p, Phase::Reference | Phase::Claim))
    }

    /// True when content phases go reference, claim, reference, claim, ...
    pub fn alternates(&self) -> bool {
        let phases: Vec<Phase> = self.content_phases().collect();
        phases.len().is_multiple_of(2)
            && phases
                .chunks(2)
                .all(|c| c == [Phase::Reference, Phase::Claim])
    }
}

/// Canonical line-delimited answer record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub id: String,
    pub raw_text: String,
    pub pairs: Vec<RefClaimPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<GenerationTrace>,
}

impl AnswerRecord {
    pub fn new(id: impl Into<String>, answer: &AttributedAnswer, trace: Option<GenerationTrace>) -> Self {
        Self {
            id: id.into(),
            raw_text: answer.raw_text.clone(),
            pairs: answer.pairs.clone(),
            trace,
        }
    }

    /// Rebuilds the answer; connectives come from re-parsing `raw_text` when it parses strictly.
    pub fn to_answer(&self) -> AttributedAnswer {
        let connectives = parse_attributed(&self.raw_text, ParseMode::Strict)
            .ok()
            .filter(|a| a.pairs.len() == self.pairs.len())
            .map(|a| (a.connectives, a.trailing, a.pair_offsets));
        let (connectives, trailing, pair_offsets) = connectives.unwrap_or_default();
        AttributedAnswer {
            pairs: self.pairs.clone(),
            raw_text: self.raw_text.clone(),
            connectives,
            trailing,
            pair_offsets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE5_ANSWER: &str = "According to the citation: <reference> The most common way people know how to prevent dryer static on clothes is with dryer sheets. Dryer sheets are sheets that are coated in a fabric softener full of positively charged electrons. These bond to the negatively charged ones and keep static from happening. </reference> We can know that: <claim> Dryer sheets are coated in a fabric softener full of positively charged electrons, which bond to the negatively charged ones in your clothes and keep static from happening. </claim>";

    #[test]
    fn parses_training_example() {
        let a = parse_attributed(TABLE5_ANSWER, ParseMode::Strict).unwrap();
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs[0].reference_sentences.len(), 3);
        assert_eq!(
            a.pairs[0].reference_sentences[2],
            "These bond to the negatively charged ones and keep static from happening."
        );
        assert!(a.pairs[0].claim_text.starts_with("Dryer sheets are coated"));
        assert_eq!(a.connective_strings(), ["According to the citation:", "We can know that:"]);
        assert_eq!(render_attributed(&a), TABLE5_ANSWER);
    }

    #[test]
    fn minimal_pair_without_connectives() {
        let a = parse_attributed("<reference> A. </reference><claim> B. </claim>", ParseMode::Strict).unwrap();
        assert_eq!(a.pairs, [RefClaimPair::new(["A."], "B.")]);
        assert!(a.connective_strings().is_empty());
        assert_eq!(render_attributed(&a), "<reference> A. </reference> <claim> B. </claim>");
    }

    #[test]
    fn strict_rejects_missing_close() {
        let err = parse_attributed("<reference> A. <claim> B. </claim>", ParseMode::Strict).unwrap_err();
        assert_eq!(err.offset, 15);
        assert!(err.reason.contains("<claim>"), "{err}");
    }

    #[test]
    fn strict_errors_name_offsets() {
        let cases = [
            ("<claim> B. </claim>", 0),
            ("<reference> A. </reference> x", 29),
            ("<reference> A. </reference><claim> B.", 37),
            ("<reference></reference><claim> B. </claim>", 11),
            ("<reference> A. </reference><claim> </claim>", 35),
            ("<reference> A. </reference><claim> B. </claim></claim>", 46),
            ("just text", 0),
        ];
        for (text, offset) in cases {
            let err = parse_attributed(text, ParseMode::Strict).unwrap_err();
            assert_eq!(err.offset, offset, "{text}: {err}");
        }
    }

    #[test]
    fn strict_keeps_trailing_filler() {
        let a = parse_attributed("<reference> A. </reference> <claim> B. </claim> Done.", ParseMode::Strict).unwrap();
        assert_eq!(a.trailing, "Done.");
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(parse_attributed("  ", ParseMode::Strict).unwrap().pairs.len(), 0);
    }

    #[test]
    fn renders_default_connectives() {
        let answer = AttributedAnswer {
            pairs: vec![RefClaimPair::new(["A."], "B.")],
            ..Default::default()
        };
        assert_eq!(
            render_attributed(&answer),
            "According to the citation: <reference> A. </reference> We can know that: <claim> B. </claim>"
        );
        assert_eq!(render_attributed(&AttributedAnswer::default()), "");
    }

    #[test]
    fn concat_claims_joins_in_order() {
        let a = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["r"], "X."), RefClaimPair::new(["s"], "Y.")]);
        assert_eq!(concat_claims(&a), "X. Y.");
        let one = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["r"], "Only one.")]);
        assert_eq!(concat_claims(&one), "Only one.");
        assert_eq!(concat_claims(&AttributedAnswer::default()), "");
    }

    #[test]
    fn lenient_untagged_text_becomes_sentences() {
        let a = parse_attributed("First thing. Second thing [1]. Third.", ParseMode::Lenient).unwrap();
        assert_eq!(a.pairs.len(), 3);
        assert!(a.pairs.iter().all(|p| !p.is_attributed()));
        assert_eq!(a.pairs[1].claim_text, "Second thing [1].");
        assert!(a.pair_offsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lenient_keeps_good_pairs_and_recovers() {
        let text = "Intro. <reference> A. </reference> <claim> B. </claim> <claim> stray. </claim> Tail.";
        let a = parse_attributed(text, ParseMode::Lenient).unwrap();
        let claims: Vec<&str> = a.pairs.iter().map(|p| p.claim_text.as_str()).collect();
        assert_eq!(claims, ["B.", "stray.", "Tail."]);
        assert_eq!(a.connectives[0].lead, "Intro.");
        assert!(a.pairs[0].is_attributed());
        assert!(!a.pairs[1].is_attributed());
        assert!(a.pair_offsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn record_round_trip_keeps_connectives() {
        let a = parse_attributed(TABLE5_ANSWER, ParseMode::Strict).unwrap();
        let rec = AnswerRecord::new("q1", &a, None);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"reference_sentences\""));
        assert!(json.contains("\"claim_text\""));
        assert!(json.contains("\"provenance\":null"));
        assert!(!json.contains("trace"));
        let back: AnswerRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_answer(), a);
    }

    #[test]
    fn trace_alternation() {
        let mut t = GenerationTrace::new(GenMode::Interleave);
        t.step(Phase::Connective, 4);
        t.step(Phase::Reference, 10);
        t.step(Phase::Tag, 1);
        t.step(Phase::Claim, 5);
        assert!(t.alternates());
        t.step(Phase::Claim, 5);
        assert!(!t.alternates());
        let json = serde_json::to_string(&ForcedEvent { pair: 1, event: ForcedKind::SuppressedEnd }).unwrap();
        assert_eq!(json, r#"{"pair":1,"event":"suppressed-end"}"#);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn sentence() -> impl Strategy<Value = String> {
            ("[A-Z][a-z]{0,5}", prop::collection::vec("[a-z]{1,5}", 0..4))
                .prop_map(|(h, rest)| format!("{h} {}.", rest.join(" ")).replace(" .", "."))
        }

        fn pair() -> impl Strategy<Value = (bool, Vec<String>, String)> {
            (any::<bool>(), prop::collection::vec(sentence(), 1..4), sentence())
        }

        fn tagged(pairs: &[(bool, Vec<String>, String)], ws: &str) -> String {
            let mut out = String::new();
            for (with_conn, refs, claim) in pairs {
                if *with_conn {
                    out.push_str(DEFAULT_LEAD);
                    out.push_str(ws);
                }
                out.push_str(&format!("<reference>{ws}{}{ws}</reference>{ws}", refs.join(ws)));
                if *with_conn {
                    out.push_str(DEFAULT_BRIDGE);
                    out.push_str(ws);
                }
                out.push_str(&format!("<claim>{ws}{claim}{ws}</claim>{ws}"));
            }
            out
        }

        proptest! {
            #[test]
            fn render_inverts_parse(pairs in prop::collection::vec(pair(), 1..5), ws in "[ \n]{1,3}") {
                let text = tagged(&pairs, &ws);
                let a = parse_attributed(&text, ParseMode::Strict).unwrap();
                prop_assert_eq!(a.pairs.len(), pairs.len());
                prop_assert_eq!(render_attributed(&a), normalize(&text));
                prop_assert!(a.pair_offsets.windows(2).all(|w| w[0] < w[1]));
                let claims = concat_claims(&a);
                for tag in Tag::ALL {
                    prop_assert!(!claims.contains(tag.literal()));
                }
            }

            #[test]
            fn lenient_untagged_counts_sentences(sents in prop::collection::vec(sentence(), 0..6)) {
                let text = sents.join(" ");
                let a = parse_attributed(&text, ParseMode::Lenient).unwrap();
                prop_assert_eq!(a.pairs.len(), Segmenter::default().spans(&text).len());
                prop_assert!(a.pairs.iter().all(|p| !p.is_attributed()));
            }
        }
    }
}
