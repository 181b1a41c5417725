//! The dryer-sheet sample: question, five passages, and a one-pair answer
//! citing three consecutive sentences of passage 4.

use reclaim::answer::{parse_attributed, render_attributed, ParseMode};
use reclaim::backends::mock::ScriptedSegmenter;
use reclaim::backends::{BackendError, ClauseCitation, FreeText, GenerationBackend, ScoredCandidate};
use reclaim::dataset::{build_training_samples, split_for_claim_model, RawRecord, RawSample};
use reclaim::eval::{compute_ar, compute_cr};
use reclaim::genpipe::{generate_interleaved, tokenizer_for, GenConfig, PromptTemplate};
use reclaim::textproc::{normalize, Segmenter};
use reclaim::tokenizer::{TokenId, Tokenizer};
use reclaim::{Exact, PassageSet, SentenceRef};

const QUESTION: &str = "Why does a dryer sheet help with my staticy shirt?";

const PASSAGES: [&str; 5] = [
    "Dryer sheets are specifically designed to help reduce static cling in clothes by neutralizing the electric charges that build up during the drying process. Just toss a sheet in with your clothes, and they should come out nice and static-free when they’re done drying.",
    "So, if you if you want your clothes to be ready to wear, but they’re always covered in pet hair or are super clingy, then you definitely need to prevent static cling! Don’t worry, we’ve all been there. Bounce Dryer Sheets will help your clothes lead a no-strings-attached lifestyle in no time. Just toss a sheet into the dryer with your clothes, and leave that static cling behind!",
    "However, this coating can stick to your dryer and can be bad for the environment as well. Those looking to know how to reduce static on clothes without dryer sheets can find some solid, eco-friendly dryer sheet alternatives in many different places.",
    "The most common way people know how to prevent dryer static on clothes is with dryer sheets. Dryer sheets are sheets that are coated in a fabric softener full of positively charged electrons. These bond to the negatively charged ones and keep static from happening.",
    "Dryer static on clothes is one of the most annoying parts of doing laundry. It might seem like an unavoidable problem, but we have good news! There are some simple steps you can take to keep your laundry from becoming overly clingy or giving you static shocks.",
];

const REFERENCE: [&str; 3] = [
    "The most common way people know how to prevent dryer static on clothes is with dryer sheets.",
    "Dryer sheets are sheets that are coated in a fabric softener full of positively charged electrons.",
    "These bond to the negatively charged ones and keep static from happening.",
];

const CLAIM: &str = "Dryer sheets are coated in a fabric softener full of positively charged electrons, which bond to the negatively charged ones in your clothes and keep static from happening.";

const ANSWER: &str = "According to the citation: <reference> The most common way people know how to prevent dryer static on clothes is with dryer sheets. Dryer sheets are sheets that are coated in a fabric softener full of positively charged electrons. These bond to the negatively charged ones and keep static from happening. </reference> We can know that: <claim> Dryer sheets are coated in a fabric softener full of positively charged electrons, which bond to the negatively charged ones in your clothes and keep static from happening. </claim>";

const CLAIM_INPUT: &str = "According to the citation: <reference> The most common way people know how to prevent dryer static on clothes is with dryer sheets. Dryer sheets are sheets that are coated in a fabric softener full of positively charged electrons. These bond to the negatively charged ones and keep static from happening. </reference>";

const CLAIM_OUTPUT: &str = "We can know that: <claim> Dryer sheets are coated in a fabric softener full of positively charged electrons, which bond to the negatively charged ones in your clothes and keep static from happening. </claim>";

fn passages() -> PassageSet {
    PassageSet::from_texts(PASSAGES, &Segmenter::default()).unwrap()
}

fn passage_four() -> Vec<SentenceRef> {
    (0..3).map(|i| SentenceRef::new("4", i)).collect()
}

#[test]
fn published_answer_parses_to_one_verbatim_pair() {
    let set = passages();
    let answer = parse_attributed(ANSWER, ParseMode::Strict).unwrap();
    assert_eq!(answer.pairs.len(), 1);
    assert_eq!(answer.pairs[0].reference_sentences, REFERENCE);
    assert_eq!(answer.pairs[0].claim_text, CLAIM);
    for (s, want) in REFERENCE.iter().zip(passage_four()) {
        assert_eq!(set.find_sentence(s), [want]);
    }
    assert_eq!(render_attributed(&answer), normalize(ANSWER));
    assert_eq!(compute_cr::<Exact>(&answer, &set), Some(Exact::from_integer(1)));
    assert_eq!(compute_ar::<Exact>(&answer), Some(Exact::from_integer(1)));
}

#[test]
fn claim_split_matches_published_input_and_output() {
    let raw = RawSample::from_record(
        &RawRecord {
            id: Some("dryer".into()),
            question: QUESTION.into(),
            references: PASSAGES.map(String::from).to_vec(),
            answer: CLAIM.into(),
        },
        0,
        &Segmenter::default(),
    )
    .unwrap();
    let segmenter = ScriptedSegmenter::new().pairs(CLAIM, &[ClauseCitation::new(CLAIM, REFERENCE.join(" "))]);
    let built = build_training_samples(&[raw], &segmenter);
    assert_eq!(built.done.len(), 1, "{:?}", built.dropped);
    let sample = &built.done[0];
    assert_eq!(sample.answer_tagged, ANSWER);
    assert_eq!(sample.pairs[0].provenance.as_deref(), Some(&passage_four()[..]));
    let records = split_for_claim_model(&built.done, false);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].input_text, CLAIM_INPUT);
    assert_eq!(records[0].output_text, CLAIM_OUTPUT);
}

/// Steers reference decoding along fixed sentences and replies with a fixed claim.
struct Forced<'a> {
    tokenizer: &'a dyn Tokenizer,
    close: TokenId,
}

impl Forced<'_> {
    fn wanted(&self, context: &str) -> TokenId {
        let at = context.rfind("<reference>").expect("inside a reference part") + "<reference>".len();
        let mut partial = context[at..].trim_start();
        for sentence in REFERENCE {
            if let Some(rest) = partial.strip_prefix(sentence) {
                partial = rest.trim_start();
                continue;
            }
            let done = if partial.is_empty() {
                0
            } else {
                self.tokenizer.encode(partial).unwrap().ids.len()
            };
            return self.tokenizer.encode(sentence).unwrap().ids[done];
        }
        self.close
    }
}

impl GenerationBackend for Forced<'_> {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        let want = self.wanted(context);
        assert!(candidates.contains(&want), "token {want} not offered: {candidates:?}");
        Ok(candidates
            .iter()
            .map(|&token_id| ScoredCandidate {
                token_id,
                logprob: if token_id == want { 0.0 } else { -10.0 },
            })
            .collect())
    }

    fn generate(&self, _context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        Ok(FreeText::from_reply(&format!("We can know that: <claim> {CLAIM} </claim>"), stop, max_tokens))
    }
}

#[test]
fn constrained_decoding_reproduces_the_published_answer() {
    let set = passages();
    let tok = tokenizer_for("word", &set).unwrap();
    let close = tok.tag_id(reclaim::answer::Tag::CloseReference);
    let model = Forced {
        tokenizer: &*tok,
        close,
    };
    let config = GenConfig {
        min_pairs: 1,
        max_pairs: 1,
        ..GenConfig::default()
    };
    let (answer, trace) =
        generate_interleaved(QUESTION, &set, &*tok, &model, &model, &config, &PromptTemplate::default()).unwrap();
    assert_eq!(answer.raw_text, ANSWER);
    assert_eq!(answer.pairs[0].provenance.as_deref(), Some(&passage_four()[..]));
    assert!(trace.alternates());
}
