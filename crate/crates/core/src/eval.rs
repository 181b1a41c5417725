//! Attribution and correctness metrics over parsed answers.
//!
//! Sentence-level ratios are computed per example (micro) and averaged
//! across examples (macro). A ratio with an empty denominator is undefined
//! for that example and left out of the average; the report discloses how
//! many examples each average covers.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{concat_claims, AnswerRecord, AttributedAnswer, RefClaimPair};
use crate::backends::{BackendError, NliBackend};
use crate::passage::{Passage, PassageError, PassageSet};
use crate::scalar::{mean, Scalar};
use crate::textproc::{normalize, word_count, Segmenter};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("answers do not line up with examples: no answer for {missing:?}; no example for {orphans:?}")]
    IdMismatch { missing: Vec<String>, orphans: Vec<String> },
    #[error("example {id}: {source}")]
    Passages { id: String, source: PassageError },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone)]
pub struct EvalExample {
    pub id: String,
    pub question: String,
    pub docs: PassageSet,
    pub short_answer_groups: Option<Vec<Vec<String>>>,
    pub gold_claims: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlceQaPair {
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub short_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlceDoc {
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

/// ALCE-style evaluation input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlceRecord {
    #[serde(default, alias = "sample_id")]
    pub id: Option<String>,
    pub question: String,
    #[serde(default)]
    pub qa_pairs: Option<Vec<AlceQaPair>>,
    #[serde(default)]
    pub claims: Option<Vec<String>>,
    pub docs: Vec<AlceDoc>,
}

impl EvalExample {
    /// Documents get ids `"1"`, `"2"`, ... so `[n]` markers resolve to the
    /// n-th document. Records without an id use their position.
    pub fn from_alce(record: &AlceRecord, position: usize, segmenter: &Segmenter) -> Result<Self, EvalError> {
        let id = record.id.clone().unwrap_or_else(|| position.to_string());
        let passages = record
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| Passage {
                id: (i + 1).to_string(),
                title: d.title.clone(),
                text: d.text.clone(),
            })
            .collect();
        let docs = PassageSet::new(passages, segmenter).map_err(|source| EvalError::Passages { id: id.clone(), source })?;
        Ok(Self {
            id,
            question: record.question.clone(),
            docs,
            short_answer_groups: record
                .qa_pairs
                .as_ref()
                .map(|qs| qs.iter().map(|q| q.short_answers.clone()).collect()),
            gold_claims: record.claims.clone(),
        })
    }
}

/// One sentence of the answer and the pair it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSentence {
    pub text: String,
    pub pair: usize,
}

/// Claim sentences in answer order.
pub fn answer_sentences(answer: &AttributedAnswer, segmenter: &Segmenter) -> Vec<AnswerSentence> {
    answer
        .pairs
        .iter()
        .enumerate()
        .flat_map(|(pair, p)| {
            segmenter
                .sentences(&p.claim_text)
                .into_iter()
                .map(move |s| AnswerSentence { text: s.to_owned(), pair })
        })
        .collect()
}

/// `[n]` markers (n a positive integer) in `text`, and the text without them.
fn bracket_markers(text: &str) -> (Vec<usize>, String) {
    let mut ids = Vec::new();
    let mut stripped = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let digits = after.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && after[digits..].starts_with(']') {
            stripped.push_str(rest[..open].trim_end());
            ids.push(after[..digits].parse().unwrap_or(0));
            rest = &after[digits + 1..];
        } else {
            stripped.push_str(&rest[..=open]);
            rest = after;
        }
    }
    stripped.push_str(rest);
    (ids, normalize(&stripped))
}

/// Turns unattributed pairs carrying `[n]` markers into pairs citing every
/// sentence of document n. Tagged pairs pass through unchanged.
pub fn resolve_bracket_citations(answer: &AttributedAnswer, docs: &PassageSet) -> AttributedAnswer {
    let pairs = answer
        .pairs
        .iter()
        .map(|p| {
            if p.is_attributed() {
                return p.clone();
            }
            let (ids, claim) = bracket_markers(&p.claim_text);
            let mut seen = HashSet::new();
            let sentences: Vec<String> = ids
                .into_iter()
                .filter(|id| seen.insert(*id))
                .flat_map(|id| docs.passage_sentences(&id.to_string()).map(|s| s.text.clone()).collect::<Vec<_>>())
                .collect();
            RefClaimPair {
                reference_sentences: sentences,
                claim_text: claim,
                provenance: None,
            }
        })
        .collect();
    AttributedAnswer {
        pairs,
        ..answer.clone()
    }
}

fn ratio<S: Scalar>(hits: usize, total: usize) -> Option<S> {
    (total > 0).then(|| S::ratio(hits, total))
}

/// Share of answer sentences entailed by their pair's reference.
pub fn compute_cas<S: Scalar>(answer: &AttributedAnswer, nli: &dyn NliBackend) -> Result<Option<S>, BackendError> {
    let sentences = answer_sentences(answer, &Segmenter::default());
    let mut hits = 0;
    for s in &sentences {
        let premise = answer.pairs[s.pair].reference_text();
        if nli.entails(&premise, &s.text)?.entailed {
            hits += 1;
        }
    }
    Ok(ratio(hits, sentences.len()))
}

/// Share of reference sentences that are not redundant: dropping the
/// sentence makes the rest of the reference stop entailing the claim.
pub fn compute_crs<S: Scalar>(answer: &AttributedAnswer, nli: &dyn NliBackend) -> Result<Option<S>, BackendError> {
    let mut total = 0;
    let mut needed = 0;
    for pair in &answer.pairs {
        for skip in 0..pair.reference_sentences.len() {
            total += 1;
            let rest: Vec<&str> = pair
                .reference_sentences
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, s)| s.as_str())
                .collect();
            if !nli.entails(&rest.join(" "), &pair.claim_text)?.entailed {
                needed += 1;
            }
        }
    }
    Ok(ratio(needed, total))
}

/// Share of reference sentences found in the documents.
pub fn compute_cr<S: Scalar>(answer: &AttributedAnswer, docs: &PassageSet) -> Option<S> {
    let all: Vec<&String> = answer.pairs.iter().flat_map(|p| &p.reference_sentences).collect();
    let found = all.iter().filter(|s| docs.contains_sentence(s)).count();
    ratio(found, all.len())
}

/// Share of answer sentences whose pair cites at least one sentence.
pub fn compute_ar<S: Scalar>(answer: &AttributedAnswer) -> Option<S> {
    let sentences = answer_sentences(answer, &Segmenter::default());
    let hits = sentences.iter().filter(|s| answer.pairs[s.pair].is_attributed()).count();
    ratio(hits, sentences.len())
}

/// Share of short-answer groups with any alias in the answer
/// (normalized, case-folded substring match).
pub fn compute_em_recall<S: Scalar>(answer_text: &str, groups: &[Vec<String>]) -> Option<S> {
    let haystack = normalize(answer_text).to_lowercase();
    let hits = groups
        .iter()
        .filter(|g| {
            g.iter().any(|alias| {
                let needle = normalize(alias).to_lowercase();
                !needle.is_empty() && haystack.contains(&needle)
            })
        })
        .count();
    ratio(hits, groups.len())
}

/// Share of gold claims entailed by the whole answer text.
pub fn compute_claim_recall<S: Scalar>(
    answer_text: &str,
    gold_claims: &[String],
    nli: &dyn NliBackend,
) -> Result<Option<S>, BackendError> {
    let mut hits = 0;
    for claim in gold_claims {
        if nli.entails(answer_text, claim)?.entailed {
            hits += 1;
        }
    }
    Ok(ratio(hits, gold_claims.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lengths {
    pub citation_words: usize,
    pub claim_words: usize,
}

pub fn compute_lengths(answer: &AttributedAnswer) -> Lengths {
    Lengths {
        citation_words: answer
            .pairs
            .iter()
            .flat_map(|p| &p.reference_sentences)
            .map(|s| word_count(s))
            .sum(),
        claim_words: word_count(&concat_claims(answer)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics<S> {
    pub id: String,
    pub cas: Option<S>,
    pub crs: Option<S>,
    pub cr: Option<S>,
    pub ar: Option<S>,
    pub em_rec: Option<S>,
    pub claim_rec: Option<S>,
    pub citation_words: usize,
    pub claim_words: usize,
    pub answer_sentences: usize,
    pub reference_sentences: usize,
}

/// Macro average of one metric and the number of examples it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Average<S> {
    pub mean: Option<S>,
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<S> {
    pub examples: usize,
    pub cas: Average<S>,
    pub crs: Average<S>,
    pub cr: Average<S>,
    pub ar: Average<S>,
    pub em_rec: Average<S>,
    pub claim_rec: Average<S>,
    pub citation_words: Option<S>,
    pub claim_words: Option<S>,
    /// Filled in only from an external fluency scorer.
    pub mauve: Option<f64>,
    pub granularity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub summary: Summary<S>,
    pub examples: Vec<ExampleMetrics<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Resolve `[n]` markers in untagged answers to document n.
    pub resolve_brackets: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { resolve_brackets: true }
    }
}

pub fn evaluate_example<S: Scalar>(
    example: &EvalExample,
    answer: &AttributedAnswer,
    nli: &dyn NliBackend,
    options: EvalOptions,
) -> Result<ExampleMetrics<S>, BackendError> {
    let resolved;
    let answer = if options.resolve_brackets {
        resolved = resolve_bracket_citations(answer, &example.docs);
        &resolved
    } else {
        answer
    };
    let text = concat_claims(answer);
    let lengths = compute_lengths(answer);
    let claim_rec = match &example.gold_claims {
        Some(claims) => compute_claim_recall(&text, claims, nli)?,
        None => None,
    };
    Ok(ExampleMetrics {
        id: example.id.clone(),
        cas: compute_cas(answer, nli)?,
        crs: compute_crs(answer, nli)?,
        cr: compute_cr(answer, &example.docs),
        ar: compute_ar(answer),
        em_rec: example
            .short_answer_groups
            .as_deref()
            .and_then(|g| compute_em_recall(&text, g)),
        claim_rec,
        citation_words: lengths.citation_words,
        claim_words: lengths.claim_words,
        answer_sentences: answer_sentences(answer, &Segmenter::default()).len(),
        reference_sentences: answer.reference_sentence_count(),
    })
}

fn average<S: Scalar>(values: impl Iterator<Item = Option<S>>) -> Average<S> {
    let defined: Vec<S> = values.flatten().collect();
    Average {
        defined: defined.len(),
        mean: mean(defined),
    }
}

pub fn summarize<S: Scalar>(examples: &[ExampleMetrics<S>]) -> Summary<S> {
    Summary {
        examples: examples.len(),
        cas: average(examples.iter().map(|e| e.cas.clone())),
        crs: average(examples.iter().map(|e| e.crs.clone())),
        cr: average(examples.iter().map(|e| e.cr.clone())),
        ar: average(examples.iter().map(|e| e.ar.clone())),
        em_rec: average(examples.iter().map(|e| e.em_rec.clone())),
        claim_rec: average(examples.iter().map(|e| e.claim_rec.clone())),
        citation_words: mean(examples.iter().map(|e| S::from_count(e.citation_words))),
        claim_words: mean(examples.iter().map(|e| S::from_count(e.claim_words))),
        mauve: None,
        granularity: "sentence-level within an example, macro-averaged across examples".to_owned(),
    }
}

/// Evaluates answers against examples, matched by id. Every example needs
/// exactly one answer and vice versa.
pub fn evaluate_run<S: Scalar>(
    examples: &[EvalExample],
    answers: &[AnswerRecord],
    nli: &dyn NliBackend,
    options: EvalOptions,
) -> Result<MetricsReport<S>, EvalError> {
    let by_id: HashMap<&str, &AnswerRecord> = answers.iter().map(|a| (a.id.as_str(), a)).collect();
    let example_ids: HashSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let missing: Vec<String> = examples
        .iter()
        .filter(|e| !by_id.contains_key(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    let orphans: Vec<String> = answers
        .iter()
        .filter(|a| !example_ids.contains(a.id.as_str()))
        .map(|a| a.id.clone())
        .collect();
    if !missing.is_empty() || !orphans.is_empty() || by_id.len() != answers.len() {
        return Err(EvalError::IdMismatch { missing, orphans });
    }
    let per_example: Vec<ExampleMetrics<S>> = examples
        .par_iter()
        .map(|e| evaluate_example(e, &by_id[e.id.as_str()].to_answer(), nli, options))
        .collect::<Result<_, _>>()?;
    Ok(MetricsReport {
        summary: summarize(&per_example),
        examples: per_example,
    })
}

fn pct<S: Scalar>(a: &Average<S>) -> String {
    a.mean.as_ref().map_or("-".to_owned(), |m| format!("{:.1}", m.as_f64() * 100.0))
}

fn num<S: Scalar>(v: &Option<S>) -> String {
    v.as_ref().map_or("-".to_owned(), |m| format!("{:.1}", m.as_f64()))
}

/// Plain-text table: correctness, citation quality, then verifiability.
pub fn render_table<S: Scalar>(summary: &Summary<S>) -> String {
    let header = [
        "EM-Rec", "Claim-Rec", "MAUVE", "CAS", "CRS", "CR", "AR", "Cit.Len", "Claim.Len",
    ];
    let mauve = summary.mauve.map_or("-".to_owned(), |m| format!("{m:.1}"));
    let row = [
        pct(&summary.em_rec),
        pct(&summary.claim_rec),
        mauve,
        pct(&summary.cas),
        pct(&summary.crs),
        pct(&summary.cr),
        pct(&summary.ar),
        num(&summary.citation_words),
        num(&summary.claim_words),
    ];
    let counts = [
        &summary.em_rec,
        &summary.claim_rec,
        &Average { mean: None, defined: 0 },
        &summary.cas,
        &summary.crs,
        &summary.cr,
        &summary.ar,
    ]
    .iter()
    .map(|a| format!("n={}", a.defined))
    .chain(std::iter::repeat_n(format!("n={}", summary.examples), 2))
    .collect::<Vec<_>>();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| header[i].len().max(row[i].len()).max(counts[i].len()))
        .collect();
    let mut out = String::new();
    for line in [header.map(str::to_owned).to_vec(), row.to_vec(), counts] {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::{parse_attributed, ParseMode};
    use crate::backends::mock::ContainmentNli;
    use crate::Exact;

    fn q(n: i64, d: i64) -> Option<Exact> {
        Some(Exact::new(n, d))
    }

    fn docs() -> PassageSet {
        PassageSet::from_texts(
            ["The cat sat on the mat. Dogs bark at night.", "Birds sing in spring."],
            &Segmenter::default(),
        )
        .unwrap()
    }

    #[test]
    fn cas_cases() {
        let nli = ContainmentNli::new();
        let copy = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["Dogs bark at night."], "Dogs bark at night.")]);
        assert_eq!(compute_cas::<Exact>(&copy, &nli).unwrap(), q(1, 1));
        let half = AttributedAnswer::from_pairs(vec![RefClaimPair::new(
            ["Dogs bark at night."],
            "Dogs bark. Cats fly.",
        )]);
        assert_eq!(compute_cas::<Exact>(&half, &nli).unwrap(), q(1, 2));
        let plain = parse_attributed("Dogs bark. Cats purr.", ParseMode::Lenient).unwrap();
        assert_eq!(compute_cas::<Exact>(&plain, &nli).unwrap(), q(0, 1));
        assert_eq!(compute_cas::<Exact>(&AttributedAnswer::default(), &nli).unwrap(), None);
    }

    #[test]
    fn crs_cases() {
        let nli = ContainmentNli::new();
        let single = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["Dogs bark at night."], "Dogs bark.")]);
        assert_eq!(compute_crs::<Exact>(&single, &nli).unwrap(), q(1, 1));
        let extra = AttributedAnswer::from_pairs(vec![RefClaimPair::new(
            ["Dogs bark at night.", "Birds sing in spring."],
            "Dogs bark.",
        )]);
        assert_eq!(compute_crs::<Exact>(&extra, &nli).unwrap(), q(1, 2));
        let both = AttributedAnswer::from_pairs(vec![RefClaimPair::new(
            ["Dogs bark at night.", "Birds sing in spring."],
            "Dogs bark and birds sing.",
        )]);
        assert_eq!(compute_crs::<Exact>(&both, &nli).unwrap(), q(1, 1));
    }

    #[test]
    fn cr_and_ar() {
        let d = docs();
        let a = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["Dogs bark at night.", "Made up."], "x.")]);
        assert_eq!(compute_cr::<Exact>(&a, &d), q(1, 2));
        let mut more = a.clone();
        more.pairs[0].reference_sentences.push("Another fake.".into());
        assert!(compute_cr::<Exact>(&more, &d) <= compute_cr::<Exact>(&a, &d));
        assert_eq!(compute_ar::<Exact>(&a), q(1, 1));
        let mixed = resolve_bracket_citations(
            &parse_attributed("Dogs bark [1]. Birds sing [2]. Fish swim.", ParseMode::Lenient).unwrap(),
            &d,
        );
        assert_eq!(compute_ar::<Exact>(&mixed), q(2, 3));
        assert_eq!(mixed.pairs[0].claim_text, "Dogs bark.");
        assert_eq!(mixed.pairs[1].reference_sentences, ["Birds sing in spring."]);
    }

    #[test]
    fn em_recall() {
        let groups = vec![vec!["Bican".to_owned()], vec!["Sinclair".to_owned()]];
        assert_eq!(compute_em_recall::<Exact>("Josef Bican scored most.", &groups), q(1, 2));
        assert_eq!(compute_em_recall::<Exact>("josef bican and SINCLAIR", &groups), q(1, 1));
        assert_eq!(compute_em_recall::<Exact>("x", &[]), None);
    }

    #[test]
    fn claim_recall() {
        let nli = ContainmentNli::new();
        let claims = vec!["Dogs bark.".to_owned(), "Cats fly.".to_owned()];
        assert_eq!(compute_claim_recall::<Exact>("Dogs bark loudly.", &claims, &nli).unwrap(), q(1, 2));
        assert_eq!(compute_claim_recall::<Exact>("", &claims, &nli).unwrap(), q(0, 1));
    }

    #[test]
    fn lengths() {
        let a = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["a b c d e f g."], "one two three four five.")]);
        assert_eq!(compute_lengths(&a), Lengths { citation_words: 7, claim_words: 5 });
        assert_eq!(compute_lengths(&AttributedAnswer::default()), Lengths { citation_words: 0, claim_words: 0 });
    }

    #[test]
    fn run_macro_average_and_exclusion() {
        let d = docs();
        let ex = |id: &str| EvalExample {
            id: id.into(),
            question: "q".into(),
            docs: d.clone(),
            short_answer_groups: None,
            gold_claims: None,
        };
        let full = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["Dogs bark at night."], "Dogs bark.")]);
        let half = AttributedAnswer::from_pairs(vec![RefClaimPair::new(["Dogs bark at night.", "Fake."], "Dogs bark.")]);
        let none = parse_attributed("Just text.", ParseMode::Lenient).unwrap();
        let answers = vec![
            AnswerRecord::new("a", &full, None),
            AnswerRecord::new("b", &half, None),
            AnswerRecord::new("c", &none, None),
        ];
        let report: MetricsReport<Exact> =
            evaluate_run(&[ex("a"), ex("b"), ex("c")], &answers, &ContainmentNli::new(), EvalOptions::default()).unwrap();
        assert_eq!(report.summary.cr.mean, Some(Exact::new(3, 4)));
        assert_eq!(report.summary.cr.defined, 2);
        assert_eq!(report.summary.ar.defined, 3);
        assert_eq!(report.summary.em_rec, Average { mean: None, defined: 0 });
        let table = render_table(&report.summary);
        assert!(table.contains("CR"));
        assert!(table.contains("75.0"));
        let err = evaluate_run::<f64>(&[ex("a")], &answers, &ContainmentNli::new(), EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::IdMismatch { ref orphans, .. } if orphans == &["b", "c"]));
    }

    #[test]
    fn alce_records_parse() {
        let line = r#"{"question": "Who?", "qa_pairs": [{"question": "q1", "short_answers": ["A", "a1"]}],
            "docs": [{"title": "T", "text": "A did it."}], "answer": "ignored", "sample_id": "s1"}"#;
        let rec: AlceRecord = serde_json::from_str(line).unwrap();
        let ex = EvalExample::from_alce(&rec, 0, &Segmenter::default()).unwrap();
        assert_eq!(ex.id, "s1");
        assert_eq!(ex.short_answer_groups, Some(vec![vec!["A".to_owned(), "a1".to_owned()]]));
        assert_eq!(ex.docs.passages()[0].title.as_deref(), Some("T"));
    }
}
