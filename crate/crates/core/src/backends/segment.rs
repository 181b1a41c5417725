//! Prompt template and reply parsing for answer segmentation.

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::passage::PassageSet;

/// One answer clause and the passage text cited for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseCitation {
    pub clause: String,
    pub citation: String,
}

impl ClauseCitation {
    pub fn new(clause: impl Into<String>, citation: impl Into<String>) -> Self {
        Self {
            clause: clause.into(),
            citation: citation.into(),
        }
    }
}

/// Shipped default. Placeholders: `{question}`, `{passages}`, `{answer}`.
pub const DEFAULT_TEMPLATE: &str = "\
You will be given a question, a set of numbered reference passages, and a long-form answer.
Split the answer into consecutive clauses, keeping the original wording and order.
For every clause, copy from the passages the complete sentence or sentences that support it.
Copy the sentences character for character; do not paraphrase, shorten, or merge them.

Question: {question}

Passages:
{passages}

Answer: {answer}

Reply with JSON only, in the form
{\"pairs\": [{\"clause\": \"...\", \"citation\": \"...\"}]}
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationPrompt {
    pub name: String,
    pub template: String,
}

impl Default for SegmentationPrompt {
    fn default() -> Self {
        Self {
            name: "default".to_owned(),
            template: DEFAULT_TEMPLATE.to_owned(),
        }
    }
}

impl SegmentationPrompt {
    pub fn render(&self, question: &str, passages: &PassageSet, answer: &str) -> String {
        let listing: Vec<String> = passages
            .passages()
            .iter()
            .map(|p| match &p.title {
                Some(t) => format!("[{}] {}: {}", p.id, t, p.text),
                None => format!("[{}] {}", p.id, p.text),
            })
            .collect();
        self.template
            .replace("{question}", question)
            .replace("{passages}", &listing.join("\n"))
            .replace("{answer}", answer)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    Wrapped { pairs: Vec<ClauseCitation> },
    Bare(Vec<ClauseCitation>),
}

/// Parses a segmenter reply: `{"pairs": [...]}` or a bare array of
/// `{clause, citation}` objects, optionally inside a fenced code block.
pub fn parse_segmentation_reply(reply: &str) -> Result<Vec<ClauseCitation>, BackendError> {
    let mut body = reply.trim();
    if let Some(rest) = body.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        body = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    if body.is_empty() {
        return Err(BackendError::SegmentationFormat("empty reply".into()));
    }
    let pairs = match serde_json::from_str::<Reply>(body) {
        Ok(Reply::Wrapped { pairs }) | Ok(Reply::Bare(pairs)) => pairs,
        Err(e) => return Err(BackendError::SegmentationFormat(e.to_string())),
    };
    if pairs.is_empty() {
        return Err(BackendError::SegmentationFormat("no clauses".into()));
    }
    if let Some(i) = pairs
        .iter()
        .position(|p| p.clause.trim().is_empty() || p.citation.trim().is_empty())
    {
        return Err(BackendError::SegmentationFormat(format!("pair {i} has an empty field")));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::Segmenter;

    #[test]
    fn parses_both_shapes() {
        let wrapped = r#"{"pairs": [{"clause": "A", "citation": "x."}, {"clause": "B", "citation": "y."}]}"#;
        let pairs = parse_segmentation_reply(wrapped).unwrap();
        assert_eq!(pairs, [ClauseCitation::new("A", "x."), ClauseCitation::new("B", "y.")]);
        let bare = "```json\n[{\"clause\": \"A\", \"citation\": \"x.\"}]\n```";
        assert_eq!(parse_segmentation_reply(bare).unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_replies() {
        for reply in ["", "   ", "Sure! Here you go.", "[]", r#"{"pairs": [{"clause": "", "citation": "x"}]}"#] {
            assert!(
                matches!(parse_segmentation_reply(reply), Err(BackendError::SegmentationFormat(_))),
                "{reply:?}"
            );
        }
    }

    #[test]
    fn prompt_lists_passages() {
        let set = PassageSet::from_texts(["Alpha one.", "Beta two."], &Segmenter::default()).unwrap();
        let p = SegmentationPrompt::default().render("Why?", &set, "Because.");
        assert!(p.contains("[1] Alpha one.\n[2] Beta two."));
        assert!(p.contains("Question: Why?"));
        assert!(p.contains("Answer: Because."));
    }
}
