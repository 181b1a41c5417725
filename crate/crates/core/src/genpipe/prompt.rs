use serde::{Deserialize, Serialize};

use crate::passage::PassageSet;

pub const DEFAULT_INSTRUCTION: &str = "\
Answer the question using only the numbered passages below. Build the answer \
step by step. In each step, first copy one or more whole sentences from the \
passages, unchanged, between <reference> and </reference>; then write a short \
statement that follows from those sentences between <claim> and </claim>.";

/// Instruction text placed before the question and passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: DEFAULT_INSTRUCTION.to_owned(),
        }
    }
}

impl PromptTemplate {
    /// Instruction, question, then one `[id] text` line per passage (with a
    /// `Title:` line above it when the passage has a title), then `Answer:`.
    pub fn render(&self, question: &str, passages: &PassageSet) -> String {
        let mut out = format!("{}\n\nQuestion: {}\n\nPassages:\n", self.instruction.trim_end(), question.trim());
        for p in passages.passages() {
            if let Some(t) = &p.title {
                out.push_str(&format!("Title: {}\n", t.trim()));
            }
            out.push_str(&format!("[{}] {}\n", p.id, p.text.split_whitespace().collect::<Vec<_>>().join(" ")));
        }
        out.push_str("\nAnswer:");
        out
    }
}
