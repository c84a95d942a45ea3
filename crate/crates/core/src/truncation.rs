//! Think-tag extraction, token-budget truncation, and prompt reconstruction.
//!
//! The pipeline these functions serve: an unconstrained completion is split
//! around its first `<think>...</think>` span, the thinking text is cut to a
//! token budget (mid-sentence cuts are intentional and never repaired), and
//! a fresh prompt is rebuilt from a template so a second pass can answer with
//! exactly that much visible reasoning.

use crate::error::{Error, Result};
use crate::model::{BudgetSpec, QuestionRecord, ReasoningTrace};
use crate::tokenizer::TokenizerHandle;

const OPEN_TAG: &str = "<think>";
const CLOSE_TAG: &str = "</think>";

/// Result of splitting a completion around its first think span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitResult {
    pub thinking: String,
    pub remainder: String,
    pub had_open_tag: bool,
    pub had_close_tag: bool,
}

/// Splits `raw` around the FIRST `<think>...</think>` span.
///
/// No open tag: thinking is empty and the remainder is the whole input.
/// Open tag without a close: everything after the tag is thinking and the
/// text before it is the remainder. Later think spans are ordinary text and
/// stay in the remainder untouched.
pub fn extract_think(raw: &str) -> SplitResult {
    let Some(open) = raw.find(OPEN_TAG) else {
        return SplitResult {
            thinking: String::new(),
            remainder: raw.to_string(),
            had_open_tag: false,
            had_close_tag: false,
        };
    };
    let after = &raw[open + OPEN_TAG.len()..];
    match after.find(CLOSE_TAG) {
        Some(close) => SplitResult {
            thinking: after[..close].to_string(),
            remainder: format!("{}{}", &raw[..open], &after[close + CLOSE_TAG.len()..]),
            had_open_tag: true,
            had_close_tag: true,
        },
        None => SplitResult {
            thinking: after.to_string(),
            remainder: raw[..open].to_string(),
            had_open_tag: true,
            had_close_tag: false,
        },
    }
}

/// Cuts thinking text to a budget.
///
/// `NoThinking` yields the empty string, `Unlimited` returns the input
/// unchanged, and `Tokens(k)` yields the detokenization of the first
/// `min(k, len)` tokens. Cuts land wherever the token boundary falls.
pub fn truncate_thinking(thinking: &str, budget: BudgetSpec, tok: &TokenizerHandle) -> String {
    match budget {
        BudgetSpec::NoThinking => String::new(),
        BudgetSpec::Unlimited => thinking.to_string(),
        BudgetSpec::Tokens(k) => {
            let tokens = tok.tokenize(thinking);
            let keep = tokens.len().min(k.get() as usize);
            tok.detokenize(&tokens[..keep])
        }
    }
}

// --- prompt templates -------------------------------------------------------

pub const STEM_PLACEHOLDER: &str = "{stem}";
pub const OPTIONS_PLACEHOLDER: &str = "{options}";
pub const THINKING_PLACEHOLDER: &str = "{thinking}";

/// Header line placed above reconstructed partial reasoning. The truncated
/// text is deliberately NOT re-wrapped in think tags.
pub const REASONING_HEADER: &str = "Partial reasoning:";

const DEFAULT_TEMPLATE_TEXT: &str = "{stem}\n\nOptions:\n{options}\n\n{thinking}\n\nRespond with the letter of each correct option.\n";

/// A prompt template with `{stem}`, `{options}`, and `{thinking}` slots.
#[derive(Clone, Debug)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let missing: Vec<&str> = [STEM_PLACEHOLDER, OPTIONS_PLACEHOLDER, THINKING_PLACEHOLDER]
            .into_iter()
            .filter(|p| !text.contains(p))
            .collect();
        if missing.is_empty() {
            Ok(PromptTemplate { text })
        } else {
            Err(Error::Template(format!("missing placeholder(s): {}", missing.join(", "))))
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Template(format!("cannot read template {}: {e}", path.display())))?;
        PromptTemplate::new(text)
    }

    /// Built-in template used when no file is configured.
    pub fn builtin() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE_TEXT).expect("builtin template is valid")
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Renders options as "A. <text>" lines in letter order, no trailing newline.
pub fn render_options(question: &QuestionRecord) -> String {
    question
        .options
        .iter()
        .map(|(letter, text)| format!("{letter}. {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the constrained-pass prompt.
///
/// Empty truncated thinking omits the entire reasoning block, header line
/// included; otherwise the block is the header plus the raw truncated text.
pub fn reconstruct_prompt(
    question: &QuestionRecord,
    truncated_thinking: &str,
    template: &PromptTemplate,
) -> String {
    let options = render_options(question);
    let thinking_block = if truncated_thinking.is_empty() {
        String::new()
    } else {
        format!("{REASONING_HEADER}\n{truncated_thinking}")
    };

    let mut out = String::with_capacity(template.text.len() + question.stem.len() + options.len());
    let mut rest = template.text.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let replaced = [
            (STEM_PLACEHOLDER, question.stem.as_str()),
            (OPTIONS_PLACEHOLDER, options.as_str()),
            (THINKING_PLACEHOLDER, thinking_block.as_str()),
        ]
        .into_iter()
        .find_map(|(ph, value)| tail.starts_with(ph).then(|| (ph.len(), value)));
        match replaced {
            Some((skip, value)) => {
                out.push_str(value);
                rest = &tail[skip..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);

    normalize_blank_lines(&out)
}

/// Collapses runs of blank lines left by an omitted block and normalizes the
/// ends: at most one blank line anywhere, no leading blanks, single trailing
/// newline.
fn normalize_blank_lines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut newline_run = 0usize;
    for c in text.chars() {
        if c == '\n' {
            newline_run += 1;
            if newline_run <= 2 {
                out.push('\n');
            }
        } else {
            newline_run = 0;
            out.push(c);
        }
    }
    let trimmed = out.trim_start_matches('\n').trim_end();
    format!("{trimmed}\n")
}

/// Full stage-two composition used by the runner: extract the think span from
/// the stored raw completion, truncate it, and rebuild the prompt.
pub fn apply_budget(
    trace: &ReasoningTrace,
    budget: BudgetSpec,
    question: &QuestionRecord,
    tok: &TokenizerHandle,
    template: &PromptTemplate,
) -> String {
    let split = extract_think(&trace.raw);
    let truncated = truncate_thinking(&split.thinking, budget, tok);
    reconstruct_prompt(question, &truncated, template)
}
