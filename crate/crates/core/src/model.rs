//! Core domain types: budgets, models, questions, traces, and result records.
//!
//! `BudgetSpec` is the load-bearing type. It is totally ordered
//! (`NoThinking < Tokens(a) < Tokens(b) < Unlimited` for `a < b`) and zero
//! tokens is canonically `NoThinking`; `Tokens(0)` is unrepresentable because
//! the payload is `NonZeroU32`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

// --- answer letters ---------------------------------------------------------

/// Option letter for multiple-choice questions. Exactly A through F exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Letter {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Letter {
    pub const ALL: [Letter; 6] = [Letter::A, Letter::B, Letter::C, Letter::D, Letter::E, Letter::F];

    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
            Letter::D => 'D',
            Letter::E => 'E',
            Letter::F => 'F',
        }
    }

    /// Accepts upper- or lowercase; anything outside A-F is None.
    pub fn from_char(c: char) -> Option<Letter> {
        match c.to_ascii_uppercase() {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            'E' => Some(Letter::E),
            'F' => Some(Letter::F),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Letter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 1];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Letter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::from_char(c)
                .ok_or_else(|| de::Error::custom(format!("invalid option letter {s:?}"))),
            _ => Err(de::Error::custom(format!("invalid option letter {s:?}"))),
        }
    }
}

/// Renders a letter set as "B,C" in normalized order.
pub fn format_letters(letters: &BTreeSet<Letter>) -> String {
    letters.iter().map(|l| l.as_char().to_string()).collect::<Vec<_>>().join(",")
}

// --- thinking budgets -------------------------------------------------------

/// A thinking-token budget.
///
/// The derived order is the semantic one: no thinking sorts below every
/// finite budget, finite budgets sort by token count, and unlimited sorts
/// above everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BudgetSpec {
    NoThinking,
    Tokens(NonZeroU32),
    Unlimited,
}

impl BudgetSpec {
    /// Canonicalizing constructor: zero tokens is `NoThinking`.
    pub fn tokens(n: u32) -> BudgetSpec {
        match NonZeroU32::new(n) {
            Some(k) => BudgetSpec::Tokens(k),
            None => BudgetSpec::NoThinking,
        }
    }

    /// Finite token cap, if any. `NoThinking` is 0; `Unlimited` is None.
    pub fn token_limit(self) -> Option<u64> {
        match self {
            BudgetSpec::NoThinking => Some(0),
            BudgetSpec::Tokens(k) => Some(u64::from(k.get())),
            BudgetSpec::Unlimited => None,
        }
    }

    pub fn is_unlimited(self) -> bool {
        matches!(self, BudgetSpec::Unlimited)
    }
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::NoThinking => write!(f, "none"),
            BudgetSpec::Tokens(k) => write!(f, "{k}"),
            BudgetSpec::Unlimited => write!(f, "inf"),
        }
    }
}

impl FromStr for BudgetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(BudgetSpec::NoThinking),
            "inf" => Ok(BudgetSpec::Unlimited),
            other => other
                .parse::<u32>()
                .map(BudgetSpec::tokens)
                .map_err(|_| format!("invalid budget {s:?}: expected \"none\", \"inf\", or a token count")),
        }
    }
}

impl Serialize for BudgetSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            BudgetSpec::NoThinking => serializer.serialize_str("none"),
            BudgetSpec::Tokens(k) => serializer.serialize_u32(k.get()),
            BudgetSpec::Unlimited => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for BudgetSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BudgetVisitor;

        impl<'de> Visitor<'de> for BudgetVisitor {
            type Value = BudgetSpec;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"none\", \"inf\", or a nonnegative integer token count")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<BudgetSpec, E> {
                u32::try_from(v)
                    .map(BudgetSpec::tokens)
                    .map_err(|_| E::custom(format!("budget {v} exceeds the supported token range")))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<BudgetSpec, E> {
                if v < 0 {
                    return Err(E::custom(format!("budget {v} is negative")));
                }
                self.visit_u64(v as u64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<BudgetSpec, E> {
                BudgetSpec::from_str(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(BudgetVisitor)
    }
}

/// The standard budget ladder used by sweep runs, in ascending order.
pub fn budget_ladder() -> [BudgetSpec; 7] {
    [
        BudgetSpec::NoThinking,
        BudgetSpec::tokens(64),
        BudgetSpec::tokens(128),
        BudgetSpec::tokens(256),
        BudgetSpec::tokens(512),
        BudgetSpec::tokens(1024),
        BudgetSpec::Unlimited,
    ]
}

// --- models -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub family: String,
    pub size_billions: f64,
    pub native_budget_support: bool,
    #[serde(default)]
    pub max_thinking_tokens: Option<u32>,
    pub endpoint_ref: String,
}

impl ModelSpec {
    /// Validation issues, empty when the entry is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() {
            out.push("model name is empty".to_string());
        }
        if !(self.size_billions > 0.0) || !self.size_billions.is_finite() {
            out.push(format!("model {:?}: size_billions must be a positive finite number", self.name));
        }
        out
    }
}

/// Clamps a requested budget to what the model can actually spend.
///
/// With a `max_thinking_tokens` cap of m, `Unlimited` becomes `Tokens(m)` and
/// finite budgets are reduced to m when they exceed it. Without a cap the
/// request passes through unchanged.
pub fn effective_budget(requested: BudgetSpec, model: &ModelSpec) -> BudgetSpec {
    match model.max_thinking_tokens {
        None => requested,
        Some(m) => requested.min(BudgetSpec::tokens(m)),
    }
}

// --- questions --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Attending,
    Chief,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub dataset_id: String,
    pub stem: String,
    pub options: BTreeMap<Letter, String>,
    pub ground_truth: BTreeSet<Letter>,
    pub tier: Tier,
    pub specialty: String,
}

impl QuestionRecord {
    /// Validation issues, empty when the record is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push("question id is empty".to_string());
        }
        if self.stem.is_empty() {
            out.push(format!("question {:?}: stem is empty", self.id));
        }
        if self.options.len() < 2 {
            out.push(format!("question {:?}: needs at least 2 options", self.id));
        }
        let expected: Vec<Letter> = Letter::ALL[..self.options.len().min(6)].to_vec();
        let actual: Vec<Letter> = self.options.keys().copied().collect();
        if actual != expected {
            out.push(format!(
                "question {:?}: option letters must be contiguous from A, got {:?}",
                self.id, actual
            ));
        }
        if self.ground_truth.is_empty() {
            out.push(format!("question {:?}: ground_truth is empty", self.id));
        }
        for letter in &self.ground_truth {
            if !self.options.contains_key(letter) {
                out.push(format!(
                    "question {:?}: ground_truth letter {letter} is not among the options",
                    self.id
                ));
            }
        }
        out
    }

    pub fn allowed_letters(&self) -> BTreeSet<Letter> {
        self.options.keys().copied().collect()
    }
}

// --- traces and records -----------------------------------------------------

/// One unconstrained generation, split into its parts.
///
/// `raw` is the untouched completion text; `thinking` and `answer_text` come
/// from think-tag extraction; token counts use the run's configured tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub raw: String,
    pub thinking: String,
    pub answer_text: String,
    pub thinking_tokens: u64,
    pub input_tokens: u64,
}

/// One scored trial: a single (model, dataset, question, budget) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub model: String,
    pub dataset_id: String,
    pub question_id: String,
    pub budget: BudgetSpec,
    pub extracted_answer: BTreeSet<Letter>,
    pub correct: bool,
    pub thinking_tokens: u64,
    pub input_tokens: u64,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
}

/// Aggregated accuracy for one fitted condition.
///
/// Range validation happens where observed pipeline data is ingested (see
/// `analysis::points_from_summaries`), not at construction: synthetic fit
/// inputs legitimately carry law values outside [0,1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub budget: BudgetSpec,
    pub model_size: f64,
    pub accuracy: f64,
    pub n: u64,
}

impl AccuracyPoint {
    /// Validation issues for observed (pipeline-produced) points.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.model_size > 0.0) || !self.model_size.is_finite() {
            out.push(format!("model_size {} must be positive and finite", self.model_size));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            out.push(format!("accuracy {} outside [0,1]", self.accuracy));
        }
        if self.n == 0 {
            out.push("n must be at least 1".to_string());
        }
        out
    }
}
