//! Stage-three executor: runs the model × dataset × budget matrix, extracts
//! and scores answers, and aggregates per-condition accuracy.
//!
//! Work items go to a bounded worker pool and come back through a channel;
//! records are then sorted by (model, dataset, budget, question id), so the
//! output is identical no matter how execution interleaved. A failed request
//! becomes a record with an empty extracted answer rather than aborting the
//! whole matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::LazyLock;
use std::time::Instant;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, EndpointConfig, Gateway};
use crate::model::{
    effective_budget, BudgetSpec, ExperimentRecord, Letter, ModelSpec, QuestionRecord,
    ReasoningTrace,
};
use crate::simulator::SimulatedModel;
use crate::store::{TraceStore, TraceStoreEntry};
use crate::tokenizer::TokenizerHandle;
use crate::truncation::{extract_think, reconstruct_prompt, truncate_thinking, PromptTemplate};

// --- plan ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Native,
    Truncation,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Native => f.write_str("native"),
            RunMode::Truncation => f.write_str("truncation"),
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(RunMode::Native),
            "truncation" => Ok(RunMode::Truncation),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected \"native\" or \"truncation\""
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunPlan {
    pub models: Vec<ModelSpec>,
    pub datasets: Vec<String>,
    pub budgets: Vec<BudgetSpec>,
    pub mode: RunMode,
    pub parallelism: usize,
    pub seed: u64,
}

impl RunPlan {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.models.is_empty() {
            out.push("plan has no models".to_string());
        }
        if self.datasets.is_empty() {
            out.push("plan has no datasets".to_string());
        }
        if self.budgets.is_empty() {
            out.push("plan has no budgets".to_string());
        }
        if self.parallelism == 0 {
            out.push("parallelism must be at least 1".to_string());
        }
        let mut seen_models = BTreeSet::new();
        for m in &self.models {
            if !seen_models.insert(&m.name) {
                out.push(format!("duplicate model name {}", m.name));
            }
        }
        let mut seen_budgets = BTreeSet::new();
        for &b in &self.budgets {
            if !seen_budgets.insert(b) {
                out.push(format!("duplicate budget {b}"));
            }
        }
        let mut seen_datasets = BTreeSet::new();
        for d in &self.datasets {
            if !seen_datasets.insert(d) {
                out.push(format!("duplicate dataset {d}"));
            }
        }
        if self.mode == RunMode::Native {
            for m in &self.models {
                if !m.native_budget_support {
                    out.push(format!(
                        "native mode requires native_budget_support, which model {} lacks",
                        m.name
                    ));
                }
            }
        }
        out
    }
}

/// Identity shared by every record of one run. `created_at` is fixed up front
/// so a run's records do not differ by worker timing.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
}

impl RunContext {
    pub fn wall_clock(run_id: impl Into<String>) -> Self {
        RunContext { run_id: run_id.into(), created_at: Utc::now() }
    }

    /// Epoch-pinned context for fully reproducible synthetic runs.
    pub fn at_epoch(run_id: impl Into<String>) -> Self {
        RunContext {
            run_id: run_id.into(),
            created_at: DateTime::from_timestamp(0, 0).expect("epoch is representable"),
        }
    }
}

// --- summaries ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracySummary {
    pub model: String,
    pub dataset_id: String,
    pub budget: BudgetSpec,
    pub accuracy: f64,
    pub n: u64,
    pub mean_thinking_tokens: f64,
}

// --- backends ------------------------------------------------------------------

/// Everything a backend needs to answer one stage-three work item.
#[derive(Debug)]
pub struct StageRequest<'a> {
    pub model: &'a ModelSpec,
    pub question: &'a QuestionRecord,
    pub requested: BudgetSpec,
    pub effective: BudgetSpec,
    pub mode: RunMode,
    pub prompt: &'a str,
    /// Tokens of partial reasoning already inside `prompt` (truncation mode).
    pub injected_thinking_tokens: u64,
    pub input_tokens: u64,
}

pub trait InferenceBackend: Send + Sync {
    /// Unconstrained stage-one generation; returns the raw completion text.
    fn stage1(
        &self,
        model: &ModelSpec,
        question: &QuestionRecord,
        prompt: &str,
        input_tokens: u64,
    ) -> Result<String>;

    /// Budgeted stage-three generation; returns the raw completion text.
    fn stage3(&self, request: &StageRequest<'_>) -> Result<String>;

    /// Whether latencies mean anything for this backend. Simulated runs
    /// report zero so outputs stay byte-stable.
    fn wall_clock_latency(&self) -> bool;
}

pub struct HttpBackend {
    gateway: Gateway,
    endpoints: BTreeMap<String, EndpointConfig>,
    temperature: f64,
    max_tokens: Option<u32>,
}

impl HttpBackend {
    pub fn new(endpoints: BTreeMap<String, EndpointConfig>, temperature: f64) -> Result<Self> {
        Ok(HttpBackend { gateway: Gateway::http()?, endpoints, temperature, max_tokens: None })
    }

    pub fn with_gateway(
        gateway: Gateway,
        endpoints: BTreeMap<String, EndpointConfig>,
        temperature: f64,
    ) -> Self {
        HttpBackend { gateway, endpoints, temperature, max_tokens: None }
    }

    fn endpoint_for(&self, model: &ModelSpec) -> Result<&EndpointConfig> {
        self.endpoints.get(&model.endpoint_ref).ok_or_else(|| {
            Error::Plan(format!(
                "model {} references endpoint {}, which is not configured",
                model.name, model.endpoint_ref
            ))
        })
    }
}

impl InferenceBackend for HttpBackend {
    fn stage1(
        &self,
        model: &ModelSpec,
        _question: &QuestionRecord,
        prompt: &str,
        _input_tokens: u64,
    ) -> Result<String> {
        let endpoint = self.endpoint_for(model)?;
        let mut request = ChatRequest::new(&model.name, prompt);
        request.temperature = self.temperature;
        request.max_tokens = self.max_tokens;
        Ok(self.gateway.chat_complete(endpoint, &request)?.content)
    }

    fn stage3(&self, sr: &StageRequest<'_>) -> Result<String> {
        let endpoint = self.endpoint_for(sr.model)?;
        let mut request = ChatRequest::new(&sr.model.name, sr.prompt);
        request.temperature = self.temperature;
        request.max_tokens = self.max_tokens;
        // Native mode rides the endpoint's budget parameter; truncation mode
        // carries the budget inside the prompt and sends none.
        if sr.mode == RunMode::Native {
            request.thinking_budget = Some(sr.effective);
        }
        Ok(self.gateway.chat_complete(endpoint, &request)?.content)
    }

    fn wall_clock_latency(&self) -> bool {
        true
    }
}

pub struct SimulatedBackend {
    models: BTreeMap<String, SimulatedModel>,
}

impl SimulatedBackend {
    pub fn new(models: Vec<SimulatedModel>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for sim in models {
            let name = sim.model.name.clone();
            if map.insert(name.clone(), sim).is_some() {
                return Err(Error::Plan(format!("duplicate simulated model {name}")));
            }
        }
        Ok(SimulatedBackend { models: map })
    }

    fn model_for(&self, name: &str) -> Result<&SimulatedModel> {
        self.models
            .get(name)
            .ok_or_else(|| Error::Plan(format!("no simulated model named {name}")))
    }
}

impl InferenceBackend for SimulatedBackend {
    fn stage1(
        &self,
        model: &ModelSpec,
        question: &QuestionRecord,
        _prompt: &str,
        input_tokens: u64,
    ) -> Result<String> {
        let sim = self.model_for(&model.name)?;
        Ok(sim.simulate_complete(question, BudgetSpec::Unlimited, input_tokens))
    }

    fn stage3(&self, sr: &StageRequest<'_>) -> Result<String> {
        let sim = self.model_for(&sr.model.name)?;
        Ok(match sr.mode {
            RunMode::Truncation => sim.complete_with_injected(sr.question, sr.injected_thinking_tokens),
            RunMode::Native => sim.simulate_complete(sr.question, sr.effective, sr.input_tokens),
        })
    }

    fn wall_clock_latency(&self) -> bool {
        false
    }
}

// --- answer extraction and scoring ----------------------------------------------

static ANSWER_IS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\banswer\s+is\s*:?\s*([A-Fa-f](?:\s*,\s*[A-Fa-f])*)\b").unwrap()
});
static ANSWER_COLON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\banswers?\s*:\s*([A-Fa-f](?:\s*,\s*[A-Fa-f])*)\b").unwrap()
});
static BARE_LIST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^\s*([A-Fa-f](?:\s*,\s*[A-Fa-f])*)\s*$").unwrap()
});

/// Scans for the LAST answer declaration ("answer is X", "Answer: X", or a
/// bare letter list on its own line) and returns its letters filtered to the
/// allowed set. Empty set means extraction failed.
pub fn extract_answer(answer_text: &str, allowed: &BTreeSet<Letter>) -> BTreeSet<Letter> {
    debug_assert!(!allowed.is_empty(), "allowed letter set must be nonempty");
    let mut best: Option<(usize, &str)> = None;
    for pattern in [&*ANSWER_IS, &*ANSWER_COLON, &*BARE_LIST] {
        for caps in pattern.captures_iter(answer_text) {
            let end = caps.get(0).unwrap().end();
            let letters = caps.get(1).unwrap().as_str();
            // strictly greater: on a tie the earlier pattern keeps the match
            if best.map_or(true, |(e, _)| end > e) {
                best = Some((end, letters));
            }
        }
    }
    let Some((_, letters)) = best else {
        return BTreeSet::new();
    };
    letters
        .split(',')
        .filter_map(|piece| {
            let piece = piece.trim();
            let mut chars = piece.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Letter::from_char(c),
                _ => None,
            }
        })
        .filter(|l| allowed.contains(l))
        .collect()
}

/// Exact set match: anything else, including a superset of the truth or an
/// empty extraction, scores wrong.
pub fn score(extracted: &BTreeSet<Letter>, truth: &BTreeSet<Letter>) -> bool {
    !truth.is_empty() && extracted == truth
}

// --- the matrix -------------------------------------------------------------------

/// Runs every (model, dataset, budget, question) combination through the
/// backend. Fails fast on plan problems and, in truncation mode, on any
/// missing stage-one trace, before a single request is sent.
pub fn run_matrix(
    backend: &dyn InferenceBackend,
    plan: &RunPlan,
    ctx: &RunContext,
    questions: &BTreeMap<String, Vec<QuestionRecord>>,
    traces: &TraceStore,
    tok: &TokenizerHandle,
    template: &PromptTemplate,
) -> Result<Vec<ExperimentRecord>> {
    let problems = plan.problems();
    if !problems.is_empty() {
        return Err(Error::Plan(problems.join("; ")));
    }
    for dataset in &plan.datasets {
        match questions.get(dataset) {
            None => return Err(Error::Plan(format!("dataset {dataset} has no loaded questions"))),
            Some(qs) if qs.is_empty() => {
                return Err(Error::Plan(format!("dataset {dataset} is empty")))
            }
            Some(_) => {}
        }
    }
    if plan.mode == RunMode::Truncation {
        let mut missing = Vec::new();
        for model in &plan.models {
            for dataset in &plan.datasets {
                for q in &questions[dataset] {
                    if traces.get(&model.name, &q.id).is_none() {
                        missing.push(format!("({}, {})", model.name, q.id));
                    }
                }
            }
        }
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(5).cloned().collect();
            let rest = missing.len().saturating_sub(shown.len());
            let tail = if rest > 0 { format!(" and {rest} more") } else { String::new() };
            return Err(Error::Plan(format!(
                "missing stage-one traces for {} (model, question) pairs: {}{tail}",
                missing.len(),
                shown.join(", ")
            )));
        }
    }

    struct Item<'a> {
        model: &'a ModelSpec,
        dataset: &'a str,
        budget: BudgetSpec,
        question: &'a QuestionRecord,
    }
    let mut items = Vec::new();
    for model in &plan.models {
        for dataset in &plan.datasets {
            for &budget in &plan.budgets {
                for question in &questions[dataset] {
                    items.push(Item { model, dataset, budget, question });
                }
            }
        }
    }

    let wall_clock = backend.wall_clock_latency();
    let mode = plan.mode;
    let mut records = parallel_indexed(items.len(), plan.parallelism, |i| {
        let item = &items[i];
        let requested = item.budget;
        let effective = effective_budget(requested, item.model);
        let (prompt, injected) = match mode {
            RunMode::Truncation => {
                let entry = traces
                    .get(&item.model.name, &item.question.id)
                    .expect("trace presence validated above");
                let thinking = extract_think(&entry.raw).thinking;
                let truncated = truncate_thinking(&thinking, effective, tok);
                let injected = tok.count_tokens(&truncated);
                (reconstruct_prompt(item.question, &truncated, template), injected)
            }
            RunMode::Native => (reconstruct_prompt(item.question, "", template), 0),
        };
        let input_tokens = tok.count_tokens(&prompt);
        let request = StageRequest {
            model: item.model,
            question: item.question,
            requested,
            effective,
            mode,
            prompt: &prompt,
            injected_thinking_tokens: injected,
            input_tokens,
        };
        let started = Instant::now();
        let outcome = backend.stage3(&request);
        let latency_ms = if wall_clock { started.elapsed().as_millis() as u64 } else { 0 };

        let mut record = ExperimentRecord {
            run_id: ctx.run_id.clone(),
            model: item.model.name.clone(),
            dataset_id: item.dataset.to_string(),
            question_id: item.question.id.clone(),
            budget: requested,
            extracted_answer: BTreeSet::new(),
            correct: false,
            thinking_tokens: injected,
            input_tokens,
            latency_ms,
            created_at: ctx.created_at,
        };
        if let Ok(raw) = outcome {
            let split = extract_think(&raw);
            if mode == RunMode::Native {
                record.thinking_tokens = tok.count_tokens(&split.thinking);
            }
            record.extracted_answer = extract_answer(&split.remainder, &item.question.allowed_letters());
            record.correct = score(&record.extracted_answer, &item.question.ground_truth);
        }
        record
    });

    records.sort_by(|a, b| {
        (&a.model, &a.dataset_id, a.budget, &a.question_id)
            .cmp(&(&b.model, &b.dataset_id, b.budget, &b.question_id))
    });
    Ok(records)
}

/// Stage-one pass: one unconstrained trace per (model, dataset, question).
/// Unlike the matrix, a failed generation aborts: downstream truncation
/// requires a complete trace store.
pub fn generate_traces(
    backend: &dyn InferenceBackend,
    models: &[ModelSpec],
    datasets: &[String],
    questions: &BTreeMap<String, Vec<QuestionRecord>>,
    ctx: &RunContext,
    tok: &TokenizerHandle,
    template: &PromptTemplate,
    parallelism: usize,
) -> Result<Vec<TraceStoreEntry>> {
    struct Item<'a> {
        model: &'a ModelSpec,
        question: &'a QuestionRecord,
    }
    let mut items = Vec::new();
    for model in models {
        for dataset in datasets {
            let qs = questions
                .get(dataset)
                .ok_or_else(|| Error::Plan(format!("dataset {dataset} has no loaded questions")))?;
            for question in qs {
                items.push(Item { model, question });
            }
        }
    }
    let results = parallel_indexed(items.len(), parallelism, |i| {
        let item = &items[i];
        let prompt = reconstruct_prompt(item.question, "", template);
        let input_tokens = tok.count_tokens(&prompt);
        let raw = backend.stage1(item.model, item.question, &prompt, input_tokens)?;
        let split = extract_think(&raw);
        Ok(TraceStoreEntry {
            model: item.model.name.clone(),
            question_id: item.question.id.clone(),
            thinking_tokens: tok.count_tokens(&split.thinking),
            input_tokens,
            raw,
            thinking: split.thinking,
            created_at: ctx.created_at,
        })
    });
    results.into_iter().collect()
}

/// Runs `f(0..items)` on up to `workers` threads; the result vector is indexed
/// exactly like the input regardless of completion order.
pub fn parallel_indexed<T, F>(items: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    if items == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, items);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items {
                    break;
                }
                if tx.send((i, f(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });
    let mut slots: Vec<Option<T>> = (0..items).map(|_| None).collect();
    for (i, value) in rx {
        slots[i] = Some(value);
    }
    slots.into_iter().map(|s| s.expect("every index produced")).collect()
}

// --- aggregation -----------------------------------------------------------------

/// Per-(model, dataset, budget) accuracy. Order-insensitive: any permutation
/// of the record list yields the same summaries.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<AccuracySummary> {
    let mut groups: BTreeMap<(&str, &str, BudgetSpec), (u64, u64, u64)> = BTreeMap::new();
    for r in records {
        let entry = groups
            .entry((r.model.as_str(), r.dataset_id.as_str(), r.budget))
            .or_insert((0, 0, 0));
        entry.0 += u64::from(r.correct);
        entry.1 += 1;
        entry.2 += r.thinking_tokens;
    }
    groups
        .into_iter()
        .map(|((model, dataset, budget), (correct, n, token_sum))| AccuracySummary {
            model: model.to_string(),
            dataset_id: dataset.to_string(),
            budget,
            accuracy: correct as f64 / n as f64,
            n,
            mean_thinking_tokens: token_sum as f64 / n as f64,
        })
        .collect()
}

/// Accuracy gain over the same condition's no-thinking baseline.
pub fn delta_performance(at: &AccuracySummary, baseline: &AccuracySummary) -> Result<f64> {
    if at.model != baseline.model || at.dataset_id != baseline.dataset_id {
        return Err(Error::Analysis(format!(
            "baseline ({}, {}) does not match summary ({}, {})",
            baseline.model, baseline.dataset_id, at.model, at.dataset_id
        )));
    }
    if baseline.budget != BudgetSpec::NoThinking {
        return Err(Error::Analysis(format!(
            "baseline budget must be none, got {}",
            baseline.budget
        )));
    }
    Ok(at.accuracy - baseline.accuracy)
}

/// Thinking depth relative to the question: output tokens per input token.
pub fn thinking_ratio(trace: &ReasoningTrace) -> Result<f64> {
    if trace.input_tokens == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(trace.thinking_tokens as f64 / trace.input_tokens as f64)
}
