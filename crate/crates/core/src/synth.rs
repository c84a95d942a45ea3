//! Self-contained synthetic pipeline: builds a family of simulated models
//! and a question set, runs unconstrained generation, truncation, and the
//! budgeted matrix, and aggregates the results. No network, byte-stable
//! under a fixed seed.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{budget_ladder, BudgetSpec, Letter, ModelSpec, QuestionRecord, Tier};
use crate::runner::{
    aggregate, generate_traces, run_matrix, AccuracySummary, InferenceBackend, RunContext,
    RunMode, RunPlan, SimulatedBackend,
};
use crate::simulator::SimulatedModel;
use crate::store::{TraceStore, TraceStoreEntry};
use crate::truncation::PromptTemplate;
use crate::model::ExperimentRecord;
use crate::tokenizer::TokenizerHandle;

/// How many filler words go into each synthetic stem. Kept high enough that
/// every natural trace (at least 2.3x the input) overshoots the top finite
/// ladder budget, so truncation is exercised at every rung.
const STEM_WORDS_PER_QUESTION: usize = 480;

const STEM_POOL: [&str; 12] = [
    "patient",
    "history",
    "presents",
    "with",
    "progressive",
    "symptoms",
    "over",
    "several",
    "weeks",
    "requiring",
    "careful",
    "review",
];

const SPECIALTIES: [&str; 4] = ["cardiovascular", "neurology", "pulmonary", "renal"];

#[derive(Clone, Debug)]
pub struct SimulationSpec {
    pub sizes: Vec<f64>,
    pub questions: usize,
    pub dataset_id: String,
    pub budgets: Vec<BudgetSpec>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            sizes: vec![4.0, 14.0, 32.0],
            questions: 200,
            dataset_id: "synthetic".to_string(),
            budgets: budget_ladder().to_vec(),
            alpha: 0.08,
            beta: 0.12,
            gamma: -0.10,
            sigma: 0.02,
            seed: 42,
            parallelism: 1,
        }
    }
}

impl SimulationSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sizes.is_empty() {
            out.push("no model sizes given".to_string());
        }
        for &s in &self.sizes {
            if !(s > 0.0) || !s.is_finite() {
                out.push(format!("model size {s} must be positive and finite"));
            }
        }
        if self.questions == 0 {
            out.push("question count must be at least 1".to_string());
        }
        if self.budgets.is_empty() {
            out.push("budget list is empty".to_string());
        }
        if self.parallelism == 0 {
            out.push("parallelism must be at least 1".to_string());
        }
        if self.dataset_id.is_empty() || self.dataset_id.contains(',') || self.dataset_id.contains('\n')
        {
            out.push(format!("dataset id {:?} is not usable", self.dataset_id));
        }
        out
    }
}

/// "sim-4b", "sim-14b", "sim-1.7b".
pub fn model_name(size: f64) -> String {
    if size.fract() == 0.0 {
        format!("sim-{}b", size as u64)
    } else {
        format!("sim-{size}b")
    }
}

pub fn synth_models(spec: &SimulationSpec) -> Vec<ModelSpec> {
    spec.sizes
        .iter()
        .map(|&size| ModelSpec {
            name: model_name(size),
            family: "sim".to_string(),
            size_billions: size,
            native_budget_support: false,
            max_thinking_tokens: None,
            endpoint_ref: String::new(),
        })
        .collect()
}

/// Deterministic multiple-choice questions with long stems. Every fifth
/// question has a two-letter answer so exact-set scoring is exercised.
pub fn synth_questions(spec: &SimulationSpec) -> Vec<QuestionRecord> {
    (0..spec.questions)
        .map(|i| {
            let mut stem = String::new();
            stem.push_str(&format!("Case {i}:"));
            for w in 0..STEM_WORDS_PER_QUESTION {
                stem.push(' ');
                stem.push_str(STEM_POOL[(i + w) % STEM_POOL.len()]);
            }
            stem.push_str(" Which management is most appropriate?");

            let options: BTreeMap<Letter, String> = Letter::ALL[..4]
                .iter()
                .map(|&letter| (letter, format!("management option {letter} for case {i}")))
                .collect();
            let first = Letter::ALL[i % 4];
            let mut ground_truth = BTreeSet::from([first]);
            if i % 5 == 0 {
                ground_truth.insert(Letter::ALL[(i + 1) % 4]);
            }
            QuestionRecord {
                id: format!("q-{i:04}"),
                dataset_id: spec.dataset_id.clone(),
                stem,
                options,
                ground_truth,
                tier: if i % 2 == 0 { Tier::Attending } else { Tier::Chief },
                specialty: SPECIALTIES[i % SPECIALTIES.len()].to_string(),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SimulationOutputs {
    pub models: Vec<ModelSpec>,
    pub questions: BTreeMap<String, Vec<QuestionRecord>>,
    pub traces: Vec<TraceStoreEntry>,
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<AccuracySummary>,
}

/// The whole synthetic pipeline: unconstrained traces, truncation to each
/// budget, re-inference, scoring, aggregation. Timestamps are pinned to the
/// epoch and latencies are zero, so equal seeds give equal bytes.
pub fn run_simulation(spec: &SimulationSpec) -> Result<SimulationOutputs> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::ConfigValidation(problems));
    }

    let models = synth_models(spec);
    let sims = models
        .iter()
        .map(|m| {
            SimulatedModel::new(m.clone(), spec.alpha, spec.beta, spec.gamma, spec.sigma, spec.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let backend = SimulatedBackend::new(sims)?;

    let questions =
        BTreeMap::from([(spec.dataset_id.clone(), synth_questions(spec))]);
    let ctx = RunContext::at_epoch(format!("sim-{}", spec.seed));
    let tok = TokenizerHandle::whitespace();
    let template = PromptTemplate::builtin();
    let datasets = vec![spec.dataset_id.clone()];

    let traces = generate_traces(
        &backend as &dyn InferenceBackend,
        &models,
        &datasets,
        &questions,
        &ctx,
        &tok,
        &template,
        spec.parallelism,
    )?;
    let store = TraceStore::from_entries(traces.clone())?;

    let plan = RunPlan {
        models: models.clone(),
        datasets,
        budgets: spec.budgets.clone(),
        mode: RunMode::Truncation,
        parallelism: spec.parallelism,
        seed: spec.seed,
    };
    let records = run_matrix(&backend, &plan, &ctx, &questions, &store, &tok, &template)?;
    let summaries = aggregate(&records);

    Ok(SimulationOutputs { models, questions, traces, records, summaries })
}
