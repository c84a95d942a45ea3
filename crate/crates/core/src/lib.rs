//! Measuring how answer accuracy responds to a model's thinking budget.
//!
//! The pipeline has three stages: unconstrained generation of reasoning
//! traces, truncation of those traces to a token budget, and budgeted
//! re-inference over a model x dataset x budget matrix. On top of the
//! scored records sit a log-linear accuracy fit and the budget-selection
//! machinery derived from it (marginal utility, efficiency regimes, Pareto
//! frontier, cost-constrained choice, allocation policy).
//!
//! Everything is deterministic given a seed; the simulated backend makes
//! the whole pipeline runnable offline.

pub mod analysis;
pub mod config;
pub mod error;
pub mod gateway;
pub mod model;
pub mod runner;
pub mod simulator;
pub mod store;
pub mod synth;
pub mod tokenizer;
pub mod truncation;

pub use error::{Error, Result};
pub use model::{
    budget_ladder, effective_budget, format_letters, AccuracyPoint, BudgetSpec, ExperimentRecord,
    Letter, ModelSpec, QuestionRecord, ReasoningTrace, Tier,
};
