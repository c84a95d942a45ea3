//! Deterministic stand-in for a budget-aware model endpoint.
//!
//! A simulated model answers multiple-choice questions with a success
//! probability that grows logarithmically in the number of thinking tokens it
//! was allowed to spend: clamp(alpha*ln(T+1) + beta*ln(size) + gamma + eps).
//!
//! All randomness for a question comes from one ChaCha8 stream keyed by
//! (seed, model name, question id). The budget is deliberately left out of
//! the key: the same question sampled at two budgets shares its noise and
//! threshold draws, so per-question correctness is monotone in the budget
//! rather than merely monotone on average.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{format_letters, BudgetSpec, Letter, ModelSpec, QuestionRecord};

#[derive(Clone, Debug)]
pub struct SimulatedModel {
    pub model: ModelSpec,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Every random decision for one (model, question) pair, drawn in a fixed
/// order so any consumer sees the same values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuestionDraws {
    /// Uniform in [0,1); sets the unconstrained trace length.
    pub ratio_uniform: f64,
    /// Gaussian noise added to the success probability.
    pub epsilon: f64,
    /// Uniform in [0,1); compared against the success probability.
    pub correctness_uniform: f64,
    /// Picks which wrong option gets blamed on a miss.
    pub wrong_choice: u64,
    /// Picks the surface form of the answer sentence.
    pub format_choice: u64,
}

impl SimulatedModel {
    pub fn new(model: ModelSpec, alpha: f64, beta: f64, gamma: f64, sigma: f64, seed: u64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma), ("sigma", sigma)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("simulated model parameter {name} must be finite, got {v}")));
            }
        }
        if sigma < 0.0 {
            return Err(Error::Config(format!("simulated model sigma must be nonnegative, got {sigma}")));
        }
        if !(model.size_billions > 0.0) {
            return Err(Error::Config(format!(
                "simulated model size must be positive, got {}",
                model.size_billions
            )));
        }
        Ok(SimulatedModel { model, alpha, beta, gamma, sigma, seed })
    }

    fn stream(&self, question_id: &str) -> ChaCha8Rng {
        // Length-prefixed fields keep (name, id) pairs unambiguous.
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.model.name.len() as u64).to_le_bytes());
        hasher.update(self.model.name.as_bytes());
        hasher.update((question_id.len() as u64).to_le_bytes());
        hasher.update(question_id.as_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    pub fn draws_for(&self, question_id: &str) -> QuestionDraws {
        let mut rng = self.stream(question_id);
        let ratio_uniform = rng.random::<f64>();
        let epsilon = Normal::new(0.0, self.sigma)
            .expect("sigma validated nonnegative")
            .sample(&mut rng);
        let correctness_uniform = rng.random::<f64>();
        let wrong_choice = rng.random::<u64>();
        let format_choice = rng.random::<u64>();
        QuestionDraws { ratio_uniform, epsilon, correctness_uniform, wrong_choice, format_choice }
    }

    /// Unconstrained thinking length for a prompt of `input_tokens` tokens.
    /// The output-to-input ratio is uniform over [2.3, 6.2).
    pub fn trace_length(&self, question_id: &str, input_tokens: u64) -> u64 {
        let u = self.draws_for(question_id).ratio_uniform;
        let ratio = 2.3 + 3.9 * u;
        ((ratio * input_tokens as f64).round() as u64).max(1)
    }

    /// clamp(alpha*ln(T+1) + beta*ln(size) + gamma + eps) to [0, 1].
    pub fn success_probability(&self, thinking_tokens: u64, epsilon: f64) -> f64 {
        let raw = self.alpha * ((thinking_tokens + 1) as f64).ln()
            + self.beta * self.model.size_billions.ln()
            + self.gamma
            + epsilon;
        raw.clamp(0.0, 1.0)
    }

    /// Native-style completion: emits a think block of min(budget, natural
    /// trace length) filler tokens, then an answer sentence whose correctness
    /// was decided by the shared per-question draws.
    pub fn simulate_complete(&self, question: &QuestionRecord, budget: BudgetSpec, input_tokens: u64) -> String {
        let draws = self.draws_for(&question.id);
        let natural = self.trace_length(&question.id, input_tokens);
        let emitted = match budget.token_limit() {
            Some(limit) => natural.min(limit),
            None => natural,
        };
        let answer = self.answer_sentence(question, emitted, &draws);
        if emitted == 0 {
            answer
        } else {
            format!("<think>{}</think>\n{}", filler_tokens(emitted), answer)
        }
    }

    /// Completion for a prompt that already carries `injected_tokens` tokens
    /// of partial reasoning. No think block is emitted; the injected count
    /// alone drives the success probability.
    pub fn complete_with_injected(&self, question: &QuestionRecord, injected_tokens: u64) -> String {
        let draws = self.draws_for(&question.id);
        self.answer_sentence(question, injected_tokens, &draws)
    }

    fn answer_sentence(&self, question: &QuestionRecord, thinking_tokens: u64, draws: &QuestionDraws) -> String {
        let p = self.success_probability(thinking_tokens, draws.epsilon);
        let correct = draws.correctness_uniform < p;
        let answer = if correct {
            format_letters(&question.ground_truth)
        } else {
            wrong_letter(question, draws.wrong_choice).as_char().to_string()
        };
        match draws.format_choice % 3 {
            0 => format!("Answer: {answer}"),
            1 => format!("Therefore, the answer is {answer}."),
            _ => format!("I considered each option.\n{answer}\n"),
        }
    }
}

/// "t1 t2 ... tN": each item is a single token under the whitespace splitter.
pub fn filler_tokens(n: u64) -> String {
    let mut out = String::with_capacity(n as usize * 5);
    for i in 1..=n {
        if i > 1 {
            out.push(' ');
        }
        out.push('t');
        out.push_str(&i.to_string());
    }
    out
}

fn wrong_letter(question: &QuestionRecord, choice: u64) -> Letter {
    let candidates: Vec<Letter> = question
        .options
        .keys()
        .copied()
        .filter(|l| !question.ground_truth.contains(l))
        .collect();
    if candidates.is_empty() {
        // every option is correct; any letter alone is a wrong answer set
        *question.options.keys().next().unwrap_or(&Letter::A)
    } else {
        candidates[(choice % candidates.len() as u64) as usize]
    }
}
