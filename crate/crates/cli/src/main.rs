//! Command-line front end for the budgeted-reasoning pipeline.
//!
//! Subcommands mirror the pipeline stages: `generate` collects unconstrained
//! traces, `truncate` previews budgeted prompts, `evaluate` runs the budget
//! matrix, `analyze` fits the accuracy law and derives budget choices,
//! `report` re-aggregates stored records, and `simulate` runs the whole thing
//! offline against the simulated backend.
//!
//! Exit codes: 0 success, 2 configuration or plan problems, 3 gateway
//! failures, 4 analysis failures, 1 anything else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use thinkbudget::analysis::{
    classify_efficiency, fit_scaling_law, fit_scaling_law_unweighted, marginal_utility,
    optimal_budget, pareto_frontier, points_from_summaries, regime_for_budget,
    saturation_budget, CostModel, ScalingFit,
};
use thinkbudget::config::load_config;
use thinkbudget::error::{Error, Result};
use thinkbudget::model::{BudgetSpec, ExperimentRecord, ModelSpec, QuestionRecord};
use thinkbudget::runner::{
    aggregate, delta_performance, generate_traces, run_matrix, AccuracySummary, HttpBackend,
    InferenceBackend, RunContext,
};
use thinkbudget::store::{
    ensure_fresh_dir, load_jsonl, load_trace_store, sha256_hex, summaries_from_csv,
    write_jsonl, write_manifest, RunManifest, TraceStore,
};
use thinkbudget::synth::{run_simulation, SimulationSpec};
use thinkbudget::truncation::{extract_think, reconstruct_prompt, truncate_thinking};

#[derive(Parser)]
#[command(name = "thinkbudget", version, about = "Thinking-budget evaluation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect unconstrained reasoning traces (stage 1) over HTTP
    Generate(GenerateArgs),
    /// Preview the budgeted prompts rebuilt from stored traces (stage 2)
    Truncate(TruncateArgs),
    /// Run the model x dataset x budget matrix (stage 3) over HTTP
    Evaluate(EvaluateArgs),
    /// Fit the accuracy law and derive regimes, frontiers, and budgets
    Analyze(AnalyzeArgs),
    /// Re-aggregate stored records into summary and delta tables
    Report(ReportArgs),
    /// Synthetic end-to-end run against the simulated backend
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: <output_dir>/generate)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a finished run in the output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stage-1 trace store (traces.jsonl)
    #[arg(long)]
    traces: PathBuf,
    /// Budgets to preview, e.g. "none", "64", "inf" (default: config budgets)
    #[arg(long)]
    budget: Vec<String>,
    /// Output directory (default: <output_dir>/truncate)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stage-1 trace store; required in truncation mode
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Output directory (default: <output_dir>/evaluate)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Accuracy summaries (.csv from `report`/`evaluate`, or .jsonl)
    #[arg(long)]
    summaries: PathBuf,
    /// Model table (models.jsonl written by generate/evaluate/simulate)
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Marginal-utility threshold for the saturation budget
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Fixed cost per call, for cost-constrained budget selection
    #[arg(long)]
    c0: Option<f64>,
    /// Cost per thinking token
    #[arg(long)]
    c1: Option<f64>,
    /// Cost ceiling
    #[arg(long)]
    cmax: Option<f64>,
    /// Weight every point equally instead of by trial count
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment records (records.jsonl)
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Questions per dataset
    #[arg(long, default_value_t = 200)]
    questions: usize,
    /// Simulated model sizes in billions, comma-separated
    #[arg(long, default_value = "4,14,32")]
    sizes: String,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Truncate(args) => cmd_truncate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigValidation(_) | Error::Plan(_) | Error::Template(_) => 2,
        Error::Gateway { .. } | Error::Protocol { .. } | Error::InvalidRequest(_) => 3,
        Error::Analysis(_) | Error::DegenerateFit(_) | Error::InfeasibleCost { .. }
        | Error::UndefinedRatio => 4,
        Error::Store { .. } | Error::Io { .. } => 1,
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn manifest(command: &str, config_sha256: String, seed: u64) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_sha256,
        seed,
        app_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

// --- generate ---------------------------------------------------------------

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| config.output_dir.join("generate"));
    ensure_fresh_dir(&out, args.force)?;

    let questions = config.load_questions()?;
    let tok = config.build_tokenizer()?;
    let template = config.load_template()?;
    let backend = HttpBackend::new(config.endpoints.clone(), 0.0)?;
    let ctx = RunContext::wall_clock(format!("generate-seed{}", config.seed));
    let datasets: Vec<String> = config.datasets.iter().map(|d| d.id.clone()).collect();

    let traces = generate_traces(
        &backend as &dyn InferenceBackend,
        &config.models,
        &datasets,
        &questions,
        &ctx,
        &tok,
        &template,
        config.parallelism,
    )?;

    write_jsonl(&out.join("traces.jsonl"), &traces)?;
    write_jsonl(&out.join("models.jsonl"), &config.models)?;
    write_manifest(&out, &manifest("generate", file_sha256(&args.config)?, config.seed))?;
    println!("wrote {} traces to {}", traces.len(), out.display());
    Ok(())
}

// --- truncate ---------------------------------------------------------------

fn cmd_truncate(args: TruncateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| config.output_dir.join("truncate"));
    ensure_fresh_dir(&out, args.force)?;

    let budgets: Vec<BudgetSpec> = if args.budget.is_empty() {
        config.budgets.clone()
    } else {
        args.budget
            .iter()
            .map(|s| s.parse::<BudgetSpec>().map_err(Error::Config))
            .collect::<Result<_>>()?
    };

    let questions = config.load_questions()?;
    let by_id: BTreeMap<&str, &QuestionRecord> =
        questions.values().flatten().map(|q| (q.id.as_str(), q)).collect();
    let tok = config.build_tokenizer()?;
    let template = config.load_template()?;
    let store = load_trace_store(&args.traces)?;

    let mut rows = Vec::new();
    for entry in store.iter() {
        let question = by_id.get(entry.question_id.as_str()).ok_or_else(|| {
            Error::Plan(format!(
                "trace ({}, {}) has no matching question in the configured datasets",
                entry.model, entry.question_id
            ))
        })?;
        let split = extract_think(&entry.raw);
        for &budget in &budgets {
            let truncated = truncate_thinking(&split.thinking, budget, &tok);
            let prompt = reconstruct_prompt(question, &truncated, &template);
            rows.push(json!({
                "model": entry.model,
                "question_id": entry.question_id,
                "budget": budget,
                "injected_thinking_tokens": tok.count_tokens(&truncated),
                "prompt": prompt,
            }));
        }
    }

    write_jsonl(&out.join("truncations.jsonl"), &rows)?;
    write_manifest(&out, &manifest("truncate", file_sha256(&args.config)?, config.seed))?;
    println!(
        "wrote {} budgeted prompts ({} traces x {} budgets) to {}",
        rows.len(),
        store.len(),
        budgets.len(),
        out.display()
    );
    Ok(())
}

// --- evaluate ---------------------------------------------------------------

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| config.output_dir.join("evaluate"));
    ensure_fresh_dir(&out, args.force)?;

    let questions = config.load_questions()?;
    let tok = config.build_tokenizer()?;
    let template = config.load_template()?;
    let store = match &args.traces {
        Some(path) => load_trace_store(path)?,
        None => TraceStore::new(),
    };
    let backend = HttpBackend::new(config.endpoints.clone(), 0.0)?;
    let ctx = RunContext::wall_clock(format!("evaluate-seed{}", config.seed));
    let plan = config.to_plan();

    let records = run_matrix(&backend, &plan, &ctx, &questions, &store, &tok, &template)?;
    let summaries = aggregate(&records);

    write_jsonl(&out.join("records.jsonl"), &records)?;
    thinkbudget::store::export_summary_csv(&summaries, &out.join("summary.csv"))?;
    write_jsonl(&out.join("models.jsonl"), &config.models)?;
    write_manifest(&out, &manifest("evaluate", file_sha256(&args.config)?, config.seed))?;
    println!(
        "wrote {} records and {} summary rows to {}",
        records.len(),
        summaries.len(),
        out.display()
    );
    Ok(())
}

// --- analyze ----------------------------------------------------------------

fn load_summaries(path: &Path) -> Result<Vec<AccuracySummary>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => summaries_from_csv(path),
        _ => load_jsonl(path),
    }
}

fn budget_tokens_for(summary: &AccuracySummary) -> u64 {
    match summary.budget.token_limit() {
        Some(t) => t,
        None => summary.mean_thinking_tokens.round().max(1.0) as u64,
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let cost = match (args.c0, args.c1, args.cmax) {
        (None, None, None) => None,
        (Some(c0), Some(c1), Some(c_max)) => Some(CostModel { c0, c1, c_max }),
        _ => {
            return Err(Error::Config(
                "cost-constrained selection needs all of --c0, --c1, --cmax".to_string(),
            ))
        }
    };

    let summaries = load_summaries(&args.summaries)?;
    if summaries.is_empty() {
        return Err(Error::Analysis(format!(
            "no summaries in {}",
            args.summaries.display()
        )));
    }
    let models: Vec<ModelSpec> = load_jsonl(&args.models)?;
    let sizes: BTreeMap<String, f64> =
        models.iter().map(|m| (m.name.clone(), m.size_billions)).collect();

    ensure_fresh_dir(&args.out, args.force)?;

    let mut by_dataset: BTreeMap<String, Vec<AccuracySummary>> = BTreeMap::new();
    for s in &summaries {
        by_dataset.entry(s.dataset_id.clone()).or_default().push(s.clone());
    }

    let mut dataset_reports = serde_json::Map::new();
    let mut frontier_csv = String::from("model,dataset,budget,tokens,accuracy\n");
    let mut regimes_csv =
        String::from("model,dataset,budget,tokens,marginal_utility,efficiency_regime,band_regime\n");

    for (dataset, group) in &by_dataset {
        let points = points_from_summaries(group, &sizes)?;
        let fit: ScalingFit = if args.unweighted {
            fit_scaling_law_unweighted(&points)?
        } else {
            fit_scaling_law(&points)?
        };
        let saturation = if fit.alpha > 0.0 {
            Some(saturation_budget(fit.alpha, args.epsilon)?)
        } else {
            None
        };
        println!(
            "dataset {dataset}: alpha {:.4} beta {:.4} gamma {:.4} sigma {:.4} over {} points{}",
            fit.alpha,
            fit.beta,
            fit.gamma,
            fit.sigma,
            fit.n_points,
            match saturation {
                Some(t) => format!("; saturation budget {t} at epsilon {}", args.epsilon),
                None => "; saturation undefined (alpha <= 0)".to_string(),
            }
        );

        let mut models_in_dataset: Vec<&str> =
            group.iter().map(|s| s.model.as_str()).collect();
        models_in_dataset.sort_unstable();
        models_in_dataset.dedup();

        let mut optimal_report = serde_json::Map::new();
        for model in models_in_dataset {
            let rows: Vec<&AccuracySummary> =
                group.iter().filter(|s| s.model == model).collect();
            let curve: Vec<(u64, f64)> =
                rows.iter().map(|s| (budget_tokens_for(s), s.accuracy)).collect();
            let labels: BTreeMap<u64, BudgetSpec> =
                rows.iter().map(|s| (budget_tokens_for(s), s.budget)).collect();

            for &(tokens, accuracy) in &pareto_frontier(&curve)? {
                frontier_csv.push_str(&format!(
                    "{model},{dataset},{},{tokens},{accuracy:.4}\n",
                    labels[&tokens]
                ));
            }
            for s in &rows {
                let tokens = budget_tokens_for(s);
                let utility = marginal_utility(fit.alpha.max(0.0), tokens as f64);
                regimes_csv.push_str(&format!(
                    "{model},{dataset},{},{tokens},{utility:.6e},{},{}\n",
                    s.budget,
                    classify_efficiency(utility),
                    regime_for_budget(s.budget)
                ));
            }
            if let Some(cost) = &cost {
                let (tokens, accuracy) = optimal_budget(&curve, cost)?;
                optimal_report.insert(
                    model.to_string(),
                    json!({
                        "budget": labels[&tokens].to_string(),
                        "tokens": tokens,
                        "accuracy": accuracy,
                        "cost": cost.cost_of(tokens),
                    }),
                );
            }
        }

        let mut report = json!({
            "alpha": fit.alpha,
            "beta": fit.beta,
            "gamma": fit.gamma,
            "sigma": fit.sigma,
            "n_points": fit.n_points,
            "epsilon": args.epsilon,
            "saturation_budget": saturation,
        });
        if !optimal_report.is_empty() {
            report["optimal"] = serde_json::Value::Object(optimal_report);
        }
        dataset_reports.insert(dataset.clone(), report);
    }

    let fit_json = json!({ "datasets": dataset_reports });
    let mut body = serde_json::to_string_pretty(&fit_json)
        .map_err(|e| Error::Analysis(format!("cannot serialize fit report: {e}")))?;
    body.push('\n');
    std::fs::write(args.out.join("fit.json"), body)
        .map_err(|e| Error::io(args.out.join("fit.json"), e))?;
    std::fs::write(args.out.join("frontier.csv"), frontier_csv)
        .map_err(|e| Error::io(args.out.join("frontier.csv"), e))?;
    std::fs::write(args.out.join("regimes.csv"), regimes_csv)
        .map_err(|e| Error::io(args.out.join("regimes.csv"), e))?;
    write_manifest(&args.out, &manifest("analyze", file_sha256(&args.summaries)?, 0))?;
    println!("wrote fit.json, frontier.csv, regimes.csv to {}", args.out.display());
    Ok(())
}

// --- report -----------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> Result<()> {
    let records: Vec<ExperimentRecord> = load_jsonl(&args.records)?;
    if records.is_empty() {
        return Err(Error::Analysis(format!("no records in {}", args.records.display())));
    }
    ensure_fresh_dir(&args.out, args.force)?;

    let summaries = aggregate(&records);
    thinkbudget::store::export_summary_csv(&summaries, &args.out.join("summary.csv"))?;

    let mut deltas = String::from("model,dataset,budget,delta_vs_none\n");
    for s in &summaries {
        if s.budget == BudgetSpec::NoThinking {
            continue;
        }
        let baseline = summaries.iter().find(|b| {
            b.model == s.model && b.dataset_id == s.dataset_id && b.budget == BudgetSpec::NoThinking
        });
        if let Some(baseline) = baseline {
            let delta = delta_performance(s, baseline)?;
            deltas.push_str(&format!("{},{},{},{delta:.4}\n", s.model, s.dataset_id, s.budget));
        }
    }
    std::fs::write(args.out.join("deltas.csv"), deltas)
        .map_err(|e| Error::io(args.out.join("deltas.csv"), e))?;
    write_manifest(&args.out, &manifest("report", file_sha256(&args.records)?, 0))?;
    println!(
        "wrote {} summary rows to {}",
        summaries.len(),
        args.out.display()
    );
    Ok(())
}

// --- simulate ---------------------------------------------------------------

fn parse_sizes(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad model size {s:?}: {e}")))
        })
        .collect()
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = SimulationSpec {
        sizes: parse_sizes(&args.sizes)?,
        questions: args.questions,
        seed: args.seed,
        parallelism: args.parallelism,
        ..SimulationSpec::default()
    };
    ensure_fresh_dir(&args.out, args.force)?;

    let outputs = run_simulation(&spec)?;

    let spec_fingerprint = json!({
        "sizes": spec.sizes,
        "questions": spec.questions,
        "dataset_id": spec.dataset_id,
        "budgets": spec.budgets,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "gamma": spec.gamma,
        "sigma": spec.sigma,
        "seed": spec.seed,
    })
    .to_string();

    write_jsonl(&args.out.join("questions.jsonl"), &outputs.questions[&spec.dataset_id])?;
    write_jsonl(&args.out.join("traces.jsonl"), &outputs.traces)?;
    write_jsonl(&args.out.join("records.jsonl"), &outputs.records)?;
    thinkbudget::store::export_summary_csv(&outputs.summaries, &args.out.join("summary.csv"))?;
    write_jsonl(&args.out.join("models.jsonl"), &outputs.models)?;
    write_manifest(
        &args.out,
        &manifest("simulate", sha256_hex(spec_fingerprint.as_bytes()), spec.seed),
    )?;
    println!(
        "simulated {} records over {} models x {} questions x {} budgets; wrote {}",
        outputs.records.len(),
        outputs.models.len(),
        spec.questions,
        spec.budgets.len(),
        args.out.display()
    );
    Ok(())
}
