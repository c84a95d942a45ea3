//! Behavior of the installed binary: subcommand wiring, output files,
//! overwrite protection, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thinkbudget"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_question_file(path: &Path) {
    let q = serde_json::json!({
        "id": "q1",
        "dataset_id": "d1",
        "stem": "Which drug lowers blood pressure?",
        "options": {"A": "Lisinopril", "B": "Insulin"},
        "ground_truth": ["A"],
        "tier": "attending",
        "specialty": "cardiovascular",
    });
    std::fs::write(path, format!("{q}\n")).unwrap();
}

#[test]
fn no_arguments_shows_usage_and_exits_2() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn simulate_writes_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "simulate",
        "--out",
        out_dir.to_str().unwrap(),
        "--questions",
        "10",
        "--sizes",
        "4,32",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    for file in ["questions.jsonl", "traces.jsonl", "records.jsonl", "summary.csv", "models.jsonl", "manifest.json"]
    {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["app_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let records = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2 * 10 * 7);

    // a finished run is protected; --force overrides
    let refused = run(&["simulate", "--out", out_dir.to_str().unwrap(), "--questions", "10"]);
    assert_ne!(refused.status.code(), Some(0));
    assert!(stderr(&refused).contains("--force"), "{}", stderr(&refused));
    let forced = run(&[
        "simulate",
        "--out",
        out_dir.to_str().unwrap(),
        "--questions",
        "10",
        "--sizes",
        "4,32",
        "--force",
    ]);
    assert_eq!(forced.status.code(), Some(0), "{}", stderr(&forced));
}

#[test]
fn config_problems_exit_2() {
    let missing = run(&["generate", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));

    // validation failure lists violations and exits 2
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        "budgets = []\n\n[[models]]\nname = \"m1\"\nfamily = \"f\"\nsize_billions = 4.0\nnative_budget_support = false\nendpoint_ref = \"\"\n\n[[datasets]]\nid = \"d1\"\npath = \"missing.jsonl\"\n",
    )
    .unwrap();
    let invalid = run(&["generate", "--config", config.to_str().unwrap()]);
    assert_eq!(invalid.status.code(), Some(2));
    let text = stderr(&invalid);
    assert!(text.contains("budget list is empty"), "{text}");
    assert!(text.contains("no file at"), "{text}");

    let bad_sizes = run(&["simulate", "--out", dir.path().join("x").to_str().unwrap(), "--sizes", "4,banana"]);
    assert_eq!(bad_sizes.status.code(), Some(2), "{}", stderr(&bad_sizes));
}

#[test]
fn gateway_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_question_file(&dir.path().join("questions.jsonl"));
    // port 1 refuses connections; retries exhaust, then the run fails
    std::fs::write(
        dir.path().join("config.toml"),
        r#"
budgets = ["none"]
mode = "native"

[endpoints.dead]
base_url = "http://127.0.0.1:1"

[[models]]
name = "m1"
family = "f"
size_billions = 4.0
native_budget_support = true
endpoint_ref = "dead"

[[datasets]]
id = "d1"
path = "questions.jsonl"
"#,
    )
    .unwrap();
    let out = run(&[
        "generate",
        "--config",
        dir.path().join("config.toml").to_str().unwrap(),
        "--out",
        dir.path().join("gen").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("attempt"), "{}", stderr(&out));
}

#[test]
fn degenerate_analysis_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // every point shares one budget: unidentifiable design
    std::fs::write(
        dir.path().join("summary.csv"),
        "model,dataset,budget,accuracy,n,mean_thinking_tokens\n\
         m1,d1,64,0.5000,100,64.00\n\
         m2,d1,64,0.6000,100,64.00\n\
         m3,d1,64,0.7000,100,64.00\n",
    )
    .unwrap();
    let models: String = ["m1", "m2", "m3"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            format!(
                "{}\n",
                serde_json::json!({
                    "name": name,
                    "family": "f",
                    "size_billions": (i + 1) as f64 * 4.0,
                    "native_budget_support": false,
                    "endpoint_ref": "",
                })
            )
        })
        .collect();
    std::fs::write(dir.path().join("models.jsonl"), models).unwrap();

    let out = run(&[
        "analyze",
        "--summaries",
        dir.path().join("summary.csv").to_str().unwrap(),
        "--models",
        dir.path().join("models.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("analysis").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("degenerate"), "{}", stderr(&out));
}

#[test]
fn truncate_previews_budgeted_prompts() {
    let dir = tempfile::tempdir().unwrap();
    write_question_file(&dir.path().join("questions.jsonl"));
    std::fs::write(
        dir.path().join("config.toml"),
        r#"
[[models]]
name = "m1"
family = "f"
size_billions = 4.0
native_budget_support = false
endpoint_ref = ""

[[datasets]]
id = "d1"
path = "questions.jsonl"
"#,
    )
    .unwrap();
    let trace = serde_json::json!({
        "model": "m1",
        "question_id": "q1",
        "raw": "<think>first second third fourth</think>\nAnswer: A",
        "thinking": "first second third fourth",
        "thinking_tokens": 4,
        "input_tokens": 30,
        "created_at": "1970-01-01T00:00:00Z",
    });
    std::fs::write(dir.path().join("traces.jsonl"), format!("{trace}\n")).unwrap();

    let out = run(&[
        "truncate",
        "--config",
        dir.path().join("config.toml").to_str().unwrap(),
        "--traces",
        dir.path().join("traces.jsonl").to_str().unwrap(),
        "--budget",
        "2",
        "--budget",
        "none",
        "--out",
        dir.path().join("trunc").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let rows: Vec<serde_json::Value> =
        std::fs::read_to_string(dir.path().join("trunc/truncations.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
    assert_eq!(rows.len(), 2);
    let budgeted = rows.iter().find(|r| r["budget"] == 2).unwrap();
    assert_eq!(budgeted["injected_thinking_tokens"], 2);
    let prompt = budgeted["prompt"].as_str().unwrap();
    assert!(prompt.contains("Partial reasoning:"), "{prompt}");
    assert!(prompt.contains("first second"), "{prompt}");
    assert!(!prompt.contains("third"), "{prompt}");

    let bare = rows.iter().find(|r| r["budget"] == "none").unwrap();
    assert!(!bare["prompt"].as_str().unwrap().contains("Partial reasoning:"));
}

#[test]
fn report_rebuilds_summaries_and_deltas_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let ok = run(&[
        "simulate",
        "--out",
        sim_dir.to_str().unwrap(),
        "--questions",
        "10",
        "--sizes",
        "4",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    let report_dir = dir.path().join("report");
    let out = run(&[
        "report",
        "--records",
        sim_dir.join("records.jsonl").to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // summary.csv from report equals the one simulate wrote
    let from_sim = std::fs::read_to_string(sim_dir.join("summary.csv")).unwrap();
    let from_report = std::fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert_eq!(from_sim, from_report);

    let deltas = std::fs::read_to_string(report_dir.join("deltas.csv")).unwrap();
    let mut lines = deltas.lines();
    assert_eq!(lines.next(), Some("model,dataset,budget,delta_vs_none"));
    // six non-baseline budgets for the one model
    assert_eq!(lines.count(), 6);

    // deltas match the summary arithmetic
    let acc: Vec<(String, f64)> = from_sim
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].to_string(), f[3].parse().unwrap())
        })
        .collect();
    let baseline = acc.iter().find(|(b, _)| b == "none").unwrap().1;
    for line in deltas.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let expected = acc.iter().find(|(b, _)| b == f[2]).unwrap().1 - baseline;
        let delta: f64 = f[3].parse().unwrap();
        assert!((delta - expected).abs() < 5e-5, "{line}: expected {expected}");
    }
}

#[test]
fn analyze_full_surface_with_cost_model() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let ok = run(&[
        "simulate",
        "--out",
        sim_dir.to_str().unwrap(),
        "--questions",
        "40",
        "--sizes",
        "4,14,32",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    let out_dir = dir.path().join("analysis");
    let out = run(&[
        "analyze",
        "--summaries",
        sim_dir.join("summary.csv").to_str().unwrap(),
        "--models",
        sim_dir.join("models.jsonl").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--c0",
        "10",
        "--c1",
        "0.1",
        "--cmax",
        "40",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("fit.json")).unwrap()).unwrap();
    let synthetic = &fit["datasets"]["synthetic"];
    assert!(synthetic["alpha"].as_f64().unwrap() > 0.0);
    assert!(synthetic["saturation_budget"].as_u64().unwrap() > 0);
    // cost cap of 40 at 0.1/token affords at most 300 tokens
    for model in ["sim-4b", "sim-14b", "sim-32b"] {
        let chosen = &synthetic["optimal"][model];
        assert!(chosen["tokens"].as_u64().unwrap() <= 300, "{chosen}");
        assert!(chosen["cost"].as_f64().unwrap() <= 40.0);
    }

    let frontier = std::fs::read_to_string(out_dir.join("frontier.csv")).unwrap();
    assert!(frontier.starts_with("model,dataset,budget,tokens,accuracy\n"));
    assert!(frontier.lines().count() > 3);
    let regimes = std::fs::read_to_string(out_dir.join("regimes.csv")).unwrap();
    assert!(regimes.contains("high-efficiency"));
    assert!(regimes.contains("high-accuracy"));
}
