//! TOML run configuration: parsing with strict keys, path resolution
//! relative to the config file, cross-reference validation that reports
//! every violation at once, and question-file loading.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EndpointConfig;
use crate::model::{budget_ladder, BudgetSpec, ModelSpec, QuestionRecord};
use crate::runner::{RunMode, RunPlan};
use crate::store::load_jsonl;
use crate::tokenizer::TokenizerHandle;
use crate::truncation::PromptTemplate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    #[serde(default = "default_tokenizer_name")]
    pub name: String,
    #[serde(default)]
    pub vocab_ref: Option<PathBuf>,
}

fn default_tokenizer_name() -> String {
    "whitespace".to_string()
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { name: default_tokenizer_name(), vocab_ref: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub models: Vec<ModelSpec>,
    pub datasets: Vec<DatasetRef>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<BudgetSpec>,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub template_path: Option<PathBuf>,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_budgets() -> Vec<BudgetSpec> {
    budget_ladder().to_vec()
}

fn default_mode() -> RunMode {
    RunMode::Truncation
}

fn default_parallelism() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Reads, parses, resolves, and validates a config file. Parse failures keep
/// toml's line/column diagnostics; semantic problems are all reported in one
/// validation error.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    config.resolve_paths(base);
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::ConfigValidation(problems));
    }
    Ok(config)
}

impl RunConfig {
    /// Rebases every relative path in the config onto `base`, so a config
    /// file can be loaded from any working directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        for d in &mut self.datasets {
            rebase(&mut d.path);
        }
        if let Some(t) = &mut self.template_path {
            rebase(t);
        }
        if let Some(v) = &mut self.tokenizer.vocab_ref {
            rebase(v);
        }
        rebase(&mut self.output_dir);
    }

    /// Every validation violation, empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.models.is_empty() {
            out.push("no models defined".to_string());
        }
        if self.datasets.is_empty() {
            out.push("no datasets defined".to_string());
        }
        if self.budgets.is_empty() {
            out.push("budget list is empty".to_string());
        }
        if self.parallelism == 0 {
            out.push("parallelism must be at least 1".to_string());
        }

        let mut seen_models = BTreeSet::new();
        for m in &self.models {
            if !seen_models.insert(&m.name) {
                out.push(format!("duplicate model name {:?}", m.name));
            }
            out.extend(m.problems());
            if m.name.contains(',') || m.name.contains('\n') {
                out.push(format!("model name {:?} may not contain commas or newlines", m.name));
            }
            if !m.endpoint_ref.is_empty() && !self.endpoints.contains_key(&m.endpoint_ref) {
                out.push(format!(
                    "model {:?} references unknown endpoint {:?}",
                    m.name, m.endpoint_ref
                ));
            }
        }

        let mut seen_datasets = BTreeSet::new();
        for d in &self.datasets {
            if !seen_datasets.insert(&d.id) {
                out.push(format!("duplicate dataset id {:?}", d.id));
            }
            if d.id.contains(',') || d.id.contains('\n') {
                out.push(format!("dataset id {:?} may not contain commas or newlines", d.id));
            }
            if !d.path.is_file() {
                out.push(format!("dataset {:?}: no file at {}", d.id, d.path.display()));
            }
        }

        let mut seen_budgets = BTreeSet::new();
        for &b in &self.budgets {
            if !seen_budgets.insert(b) {
                out.push(format!("duplicate budget {b}"));
            }
        }

        if let Some(t) = &self.template_path {
            if !t.is_file() {
                out.push(format!("no template file at {}", t.display()));
            }
        }

        match self.tokenizer.name.as_str() {
            "whitespace" => {
                if self.tokenizer.vocab_ref.is_some() {
                    out.push("whitespace tokenizer takes no vocab_ref".to_string());
                }
            }
            "vocab" => match &self.tokenizer.vocab_ref {
                None => out.push("vocab tokenizer requires vocab_ref".to_string()),
                Some(v) if !v.is_file() => {
                    out.push(format!("no vocab file at {}", v.display()));
                }
                Some(_) => {}
            },
            other => out.push(format!(
                "unknown tokenizer {other:?}, expected \"whitespace\" or \"vocab\""
            )),
        }

        out
    }

    pub fn to_plan(&self) -> RunPlan {
        RunPlan {
            models: self.models.clone(),
            datasets: self.datasets.iter().map(|d| d.id.clone()).collect(),
            budgets: self.budgets.clone(),
            mode: self.mode,
            parallelism: self.parallelism,
            seed: self.seed,
        }
    }

    pub fn build_tokenizer(&self) -> Result<TokenizerHandle> {
        match self.tokenizer.name.as_str() {
            "whitespace" => Ok(TokenizerHandle::whitespace()),
            "vocab" => {
                let vocab = self.tokenizer.vocab_ref.as_ref().ok_or_else(|| {
                    Error::Config("vocab tokenizer requires vocab_ref".to_string())
                })?;
                TokenizerHandle::from_vocab_file("vocab", vocab)
            }
            other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
        }
    }

    pub fn load_template(&self) -> Result<PromptTemplate> {
        match &self.template_path {
            Some(p) => PromptTemplate::from_file(p),
            None => Ok(PromptTemplate::builtin()),
        }
    }

    /// Loads one dataset's questions, holding each record to the dataset id
    /// it was registered under.
    pub fn load_dataset(dataset: &DatasetRef) -> Result<Vec<QuestionRecord>> {
        let records: Vec<QuestionRecord> = load_jsonl(&dataset.path)?;
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, q) in records.iter().enumerate() {
            let line = i + 1;
            for msg in q.problems() {
                problems.push(format!("line {line}: {msg}"));
            }
            if q.dataset_id != dataset.id {
                problems.push(format!(
                    "line {line}: question {:?} carries dataset_id {:?}, expected {:?}",
                    q.id, q.dataset_id, dataset.id
                ));
            }
            if !seen.insert(&q.id) {
                problems.push(format!("line {line}: duplicate question id {:?}", q.id));
            }
        }
        if !problems.is_empty() {
            return Err(Error::ConfigValidation(
                problems.into_iter().map(|p| format!("{}: {p}", dataset.path.display())).collect(),
            ));
        }
        Ok(records)
    }

    /// Loads every configured dataset, keyed by dataset id.
    pub fn load_questions(&self) -> Result<BTreeMap<String, Vec<QuestionRecord>>> {
        let mut out = BTreeMap::new();
        for d in &self.datasets {
            out.insert(d.id.clone(), Self::load_dataset(d)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Letter, Tier};
    use std::collections::BTreeSet;
    use std::io::Write;

    const MINIMAL: &str = r#"
[endpoints.main]
base_url = "http://localhost:9"

[[models]]
name = "m1"
family = "fam"
size_billions = 4.0
native_budget_support = false
endpoint_ref = "main"

[[datasets]]
id = "d1"
path = "questions.jsonl"
"#;

    fn question_line() -> String {
        let q = QuestionRecord {
            id: "q1".to_string(),
            dataset_id: "d1".to_string(),
            stem: "Which drug lowers blood pressure?".to_string(),
            options: BTreeMap::from([
                (Letter::A, "Lisinopril".to_string()),
                (Letter::B, "Insulin".to_string()),
            ]),
            ground_truth: BTreeSet::from([Letter::A]),
            tier: Tier::Attending,
            specialty: "cardiovascular".to_string(),
        };
        serde_json::to_string(&q).unwrap()
    }

    fn write_workspace(config_text: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config_text).unwrap();
        let mut f = std::fs::File::create(dir.path().join("questions.jsonl")).unwrap();
        writeln!(f, "{}", question_line()).unwrap();
        dir
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let dir = write_workspace(MINIMAL);
        let config = load_config(&dir.path().join("config.toml")).unwrap();
        assert_eq!(config.budgets, budget_ladder().to_vec());
        assert_eq!(config.mode, RunMode::Truncation);
        assert_eq!(config.parallelism, 1);
        assert_eq!(config.seed, 0);
        assert_eq!(config.tokenizer, TokenizerConfig::default());
        assert!(config.template_path.is_none());
        // relative paths resolve against the config's directory
        assert_eq!(config.datasets[0].path, dir.path().join("questions.jsonl"));
        assert_eq!(config.output_dir, dir.path().join("out"));
        assert_eq!(config.to_plan().problems(), Vec::<String>::new());
    }

    #[test]
    fn explicit_fields_parse() {
        let text = format!(
            "budgets = [\"none\", \"64\", \"inf\"]\nmode = \"native\"\nparallelism = 4\nseed = 7\noutput_dir = \"results\"\n{MINIMAL}"
        );
        let dir = write_workspace(&text);
        let config = load_config(&dir.path().join("config.toml")).unwrap();
        assert_eq!(
            config.budgets,
            vec![BudgetSpec::NoThinking, BudgetSpec::tokens(64), BudgetSpec::Unlimited]
        );
        assert_eq!(config.mode, RunMode::Native);
        assert_eq!(config.parallelism, 4);
        assert_eq!(config.seed, 7);
        assert_eq!(config.output_dir, dir.path().join("results"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let dir = write_workspace(&format!("bananas = 1\n{MINIMAL}"));
        match load_config(&dir.path().join("config.toml")) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("bananas"), "{msg}");
                assert!(msg.contains("line"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let dir = write_workspace("mode = \n");
        match load_config(&dir.path().join("config.toml")) {
            Err(Error::Config(msg)) => assert!(msg.contains("line 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_reports_every_violation_at_once() {
        let text = r#"
budgets = []
template_path = "missing_template.txt"

[[models]]
name = "m1"
family = "fam"
size_billions = 4.0
native_budget_support = false
endpoint_ref = "nowhere"

[[models]]
name = "m1"
family = "fam"
size_billions = -2.0
native_budget_support = false
endpoint_ref = ""

[[datasets]]
id = "d1"
path = "missing.jsonl"

[tokenizer]
name = "vocab"
"#;
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), text).unwrap();
        match load_config(&dir.path().join("config.toml")) {
            Err(Error::ConfigValidation(violations)) => {
                let all = violations.join("\n");
                for needle in [
                    "duplicate model name \"m1\"",
                    "unknown endpoint \"nowhere\"",
                    "size_billions must be a positive finite number",
                    "no file at",
                    "budget list is empty",
                    "no template file at",
                    "vocab tokenizer requires vocab_ref",
                ] {
                    assert!(all.contains(needle), "missing {needle:?} in:\n{all}");
                }
                assert!(violations.len() >= 7, "{violations:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tokenizer_config_is_checked() {
        let dir = write_workspace(&format!(
            "{MINIMAL}\n[tokenizer]\nname = \"whitespace\"\nvocab_ref = \"v.txt\"\n"
        ));
        match load_config(&dir.path().join("config.toml")) {
            Err(Error::ConfigValidation(v)) => {
                assert!(v.iter().any(|m| m.contains("takes no vocab_ref")), "{v:?}")
            }
            other => panic!("{other:?}"),
        }

        let dir = write_workspace(&format!("{MINIMAL}\n[tokenizer]\nname = \"bpe\"\n"));
        match load_config(&dir.path().join("config.toml")) {
            Err(Error::ConfigValidation(v)) => {
                assert!(v.iter().any(|m| m.contains("unknown tokenizer")), "{v:?}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_loading_checks_identity_and_uniqueness() {
        let dir = write_workspace(MINIMAL);
        let config = load_config(&dir.path().join("config.toml")).unwrap();
        let questions = config.load_questions().unwrap();
        assert_eq!(questions["d1"].len(), 1);
        assert_eq!(questions["d1"][0].id, "q1");

        // duplicate id and foreign dataset_id both reported with line numbers
        let mut foreign: QuestionRecord = questions["d1"][0].clone();
        foreign.dataset_id = "other".to_string();
        let line = question_line();
        let foreign_line = serde_json::to_string(&foreign).unwrap();
        std::fs::write(
            dir.path().join("questions.jsonl"),
            format!("{line}\n{line}\n{foreign_line}\n"),
        )
        .unwrap();
        match config.load_questions() {
            Err(Error::ConfigValidation(v)) => {
                let all = v.join("\n");
                assert!(all.contains("line 2: duplicate question id \"q1\""), "{all}");
                assert!(all.contains("line 3"), "{all}");
                assert!(all.contains("expected \"d1\""), "{all}");
            }
            other => panic!("{other:?}"),
        }

        // malformed line surfaces as a store error with position
        std::fs::write(dir.path().join("questions.jsonl"), "not json\n").unwrap();
        match config.load_questions() {
            Err(Error::Store { message, .. }) => assert!(message.contains("line 1"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn build_tokenizer_and_template() {
        let dir = write_workspace(MINIMAL);
        let config = load_config(&dir.path().join("config.toml")).unwrap();
        let tok = config.build_tokenizer().unwrap();
        assert_eq!(tok.count_tokens("one two three"), 3);
        let template = config.load_template().unwrap();
        assert!(template.text().contains("{stem}"));
    }
}
