//! The 46-task criteria registry and prompt-based task classification.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{CompletionService, DecodingParams, GatewayError};

/// Canonical names of all 46 tasks.
pub const TASK_NAMES: [&str; 46] = [
    "question generation",
    "story generation",
    "poem generation",
    "email generation",
    "data generation",
    "text-to-text translation",
    "advice giving",
    "recommendations",
    "how-to generation",
    "planning",
    "code correction",
    "code simplification",
    "explain code",
    "text-to-code translation",
    "code-to-code translation",
    "language learning questions",
    "code language classification",
    "code-to-text-translation",
    "instructional rewriting",
    "language polishing",
    "paraphrasing",
    "text correction",
    "information extraction",
    "keywords extraction",
    "table extraction",
    "title generation",
    "text summarization",
    "note summarization",
    "open qa",
    "closed qa",
    "fact verification",
    "value judgment",
    "roleplay",
    "explain answer",
    "natural language tutor",
    "exam problem tutor",
    "ai tutor",
    "math puzzles",
    "fill in the blank",
    "general classification",
    "ordering",
    "sentiment analysis",
    "language classification",
    "topic classification",
    "rejecting",
    "others",
];

/// The five knowledge-intensive tasks whose rewriting is grounded in
/// retrieved evidence.
pub const RETRIEVAL_TASKS: [&str; 5] = [
    "recommendations",
    "how-to generation",
    "open qa",
    "fact verification",
    "explain answer",
];

/// Fallback format for tasks whose dedicated format has not been authored.
pub const PLACEHOLDER_FORMAT: &str = "No dedicated format has been authored for this task yet. \
Keep the response clear, well structured, and directly responsive to the query.";

/// One task's criteria: its place in the taxonomy, its pipeline flags, and
/// the natural-language format description fed to the rewriter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskCriteria {
    pub name: String,
    pub group: String,
    /// Underscore label used inside the classification prompt.
    pub prompt_label: String,
    /// Position of the label in the classification prompt's task list.
    pub order: u32,
    pub retrieval: bool,
    pub rewrite: bool,
    pub format_text: String,
    /// True when `format_text` is the generic placeholder.
    pub placeholder: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    Gateway,
    Fallback,
}

/// A resolved task label; `name` is always a registry member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskLabel {
    pub name: String,
    pub confidence_source: ConfidenceSource,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("failed to read criteria from {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid criteria file {path}: {message}")]
    BadFile { path: String, message: String },
    #[error("missing task: {0}")]
    MissingTask(String),
    #[error("unknown task: {0}")]
    UnknownTask(String),
    #[error("expected 46 tasks, found {0}")]
    WrongCount(usize),
    #[error("expected 10 groups, found {0}")]
    WrongGroupCount(usize),
    #[error("retrieval-flagged set must be exactly {expected:?}, found {found:?}")]
    WrongRetrievalSet {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("task {0}: retrieval requires rewrite")]
    RetrievalWithoutRewrite(String),
    #[error("duplicate prompt label: {0}")]
    DuplicateLabel(String),
    #[error("duplicate order index: {0}")]
    DuplicateOrder(u32),
    #[error("classification failed for record {record_id}: {source}")]
    Classification {
        record_id: String,
        #[source]
        source: GatewayError,
    },
}

#[derive(Deserialize)]
struct CriteriaFile {
    name: String,
    group: String,
    prompt_label: String,
    order: u32,
    retrieval: bool,
    rewrite: bool,
    #[serde(default)]
    format_text: String,
}

/// The validated registry, immutable after load. Tasks are held in
/// classification-prompt order.
#[derive(Debug, Clone)]
pub struct CriteriaRegistry {
    tasks: Vec<TaskCriteria>,
    warnings: Vec<String>,
}

impl CriteriaRegistry {
    /// Loads one structured file per task from `dir` and validates the
    /// registry invariants.
    pub fn load(dir: &Path) -> Result<Self, TaxonomyError> {
        let entries = fs::read_dir(dir).map_err(|source| TaxonomyError::Io {
            path: dir.display().to_string(),
            source,
        })?;

        let mut tasks = Vec::new();
        let mut warnings = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| TaxonomyError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| TaxonomyError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let file: CriteriaFile =
                toml::from_str(&text).map_err(|e| TaxonomyError::BadFile {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            let placeholder = file.format_text.trim().is_empty();
            if placeholder {
                warnings.push(format!(
                    "task '{}' has no format text; using the generic placeholder",
                    file.name
                ));
            }
            tasks.push(TaskCriteria {
                format_text: if placeholder {
                    PLACEHOLDER_FORMAT.to_string()
                } else {
                    file.format_text
                },
                name: file.name,
                group: file.group,
                prompt_label: file.prompt_label,
                order: file.order,
                retrieval: file.retrieval,
                rewrite: file.rewrite,
                placeholder,
            });
        }
        tasks.sort_by_key(|t| t.order);
        let registry = Self { tasks, warnings };
        registry.validate()?;
        Ok(registry)
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        let expected: BTreeSet<&str> = TASK_NAMES.iter().copied().collect();
        let found: BTreeSet<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        if let Some(missing) = expected.difference(&found).next() {
            return Err(TaxonomyError::MissingTask(missing.to_string()));
        }
        if let Some(extra) = found.difference(&expected).next() {
            return Err(TaxonomyError::UnknownTask(extra.to_string()));
        }
        if self.tasks.len() != 46 {
            return Err(TaxonomyError::WrongCount(self.tasks.len()));
        }
        let groups: BTreeSet<&str> = self.tasks.iter().map(|t| t.group.as_str()).collect();
        if groups.len() != 10 {
            return Err(TaxonomyError::WrongGroupCount(groups.len()));
        }

        let expected_retrieval: BTreeSet<&str> = RETRIEVAL_TASKS.iter().copied().collect();
        let found_retrieval: BTreeSet<&str> = self
            .tasks
            .iter()
            .filter(|t| t.retrieval)
            .map(|t| t.name.as_str())
            .collect();
        if expected_retrieval != found_retrieval {
            return Err(TaxonomyError::WrongRetrievalSet {
                expected: expected_retrieval.iter().map(|s| s.to_string()).collect(),
                found: found_retrieval.iter().map(|s| s.to_string()).collect(),
            });
        }
        for task in &self.tasks {
            if task.retrieval && !task.rewrite {
                return Err(TaxonomyError::RetrievalWithoutRewrite(task.name.clone()));
            }
        }

        let mut labels = BTreeSet::new();
        for task in &self.tasks {
            if !labels.insert(task.prompt_label.as_str()) {
                return Err(TaxonomyError::DuplicateLabel(task.prompt_label.clone()));
            }
        }
        let mut orders = BTreeSet::new();
        for task in &self.tasks {
            if !orders.insert(task.order) {
                return Err(TaxonomyError::DuplicateOrder(task.order));
            }
        }
        Ok(())
    }

    pub fn tasks(&self) -> &[TaskCriteria] {
        &self.tasks
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, name: &str) -> Option<&TaskCriteria> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn format_for(&self, name: &str) -> Option<&str> {
        self.get(name).map(|t| t.format_text.as_str())
    }

    /// The classification prompt with `{input}` replaced by the query. The
    /// task labels appear in registry order; the prompt always ends with
    /// "Task name:".
    pub fn classification_prompt(&self, query: &str) -> String {
        let labels: Vec<&str> = self.tasks.iter().map(|t| t.prompt_label.as_str()).collect();
        format!(
            "You will receive a user's query. Additionally, you are given some pre-defined tasks below:\n\
             \n\
             [Existing tasks start]\n\
             {labels}\n\
             [Existing tasks end]\n\
             \n\
             Your objective is to choose the most appropriate task that can reflect the high-level intention of this query. \
             You should first clearly give out your choice. Your choice should exactly match one of the task names provided above, \
             without any modification. Do not include the task description in your choice.\n\
             \n\
             Your output should be just the task name.\n\
             \n\
             User's query is below:\n\
             \n\
             [User's query start]\n\
             {query}\n\
             [User's query end]\n\
             \n\
             Task name:",
            labels = labels.join("\n"),
        )
    }

    /// Maps a raw completion onto a registry member. Total: anything that
    /// cannot be matched falls back to "others".
    pub fn normalize_label(&self, raw: &str) -> TaskLabel {
        let cleaned = raw
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
            .trim_end_matches('.')
            .trim()
            .to_lowercase();

        let fold = |s: &str| -> String {
            s.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
        };

        // Exact prompt-label match, then canonical-name match, then a
        // separator-insensitive pass over both spellings.
        for task in &self.tasks {
            if cleaned == task.prompt_label || cleaned == task.name {
                return TaskLabel {
                    name: task.name.clone(),
                    confidence_source: ConfidenceSource::Gateway,
                };
            }
        }
        let folded = fold(&cleaned);
        if !folded.is_empty() {
            for task in &self.tasks {
                if folded == fold(&task.prompt_label) || folded == fold(&task.name) {
                    return TaskLabel {
                        name: task.name.clone(),
                        confidence_source: ConfidenceSource::Gateway,
                    };
                }
            }
        }
        TaskLabel {
            name: "others".to_string(),
            confidence_source: ConfidenceSource::Fallback,
        }
    }

    /// Classifies a query through the completion gateway.
    pub fn classify(
        &self,
        query: &str,
        gateway: &dyn CompletionService,
    ) -> Result<TaskLabel, GatewayError> {
        let prompt = self.classification_prompt(query);
        let params = DecodingParams::default().single();
        let completions = gateway.complete("", &prompt, &params)?;
        let raw = completions.first().map(String::as_str).unwrap_or_default();
        Ok(self.normalize_label(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled_dir() -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../criteria")
    }

    fn registry() -> CriteriaRegistry {
        CriteriaRegistry::load(&bundled_dir()).unwrap()
    }

    #[test]
    fn bundled_registry_satisfies_all_counts() {
        let reg = registry();
        assert_eq!(reg.tasks().len(), 46);
        let groups: BTreeSet<&str> = reg.tasks().iter().map(|t| t.group.as_str()).collect();
        assert_eq!(groups.len(), 10);
        assert_eq!(reg.tasks().iter().filter(|t| t.retrieval).count(), 5);
        assert!(reg.warnings().is_empty());
    }

    #[test]
    fn email_generation_carries_full_format() {
        let reg = registry();
        let format = reg.format_for("email generation").unwrap();
        assert!(format.contains("Subject Line"));
        assert!(format.contains("Write a clear and concise subject line"));
    }

    #[test]
    fn classification_prompt_layout() {
        let reg = registry();
        let prompt = reg.classification_prompt("write me an email");
        assert!(prompt.contains("[User's query start]\nwrite me an email\n[User's query end]"));
        assert!(prompt.contains("[Existing tasks start]\nquestion_generation\n"));
        assert!(prompt.contains("\ndefault\n[Existing tasks end]"));
        assert!(prompt.ends_with("Task name:"));
    }

    #[test]
    fn empty_query_still_renders() {
        let reg = registry();
        let prompt = reg.classification_prompt("");
        assert!(prompt.contains("[User's query start]\n\n[User's query end]"));
    }

    #[test]
    fn normalize_label_examples() {
        let reg = registry();
        assert_eq!(reg.normalize_label("email_generation").name, "email generation");
        assert_eq!(reg.normalize_label("default").name, "others");
        let fallback = reg.normalize_label("I think it is poetry!");
        assert_eq!(fallback.name, "others");
        assert_eq!(fallback.confidence_source, ConfidenceSource::Fallback);
    }

    #[test]
    fn normalize_label_alias_spellings() {
        let reg = registry();
        assert_eq!(reg.normalize_label("ml_ai_language_model_tutor").name, "ai tutor");
        assert_eq!(
            reg.normalize_label("exam_problem_solving_tutor").name,
            "exam problem tutor"
        );
        assert_eq!(reg.normalize_label("value_judgement").name, "value judgment");
        assert_eq!(reg.normalize_label(" \"Math_Puzzles\". ").name, "math puzzles");
    }

    #[test]
    fn normalize_label_is_total_over_arbitrary_input() {
        let reg = registry();
        for raw in ["", " ", "????", "task: email", "open qa\n\n", "OPEN_QA"] {
            let label = reg.normalize_label(raw);
            assert!(reg.get(&label.name).is_some());
        }
    }

    #[test]
    fn missing_task_is_reported_by_name() {
        let tmp = tempfile::tempdir().unwrap();
        for entry in fs::read_dir(bundled_dir()).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            if path.file_name().unwrap().to_str().unwrap() == "open_qa.toml" {
                continue;
            }
            fs::copy(&path, tmp.path().join(path.file_name().unwrap())).unwrap();
        }
        let err = CriteriaRegistry::load(tmp.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing task: open qa");
    }

    #[test]
    fn empty_format_text_becomes_placeholder_with_warning() {
        let tmp = tempfile::tempdir().unwrap();
        for entry in fs::read_dir(bundled_dir()).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let mut text = fs::read_to_string(&path).unwrap();
            if path.file_name().unwrap().to_str().unwrap() == "roleplay.toml" {
                let cut = text.find("format_text").unwrap();
                text.truncate(cut);
            }
            fs::write(tmp.path().join(path.file_name().unwrap()), text).unwrap();
        }
        let reg = CriteriaRegistry::load(tmp.path()).unwrap();
        assert_eq!(reg.format_for("roleplay").unwrap(), PLACEHOLDER_FORMAT);
        assert_eq!(reg.warnings().len(), 1);
    }

    #[test]
    fn classify_pipes_through_gateway_and_normalizer() {
        struct Scripted(&'static str);
        impl CompletionService for Scripted {
            fn complete(
                &self,
                _system: &str,
                _user: &str,
                _params: &DecodingParams,
            ) -> Result<Vec<String>, GatewayError> {
                Ok(vec![self.0.to_string()])
            }
        }
        let reg = registry();
        assert_eq!(
            reg.classify("q", &Scripted("math_puzzles")).unwrap().name,
            "math puzzles"
        );
        assert_eq!(reg.classify("q", &Scripted("garbage")).unwrap().name, "others");
    }
}
