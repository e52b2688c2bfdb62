//! Task suites, sandbox staging, prompt rendering, answer extraction.

mod prompts;
mod stage;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::EpisodeBudget;

pub use prompts::{
    plain_answer, render_plain_prompt, render_prompts, INSTANCE_TEMPLATE, PLAIN_TEMPLATE, SYSTEM_PROMPT,
};
pub use stage::{extract_answer, sanitize_filename, stage_task, unique_names, StagingReport};

pub const SUITE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate task id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("task `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("staging failed: {0}")]
    Staging(#[from] crate::sandbox::SandboxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Documents are pasted into the prompt.
    #[default]
    PromptInline,
    /// Documents are written into the sandbox documents directory.
    SandboxFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Utf8,
    Base64,
}

/// A file placed under the input directory before the episode starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    /// Relative to the input directory.
    pub path: String,
    pub content: String,
    #[serde(default)]
    pub encoding: Encoding,
}

impl InputFile {
    pub fn bytes(&self) -> Result<Vec<u8>, String> {
        use base64::Engine;
        match self.encoding {
            Encoding::Utf8 => Ok(self.content.as_bytes().to_vec()),
            Encoding::Base64 => base64::engine::general_purpose::STANDARD
                .decode(self.content.trim())
                .map_err(|e| format!("input file {}: {e}", self.path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InContextExample {
    pub task: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    Exact,
    SingleChoice,
    MultiChoice,
    FreeForm,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Text(String),
    Options(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    #[serde(default)]
    pub case_fold: bool,
    /// Compare as numbers (decimals, fractions, percentages).
    #[serde(default)]
    pub numeric: bool,
    /// Absolute tolerance for numeric comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerKey {
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub normalization: Normalization,
    /// Registered evaluator for `external` keys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<String>,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl AnswerKey {
    pub fn exact(gold: impl Into<String>) -> Self {
        Self { kind: AnswerKind::Exact, gold: Some(Gold::Text(gold.into())), normalization: Normalization::default(), evaluator: None }
    }

    pub fn gold_text(&self) -> Option<String> {
        match &self.gold {
            Some(Gold::Text(t)) => Some(t.clone()),
            Some(Gold::Options(o)) => Some(o.join(",")),
            None => None,
        }
    }

    /// Gold options for choice keys; a text gold like "A,C" is split into letters.
    pub fn gold_options(&self) -> Vec<String> {
        match &self.gold {
            Some(Gold::Options(o)) => o.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            Some(Gold::Text(t)) => crate::rewards::parse_options(t),
            None => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            AnswerKind::External => {
                if self.evaluator.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err("external answer keys need an `evaluator`".into());
                }
            }
            AnswerKind::MultiChoice | AnswerKind::SingleChoice => {
                let options = self.gold_options();
                if options.is_empty() {
                    return Err("choice answer keys need a non-empty gold option set".into());
                }
                if self.kind == AnswerKind::SingleChoice && options.len() != 1 {
                    return Err("single-choice answer keys take exactly one gold option".into());
                }
            }
            AnswerKind::Exact | AnswerKind::FreeForm => {
                if self.gold_text().is_none_or(|g| g.trim().is_empty()) {
                    return Err("answer key needs a non-empty `gold`".into());
                }
            }
        }
        if let Some(t) = self.normalization.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("tolerance must be a non-negative number, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub id: String,
    /// The problem statement.
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub documents: Vec<Document>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_files: Vec<InputFile>,
    /// Earlier tasks shown with their answers, in dataset order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<InContextExample>,
    pub answer_key: AnswerKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<EpisodeBudget>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

fn schema_version() -> u32 {
    SUITE_SCHEMA_VERSION
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, answer_key: AnswerKey) -> Self {
        Self {
            schema_version: SUITE_SCHEMA_VERSION,
            id: id.into(),
            prompt: prompt.into(),
            documents: Vec::new(),
            input_files: Vec::new(),
            examples: Vec::new(),
            answer_key,
            budget: None,
            placement: Placement::PromptInline,
            domain: None,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::Invalid { id: self.id.clone(), message };
        if self.schema_version != SUITE_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SUITE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.id.trim().is_empty() {
            return Err(invalid("id must not be empty".into()));
        }
        if self.placement == Placement::SandboxFiles && self.documents.is_empty() && self.input_files.is_empty() {
            return Err(invalid("placement sandbox-files needs at least one document or input file".into()));
        }
        for file in &self.input_files {
            file.bytes().map_err(invalid)?;
            crate::sandbox::join_relative(Path::new("/input"), &file.path)
                .map_err(|e| invalid(format!("input file {}: {e}", file.path)))?;
        }
        if let Some(budget) = &self.budget {
            budget.validate().map_err(invalid)?;
        }
        self.answer_key.validate().map_err(invalid)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("task specs serialize")
    }
}

/// Parses a JSONL suite. Blank lines and lines starting with `#` are skipped.
pub fn parse_suite(text: &str) -> Result<Vec<TaskSpec>, TaskError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let task: TaskSpec = serde_json::from_str(trimmed)
            .map_err(|e| TaskError::Parse { line: line_no, message: e.to_string() })?;
        task.validate().map_err(|e| TaskError::Parse { line: line_no, message: e.to_string() })?;
        if !seen.insert(task.id.clone()) {
            return Err(TaskError::DuplicateId { id: task.id, line: line_no });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>, TaskError> {
    parse_suite(&std::fs::read_to_string(path)?)
}

/// Writes tasks as JSONL.
pub fn write_suite(path: impl AsRef<Path>, tasks: &[TaskSpec]) -> Result<(), TaskError> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&t.to_json_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
