//! The three-tool protocol: `execute_bash`, `str_replace_editor`, `submit`.

pub mod editor;
mod schema;

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::sandbox::{
    truncation_marker, ExecOutcome, PathKind, PendingDirective, Sandbox, SandboxError,
    DEFAULT_OUTPUT_LIMIT, DEFAULT_SOFT_TIMEOUT,
};
use crate::tokens::estimate_tokens;

pub use schema::{tool_schemas, tools_json, ParamKind, ToolParam, ToolSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    ExecuteBash,
    StrReplaceEditor,
    Submit,
}

impl ToolName {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::ExecuteBash => "execute_bash",
            ToolName::StrReplaceEditor => "str_replace_editor",
            ToolName::Submit => "submit",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "execute_bash" => Some(ToolName::ExecuteBash),
            "str_replace_editor" => Some(ToolName::StrReplaceEditor),
            "submit" => Some(ToolName::Submit),
            _ => None,
        }
    }
}

/// Arguments as the model sent them. Providers deliver a JSON string that may not parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolArguments {
    Parsed(Map<String, Value>),
    Malformed { raw: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    /// Raw name from the model; may name a tool that does not exist.
    pub name: String,
    pub arguments: ToolArguments,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => ToolArguments::Parsed(map),
            Value::Null => ToolArguments::Parsed(Map::new()),
            other => ToolArguments::Malformed {
                raw: other.to_string(),
                error: "arguments must be a JSON object".into(),
            },
        };
        Self { id: id.into(), name: name.into(), arguments }
    }

    /// Builds a call from the provider's JSON-encoded argument string.
    pub fn from_raw(id: impl Into<String>, name: impl Into<String>, raw: &str) -> Self {
        if raw.trim().is_empty() {
            return Self::new(id, name, Value::Null);
        }
        match serde_json::from_str::<Value>(raw) {
            Ok(value) => Self::new(id, name, value),
            Err(err) => Self {
                id: id.into(),
                name: name.into(),
                arguments: ToolArguments::Malformed { raw: raw.to_string(), error: err.to_string() },
            },
        }
    }

    /// Arguments as a JSON value, with malformed ones kept as their raw string.
    pub fn arguments_json(&self) -> Value {
        match &self.arguments {
            ToolArguments::Parsed(map) => Value::Object(map.clone()),
            ToolArguments::Malformed { raw, .. } => Value::String(raw.clone()),
        }
    }

    /// Checks the call against its tool's schema.
    pub fn validate(&self) -> Result<ToolAction, String> {
        let tool = ToolName::parse(&self.name).ok_or_else(|| {
            format!(
                "Unknown tool `{}`. Available tools: execute_bash, str_replace_editor, submit.",
                self.name
            )
        })?;
        let args = match &self.arguments {
            ToolArguments::Parsed(map) => map,
            ToolArguments::Malformed { .. } if tool == ToolName::Submit => return Ok(ToolAction::Submit),
            ToolArguments::Malformed { error, .. } => {
                return Err(format!("Arguments for `{}` are not valid JSON: {error}", tool.as_str()))
            }
        };
        match tool {
            ToolName::Submit => Ok(ToolAction::Submit),
            ToolName::ExecuteBash => {
                let command = required_str(args, "command", tool)?;
                if command.trim().is_empty() {
                    return Err("Parameter `command` of `execute_bash` must not be empty.".into());
                }
                Ok(ToolAction::Bash { command })
            }
            ToolName::StrReplaceEditor => {
                let command = required_str(args, "command", tool)?;
                let path = required_str(args, "path", tool)?;
                let edit = match command.as_str() {
                    "view" => EditorCommand::View { path, view_range: view_range(args)? },
                    "create" => EditorCommand::Create {
                        path,
                        file_text: required_str(args, "file_text", tool)
                            .map_err(|_| "Parameter `file_text` is required for command: create.".to_string())?,
                    },
                    "str_replace" => EditorCommand::StrReplace {
                        path,
                        old_str: required_str(args, "old_str", tool)
                            .map_err(|_| "Parameter `old_str` is required for command: str_replace.".to_string())?,
                        new_str: optional_str(args, "new_str", tool)?.unwrap_or_default(),
                    },
                    "insert" => EditorCommand::Insert {
                        path,
                        insert_line: insert_line(args)?,
                        new_str: optional_str(args, "new_str", tool)?
                            .ok_or_else(|| "Parameter `new_str` is required for command: insert.".to_string())?,
                    },
                    other => {
                        return Err(format!(
                            "Unrecognized command `{other}`. The allowed commands for `str_replace_editor` are: view, create, str_replace, insert."
                        ))
                    }
                };
                Ok(ToolAction::Editor(edit))
            }
        }
    }
}

fn required_str(args: &Map<String, Value>, key: &str, tool: ToolName) -> Result<String, String> {
    optional_str(args, key, tool)?
        .ok_or_else(|| format!("Missing required parameter `{key}` for `{}`.", tool.as_str()))
}

fn optional_str(args: &Map<String, Value>, key: &str, tool: ToolName) -> Result<Option<String>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!(
            "Parameter `{key}` of `{}` must be a string, got {other}.",
            tool.as_str()
        )),
    }
}

fn as_int(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn insert_line(args: &Map<String, Value>) -> Result<usize, String> {
    let value = args
        .get("insert_line")
        .filter(|v| !v.is_null())
        .ok_or_else(|| "Parameter `insert_line` is required for command: insert.".to_string())?;
    let line = as_int(value).ok_or_else(|| format!("Parameter `insert_line` must be an integer, got {value}."))?;
    usize::try_from(line).map_err(|_| format!("Parameter `insert_line` must be non-negative, got {line}."))
}

fn view_range(args: &Map<String, Value>) -> Result<Option<(i64, i64)>, String> {
    let value = match args.get("view_range") {
        None | Some(Value::Null) => return Ok(None),
        Some(v) => v,
    };
    // Some models send the list as a JSON string.
    let parsed;
    let value = match value {
        Value::String(s) => {
            parsed = serde_json::from_str::<Value>(s).unwrap_or(Value::Null);
            &parsed
        }
        v => v,
    };
    match value.as_array().map(|a| a.iter().map(as_int).collect::<Vec<_>>()) {
        Some(v) if v.len() == 2 && v.iter().all(Option::is_some) => Ok(Some((v[0].unwrap(), v[1].unwrap()))),
        _ => Err(format!("Parameter `view_range` must be a list of two integers, got {value}.")),
    }
}

/// A validated call.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolAction {
    Bash { command: String },
    Editor(EditorCommand),
    Submit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditorCommand {
    View { path: String, view_range: Option<(i64, i64)> },
    Create { path: String, file_text: String },
    StrReplace { path: String, old_str: String, new_str: String },
    Insert { path: String, insert_line: usize, new_str: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub observation: String,
    pub is_error: bool,
    pub truncated: bool,
    pub timed_out: bool,
    pub wall_ms: u64,
    pub env_token_estimate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutcome {
    pub result: ToolResult,
    /// The call was `submit`; the episode should end.
    pub submitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    #[serde(with = "secs")]
    pub soft_timeout: Duration,
    pub output_limit: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self { soft_timeout: DEFAULT_SOFT_TIMEOUT, output_limit: DEFAULT_OUTPUT_LIMIT }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Words that resolve a pending command instead of starting a new one.
pub const CONTINUE_WORD: &str = "continue";
pub const INTERRUPT_WORD: &str = "interrupt";

/// Room kept free in the output limit for the status line appended to shell output.
const NOTE_RESERVE: usize = 192;

struct Observation {
    text: String,
    is_error: bool,
    truncated: bool,
    timed_out: bool,
}

impl Observation {
    fn ok(text: impl Into<String>) -> Self {
        Self { text: text.into(), is_error: false, truncated: false, timed_out: false }
    }

    fn error(text: impl Into<String>) -> Self {
        Self { text: text.into(), is_error: true, truncated: false, timed_out: false }
    }
}

/// Runs one tool call. Tool-level failures come back as error observations;
/// `Err` means the sandbox itself is gone or broken.
pub async fn dispatch(
    sandbox: &mut Sandbox,
    call: &ToolCall,
    config: &ToolConfig,
) -> Result<ToolOutcome, SandboxError> {
    let started = Instant::now();
    let (obs, submitted) = match call.validate() {
        Err(msg) => (Observation::error(msg), false),
        Ok(ToolAction::Submit) => (Observation::ok("Submitted."), true),
        Ok(ToolAction::Bash { command }) => (bash(sandbox, &command, config).await?, false),
        Ok(ToolAction::Editor(cmd)) => (edit(sandbox, cmd).await?, false),
    };
    let Observation { mut text, is_error, mut truncated, timed_out } = obs;
    if !truncated && text.len() > config.output_limit {
        text = clip(&text, config.output_limit);
        truncated = true;
    }
    let env_token_estimate = estimate_tokens(&text);
    Ok(ToolOutcome {
        result: ToolResult {
            call_id: call.id.clone(),
            observation: text,
            is_error,
            truncated,
            timed_out,
            wall_ms: started.elapsed().as_millis() as u64,
            env_token_estimate,
        },
        submitted,
    })
}

/// Cuts `text` to at most `limit` bytes on a char boundary and appends the marker.
fn clip(text: &str, limit: usize) -> String {
    let mut cut = limit.min(text.len());
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let mut out = text[..cut].to_string();
    out.push_str(&truncation_marker((text.len() - cut) as u64));
    out
}

async fn bash(sandbox: &mut Sandbox, command: &str, config: &ToolConfig) -> Result<Observation, SandboxError> {
    let word = command.trim();
    let limit = config.output_limit.saturating_sub(NOTE_RESERVE).max(1);
    let outcome = if sandbox.has_pending() {
        let directive = match word {
            CONTINUE_WORD => PendingDirective::Continue(config.soft_timeout),
            INTERRUPT_WORD => PendingDirective::Interrupt,
            _ => {
                return Ok(Observation::error(format!(
                    "The previous command is still running. Call execute_bash with `{CONTINUE_WORD}` to keep waiting or `{INTERRUPT_WORD}` to stop it before running a new command."
                )))
            }
        };
        sandbox.resolve_pending(directive, limit).await?
    } else if word == CONTINUE_WORD || word == INTERRUPT_WORD {
        return Ok(Observation::error(format!("There is no running command to {word}.")));
    } else {
        match sandbox.exec_command(command, config.soft_timeout, limit).await {
            Err(SandboxError::PendingProcessExists) => {
                return Ok(Observation::error("The previous command is still running."))
            }
            other => other?,
        }
    };
    Ok(render_exec(&outcome, config.soft_timeout, sandbox.has_pending()))
}

fn render_exec(outcome: &ExecOutcome, soft_timeout: Duration, pending: bool) -> Observation {
    let mut text = outcome.output.clone();
    let mut note = |line: String| {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&line);
    };
    if pending {
        note(format!(
            "<command still running after {}s; call execute_bash with `{CONTINUE_WORD}` to keep waiting or `{INTERRUPT_WORD}` to stop it>",
            soft_timeout.as_secs_f64()
        ));
    } else if outcome.interrupted {
        note(match outcome.exit_status {
            Some(code) => format!("<command interrupted, exit status {code}>"),
            None => "<command interrupted; the shell was restarted>".to_string(),
        });
    } else if let Some(code) = outcome.exit_status.filter(|c| *c != 0) {
        note(format!("<exit status {code}>"));
    }
    if text.is_empty() {
        text = "<no output>".to_string();
    }
    Observation { text, is_error: false, truncated: outcome.truncated, timed_out: outcome.timed_out }
}

fn absolute(path: &str) -> Result<(), Observation> {
    if Path::new(path).is_absolute() {
        Ok(())
    } else {
        Err(Observation::error(format!(
            "The path {path} is not an absolute path, it should start with `/`."
        )))
    }
}

/// Reads a file the editor operates on, mapping absence to an error observation.
async fn read_text(sandbox: &Sandbox, path: &str) -> Result<Result<Vec<u8>, Observation>, SandboxError> {
    match sandbox.path_kind(path).await? {
        PathKind::Missing => return Ok(Err(Observation::error(format!("The path {path} does not exist.")))),
        PathKind::Directory => {
            return Ok(Err(Observation::error(format!(
                "The path {path} is a directory; only the `view` command can be used on directories."
            ))))
        }
        PathKind::File => {}
    }
    match sandbox.read_file(path).await {
        Ok(bytes) => Ok(Ok(bytes)),
        Err(SandboxError::FileNotFound(_)) => Ok(Err(Observation::error(format!("The path {path} does not exist.")))),
        Err(e) => Err(e),
    }
}

async fn write(sandbox: &Sandbox, path: &str, bytes: &[u8]) -> Result<Option<Observation>, SandboxError> {
    match sandbox.write_file(path, bytes).await {
        Ok(()) => Ok(None),
        Err(SandboxError::WriteFailure { reason, .. }) => {
            Ok(Some(Observation::error(format!("Failed to write {path}: {reason}"))))
        }
        Err(e) => Err(e),
    }
}

async fn edit(sandbox: &mut Sandbox, cmd: EditorCommand) -> Result<Observation, SandboxError> {
    let path = match &cmd {
        EditorCommand::View { path, .. }
        | EditorCommand::Create { path, .. }
        | EditorCommand::StrReplace { path, .. }
        | EditorCommand::Insert { path, .. } => path.clone(),
    };
    if let Err(obs) = absolute(&path) {
        return Ok(obs);
    }
    match cmd {
        EditorCommand::View { view_range, .. } => {
            if sandbox.path_kind(&path).await? == PathKind::Directory {
                if view_range.is_some() {
                    return Ok(Observation::error(
                        "The `view_range` parameter is not allowed when `path` points to a directory.",
                    ));
                }
                let entries = sandbox.list_tree(&path, 2).await?;
                let mut text = format!(
                    "Here's the files and directories up to 2 levels deep in {path}, excluding hidden items:\n"
                );
                for entry in entries {
                    text.push_str(&entry);
                    text.push('\n');
                }
                return Ok(Observation::ok(text));
            }
            let bytes = match read_text(sandbox, &path).await? {
                Ok(b) => b,
                Err(obs) => return Ok(obs),
            };
            let content = String::from_utf8_lossy(&bytes);
            Ok(match editor::view_file(&content, view_range) {
                Ok(view) => Observation::ok(format!("Here's the result of running `cat -n` on {path}:\n{view}")),
                Err(msg) => Observation::error(msg),
            })
        }
        EditorCommand::Create { file_text, .. } => {
            match sandbox.path_kind(&path).await? {
                PathKind::Missing => {}
                PathKind::File => {
                    return Ok(Observation::error(format!(
                        "File already exists at: {path}. Cannot overwrite files using command `create`."
                    )))
                }
                PathKind::Directory => {
                    return Ok(Observation::error(format!("The path {path} is an existing directory.")))
                }
            }
            if let Some(obs) = write(sandbox, &path, file_text.as_bytes()).await? {
                return Ok(obs);
            }
            Ok(Observation::ok(format!("File created successfully at: {path}")))
        }
        EditorCommand::StrReplace { old_str, new_str, .. } => {
            let bytes = match read_text(sandbox, &path).await? {
                Ok(b) => b,
                Err(obs) => return Ok(obs),
            };
            let replaced = match editor::replace_unique(&bytes, old_str.as_bytes(), new_str.as_bytes()) {
                Ok(r) => r,
                Err(editor::ReplaceError::EmptyOld) => {
                    return Ok(Observation::error("Parameter `old_str` must not be empty."))
                }
                Err(editor::ReplaceError::NotFound) => {
                    return Ok(Observation::error(format!(
                        "No replacement was performed, old_str `{old_str}` did not appear verbatim in {path}."
                    )))
                }
                Err(editor::ReplaceError::NotUnique(lines)) => {
                    let lines: Vec<String> = lines.iter().map(usize::to_string).collect();
                    return Ok(Observation::error(format!(
                        "No replacement was performed. Multiple occurrences of old_str `{old_str}` in lines [{}]. Please ensure it is unique.",
                        lines.join(", ")
                    )));
                }
            };
            if old_str != new_str {
                if let Some(obs) = write(sandbox, &path, &replaced.text).await? {
                    return Ok(obs);
                }
            }
            let first = editor::line_of(&replaced.text, replaced.at);
            let last = first + new_str.matches('\n').count();
            let content = String::from_utf8_lossy(&replaced.text);
            Ok(Observation::ok(format!(
                "The file {path} has been edited. Here's the result of running `cat -n` on a snippet of {path}:\n{}Review the changes and make sure they are as expected. Edit the file again if necessary.",
                editor::snippet(&content, first, last)
            )))
        }
        EditorCommand::Insert { insert_line, new_str, .. } => {
            let bytes = match read_text(sandbox, &path).await? {
                Ok(b) => b,
                Err(obs) => return Ok(obs),
            };
            let Ok(content) = String::from_utf8(bytes) else {
                return Ok(Observation::error(format!("The file {path} is not valid UTF-8 text.")));
            };
            let count = editor::lines(&content).len();
            let Some(updated) = editor::insert_after(&content, insert_line, &new_str) else {
                return Ok(Observation::error(format!(
                    "Invalid `insert_line` parameter: {insert_line}. It should be within the range of lines of the file: [0, {count}]"
                )));
            };
            if let Some(obs) = write(sandbox, &path, updated.as_bytes()).await? {
                return Ok(obs);
            }
            let first = insert_line + 1;
            let last = insert_line + editor::lines(&new_str).len().max(1);
            Ok(Observation::ok(format!(
                "The file {path} has been edited. Here's the result of running `cat -n` on a snippet of the edited file:\n{}Review the changes and make sure they are as expected (correct indentation, no duplicate lines, etc). Edit the file again if necessary.",
                editor::snippet(&updated, first, last)
            )))
        }
    }
}
