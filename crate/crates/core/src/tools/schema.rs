use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::ToolName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Integer,
    /// Array of integers.
    Array,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: ToolName,
    pub description: String,
    pub parameters: Vec<ToolParam>,
}

fn param(name: &str, kind: ParamKind, required: bool, description: &str) -> ToolParam {
    ToolParam {
        name: name.to_string(),
        kind,
        required,
        description: description.to_string(),
        allowed: None,
    }
}

const BASH_DESCRIPTION: &str = "Execute a bash command in the terminal within a persistent shell session.
* One command at a time: You can only execute one bash command at a time. If you need to run multiple commands sequentially, use `&&` or `;` to chain them together.
* Persistent session: Commands execute in a persistent shell session where environment variables, virtual environments, and working directory persist between commands.
* Soft timeout: Commands have a soft timeout of 10 seconds, once that's reached, you have the option to continue or interrupt the command.
* Output truncation: If the output exceeds a maximum length, it will be truncated before being returned.";

const EDITOR_DESCRIPTION: &str = "Custom editing tool for viewing, creating and editing files.
* State is persistent across command calls and discussions with the user.
* If `path` is a file, `view` displays the result of applying `cat -n`. If `path` is a directory, `view` lists non-hidden files and directories up to 2 levels deep.
* The `create` command cannot be used if the specified `path` already exists as a file.
* For the `str_replace` command, the `old_str` parameter should match EXACTLY one or more consecutive lines from the original file.";

const SUBMIT_DESCRIPTION: &str =
    "Finish the interaction when the task is complete OR if the assistant cannot proceed further with the task.";

/// The three tools, in the order they are offered to the model.
pub fn tool_schemas() -> Vec<ToolSchema> {
    use ParamKind::*;
    let mut command = param(
        "command",
        String,
        true,
        "The command to run. Allowed options are: `view`, `create`, `str_replace`, `insert`.",
    );
    command.allowed = Some(["view", "create", "str_replace", "insert"].map(str::to_string).to_vec());
    vec![
        ToolSchema {
            name: ToolName::ExecuteBash,
            description: BASH_DESCRIPTION.to_string(),
            parameters: vec![param(
                "command",
                String,
                true,
                "The bash command to execute. For example: `python my_script.py`. If the previous command is still running after the soft timeout, send `continue` to keep waiting or `interrupt` to stop it.",
            )],
        },
        ToolSchema {
            name: ToolName::StrReplaceEditor,
            description: EDITOR_DESCRIPTION.to_string(),
            parameters: vec![
                command,
                param("path", String, true, "Absolute path to file or directory."),
                param("file_text", String, false, "Required for `create` command."),
                param("old_str", String, false, "Required for `str_replace` command."),
                param(
                    "new_str",
                    String,
                    false,
                    "The replacement string for `str_replace`, or the string to insert for `insert`.",
                ),
                param("insert_line", Integer, false, "Required for `insert` command."),
                param(
                    "view_range",
                    Array,
                    false,
                    "Line range for `view` command, e.g., [11, 12].",
                ),
            ],
        },
        ToolSchema {
            name: ToolName::Submit,
            description: SUBMIT_DESCRIPTION.to_string(),
            parameters: vec![],
        },
    ]
}

impl ToolSchema {
    /// Chat-completions `tools[]` entry.
    pub fn to_function_json(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let mut prop = Map::new();
            match p.kind {
                ParamKind::String => {
                    prop.insert("type".into(), json!("string"));
                }
                ParamKind::Integer => {
                    prop.insert("type".into(), json!("integer"));
                }
                ParamKind::Array => {
                    prop.insert("type".into(), json!("array"));
                    prop.insert("items".into(), json!({"type": "integer"}));
                }
            }
            prop.insert("description".into(), json!(p.description));
            if let Some(allowed) = &p.allowed {
                prop.insert("enum".into(), json!(allowed));
            }
            properties.insert(p.name.clone(), Value::Object(prop));
            if p.required {
                required.push(p.name.clone());
            }
        }
        json!({
            "type": "function",
            "function": {
                "name": self.name.as_str(),
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                },
            },
        })
    }
}

/// The `tools` array sent with every sandbox-mode request.
pub fn tools_json() -> Value {
    Value::Array(tool_schemas().iter().map(ToolSchema::to_function_json).collect())
}
