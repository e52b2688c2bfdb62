use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const DEFAULT_ENDPOINT: &str = "http://localhost:8000/v1";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u64 = 65_536;

/// Sampling and endpoint settings for one model. Unset options are left out of requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_penalty: Option<f64>,
    pub max_output_tokens: u64,
    /// Passed through as the vendor `thinking` block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_budget: Option<u64>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelProfile {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_name: model_name.into(),
            temperature: 1.0,
            top_p: None,
            top_k: None,
            min_p: None,
            repetition_penalty: None,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            thinking_budget: None,
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidProfile(msg));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("top_p must be in (0, 1], got {p}"));
            }
        }
        if let Some(p) = self.min_p {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("min_p must be in [0, 1], got {p}"));
            }
        }
        if let Some(r) = self.repetition_penalty {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("repetition_penalty must be positive, got {r}"));
            }
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name must not be empty".into());
        }
        Ok(())
    }
}

/// Named profiles: the built-in table plus anything loaded from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileRegistry {
    #[serde(default)]
    pub profiles: BTreeMap<String, ModelProfile>,
}

fn builtin(
    name: &str,
    temperature: f64,
    top_p: Option<f64>,
    min_p: Option<f64>,
    top_k: Option<u32>,
    repetition_penalty: Option<f64>,
) -> (String, ModelProfile) {
    let mut p = ModelProfile::new(name);
    p.temperature = temperature;
    p.top_p = top_p;
    p.min_p = min_p;
    p.top_k = top_k;
    p.repetition_penalty = repetition_penalty;
    (name.to_string(), p)
}

impl ProfileRegistry {
    /// The recommended sampling settings for the evaluated models.
    pub fn builtin() -> Self {
        let mut profiles: BTreeMap<String, ModelProfile> = [
            builtin("claude-sonnet-4.5-think", 1.0, None, None, None, None),
            builtin("gpt-5", 1.0, None, None, None, None),
            builtin("deepseek-v3.2-thinking", 1.0, Some(0.95), None, None, None),
            builtin("minimax-m2", 1.0, Some(0.95), None, Some(40), None),
            builtin("kimi-k2-thinking", 1.0, None, None, None, None),
            builtin("qwen3-coder-30b-a3b", 0.7, Some(0.80), Some(0.0), Some(20), Some(1.05)),
            builtin("qwen3-4b-instruct-2507", 0.7, Some(0.80), Some(0.0), Some(20), None),
        ]
        .into_iter()
        .collect();
        let claude = profiles.get_mut("claude-sonnet-4.5-think").expect("listed above");
        claude.max_output_tokens = 64_000;
        claude.thinking_budget = Some(60_000);
        Self { profiles }
    }

    /// Parses `[profiles.<name>]` tables.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let registry: Self =
            toml::from_str(text).map_err(|e| ModelError::InvalidProfile(format!("profile file: {e}")))?;
        for (name, profile) in &registry.profiles {
            profile
                .validate()
                .map_err(|e| ModelError::InvalidProfile(format!("profile `{name}`: {e}")))?;
        }
        Ok(registry)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidProfile(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Built-ins overlaid with `other`; entries in `other` win.
    pub fn merged(mut self, other: Self) -> Self {
        self.profiles.extend(other.profiles);
        self
    }

    pub fn get(&self, name: &str) -> Result<ModelProfile, ModelError> {
        self.profiles
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::UnknownProfile(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

/// Looks `name` up in the built-in table.
pub fn load_profile(name: &str) -> Result<ModelProfile, ModelError> {
    ProfileRegistry::builtin().get(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rows() {
        let q = load_profile("qwen3-4b-instruct-2507").unwrap();
        assert_eq!((q.temperature, q.top_p, q.top_k, q.min_p), (0.7, Some(0.80), Some(20), Some(0.0)));
        assert_eq!(q.repetition_penalty, None);
        let d = load_profile("deepseek-v3.2-thinking").unwrap();
        assert_eq!((d.temperature, d.top_p, d.top_k), (1.0, Some(0.95), None));
        let c = load_profile("claude-sonnet-4.5-think").unwrap();
        assert_eq!((c.max_output_tokens, c.thinking_budget), (64_000, Some(60_000)));
        let coder = load_profile("qwen3-coder-30b-a3b").unwrap();
        assert_eq!(coder.repetition_penalty, Some(1.05));
        assert_eq!(load_profile("minimax-m2").unwrap().top_k, Some(40));
        for p in ProfileRegistry::builtin().profiles.values() {
            p.validate().unwrap();
            if p.model_name != "claude-sonnet-4.5-think" {
                assert_eq!(p.max_output_tokens, DEFAULT_MAX_OUTPUT_TOKENS);
            }
        }
        assert!(matches!(load_profile("nope"), Err(ModelError::UnknownProfile(_))));
    }

    #[test]
    fn toml_profiles_overlay_builtins() {
        let text = r#"
[profiles.local]
endpoint_url = "http://127.0.0.1:9000/v1"
model_name = "my-model"
temperature = 0.2
max_output_tokens = 1024

[profiles.gpt-5]
endpoint_url = "https://example.invalid/v1"
model_name = "gpt-5"
temperature = 1.0
max_output_tokens = 65536
api_key_env = "OPENAI_API_KEY"
"#;
        let registry = ProfileRegistry::builtin().merged(ProfileRegistry::from_toml_str(text).unwrap());
        assert_eq!(registry.get("local").unwrap().temperature, 0.2);
        assert_eq!(registry.get("gpt-5").unwrap().api_key_env.as_deref(), Some("OPENAI_API_KEY"));
        assert!(registry.get("minimax-m2").is_ok());
        let bad = "[profiles.x]\nendpoint_url='u'\nmodel_name='m'\ntemperature=-1.0\nmax_output_tokens=5\n";
        assert!(ProfileRegistry::from_toml_str(bad).is_err());
    }
}
