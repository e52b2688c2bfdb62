use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::AnalyzerError;

const BUILTIN: &str = include_str!("../../resources/patterns/v1.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ExternalResources,
    FileManagement,
    Computation,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::ExternalResources, Category::FileManagement, Category::Computation];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ExternalResources => "external-resources",
            Category::FileManagement => "file-management",
            Category::Computation => "computation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    #[default]
    Regex,
    /// Matches when a captured integer literal exceeds `min_bound`.
    LoopBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRule {
    pub category: Category,
    pub name: String,
    #[serde(default)]
    pub kind: RuleKind,
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_bound: Option<u64>,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl PatternRule {
    fn regex(&self) -> &Regex {
        self.compiled.as_ref().expect("compiled when the library loads")
    }

    pub fn matches(&self, text: &str) -> bool {
        match self.kind {
            RuleKind::Regex => self.regex().is_match(text),
            RuleKind::LoopBound => {
                let min = self.min_bound.unwrap_or(0);
                self.regex().captures_iter(text).any(|caps| {
                    caps.iter()
                        .skip(1)
                        .flatten()
                        .filter_map(|m| m.as_str().replace('_', "").parse::<u64>().ok())
                        .any(|n| n > min)
                })
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReasoningPhrases {
    verification: Vec<String>,
}

/// Versioned capability rules plus the verification phrase list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternLibrary {
    pub version: String,
    pub rules: Vec<PatternRule>,
    reasoning: ReasoningPhrases,
    #[serde(skip)]
    verification: Option<Regex>,
}

impl PatternLibrary {
    pub fn builtin() -> Self {
        static LIB: OnceLock<PatternLibrary> = OnceLock::new();
        LIB.get_or_init(|| Self::from_toml_str(BUILTIN).expect("built-in pattern library is valid")).clone()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, AnalyzerError> {
        let mut lib: Self = toml::from_str(text).map_err(|e| AnalyzerError::Library(e.to_string()))?;
        if lib.version.trim().is_empty() {
            return Err(AnalyzerError::Library("version must not be empty".into()));
        }
        for rule in &mut lib.rules {
            let re = Regex::new(&rule.pattern)
                .map_err(|e| AnalyzerError::Library(format!("rule `{}`: {e}", rule.name)))?;
            if rule.kind == RuleKind::LoopBound && (re.captures_len() < 2 || rule.min_bound.is_none()) {
                return Err(AnalyzerError::Library(format!(
                    "rule `{}`: loop-bound rules need a capture group and min_bound",
                    rule.name
                )));
            }
            rule.compiled = Some(re);
        }
        let alternation = lib.reasoning.verification.iter().map(|p| regex::escape(p)).collect::<Vec<_>>().join("|");
        let re = RegexBuilder::new(&alternation)
            .case_insensitive(true)
            .build()
            .map_err(|e| AnalyzerError::Library(e.to_string()))?;
        lib.verification = Some(re);
        Ok(lib)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self, AnalyzerError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Categories with at least one rule matching any of the texts, in category order.
    pub fn classify_texts<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Category> {
        Category::ALL
            .into_iter()
            .filter(|c| {
                self.rules
                    .iter()
                    .filter(|r| r.category == *c)
                    .any(|r| texts.iter().any(|t| r.matches(t.as_ref())))
            })
            .collect()
    }

    /// Names of the rules matching `text`.
    pub fn matching_rules(&self, text: &str) -> Vec<&str> {
        self.rules.iter().filter(|r| r.matches(text)).map(|r| r.name.as_str()).collect()
    }

    fn verification_regex(&self) -> &Regex {
        self.verification.as_ref().expect("compiled when the library loads")
    }
}

/// Structure and verification markers in one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasoningCounts {
    pub headers: usize,
    pub separators: usize,
    pub bullets: usize,
    pub math_blocks: usize,
    pub verification: usize,
}

impl ReasoningCounts {
    pub fn structure(&self) -> usize {
        self.headers + self.separators + self.bullets + self.math_blocks
    }
}

fn structure_regexes() -> &'static [Regex; 4] {
    static RES: OnceLock<[Regex; 4]> = OnceLock::new();
    RES.get_or_init(|| {
        [
            Regex::new(r"(?m)^[ \t]{0,3}#{1,6}[ \t]+\S").unwrap(),
            Regex::new(r"(?m)^[ \t]{0,3}(?:-[ \t]*){3,}$|^[ \t]{0,3}(?:\*[ \t]*){3,}$|^[ \t]{0,3}(?:_[ \t]*){3,}$").unwrap(),
            Regex::new(r"(?m)^[ \t]*(?:[-*+]|\d{1,3}[.)])[ \t]+\S").unwrap(),
            Regex::new(r"(?s)\$\$.+?\$\$|\\\[.+?\\\]").unwrap(),
        ]
    })
}

pub fn reasoning_counts(response: &str, library: &PatternLibrary) -> ReasoningCounts {
    let [headers, separators, bullets, math] = structure_regexes();
    ReasoningCounts {
        headers: headers.find_iter(response).count(),
        separators: separators.find_iter(response).count(),
        bullets: bullets.find_iter(response).count(),
        math_blocks: math.find_iter(response).count(),
        verification: library.verification_regex().find_iter(response).count(),
    }
}

/// Per-response averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSummary {
    pub responses: usize,
    pub verification: f64,
    pub structure: f64,
}

pub fn reasoning_summary<S: AsRef<str>>(responses: &[S], library: &PatternLibrary) -> ReasoningSummary {
    let counts: Vec<ReasoningCounts> = responses.iter().map(|r| reasoning_counts(r.as_ref(), library)).collect();
    let n = counts.len().max(1) as f64;
    ReasoningSummary {
        responses: counts.len(),
        verification: counts.iter().map(|c| c.verification).sum::<usize>() as f64 / n,
        structure: counts.iter().map(|c| c.structure()).sum::<usize>() as f64 / n,
    }
}
