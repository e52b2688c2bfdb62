//! Builds sandbox task environments from context-grounded records: contexts become
//! files, short single-file contexts get distractor files, and earlier sub-tasks
//! become in-context examples.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::task::{
    sanitize_filename, unique_names, AnswerKey, Document, InContextExample, Placement, TaskError, TaskSpec,
};

pub const DEFAULT_DISTRACTORS: usize = 4;
pub const DEFAULT_CHUNK_BYTES: usize = 4 * 1024;
pub const DEFAULT_LONG_DOCUMENT_BYTES: usize = 8 * 1024;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("context is empty")]
    EmptyContext,
    #[error("distractor pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("target index {index} out of range for {len} sub-tasks")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("record line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    /// Chunk size when a long document has no usable headings.
    pub chunk_bytes: usize,
    /// Single documents at or below this size stay whole.
    pub long_document_bytes: usize,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self { chunk_bytes: DEFAULT_CHUNK_BYTES, long_document_bytes: DEFAULT_LONG_DOCUMENT_BYTES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfiguratorOptions {
    pub split: SplitPolicy,
    pub distractors: usize,
}

impl Default for ConfiguratorOptions {
    fn default() -> Self {
        Self { split: SplitPolicy::default(), distractors: DEFAULT_DISTRACTORS }
    }
}

/// Markdown headings and numbered section headings such as `2.1 Methods` or `3. Results`.
pub const HEADING_PATTERNS: [&str; 2] = [r"(?m)^#{1,6}[ \t]+\S[^\n]*$", r"(?m)^\d{1,2}(?:\.\d{1,2})*\.?[ \t]+[A-Z][^\n]{0,78}$"];

fn heading_regexes() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| HEADING_PATTERNS.iter().map(|p| Regex::new(p).expect("valid heading pattern")).collect())
}

/// Byte offsets of heading lines with the heading text, in order.
pub fn find_headings(text: &str) -> Vec<(usize, String)> {
    let mut found: Vec<(usize, String)> = heading_regexes()
        .iter()
        .flat_map(|re| re.find_iter(text).map(|m| (m.start(), m.as_str().trim_end_matches('\r').to_string())))
        .collect();
    found.sort_by_key(|(at, _)| *at);
    found.dedup_by_key(|(at, _)| *at);
    found
}

fn heading_slug(heading: &str) -> String {
    let body = heading.trim_start_matches('#').trim_start();
    let body = body.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.').trim();
    let words: Vec<String> = body
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut slug = words.join("_");
    if slug.len() > 60 {
        let mut cut = 60;
        while !slug.is_char_boundary(cut) {
            cut -= 1;
        }
        slug.truncate(cut);
    }
    slug
}

/// Splits `text` into pieces of at most `size` bytes on character boundaries.
pub fn chunk_text(text: &str, size: usize) -> Vec<&str> {
    let size = size.max(4);
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let mut cut = size.min(rest.len());
        while !rest.is_char_boundary(cut) {
            cut -= 1;
        }
        let (head, tail) = rest.split_at(cut);
        out.push(head);
        rest = tail;
    }
    out
}

/// Files for a context. Several documents give one file each; one long document is
/// cut at headings, or into fixed-size chunks when it has fewer than two. Concatenating
/// the texts in order gives back the input exactly.
pub fn split_context(documents: &[Document], policy: &SplitPolicy) -> Result<Vec<Document>, ConfigError> {
    let docs: Vec<&Document> = documents.iter().filter(|d| !d.text.is_empty()).collect();
    match docs.as_slice() {
        [] => Err(ConfigError::EmptyContext),
        [doc] => Ok(split_document(doc, policy)),
        many => {
            let titles: Vec<&str> = many.iter().map(|d| d.title.as_str()).collect();
            Ok(many
                .iter()
                .zip(unique_names(&titles))
                .map(|(d, name)| Document { title: name, text: d.text.clone() })
                .collect())
        }
    }
}

fn split_document(doc: &Document, policy: &SplitPolicy) -> Vec<Document> {
    let base = sanitize_filename(&doc.title);
    if doc.text.len() <= policy.long_document_bytes {
        return vec![Document { title: base, text: doc.text.clone() }];
    }
    let headings = find_headings(&doc.text);
    let (names, pieces): (Vec<String>, Vec<&str>) = if headings.len() >= 2 {
        let mut bounds: Vec<usize> = headings.iter().skip(1).map(|(at, _)| *at).collect();
        bounds.insert(0, 0);
        bounds.push(doc.text.len());
        headings
            .iter()
            .enumerate()
            .map(|(i, (_, h))| {
                let slug = heading_slug(h);
                let name = if slug.is_empty() { format!("section_{}", i + 1) } else { slug };
                (name, &doc.text[bounds[i]..bounds[i + 1]])
            })
            .unzip()
    } else {
        let stem = &base[..base.len() - 4];
        chunk_text(&doc.text, policy.chunk_bytes)
            .into_iter()
            .enumerate()
            .map(|(i, piece)| (format!("{stem}_part{}", i + 1), piece))
            .unzip()
    };
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    unique_names(&refs)
        .into_iter()
        .zip(pieces)
        .map(|(title, text)| Document { title, text: text.to_string() })
        .collect()
}

/// A file available as a distractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolFile {
    pub id: String,
    pub document: Document,
}

/// The source followed by `count` distinct pool files, none sharing the source id.
pub fn add_distractors(
    source: &PoolFile,
    pool: &[PoolFile],
    count: usize,
    seed: u64,
) -> Result<Vec<PoolFile>, ConfigError> {
    let candidates: Vec<&PoolFile> = pool.iter().filter(|p| p.id != source.id).collect();
    if candidates.len() < count {
        return Err(ConfigError::PoolTooSmall { needed: count, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), count).into_vec();
    picked.sort_unstable();
    let mut out = vec![source.clone()];
    out.extend(picked.into_iter().map(|i| candidates[i].clone()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubTask {
    pub question: String,
    pub answer: String,
    /// Defaults to exact match on `answer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<AnswerKey>,
}

/// A context with sub-tasks that depend on each other in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub id: String,
    pub context: Vec<Document>,
    pub subtasks: Vec<SubTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl ContextRecord {
    /// The whole context as one pool file.
    pub fn as_pool_file(&self) -> PoolFile {
        let title = self.context.first().map_or_else(|| self.id.clone(), |d| d.title.clone());
        let text = self.context.iter().map(|d| d.text.as_str()).collect();
        PoolFile { id: self.id.clone(), document: Document { title, text } }
    }
}

fn derive_seed(seed: u64, record_id: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(record_id.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Task for sub-task `target` of `record`. Earlier sub-tasks become examples; a context
/// that fits in one file is joined by distractors drawn from `pool`.
pub fn build_rl_task(
    record: &ContextRecord,
    target: usize,
    seed: u64,
    pool: &[ContextRecord],
    options: &ConfiguratorOptions,
) -> Result<TaskSpec, ConfigError> {
    let sub = record
        .subtasks
        .get(target)
        .ok_or(ConfigError::IndexOutOfRange { index: target, len: record.subtasks.len() })?;
    let mut documents = split_context(&record.context, &options.split)?;
    if documents.len() == 1 && options.distractors > 0 {
        let source = PoolFile { id: record.id.clone(), document: documents.remove(0) };
        let pool: Vec<PoolFile> = pool.iter().map(ContextRecord::as_pool_file).collect();
        let files = add_distractors(&source, &pool, options.distractors, derive_seed(seed, &record.id))?;
        let titles: Vec<&str> = files.iter().map(|f| f.document.title.as_str()).collect();
        documents = files
            .iter()
            .zip(unique_names(&titles))
            .map(|(f, title)| Document { title, text: f.document.text.clone() })
            .collect();
    }
    let mut task = TaskSpec::new(
        format!("{}-{target}", record.id),
        sub.question.clone(),
        sub.answer_key.clone().unwrap_or_else(|| AnswerKey::exact(sub.answer.clone())),
    );
    task.documents = documents;
    task.placement = Placement::SandboxFiles;
    task.domain = record.domain.clone();
    task.examples = record.subtasks[..target]
        .iter()
        .map(|s| InContextExample { task: s.question.clone(), answer: s.answer.clone() })
        .collect();
    task.validate()?;
    Ok(task)
}

/// Reads JSONL context records; blank and `#` lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<ContextRecord>, ConfigError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ConfigError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub id: String,
    pub examples: usize,
    pub files: Vec<ManifestFile>,
}

/// Audit record written next to a generated suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvManifest {
    pub manifest_version: u32,
    pub seed: u64,
    pub suite: String,
    pub suite_sha256: String,
    pub tasks: Vec<ManifestTask>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One task per record, the target sub-task picked by the seed. Distractors come from
/// the other records.
pub fn generate_tasks(
    records: &[ContextRecord],
    seed: u64,
    options: &ConfiguratorOptions,
) -> Result<Vec<TaskSpec>, ConfigError> {
    records
        .iter()
        .filter(|r| !r.subtasks.is_empty())
        .map(|record| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5eed, &record.id));
            let target = index::sample(&mut rng, record.subtasks.len(), 1).index(0);
            build_rl_task(record, target, seed, records, options)
        })
        .collect()
}

/// Writes `tasks.jsonl` and `manifest.json` into `out_dir`.
pub fn genenv(
    records: &[ContextRecord],
    seed: u64,
    options: &ConfiguratorOptions,
    out_dir: &Path,
) -> Result<(PathBuf, EnvManifest), ConfigError> {
    let tasks = generate_tasks(records, seed, options)?;
    std::fs::create_dir_all(out_dir)?;
    let suite = out_dir.join("tasks.jsonl");
    crate::task::write_suite(&suite, &tasks)?;
    let manifest = EnvManifest {
        manifest_version: MANIFEST_VERSION,
        seed,
        suite: "tasks.jsonl".into(),
        suite_sha256: sha256_hex(&std::fs::read(&suite)?),
        tasks: tasks
            .iter()
            .map(|t| ManifestTask {
                id: t.id.clone(),
                examples: t.examples.len(),
                files: t
                    .documents
                    .iter()
                    .map(|d| ManifestFile { name: d.title.clone(), bytes: d.text.len(), sha256: sha256_hex(d.text.as_bytes()) })
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(out_dir.join("manifest.json"), text)?;
    Ok((suite, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(title: &str, text: &str) -> Document {
        Document { title: title.into(), text: text.into() }
    }

    fn article() -> String {
        let body = "lorem ipsum dolor sit amet ".repeat(120);
        format!(
            "A Study of Things\n\n# Introduction\n{body}\n# Methods\n{body}\n## 2.1 Data\n{body}\n3. Results\n{body}"
        )
    }

    #[test]
    fn headings_are_detected() {
        let found: Vec<String> = find_headings(&article()).into_iter().map(|(_, h)| h).collect();
        assert_eq!(found, ["# Introduction", "# Methods", "## 2.1 Data", "3. Results"]);
        assert!(find_headings("1. apples are red\n12345 items\n#hashtag").is_empty());
        assert_eq!(heading_slug("## 2.1 Data Sets"), "data_sets");
        assert_eq!(heading_slug("3. Results"), "results");
    }

    #[test]
    fn splits_documents_sections_and_chunks() {
        let three = [doc("A", "aa"), doc("B", "bb"), doc("C/D", "cc")];
        let files = split_context(&three, &SplitPolicy::default()).unwrap();
        let names: Vec<&str> = files.iter().map(|d| d.title.as_str()).collect();
        assert_eq!(names, ["A.txt", "B.txt", "C_D.txt"]);

        let text = article();
        let files = split_context(&[doc("article", &text)], &SplitPolicy::default()).unwrap();
        let names: Vec<&str> = files.iter().map(|d| d.title.as_str()).collect();
        assert_eq!(names, ["introduction.txt", "methods.txt", "data.txt", "results.txt"]);
        assert!(files[0].text.starts_with("A Study of Things"));
        assert_eq!(files.iter().map(|d| d.text.as_str()).collect::<String>(), text);

        let plain = "x".repeat(10 * 1024);
        let files = split_context(&[doc("notes", &plain)], &SplitPolicy::default()).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(files[0].title, "notes_part1.txt");
        assert_eq!(files.iter().map(|d| d.text.as_str()).collect::<String>(), plain);

        let short = split_context(&[doc("s", "short")], &SplitPolicy::default()).unwrap();
        assert_eq!(short, [doc("s.txt", "short")]);
        assert!(matches!(split_context(&[], &SplitPolicy::default()), Err(ConfigError::EmptyContext)));
        assert!(matches!(split_context(&[doc("e", "")], &SplitPolicy::default()), Err(ConfigError::EmptyContext)));
    }

    #[test]
    fn chunks_respect_char_boundaries() {
        let text = "é".repeat(10);
        let parts = chunk_text(&text, 5);
        assert!(parts.iter().all(|p| p.len() <= 5 && !p.is_empty()));
        assert_eq!(parts.concat(), text);
    }

    fn pool(n: usize) -> Vec<PoolFile> {
        (0..n).map(|i| PoolFile { id: format!("r{i}"), document: doc(&format!("d{i}"), "t") }).collect()
    }

    #[test]
    fn distractor_rules() {
        let p = pool(10);
        let files = add_distractors(&p[0], &p, 4, 7).unwrap();
        assert_eq!(files.len(), 5);
        assert!(files[1..].iter().all(|f| f.id != "r0"));
        assert_eq!(files, add_distractors(&p[0], &p, 4, 7).unwrap());
        assert_eq!(add_distractors(&p[0], &p, 0, 7).unwrap().len(), 1);
        assert!(matches!(
            add_distractors(&p[0], &pool(3), 5, 1),
            Err(ConfigError::PoolTooSmall { needed: 5, available: 2 })
        ));
    }

    fn record(id: &str, n: usize) -> ContextRecord {
        ContextRecord {
            id: id.into(),
            context: vec![doc(&format!("{id} notes"), &format!("context of {id}"))],
            subtasks: (0..n).map(|i| SubTask { question: format!("q{i}"), answer: format!("a{i}"), answer_key: None }).collect(),
            domain: Some("chemistry".into()),
        }
    }

    #[test]
    fn rl_tasks_carry_examples_and_distractors() {
        let records: Vec<_> = (0..6).map(|i| record(&format!("r{i}"), 3)).collect();
        let opts = ConfiguratorOptions::default();
        let task = build_rl_task(&records[0], 2, 9, &records, &opts).unwrap();
        assert_eq!(task.examples.len(), 2);
        assert_eq!(task.examples[0].answer, "a0");
        assert_eq!(task.prompt, "q2");
        assert_eq!(task.placement, Placement::SandboxFiles);
        assert_eq!(task.documents.len(), 5);
        assert_eq!(task.documents[0].text, "context of r0");
        assert_eq!(task, build_rl_task(&records[0], 2, 9, &records, &opts).unwrap());
        assert_eq!(build_rl_task(&records[0], 0, 9, &records, &opts).unwrap().examples.len(), 0);
        assert!(matches!(
            build_rl_task(&records[0], 3, 9, &records, &opts),
            Err(ConfigError::IndexOutOfRange { index: 3, len: 3 })
        ));
        let (_, instance) = crate::task::render_prompts(&task);
        assert!(instance.contains("/testbed/documents/"));
        assert!(instance.contains("answer.txt"));
    }

    #[test]
    fn genenv_writes_suite_and_manifest() {
        let records: Vec<_> = (0..6).map(|i| record(&format!("r{i}"), 3)).collect();
        let dir = tempfile::tempdir().unwrap();
        let (suite, manifest) = genenv(&records, 3, &ConfiguratorOptions::default(), dir.path()).unwrap();
        let tasks = crate::task::load_suite(&suite).unwrap();
        assert_eq!(tasks.len(), 6);
        assert_eq!(manifest.tasks.len(), 6);
        assert_eq!(manifest.suite_sha256, sha256_hex(&std::fs::read(&suite).unwrap()));
        assert_eq!(manifest.tasks[0].files[0].sha256, sha256_hex(tasks[0].documents[0].text.as_bytes()));
        let again = tempfile::tempdir().unwrap();
        let (_, second) = genenv(&records, 3, &ConfiguratorOptions::default(), again.path()).unwrap();
        assert_eq!(manifest, second);
    }

    fn document_text() -> impl proptest::strategy::Strategy<Value = String> {
        use proptest::prelude::*;
        let line = prop_oneof![
            3 => "[a-z é,.]{0,60}",
            1 => "#{1,3} [A-Z][a-z]{0,10}",
            1 => "[0-9]{1,2}(\\.[0-9])? [A-Z][a-z ]{0,12}",
            1 => Just(String::new()),
        ];
        proptest::collection::vec(line, 0..400).prop_map(|lines| lines.join("\n"))
    }

    proptest::proptest! {
        #[test]
        fn splitting_is_lossless(text in document_text(), chunk in 16usize..5000, long in 0usize..9000) {
            let policy = SplitPolicy { chunk_bytes: chunk, long_document_bytes: long };
            match split_context(&[doc("t", &text)], &policy) {
                Err(ConfigError::EmptyContext) => proptest::prop_assert!(text.is_empty()),
                Err(e) => panic!("{e}"),
                Ok(files) => {
                    proptest::prop_assert!(files.iter().all(|f| !f.text.is_empty()));
                    proptest::prop_assert_eq!(files.iter().map(|d| d.text.as_str()).collect::<String>(), text);
                    let names: std::collections::HashSet<String> = files.iter().map(|f| f.title.to_lowercase()).collect();
                    proptest::prop_assert_eq!(names.len(), files.len());
                }
            }
        }
    }
}
