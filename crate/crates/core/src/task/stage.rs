use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Placement, TaskError, TaskSpec};
use crate::sandbox::{join_relative, Sandbox, SandboxError};

const MAX_NAME_BYTES: usize = 200;

/// What staging wrote and where.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StagingReport {
    /// (title, absolute path) per document written.
    pub documents: Vec<(String, String)>,
    pub input_files: Vec<String>,
    /// (title, file name) for titles that had to be changed.
    pub renamed: Vec<(String, String)>,
}

/// File name for a document title: separators and control characters become `_`,
/// a leading dot is replaced so the file stays visible, `.txt` is appended when missing.
pub fn sanitize_filename(title: &str) -> String {
    let mut name: String = title
        .trim()
        .chars()
        .map(|c| if c == '/' || c == '\\' || c.is_control() { '_' } else { c })
        .collect();
    if name.starts_with('.') {
        name.replace_range(..1, "_");
    }
    if name.is_empty() {
        name.push_str("document");
    }
    if !name.to_ascii_lowercase().ends_with(".txt") {
        name.push_str(".txt");
    }
    if name.len() > MAX_NAME_BYTES {
        let mut cut = MAX_NAME_BYTES - 4;
        while !name.is_char_boundary(cut) {
            cut -= 1;
        }
        name = format!("{}.txt", &name[..cut]);
    }
    name
}

/// Distinct file names for `titles`, in order; repeats get `_2`, `_3`, ... before the extension.
pub fn unique_names(titles: &[&str]) -> Vec<String> {
    let mut used = HashSet::new();
    titles
        .iter()
        .map(|title| {
            let base = sanitize_filename(title);
            let mut name = base.clone();
            let mut n = 2;
            while !used.insert(name.to_lowercase()) {
                let stem = &base[..base.len() - 4];
                name = format!("{stem}_{n}.txt");
                n += 1;
            }
            name
        })
        .collect()
}

/// Writes the task's documents and input files into a fresh sandbox.
pub async fn stage_task(task: &TaskSpec, sandbox: &mut Sandbox) -> Result<StagingReport, TaskError> {
    let mut report = StagingReport::default();
    let config = sandbox.config().clone();
    for file in &task.input_files {
        let target = join_relative(&config.input_dir, &file.path)?;
        let bytes = file
            .bytes()
            .map_err(|message| TaskError::Invalid { id: task.id.clone(), message })?;
        sandbox.write_file(&target, &bytes).await?;
        report.input_files.push(target.display().to_string());
    }
    if task.placement == Placement::SandboxFiles {
        let titles: Vec<&str> = task.documents.iter().map(|d| d.title.as_str()).collect();
        for (doc, name) in task.documents.iter().zip(unique_names(&titles)) {
            let target = config.documents_dir.join(&name);
            sandbox.write_file(&target, doc.text.as_bytes()).await?;
            if name != doc.title {
                report.renamed.push((doc.title.clone(), name.clone()));
            }
            report.documents.push((doc.title.clone(), target.display().to_string()));
        }
    }
    Ok(report)
}

/// Trimmed contents of the answer file, or `None` when it does not exist.
pub async fn extract_answer(sandbox: &Sandbox, path: impl AsRef<Path>) -> Result<Option<String>, SandboxError> {
    match sandbox.read_file(path).await {
        Ok(bytes) => Ok(Some(String::from_utf8_lossy(&bytes).trim().to_string())),
        Err(SandboxError::FileNotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sanitizes_titles() {
        assert_eq!(sanitize_filename("Intro"), "Intro.txt");
        assert_eq!(sanitize_filename("a/b"), "a_b.txt");
        assert_eq!(sanitize_filename("x\\y\tz"), "x_y_z.txt");
        assert_eq!(sanitize_filename(".hidden"), "_hidden.txt");
        assert_eq!(sanitize_filename("notes.TXT"), "notes.TXT");
        assert_eq!(sanitize_filename(""), "document.txt");
        assert_eq!(sanitize_filename(".."), "_..txt");
        assert_eq!(unique_names(&["a", "a", "a/b", "a_b"]), ["a.txt", "a_2.txt", "a_b.txt", "a_b_2.txt"]);
    }

    proptest! {
        #[test]
        fn names_are_safe_and_distinct(titles in proptest::collection::vec("\\PC{0,30}|[./\\\\]{1,4}", 1..12)) {
            let refs: Vec<&str> = titles.iter().map(String::as_str).collect();
            let names = unique_names(&refs);
            let lowered: HashSet<String> = names.iter().map(|n| n.to_lowercase()).collect();
            prop_assert_eq!(lowered.len(), names.len());
            for n in &names {
                prop_assert!(!n.contains('/') && !n.contains('\\'));
                prop_assert!(!n.starts_with('.'));
                prop_assert!(!n.chars().any(char::is_control));
                prop_assert!(n.len() <= MAX_NAME_BYTES + 8);
                prop_assert!(join_relative(Path::new("/d"), n).is_ok());
            }
        }
    }
}
