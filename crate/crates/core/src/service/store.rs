use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rewards::ScoringMode;
use crate::rollout::{Mode, ResultRow};
use crate::task::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

/// Bookkeeping for one submitted episode, persisted as `<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    /// Submission order; resumed episodes are re-queued by it.
    pub seq: u64,
    pub status: EpisodeStatus,
    pub task: TaskSpec,
    pub profile: String,
    pub mode: Mode,
    pub scoring: ScoringMode,
    pub submitted_unix_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// JSON-file store; each write goes through a temp file and a rename.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    dir: PathBuf,
}

impl EpisodeStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        ok.then(|| self.dir.join(format!("{id}.json")))
    }

    pub fn put(&self, record: &EpisodeRecord) -> std::io::Result<()> {
        let path = self
            .path(&record.episode_id)
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "bad episode id"))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(record).expect("records serialize"))?;
        std::fs::rename(tmp, path)
    }

    pub fn get(&self, id: &str) -> std::io::Result<Option<EpisodeRecord>> {
        let Some(path) = self.path(id) else { return Ok(None) };
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Every record, in submission order. Unreadable files are skipped with a warning.
    pub fn all(&self) -> std::io::Result<Vec<EpisodeRecord>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            match std::fs::read(&path).map(|b| serde_json::from_slice::<EpisodeRecord>(&b)) {
                Ok(Ok(record)) => out.push(record),
                _ => tracing::warn!(path = %path.display(), "skipping unreadable episode record"),
            }
        }
        out.sort_by_key(|r| r.seq);
        Ok(out)
    }
}
