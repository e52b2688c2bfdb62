use std::fmt::Debug;

use async_trait::async_trait;
use tokio::process::Command;

use super::{SandboxConfig, SandboxError, SandboxId};

/// Output of a one-shot side-channel command.
#[derive(Debug, Clone, Default)]
pub struct ExecOutput {
    /// `None` when the process died from a signal.
    pub status: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl ExecOutput {
    pub fn success(&self) -> bool {
        self.status == Some(0)
    }
}

/// A backend that can host sandboxes.
///
/// Every container runs a long-lived init process. The persistent shell
/// and all side-channel commands enter the container next to it, so a
/// shell can be restarted without losing the filesystem.
#[async_trait]
pub trait ContainerRuntime: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Starts a container for `id` from `config.image`.
    async fn create(&self, id: &SandboxId, config: &SandboxConfig) -> Result<(), SandboxError>;

    /// Command that starts an interactive `bash` inside the container, reading
    /// commands from stdin. The caller pipes stdin/stdout.
    fn shell_command(&self, id: &SandboxId, config: &SandboxConfig) -> Result<Command, SandboxError>;

    /// Runs `argv` inside the container outside of any shell session.
    async fn exec(
        &self,
        id: &SandboxId,
        argv: &[String],
        stdin: Option<&[u8]>,
    ) -> Result<ExecOutput, SandboxError>;

    /// Stops the container and removes its filesystem.
    async fn remove(&self, id: &SandboxId) -> Result<(), SandboxError>;

    /// Containers this runtime currently holds, including ones left behind by crashes.
    async fn list(&self) -> Result<Vec<SandboxId>, SandboxError>;

    async fn peak_memory_bytes(&self, _id: &SandboxId) -> Option<u64> {
        None
    }
}

/// Sends `signal` to every descendant of the shell whose in-container pid is `$2`.
pub(crate) const SIGNAL_TREE_SCRIPT: &str = r#"
sig="$1"
kids() {
  for c in $(cat /proc/"$1"/task/*/children 2>/dev/null); do
    kids "$c"
    echo "$c"
  done
}
for p in $(kids "$2"); do kill -s "$sig" "$p" 2>/dev/null; done
[ "$3" = self ] && kill -s "$sig" "$2" 2>/dev/null
exit 0
"#;

pub(crate) async fn run_with_stdin(
    mut cmd: Command,
    stdin: Option<&[u8]>,
) -> Result<ExecOutput, SandboxError> {
    use std::process::Stdio;
    use tokio::io::AsyncWriteExt;

    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    let mut child = cmd.spawn()?;
    if let Some(bytes) = stdin {
        let mut pipe = child.stdin.take().expect("stdin piped");
        let bytes = bytes.to_vec();
        // Feed stdin concurrently so a full stdout pipe cannot deadlock us.
        let writer = tokio::spawn(async move {
            let res = pipe.write_all(&bytes).await;
            drop(pipe);
            res
        });
        let out = child.wait_with_output().await?;
        writer
            .await
            .map_err(|e| SandboxError::Runtime(e.to_string()))?
            .or_else(|e| if e.kind() == std::io::ErrorKind::BrokenPipe { Ok(()) } else { Err(e) })?;
        return Ok(ExecOutput { status: out.status.code(), stdout: out.stdout, stderr: out.stderr });
    }
    let out = child.wait_with_output().await?;
    Ok(ExecOutput { status: out.status.code(), stdout: out.stdout, stderr: out.stderr })
}
