//! Persistent shell sessions.
//!
//! Commands are written to a long-lived `bash` reading from a pipe. Each
//! command is followed by a sentinel line carrying a per-command nonce and
//! the exit status; a background reader scans the output stream for it.
//! Output is bounded in memory: only the first `limit` bytes of a command's
//! output are kept, plus a short tail used to find the sentinel.

use std::process::Stdio;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::process::{Child, ChildStdin};
use tokio::sync::Notify;
use tokio::task::JoinHandle;

use super::runtime::SIGNAL_TREE_SCRIPT;
use super::{ContainerRuntime, SandboxConfig, SandboxError, SandboxId};

const SENTINEL_PREFIX: &str = "__SBX_";
const TAIL_WINDOW: usize = 256;
const READY_TIMEOUT: Duration = Duration::from_secs(20);
const INTERRUPT_GRACE: Duration = Duration::from_secs(2);
const KILL_GRACE: Duration = Duration::from_secs(1);

/// Marker appended to output cut at the limit.
pub fn truncation_marker(omitted_bytes: u64) -> String {
    format!("\n<output truncated: {omitted_bytes} more bytes omitted>\n")
}

/// What to do with a soft-timed-out command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PendingDirective {
    Continue(Duration),
    Interrupt,
}

/// Result of running (or resuming) a shell command.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    /// Interleaved stdout and stderr, possibly cut with a truncation marker.
    pub output: String,
    /// Absent while the command is still running or if the shell died.
    pub exit_status: Option<i32>,
    pub timed_out: bool,
    pub truncated: bool,
    /// Set when the command was stopped by an interrupt directive.
    pub interrupted: bool,
    /// Set when the shell process exited and had to be restarted.
    pub shell_restarted: bool,
    /// Bytes the command produced in this window, before truncation.
    pub output_bytes: u64,
    pub wall: Duration,
}

#[derive(Debug, Default)]
struct Collector {
    marker: Option<Vec<u8>>,
    head: Vec<u8>,
    cap: usize,
    total: u64,
    tail: Vec<u8>,
    done: Option<(u64, i32)>,
    eof: bool,
}

impl Collector {
    fn reset(&mut self, marker: Vec<u8>, cap: usize) {
        self.marker = Some(marker);
        self.head.clear();
        self.cap = cap;
        self.total = 0;
        self.tail.clear();
        self.done = None;
    }

    fn push(&mut self, chunk: &[u8]) {
        if self.head.len() < self.cap {
            let room = self.cap - self.head.len();
            self.head.extend_from_slice(&chunk[..chunk.len().min(room)]);
        }
        self.total += chunk.len() as u64;
        self.tail.extend_from_slice(chunk);
        if self.tail.len() > TAIL_WINDOW {
            let cut = self.tail.len() - TAIL_WINDOW;
            self.tail.drain(..cut);
        }
        if self.done.is_none() {
            self.scan();
        }
    }

    fn scan(&mut self) {
        let Some(marker) = self.marker.as_deref() else { return };
        let Some(pos) = find(&self.tail, marker) else { return };
        let rest = &self.tail[pos + marker.len()..];
        let Some(end) = find(rest, b"__\n") else { return };
        let Some(status) = std::str::from_utf8(&rest[..end]).ok().and_then(|s| s.parse().ok()) else {
            return;
        };
        let from_end = (self.tail.len() - pos) as u64;
        self.done = Some((self.total.saturating_sub(from_end), status));
    }

    /// Hands out output gathered so far and starts a fresh window.
    fn take_partial(&mut self, limit: usize) -> (Vec<u8>, u64) {
        let total = self.total;
        let keep = (total as usize).min(limit).min(self.head.len());
        let body = self.head[..keep].to_vec();
        self.head.clear();
        self.total = 0;
        (body, total)
    }

    fn take_done(&mut self, limit: usize) -> Option<(Vec<u8>, u64, i32)> {
        let (len, status) = self.done?;
        let keep = (len as usize).min(limit).min(self.head.len());
        let body = self.head[..keep].to_vec();
        self.marker = None;
        self.done = None;
        self.head.clear();
        self.total = 0;
        self.tail.clear();
        Some((body, len, status))
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Quotes bytes as a bash ANSI-C string (`$'...'`), so any command text is safe to send.
fn ansi_c_quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 3);
    out.push_str("$'");
    for b in text.bytes() {
        match b {
            b'\'' | b'\\' => out.push_str(&format!("\\x{b:02x}")),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out.push('\'');
    out
}

fn render(body: &[u8], produced: u64, limit: usize) -> (String, bool) {
    let mut text = String::from_utf8_lossy(body).into_owned();
    if produced > limit as u64 {
        text.push_str(&truncation_marker(produced - limit as u64));
        (text, true)
    } else {
        (text, false)
    }
}

pub struct ShellSession {
    child: Child,
    stdin: ChildStdin,
    collector: Arc<Mutex<Collector>>,
    notify: Arc<Notify>,
    shell_pid: u32,
    pending: bool,
    seq: u64,
    nonce: String,
    reader: JoinHandle<()>,
    dead: bool,
}

impl std::fmt::Debug for ShellSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShellSession")
            .field("shell_pid", &self.shell_pid)
            .field("pending", &self.pending)
            .field("dead", &self.dead)
            .finish()
    }
}

impl ShellSession {
    pub(crate) async fn spawn(
        runtime: &dyn ContainerRuntime,
        id: &SandboxId,
        config: &SandboxConfig,
    ) -> Result<Self, SandboxError> {
        let mut cmd = runtime.shell_command(id, config)?;
        cmd.stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        let mut child = cmd.spawn().map_err(|e| SandboxError::Session(format!("spawn shell: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        if let Some(stderr) = child.stderr.take() {
            let id = id.clone();
            tokio::spawn(async move {
                let mut lines = BufReader::new(stderr).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    tracing::debug!(sandbox = %id, "shell stderr: {line}");
                }
            });
        }

        let nonce = uuid::Uuid::new_v4().simple().to_string()[..12].to_string();
        let workdir = config.workspace_root.display().to_string();
        let init = format!(
            "exec 2>&1\n\
             export PS1= PS2= TERM=dumb PAGER=cat GIT_PAGER=cat PYTHONUNBUFFERED=1 DEBIAN_FRONTEND=noninteractive\n\
             export HOME=${{HOME:-/root}} LANG=${{LANG:-C.UTF-8}}\n\
             cd {} || exit 1\n\
             printf '{SENTINEL_PREFIX}READY_{nonce}_%d__\\n' $$\n",
            ansi_c_quote(&workdir)
        );
        stdin
            .write_all(init.as_bytes())
            .await
            .map_err(|e| SandboxError::Session(format!("shell init: {e}")))?;
        stdin.flush().await.ok();

        let mut reader = BufReader::new(stdout);
        let ready = format!("{SENTINEL_PREFIX}READY_{nonce}_");
        let shell_pid = tokio::time::timeout(READY_TIMEOUT, async {
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line).await?;
                if n == 0 {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "shell exited during startup",
                    ));
                }
                if let Some(rest) = line.trim_end().strip_prefix(&ready) {
                    let pid = rest.trim_end_matches("__").parse::<u32>().map_err(|e| {
                        std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
                    })?;
                    return Ok(pid);
                }
            }
        })
        .await
        .map_err(|_| SandboxError::Session("shell did not become ready".into()))?
        .map_err(|e| SandboxError::Session(e.to_string()))?;

        let collector = Arc::new(Mutex::new(Collector::default()));
        let notify = Arc::new(Notify::new());
        let reader = tokio::spawn(read_loop(reader, collector.clone(), notify.clone()));
        Ok(Self {
            child,
            stdin,
            collector,
            notify,
            shell_pid,
            pending: false,
            seq: 0,
            nonce,
            reader,
            dead: false,
        })
    }

    pub fn has_pending(&self) -> bool {
        self.pending
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    /// Pid of the shell inside the container.
    pub fn shell_pid(&self) -> u32 {
        self.shell_pid
    }

    pub(crate) async fn run(
        &mut self,
        command: &str,
        soft_timeout: Duration,
        limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        let started = Instant::now();
        self.seq += 1;
        let tag = format!("{SENTINEL_PREFIX}{}_{}_RC=", self.nonce, self.seq);
        self.collector.lock().reset(format!("\n{tag}").into_bytes(), limit);
        let script = format!(
            "eval {} </dev/null\n__sbx_rc=$?; printf '\\n{tag}%d__\\n' \"$__sbx_rc\"\n",
            ansi_c_quote(command)
        );
        if let Err(err) = self.stdin.write_all(script.as_bytes()).await {
            self.dead = true;
            return Err(SandboxError::Session(format!("shell stdin closed: {err}")));
        }
        self.stdin.flush().await.ok();
        self.pending = true;
        self.wait(started, soft_timeout, limit).await
    }

    pub(crate) async fn wait_more(
        &mut self,
        extra: Duration,
        limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        let started = Instant::now();
        self.collector.lock().cap = limit;
        self.wait(started, extra, limit).await
    }

    pub(crate) async fn interrupt(
        &mut self,
        runtime: &dyn ContainerRuntime,
        id: &SandboxId,
        limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        let started = Instant::now();
        self.collector.lock().cap = limit;
        self.signal_tree(runtime, id, "INT").await;
        let mut outcome = self.wait(started, INTERRUPT_GRACE, limit).await?;
        if self.pending {
            self.signal_tree(runtime, id, "KILL").await;
            let more = self.wait(started, KILL_GRACE, limit).await?;
            outcome = merge(outcome, more);
        }
        if self.pending {
            // The shell itself is busy (a builtin loop); replace it.
            self.dead = true;
            self.pending = false;
            outcome.shell_restarted = true;
            outcome.exit_status = None;
        }
        outcome.interrupted = true;
        outcome.timed_out = true;
        outcome.wall = started.elapsed();
        Ok(outcome)
    }

    async fn signal_tree(&self, runtime: &dyn ContainerRuntime, id: &SandboxId, signal: &str) {
        self.signal(runtime, id, signal, false).await
    }

    async fn signal(&self, runtime: &dyn ContainerRuntime, id: &SandboxId, signal: &str, with_shell: bool) {
        let mut argv = vec![
            "sh".to_string(),
            "-c".to_string(),
            SIGNAL_TREE_SCRIPT.to_string(),
            "sh".to_string(),
            signal.to_string(),
            self.shell_pid.to_string(),
        ];
        if with_shell {
            argv.push("self".to_string());
        }
        if let Err(err) = runtime.exec(id, &argv, None).await {
            tracing::warn!(sandbox = %id, "signalling command tree failed: {err}");
        }
    }

    async fn wait(
        &mut self,
        started: Instant,
        budget: Duration,
        limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        let deadline = tokio::time::Instant::from_std(started + budget);
        loop {
            let notified = self.notify.notified();
            {
                let mut c = self.collector.lock();
                if let Some((body, produced, status)) = c.take_done(limit) {
                    self.pending = false;
                    let (output, truncated) = render(&body, produced, limit);
                    return Ok(ExecOutcome {
                        output,
                        exit_status: Some(status),
                        timed_out: false,
                        truncated,
                        interrupted: false,
                        shell_restarted: false,
                        output_bytes: produced,
                        wall: started.elapsed(),
                    });
                }
                if c.eof {
                    let (body, produced) = c.take_partial(limit);
                    self.pending = false;
                    self.dead = true;
                    let (mut output, truncated) = render(&body, produced, limit);
                    output.push_str("\n<shell exited; a new session was started>\n");
                    return Ok(ExecOutcome {
                        output,
                        exit_status: None,
                        timed_out: false,
                        truncated,
                        interrupted: false,
                        shell_restarted: true,
                        output_bytes: produced,
                        wall: started.elapsed(),
                    });
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                let (body, produced) = self.collector.lock().take_partial(limit);
                let (output, truncated) = render(&body, produced, limit);
                return Ok(ExecOutcome {
                    output,
                    exit_status: None,
                    timed_out: true,
                    truncated,
                    interrupted: false,
                    shell_restarted: false,
                    output_bytes: produced,
                    wall: started.elapsed(),
                });
            }
        }
    }

    /// Kills the shell and anything it started.
    pub(crate) async fn terminate(mut self, runtime: &dyn ContainerRuntime, id: &SandboxId) {
        if self.pending || self.dead {
            self.signal(runtime, id, "KILL", true).await;
        }
        let _ = self.stdin.shutdown().await;
        let _ = self.child.start_kill();
        let _ = tokio::time::timeout(Duration::from_secs(2), self.child.wait()).await;
        self.reader.abort();
    }
}

fn merge(first: ExecOutcome, second: ExecOutcome) -> ExecOutcome {
    let mut text = first.output;
    text.push_str(&second.output);
    let produced = first.output_bytes + second.output_bytes;
    let truncated = first.truncated || second.truncated;
    ExecOutcome {
        output: text,
        exit_status: second.exit_status,
        timed_out: second.timed_out,
        truncated,
        interrupted: false,
        shell_restarted: second.shell_restarted,
        output_bytes: produced,
        wall: second.wall,
    }
}

async fn read_loop<R>(mut reader: R, collector: Arc<Mutex<Collector>>, notify: Arc<Notify>)
where
    R: tokio::io::AsyncRead + Unpin,
{
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        match reader.read(&mut buf).await {
            Ok(0) | Err(_) => {
                collector.lock().eof = true;
                notify.notify_one();
                return;
            }
            Ok(n) => {
                collector.lock().push(&buf[..n]);
                notify.notify_one();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finish(c: &mut Collector, body: &[u8], status: i32) {
        let marker = c.marker.clone().unwrap();
        c.push(body);
        let mut line = marker;
        line.extend_from_slice(format!("{status}__\n").as_bytes());
        c.push(&line);
    }

    #[test]
    fn collector_finds_sentinel_and_keeps_body_exact() {
        let mut c = Collector::default();
        c.reset(b"\n__SBX_x_1_RC=".to_vec(), 1024);
        finish(&mut c, b"hello\n", 0);
        let (body, len, status) = c.take_done(1024).unwrap();
        assert_eq!(body, b"hello\n");
        assert_eq!(len, 6);
        assert_eq!(status, 0);
    }

    #[test]
    fn collector_sentinel_split_across_chunks() {
        let mut c = Collector::default();
        c.reset(b"\n__SBX_x_1_RC=".to_vec(), 1024);
        c.push(b"abc\n__SB");
        assert!(c.done.is_none());
        c.push(b"X_x_1_RC=1");
        assert!(c.done.is_none());
        c.push(b"27__\n");
        let (body, len, status) = c.take_done(1024).unwrap();
        assert_eq!((body.as_slice(), len, status), (&b"abc"[..], 3, 127));
    }

    #[test]
    fn collector_cuts_at_limit() {
        let limit = 100;
        let mut c = Collector::default();
        c.reset(b"\n__SBX_y_2_RC=".to_vec(), limit);
        let big: Vec<u8> = (0..10_000u32).map(|i| b'a' + (i % 26) as u8).collect();
        for chunk in big.chunks(333) {
            c.push(chunk);
        }
        finish(&mut c, b"", 0);
        let (body, len, _) = c.take_done(limit).unwrap();
        assert_eq!(len, 10_000);
        assert_eq!(body, &big[..limit]);
        let (text, truncated) = render(&body, len, limit);
        assert!(truncated);
        assert_eq!(text.len(), limit + truncation_marker(9_900).len());
    }

    #[test]
    fn partial_windows_restart_counting() {
        let mut c = Collector::default();
        c.reset(b"\n__SBX_z_3_RC=".to_vec(), 64);
        c.push(b"first part ");
        let (body, produced) = c.take_partial(64);
        assert_eq!(body, b"first part ");
        assert_eq!(produced, 11);
        finish(&mut c, b"second", 0);
        let (body, len, _) = c.take_done(64).unwrap();
        assert_eq!((body.as_slice(), len), (&b"second"[..], 6));
    }

    #[test]
    fn ansi_quote_escapes_quotes_and_controls() {
        assert_eq!(ansi_c_quote("echo 'a'\n"), "$'echo \\x27a\\x27\\x0a'");
        assert_eq!(ansi_c_quote("a\\b"), "$'a\\x5cb'");
    }
}
