//! Local container runtime built on Linux namespaces.
//!
//! Each sandbox is a private mount and pid namespace whose root is an
//! overlay of the image (the host root for `host`, or an unpacked rootfs
//! for `rootfs:/path`) with a per-sandbox upper layer. The workspace root is
//! a bind mount of an empty per-sandbox directory. Writes never reach the
//! image. Requires root, util-linux `unshare`/`nsenter`, and overlayfs.

use std::collections::HashMap;
use std::ffi::CString;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};

use super::runtime::run_with_stdin;
use super::{ContainerRuntime, ExecOutput, SandboxConfig, SandboxError, SandboxId};

const CGROUP_GROUP: &str = "sandbox-rollout";
const EXEC_TIMEOUT: Duration = Duration::from_secs(120);
const START_TIMEOUT: Duration = Duration::from_secs(20);
const SANDBOX_PATH: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

const SETUP_SCRIPT: &str = r#"set -e
d="$1"; lower="$2"; ws="$3"; hide="$4"
m="$d/merged"
mount -t overlay overlay -o "lowerdir=$lower,upperdir=$d/up,workdir=$d/work" "$m"
mkdir -p "$m/dev" "$m/proc" "$m$ws"
mount --rbind /dev "$m/dev"
mount -t proc proc "$m/proc"
mount --bind "$d/ws" "$m$ws"
if [ -d "$m$hide" ]; then mount -t tmpfs -o size=1m,mode=0700 tmpfs "$m$hide"; fi
exec unshare --root="$m" --wd=/ bash --noprofile --norc -c 'echo __SBX_INIT_READY__; exec >/dev/null 2>&1 </dev/null; while :; do sleep 3600 & wait $!; done'
"#;

#[derive(Debug)]
struct Container {
    launcher: Child,
    init_pid: u32,
    dir: PathBuf,
    cgroups: Cgroups,
}

#[derive(Debug, Default, Clone)]
struct Cgroups {
    dirs: Vec<PathBuf>,
    peak_file: Option<PathBuf>,
}

impl Cgroups {
    fn procs_files(&self) -> Vec<CString> {
        self.dirs
            .iter()
            .filter_map(|d| CString::new(d.join("cgroup.procs").into_os_string().into_encoded_bytes()).ok())
            .collect()
    }
}

/// Runtime that hosts sandboxes as namespaces on the local machine.
#[derive(Debug)]
pub struct NamespaceRuntime {
    state_root: PathBuf,
    containers: Mutex<HashMap<SandboxId, Container>>,
}

impl NamespaceRuntime {
    /// Uses `state_root` for per-sandbox layers; it must not be on an overlay filesystem.
    pub fn new(state_root: impl Into<PathBuf>) -> Result<Self, SandboxError> {
        let state_root = state_root.into();
        std::fs::create_dir_all(&state_root)?;
        let state_root = state_root.canonicalize()?;
        Ok(Self { state_root, containers: Mutex::new(HashMap::new()) })
    }

    pub fn default_state_root() -> PathBuf {
        PathBuf::from("/var/tmp/sandbox-rollout")
    }

    pub fn state_root(&self) -> &Path {
        &self.state_root
    }

    /// Checks that this machine can host namespace sandboxes.
    pub fn probe() -> Result<(), SandboxError> {
        // SAFETY: geteuid has no preconditions.
        if unsafe { libc::geteuid() } != 0 {
            return Err(SandboxError::RuntimeUnreachable(
                "namespace runtime needs root privileges".into(),
            ));
        }
        for tool in ["unshare", "nsenter", "mount"] {
            if which(tool).is_none() {
                return Err(SandboxError::RuntimeUnreachable(format!("`{tool}` not found on PATH")));
            }
        }
        let fs = std::fs::read_to_string("/proc/filesystems").unwrap_or_default();
        if !fs.lines().any(|l| l.trim_end().ends_with("overlay")) {
            return Err(SandboxError::RuntimeUnreachable("kernel lacks overlayfs".into()));
        }
        Ok(())
    }

    /// Host pid of the container's init process.
    pub fn init_pid(&self, id: &SandboxId) -> Option<u32> {
        self.containers.lock().get(id).map(|c| c.init_pid)
    }

    fn lower_dir(image: &str) -> Result<PathBuf, SandboxError> {
        let lower = match image {
            "host" => PathBuf::from("/"),
            other => match other.strip_prefix("rootfs:") {
                Some(path) => PathBuf::from(path),
                None => {
                    return Err(SandboxError::ImageUnavailable(format!(
                        "{other}: namespace runtime accepts `host` or `rootfs:/path`"
                    )))
                }
            },
        };
        if !lower.join("bin/sh").exists() {
            return Err(SandboxError::ImageUnavailable(format!(
                "{} has no /bin/sh",
                lower.display()
            )));
        }
        Ok(lower)
    }

    fn setup_cgroups(&self, id: &SandboxId, config: &SandboxConfig) -> Cgroups {
        let mut groups = Cgroups::default();
        let base = Path::new("/sys/fs/cgroup");
        let v1_memory = base.join("memory");
        if v1_memory.join("memory.limit_in_bytes").exists() {
            let dir = v1_memory.join(CGROUP_GROUP).join(id.as_str());
            if std::fs::create_dir_all(&dir).is_ok()
                && std::fs::write(dir.join("memory.limit_in_bytes"), config.memory_limit_bytes.to_string()).is_ok()
            {
                groups.peak_file = Some(dir.join("memory.max_usage_in_bytes"));
                groups.dirs.push(dir);
            } else {
                tracing::warn!(sandbox = %id, "could not apply memory limit through cgroup v1");
            }
            if let Some(cpu) = config.cpu_limit {
                let dir = base.join("cpu").join(CGROUP_GROUP).join(id.as_str());
                let quota = ((cpu * 100_000.0).round() as i64).max(1_000);
                if std::fs::create_dir_all(&dir).is_ok()
                    && std::fs::write(dir.join("cpu.cfs_period_us"), "100000").is_ok()
                    && std::fs::write(dir.join("cpu.cfs_quota_us"), quota.to_string()).is_ok()
                {
                    groups.dirs.push(dir);
                } else {
                    tracing::warn!(sandbox = %id, "could not apply cpu limit through cgroup v1");
                }
            }
        } else if base.join("cgroup.controllers").exists() {
            let parent = base.join(CGROUP_GROUP);
            let dir = parent.join(id.as_str());
            let ok = std::fs::create_dir_all(&parent).is_ok()
                && std::fs::write(parent.join("cgroup.subtree_control"), "+memory +cpu").is_ok()
                && std::fs::create_dir_all(&dir).is_ok()
                && std::fs::write(dir.join("memory.max"), config.memory_limit_bytes.to_string()).is_ok();
            if ok {
                if let Some(cpu) = config.cpu_limit {
                    let quota = ((cpu * 100_000.0).round() as i64).max(1_000);
                    let _ = std::fs::write(dir.join("cpu.max"), format!("{quota} 100000"));
                }
                groups.peak_file = Some(dir.join("memory.peak"));
                groups.dirs.push(dir);
            } else {
                tracing::warn!(sandbox = %id, "could not apply resource limits through cgroup v2");
            }
        }
        groups
    }

    fn command(&self, program: &str, cgroups: &Cgroups) -> Command {
        let mut cmd = Command::new(program);
        cmd.env_clear()
            .env("PATH", SANDBOX_PATH)
            .env("HOME", "/root")
            .env("LANG", "C.UTF-8");
        let procs = cgroups.procs_files();
        if !procs.is_empty() {
            // SAFETY: the hook only calls async-signal-safe libc functions on
            // buffers prepared before fork.
            unsafe {
                cmd.pre_exec(move || {
                    for path in &procs {
                        let fd = libc::open(path.as_ptr(), libc::O_WRONLY | libc::O_CLOEXEC);
                        if fd >= 0 {
                            libc::write(fd, b"0".as_ptr().cast(), 1);
                            libc::close(fd);
                        }
                    }
                    Ok(())
                });
            }
        }
        cmd
    }

    fn enter_command(&self, id: &SandboxId) -> Result<Command, SandboxError> {
        let guard = self.containers.lock();
        let container = guard.get(id).ok_or_else(|| SandboxError::NotRunning(id.clone()))?;
        let mut cmd = self.command("nsenter", &container.cgroups);
        cmd.arg("-t")
            .arg(container.init_pid.to_string())
            .args(["-m", "-n", "-p", "-r", "-w", "--"]);
        Ok(cmd)
    }
}

#[async_trait]
impl ContainerRuntime for NamespaceRuntime {
    fn name(&self) -> &str {
        "namespace"
    }

    async fn create(&self, id: &SandboxId, config: &SandboxConfig) -> Result<(), SandboxError> {
        Self::probe()?;
        let lower = Self::lower_dir(&config.image)?;
        let dir = self.state_root.join(id.as_str());
        for sub in ["up", "work", "merged", "ws"] {
            tokio::fs::create_dir_all(dir.join(sub)).await?;
        }
        let cgroups = self.setup_cgroups(id, config);

        let mut cmd = self.command("unshare", &cgroups);
        cmd.args(["--mount", "--pid", "--fork", "--kill-child", "--propagation", "private"]);
        if !config.network_enabled {
            cmd.arg("--net");
        }
        cmd.args(["--", "sh", "-c", SETUP_SCRIPT, "sh"])
            .arg(&dir)
            .arg(&lower)
            .arg(&config.workspace_root)
            .arg(&self.state_root)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        let mut launcher = cmd
            .spawn()
            .map_err(|e| SandboxError::RuntimeUnreachable(format!("spawn unshare: {e}")))?;

        let stdout = launcher.stdout.take().expect("stdout piped");
        let ready = tokio::time::timeout(START_TIMEOUT, async {
            let mut lines = BufReader::new(stdout).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim() == "__SBX_INIT_READY__" {
                    return true;
                }
            }
            false
        })
        .await
        .unwrap_or(false);

        let init_pid = launcher.id().and_then(first_child);
        match (ready, init_pid) {
            (true, Some(init_pid)) => {
                self.containers
                    .lock()
                    .insert(id.clone(), Container { launcher, init_pid, dir, cgroups });
                Ok(())
            }
            _ => {
                let mut stderr = String::new();
                if let Some(mut err) = launcher.stderr.take() {
                    use tokio::io::AsyncReadExt;
                    let _ = tokio::time::timeout(Duration::from_secs(1), err.read_to_string(&mut stderr)).await;
                }
                let _ = launcher.start_kill();
                let _ = launcher.wait().await;
                let _ = tokio::fs::remove_dir_all(&dir).await;
                remove_cgroups(&cgroups).await;
                Err(SandboxError::RuntimeUnreachable(format!(
                    "sandbox init failed: {}",
                    stderr.trim()
                )))
            }
        }
    }

    fn shell_command(&self, id: &SandboxId, _config: &SandboxConfig) -> Result<Command, SandboxError> {
        let mut cmd = self.enter_command(id)?;
        cmd.args(["bash", "--noprofile", "--norc"]);
        Ok(cmd)
    }

    async fn exec(
        &self,
        id: &SandboxId,
        argv: &[String],
        stdin: Option<&[u8]>,
    ) -> Result<ExecOutput, SandboxError> {
        let mut cmd = self.enter_command(id)?;
        cmd.args(argv);
        tokio::time::timeout(EXEC_TIMEOUT, run_with_stdin(cmd, stdin))
            .await
            .map_err(|_| SandboxError::Runtime(format!("side-channel command timed out: {argv:?}")))?
    }

    async fn remove(&self, id: &SandboxId) -> Result<(), SandboxError> {
        let container = self.containers.lock().remove(id);
        let dir = match container {
            Some(mut c) => {
                let _ = c.launcher.start_kill();
                // SAFETY: plain kill(2) on a pid we started; ESRCH is harmless.
                unsafe {
                    libc::kill(c.init_pid as libc::pid_t, libc::SIGKILL);
                }
                let _ = tokio::time::timeout(Duration::from_secs(5), c.launcher.wait()).await;
                wait_gone(c.init_pid, Duration::from_secs(5)).await;
                remove_cgroups(&c.cgroups).await;
                c.dir
            }
            None => {
                let dir = self.state_root.join(id.as_str());
                if !dir.exists() {
                    return Err(SandboxError::NotRunning(id.clone()));
                }
                dir
            }
        };
        remove_tree(&dir).await
    }

    async fn list(&self) -> Result<Vec<SandboxId>, SandboxError> {
        let mut ids: Vec<SandboxId> = self.containers.lock().keys().cloned().collect();
        let mut entries = tokio::fs::read_dir(&self.state_root).await?;
        while let Some(entry) = entries.next_entry().await? {
            if let Some(name) = entry.file_name().to_str() {
                if name.starts_with("sbx-") {
                    let id = SandboxId::from(name.to_string());
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    async fn peak_memory_bytes(&self, id: &SandboxId) -> Option<u64> {
        let file = self.containers.lock().get(id)?.cgroups.peak_file.clone()?;
        tokio::fs::read_to_string(file).await.ok()?.trim().parse().ok()
    }
}

impl Drop for NamespaceRuntime {
    fn drop(&mut self) {
        for (_, mut c) in self.containers.lock().drain() {
            let _ = c.launcher.start_kill();
            // SAFETY: see `remove`.
            unsafe {
                libc::kill(c.init_pid as libc::pid_t, libc::SIGKILL);
            }
            let _ = std::fs::remove_dir_all(&c.dir);
        }
    }
}

fn first_child(pid: u32) -> Option<u32> {
    let raw = std::fs::read_to_string(format!("/proc/{pid}/task/{pid}/children")).ok()?;
    raw.split_whitespace().next()?.parse().ok()
}

async fn wait_gone(pid: u32, limit: Duration) {
    let deadline = tokio::time::Instant::now() + limit;
    while alive(pid) && tokio::time::Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

// Zombies keep their /proc entry until reaped, so treat them as gone.
fn alive(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat
            .rsplit_once(')')
            .and_then(|(_, rest)| rest.split_whitespace().next())
            .is_some_and(|state| state != "Z" && state != "X"),
        Err(_) => false,
    }
}

async fn remove_cgroups(groups: &Cgroups) {
    for dir in &groups.dirs {
        for _ in 0..50 {
            if tokio::fs::remove_dir(dir).await.is_ok() || !dir.exists() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

async fn remove_tree(dir: &Path) -> Result<(), SandboxError> {
    let mut last = None;
    for _ in 0..20 {
        match tokio::fs::remove_dir_all(dir).await {
            Ok(()) => return Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => last = Some(e),
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    Err(SandboxError::Runtime(format!(
        "removing {} failed: {}",
        dir.display(),
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn which(tool: &str) -> Option<PathBuf> {
    std::env::var_os("PATH")
        .map(|p| std::env::split_paths(&p).collect::<Vec<_>>())
        .unwrap_or_else(|| SANDBOX_PATH.split(':').map(PathBuf::from).collect())
        .into_iter()
        .map(|dir| dir.join(tool))
        .find(|p| p.is_file())
}
