//! Container runtime driven through a Docker-compatible CLI (`docker`, `podman`).

use std::time::Duration;

use async_trait::async_trait;
use tokio::process::Command;

use super::runtime::run_with_stdin;
use super::{ContainerRuntime, ExecOutput, SandboxConfig, SandboxError, SandboxId};

const LABEL: &str = "sandbox-rollout.managed=1";
const EXEC_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct DockerRuntime {
    binary: String,
}

impl DockerRuntime {
    /// `binary` is the CLI to invoke, e.g. `docker` or `podman`.
    pub fn new(binary: impl Into<String>) -> Self {
        Self { binary: binary.into() }
    }

    fn cli(&self) -> Command {
        let mut cmd = Command::new(&self.binary);
        cmd.kill_on_drop(true);
        cmd
    }

    async fn run(&self, args: &[String]) -> Result<ExecOutput, SandboxError> {
        let mut cmd = self.cli();
        cmd.args(args);
        match tokio::time::timeout(EXEC_TIMEOUT, run_with_stdin(cmd, None)).await {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(SandboxError::Io(e))) if e.kind() == std::io::ErrorKind::NotFound => Err(
                SandboxError::RuntimeUnreachable(format!("`{}` is not installed", self.binary)),
            ),
            Ok(Err(e)) => Err(e),
            Err(_) => Err(SandboxError::RuntimeUnreachable(format!("`{}` timed out", self.binary))),
        }
    }

    pub(crate) fn run_args(id: &SandboxId, config: &SandboxConfig) -> Vec<String> {
        let mut args: Vec<String> = ["run", "-d", "--init", "--name", id.as_str(), "--label", LABEL]
            .iter()
            .map(|s| s.to_string())
            .collect();
        args.push("--memory".into());
        args.push(config.memory_limit_bytes.to_string());
        if let Some(cpu) = config.cpu_limit {
            args.push("--cpus".into());
            args.push(format!("{cpu}"));
        }
        if !config.network_enabled {
            args.push("--network".into());
            args.push("none".into());
        }
        args.push("--workdir".into());
        args.push(config.workspace_root.display().to_string());
        args.push(config.image.clone());
        args.extend(["sleep".to_string(), "infinity".to_string()]);
        args
    }
}

impl Default for DockerRuntime {
    fn default() -> Self {
        Self::new("docker")
    }
}

#[async_trait]
impl ContainerRuntime for DockerRuntime {
    fn name(&self) -> &str {
        "docker"
    }

    async fn create(&self, id: &SandboxId, config: &SandboxConfig) -> Result<(), SandboxError> {
        let probe = self.run(&["version".to_string(), "--format".into(), "{{.Server.Version}}".into()]).await?;
        if !probe.success() {
            return Err(SandboxError::RuntimeUnreachable(
                String::from_utf8_lossy(&probe.stderr).trim().to_string(),
            ));
        }
        let inspect = self
            .run(&["image".to_string(), "inspect".into(), config.image.clone()])
            .await?;
        if !inspect.success() {
            return Err(SandboxError::ImageUnavailable(config.image.clone()));
        }
        let out = self.run(&Self::run_args(id, config)).await?;
        if !out.success() {
            let msg = String::from_utf8_lossy(&out.stderr).trim().to_string();
            return Err(if msg.contains("memory") || msg.contains("cpu") {
                SandboxError::ResourceLimitRejected(msg)
            } else {
                SandboxError::Runtime(msg)
            });
        }
        Ok(())
    }

    fn shell_command(&self, id: &SandboxId, config: &SandboxConfig) -> Result<Command, SandboxError> {
        let mut cmd = self.cli();
        cmd.args(["exec", "-i", "-w"])
            .arg(&config.workspace_root)
            .arg(id.as_str())
            .args(["bash", "--noprofile", "--norc"]);
        Ok(cmd)
    }

    async fn exec(
        &self,
        id: &SandboxId,
        argv: &[String],
        stdin: Option<&[u8]>,
    ) -> Result<ExecOutput, SandboxError> {
        let mut cmd = self.cli();
        cmd.arg("exec");
        if stdin.is_some() {
            cmd.arg("-i");
        }
        cmd.arg(id.as_str()).args(argv);
        tokio::time::timeout(EXEC_TIMEOUT, run_with_stdin(cmd, stdin))
            .await
            .map_err(|_| SandboxError::Runtime("docker exec timed out".into()))?
    }

    async fn remove(&self, id: &SandboxId) -> Result<(), SandboxError> {
        let out = self
            .run(&["rm".to_string(), "-f".into(), "-v".into(), id.as_str().to_string()])
            .await?;
        if out.success() {
            Ok(())
        } else {
            Err(SandboxError::Runtime(String::from_utf8_lossy(&out.stderr).trim().to_string()))
        }
    }

    async fn list(&self) -> Result<Vec<SandboxId>, SandboxError> {
        let out = self
            .run(&[
                "ps".to_string(),
                "-a".into(),
                "--filter".into(),
                format!("label={LABEL}"),
                "--format".into(),
                "{{.Names}}".into(),
            ])
            .await?;
        if !out.success() {
            return Err(SandboxError::RuntimeUnreachable(
                String::from_utf8_lossy(&out.stderr).trim().to_string(),
            ));
        }
        let mut ids: Vec<SandboxId> = String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| SandboxId::from(l.to_string()))
            .collect();
        ids.sort();
        Ok(ids)
    }

    async fn peak_memory_bytes(&self, id: &SandboxId) -> Option<u64> {
        let out = self
            .run(&[
                "exec".to_string(),
                id.as_str().to_string(),
                "sh".into(),
                "-c".into(),
                "cat /sys/fs/cgroup/memory.peak 2>/dev/null || cat /sys/fs/cgroup/memory/memory.max_usage_in_bytes".into(),
            ])
            .await
            .ok()?;
        String::from_utf8_lossy(&out.stdout).trim().parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_args_carry_limits_and_network_switch() {
        let id = SandboxId::from("sbx-test".to_string());
        let config = SandboxConfig {
            image: "sandbox:latest".into(),
            network_enabled: false,
            cpu_limit: Some(1.5),
            memory_limit_bytes: 1 << 30,
            ..Default::default()
        };
        let args = DockerRuntime::run_args(&id, &config);
        let joined = args.join(" ");
        assert!(joined.contains("--memory 1073741824"));
        assert!(joined.contains("--cpus 1.5"));
        assert!(joined.contains("--network none"));
        assert!(joined.ends_with("sandbox:latest sleep infinity"));
    }

    #[tokio::test]
    async fn missing_binary_is_unreachable() {
        let rt = DockerRuntime::new("definitely-not-a-container-cli");
        let id = SandboxId::from("sbx-x".to_string());
        let err = rt.create(&id, &SandboxConfig::default()).await.unwrap_err();
        assert!(matches!(err, SandboxError::RuntimeUnreachable(_)), "{err}");
    }
}
