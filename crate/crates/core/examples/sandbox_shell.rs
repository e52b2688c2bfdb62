//! A persistent shell in a namespace sandbox: state carries across commands,
//! and a slow command hands control back at the soft timeout.
//!
//! cargo run --example sandbox_shell

use std::sync::Arc;
use std::time::Duration;

use sandbox_rollout::sandbox::{NamespaceRuntime, PendingDirective, SandboxConfig, SandboxFleet};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    NamespaceRuntime::probe()?;
    let state = tempfile::tempdir()?;
    let runtime = Arc::new(NamespaceRuntime::new(state.path())?);
    let fleet = SandboxFleet::new(runtime, SandboxConfig { network_enabled: false, ..Default::default() })?;
    let mut sb = fleet.create().await?;
    println!("sandbox {}", sb.id());

    let limit = 16 * 1024;
    let soft = Duration::from_secs(2);
    sb.exec_command("export NAME=sandbox; cd /testbed", soft, limit).await?;
    let out = sb.exec_command("echo \"hello from $NAME in $(pwd)\"", soft, limit).await?;
    print!("{}", out.output);

    let out = sb.exec_command("for i in 1 2 3; do echo tick $i; sleep 1; done", soft, limit).await?;
    println!("timed out: {} after {:?}, so far: {:?}", out.timed_out, out.wall, out.output);
    let out = sb.resolve_pending(PendingDirective::Continue(Duration::from_secs(5)), limit).await?;
    println!("continued: exit {:?}, rest: {:?}", out.exit_status, out.output);

    sb.exec_command("sleep 60", soft, limit).await?;
    let out = sb.resolve_pending(PendingDirective::Interrupt, limit).await?;
    println!("interrupted: {}", out.interrupted);

    sb.destroy().await?;
    Ok(())
}
