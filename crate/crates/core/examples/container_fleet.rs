//! A fleet with a live-sandbox cap, idle reaping, and a leak check. Set
//! `RUNTIME=docker` to run the same thing against the docker CLI.
//!
//! cargo run --example container_fleet

use std::sync::Arc;
use std::time::Duration;

use sandbox_rollout::sandbox::{ContainerRuntime, DockerRuntime, NamespaceRuntime, SandboxConfig, SandboxFleet};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let state = tempfile::tempdir()?;
    let (runtime, image): (Arc<dyn ContainerRuntime>, &str) = match std::env::var("RUNTIME").as_deref() {
        Ok("docker") => (Arc::new(DockerRuntime::new("docker")), "python:3.12-slim"),
        _ => {
            NamespaceRuntime::probe()?;
            (Arc::new(NamespaceRuntime::new(state.path())?), "host")
        }
    };
    let config = SandboxConfig { image: image.into(), idle_ttl_secs: 1, network_enabled: false, ..Default::default() };
    let fleet = SandboxFleet::new(runtime, config)?.with_capacity(4);

    let mut handles = Vec::new();
    for i in 0..8 {
        let fleet = fleet.clone();
        handles.push(tokio::spawn(async move {
            let mut sb = fleet.create().await?;
            sb.write_file("/testbed/output/who.txt", format!("worker {i}").as_bytes()).await?;
            let mine = String::from_utf8_lossy(&sb.read_file("/testbed/output/who.txt").await?).into_owned();
            let live = fleet.live_ids().len();
            sb.destroy().await?;
            Ok::<_, sandbox_rollout::sandbox::SandboxError>((mine, live))
        }));
    }
    for h in handles {
        let (mine, live) = h.await??;
        println!("{mine}: saw {live} live sandboxes (cap 4)");
    }

    let idle = fleet.create().await?;
    println!("left {} idle", idle.id());
    tokio::time::sleep(Duration::from_millis(1500)).await;
    println!("reaped: {:?}", fleet.reap_idle().await);
    drop(idle);
    tokio::time::sleep(Duration::from_millis(500)).await;
    println!("containers left in the runtime: {}", fleet.runtime_containers().await?.len());
    Ok(())
}
