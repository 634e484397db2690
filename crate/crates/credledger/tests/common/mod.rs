#![allow(dead_code)]

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use credledger::client::Client;
use credledger::server::BackgroundServer;
use credledger_core::identity::{Address, KeyPair};
use credledger_core::node::SubmitResponse;
use credledger_core::workload::WorkItem;
use credledger_core::{Node, NodeConfig};

pub const CLI: &str = env!("CARGO_BIN_EXE_credledger");
pub const NODE: &str = env!("CARGO_BIN_EXE_credledger-node");

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map(|a| a.port())
        .expect("ephemeral port")
}

/// In-process node on an ephemeral port with a report signing key.
pub fn start_server(dir: &Path, government: Address) -> BackgroundServer {
    let key_path = dir.join("node.key");
    if !key_path.exists() {
        KeyPair::generate(Some(&[0x5a; 32])).unwrap().save(&key_path).unwrap();
    }
    let mut config = NodeConfig::new(dir.join("data"));
    config.government = Some(government);
    config.signing_key = Some(key_path);
    let node = Node::boot(config).expect("boot");
    BackgroundServer::start(node, "127.0.0.1:0").expect("server")
}

/// Stores the item's metadata (if any) and submits its transaction.
pub fn submit_item(client: &Client, item: &WorkItem) -> SubmitResponse {
    if let Some(meta) = &item.metadata {
        let raw = client.post("/v1/metadata", meta.clone()).expect("metadata transport");
        assert!(raw.is_success(), "metadata rejected: {}", String::from_utf8_lossy(&raw.body));
    }
    client.submit(&item.tx).expect("submit")
}

/// A `credledger-node` child process.
pub struct NodeProcess {
    pub child: Child,
    pub url: String,
    pub data_dir: PathBuf,
}

impl NodeProcess {
    /// Spawns on a free port, retrying if another process grabs it first.
    pub fn spawn(data_dir: &Path, government: Option<Address>, signing_key: Option<&Path>) -> Self {
        for _ in 0..5 {
            let port = free_port();
            let mut cmd = Command::new(NODE);
            cmd.arg("--data-dir")
                .arg(data_dir)
                .arg("--listen")
                .arg(format!("127.0.0.1:{port}"))
                .env("RUST_LOG", "warn")
                .stdout(Stdio::null())
                .stderr(Stdio::null());
            if let Some(g) = government {
                cmd.arg("--government").arg(g.to_string());
            }
            if let Some(k) = signing_key {
                cmd.arg("--signing-key").arg(k);
            }
            let mut p = Self {
                child: cmd.spawn().expect("spawn node"),
                url: format!("http://127.0.0.1:{port}"),
                data_dir: data_dir.to_path_buf(),
            };
            if p.wait_ready() {
                return p;
            }
        }
        panic!("node failed to start in {}", data_dir.display());
    }

    fn wait_ready(&mut self) -> bool {
        let client = Client::new(&self.url).unwrap();
        let deadline = Instant::now() + Duration::from_secs(20);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return false;
            }
            if client.get("/v1/head").map(|r| r.is_success()).unwrap_or(false) {
                return true;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        panic!("node at {} did not become ready", self.url);
    }

    pub fn client(&self) -> Client {
        Client::new(&self.url).unwrap()
    }

    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// SIGTERM and wait; returns the exit code.
    pub fn terminate(mut self) -> Option<i32> {
        let _ = Command::new("kill")
            .arg("-TERM")
            .arg(self.child.id().to_string())
            .status();
        self.child.wait().ok().and_then(|s| s.code())
    }
}

impl Drop for NodeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs a node binary to completion (for boot failures).
pub fn run_node_to_exit(data_dir: &Path, government: Option<Address>) -> Output {
    let mut cmd = Command::new(NODE);
    cmd.arg("--data-dir")
        .arg(data_dir)
        .arg("--listen")
        .arg(format!("127.0.0.1:{}", free_port()))
        .env("RUST_LOG", "error");
    if let Some(g) = government {
        cmd.arg("--government").arg(g.to_string());
    }
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline {
        if child.try_wait().unwrap().is_some() {
            return child.wait_with_output().unwrap();
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    let _ = child.kill();
    let _ = child.wait();
    panic!("node did not exit");
}

pub fn cli(url: &str, args: &[&str]) -> Output {
    Command::new(CLI)
        .args(args)
        .env("CREDLEDGER_URL", url)
        .output()
        .expect("run cli")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
