//! The node service: owns the ledger, chain state, metadata store and
//! report-signing key, and exposes every operation the HTTP API serves.
//!
//! `Node` itself is single-threaded; callers wrap it in a lock so that writes
//! (`submit`, `put_metadata`, `snapshot`) are serialized and reads run against
//! a consistent view.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::canonical::{self, hex_bytes};
use crate::cas::{CasError, CasStore, Cid};
use crate::chainstate::{CertificateRecord, ChainState, Event, Role, StateDocument, Stats};
use crate::identity::{Address, KeyPair, SignedTransaction, TxHash};
use crate::ledger::{Block, ChainAudit, HeadSummary, Ledger, LedgerError, TxReceipt};
use crate::verifier::{VerificationReport, Verifier, VerifyError, VerifyQuery};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8650";
pub const DEFAULT_MAX_CLOCK_SKEW: u64 = 86_400;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 64;

const LEDGER_FILE: &str = "ledger.log";
const SNAPSHOT_FILE: &str = "state.snapshot";
const GENESIS_FILE: &str = "genesis.json";
const BLOB_DIR: &str = "blobs";

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("corrupt ledger: {0}")]
    CorruptLedger(String),
    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
    #[error("bad signature on transaction {0}")]
    BadSignature(TxHash),
    #[error("nonce replay: sender {sender} nonce {nonce} is not above last accepted {last}")]
    NonceReplay { sender: Address, nonce: u64, last: u64 },
    #[error("transaction timestamp {timestamp} is more than {bound}s from node time {now}")]
    ClockSkew { timestamp: u64, now: u64, bound: u64 },
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Metadata(#[from] CasError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl From<LedgerError> for NodeError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::BadSignature(h) => NodeError::BadSignature(h),
            LedgerError::NonceReplay { sender, nonce, last } => {
                NodeError::NonceReplay { sender, nonce, last }
            }
            LedgerError::Malformed { .. } => NodeError::CorruptLedger(e.to_string()),
            LedgerError::NotFound => NodeError::NotFound("ledger entry".into()),
            other => NodeError::StorageFailure(other.to_string()),
        }
    }
}

impl NodeError {
    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            NodeError::ConfigInvalid(_) => "ConfigInvalid",
            NodeError::CorruptLedger(_) => "CorruptLedger",
            NodeError::SnapshotMismatch(_) => "SnapshotMismatch",
            NodeError::BadSignature(_) => "BadSignature",
            NodeError::NonceReplay { .. } => "NonceReplay",
            NodeError::ClockSkew { .. } => "ClockSkew",
            NodeError::NotFound(_) => "NotFound",
            NodeError::Metadata(CasError::TooLarge(_)) => "TooLarge",
            NodeError::Metadata(CasError::NotFound(_)) => "NotFound",
            NodeError::Metadata(CasError::IntegrityFailure(_)) => "IntegrityFailure",
            NodeError::Metadata(CasError::InvalidCid(_)) => "InvalidCid",
            NodeError::Metadata(CasError::SchemaViolation(_)) => "SchemaViolation",
            NodeError::Metadata(CasError::StorageFailure(_)) => "StorageFailure",
            NodeError::Verify(VerifyError::NodeUnconfigured) => "NodeUnconfigured",
            NodeError::StorageFailure(_) => "StorageFailure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Seal a block once this many transactions are pending.
    pub block_interval: usize,
    pub signing_key: Option<PathBuf>,
    /// Required on first boot; must match the recorded genesis afterwards.
    pub government: Option<Address>,
    pub max_clock_skew: u64,
    /// Write a state snapshot every this many blocks (0 disables).
    pub snapshot_every: u64,
}

impl NodeConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: DEFAULT_LISTEN.into(),
            data_dir: data_dir.into(),
            block_interval: 1,
            signing_key: None,
            government: None,
            max_clock_skew: DEFAULT_MAX_CLOCK_SKEW,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        if self.block_interval == 0 {
            return Err(NodeError::ConfigInvalid("block_interval must be >= 1".into()));
        }
        fs::create_dir_all(&self.data_dir).map_err(|e| {
            NodeError::ConfigInvalid(format!("data dir {}: {e}", self.data_dir.display()))
        })?;
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| {
                NodeError::ConfigInvalid(format!(
                    "data dir {} is not writable: {e}",
                    self.data_dir.display()
                ))
            })
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub receipt: TxReceipt,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleResponse {
    pub address: Address,
    pub role: Role,
    pub next_nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub transaction: SignedTransaction,
    pub receipt: TxReceipt,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRootResponse {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<u64>,
    #[serde(with = "hex_bytes")]
    pub state_root: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataPutResponse {
    pub cid: Cid,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub height: u64,
    pub state: StateDocument,
    #[serde(with = "hex_bytes")]
    pub state_root: [u8; 32],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenesisFile {
    government: Address,
}

pub struct Node {
    config: NodeConfig,
    ledger: Ledger,
    state: ChainState,
    store: CasStore,
    signer: Option<KeyPair>,
    events: HashMap<TxHash, Vec<Event>>,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("data_dir", &self.config.data_dir)
            .field("ledger", &self.ledger)
            .finish_non_exhaustive()
    }
}

impl Node {
    /// Boots from `config.data_dir`. An empty directory gets a fresh genesis;
    /// otherwise the ledger is audited and replayed, and the result is checked
    /// against the last snapshot.
    pub fn boot(config: NodeConfig) -> Result<Self, NodeError> {
        config.validate()?;
        let government = resolve_government(&config)?;
        let signer = match &config.signing_key {
            Some(path) => Some(
                KeyPair::load(path).map_err(|e| NodeError::ConfigInvalid(e.to_string()))?,
            ),
            None => None,
        };
        let store = CasStore::open(config.data_dir.join(BLOB_DIR))
            .map_err(|e| NodeError::StorageFailure(e.to_string()))?;
        let mut ledger = Ledger::open(&config.data_dir.join(LEDGER_FILE))?;
        let audit = ledger.verify_chain();
        if !audit.ok {
            return Err(NodeError::CorruptLedger(format!(
                "audit failed at height {:?}: {:?}",
                audit.first_bad_height, audit.reason
            )));
        }
        if ledger.height().is_none() {
            if ledger.pending_len() > 0 {
                return Err(NodeError::CorruptLedger(
                    "transactions recorded before genesis".into(),
                ));
            }
            ledger.seal_block(unix_now())?;
        }

        let snapshot = read_snapshot(&config.data_dir.join(SNAPSHOT_FILE));
        if let Some(snap) = &snapshot {
            if Some(snap.height) > ledger.height() {
                return Err(NodeError::SnapshotMismatch(format!(
                    "snapshot at height {} is ahead of ledger head {:?}",
                    snap.height,
                    ledger.height()
                )));
            }
        }

        let mut state = ChainState::new();
        state
            .init_genesis(government)
            .expect("fresh state accepts genesis");
        let mut events = HashMap::new();
        let heights: Vec<u64> = ledger.blocks().map(|b| b.height).collect();
        for height in heights {
            for tx in ledger.block_transactions(height) {
                events.insert(tx.tx_hash(), state.apply(tx, height));
            }
            if let Some(snap) = &snapshot {
                if snap.height == height && state.state_root().0 != snap.state_root {
                    return Err(NodeError::SnapshotMismatch(format!(
                        "replayed state root {} differs from snapshot at height {height}",
                        state.state_root()
                    )));
                }
            }
        }
        let mut node = Self {
            config,
            ledger,
            state,
            store,
            signer,
            events,
        };
        // a crash between appending a transaction and sealing its block
        if node.ledger.pending_len() >= node.config.block_interval {
            node.seal_pending(unix_now())?;
        }
        tracing::info!(
            height = ?node.ledger.height(),
            pending = node.ledger.pending_len(),
            state_root = %node.state.state_root(),
            "node booted"
        );
        Ok(node)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn signer_public_key(&self) -> Option<[u8; 32]> {
        self.signer.as_ref().map(KeyPair::public_key)
    }

    pub fn submit(&mut self, tx: SignedTransaction) -> Result<SubmitResponse, NodeError> {
        self.submit_at(tx, unix_now())
    }

    /// Append → seal (per block interval) → apply.
    pub fn submit_at(&mut self, tx: SignedTransaction, now: u64) -> Result<SubmitResponse, NodeError> {
        let bound = self.config.max_clock_skew;
        if tx.timestamp.abs_diff(now) > bound {
            return Err(NodeError::ClockSkew {
                timestamp: tx.timestamp,
                now,
                bound,
            });
        }
        let mut receipt = self.ledger.append(tx)?;
        if self.ledger.pending_len() >= self.config.block_interval {
            self.seal_pending(now)?;
            if let Some((_, sealed)) = self.ledger.transaction(&receipt.tx_hash) {
                receipt = sealed;
            }
        }
        let events = self.events.get(&receipt.tx_hash).cloned().unwrap_or_default();
        Ok(SubmitResponse { receipt, events })
    }

    /// Seals whatever is pending; returns `None` if nothing was.
    pub fn seal_pending(&mut self, now: u64) -> Result<Option<Block>, NodeError> {
        if self.ledger.pending_len() == 0 {
            return Ok(None);
        }
        let block = self.ledger.seal_block(now)?;
        let txs: Vec<SignedTransaction> =
            self.ledger.block_transactions(block.height).cloned().collect();
        for tx in &txs {
            let events = self.state.apply(tx, block.height);
            self.events.insert(tx.tx_hash(), events);
        }
        let every = self.config.snapshot_every;
        if every > 0 && block.height % every == 0 {
            self.snapshot()?;
        }
        Ok(Some(block))
    }

    /// Writes the canonical state and its root atomically (temp file + rename).
    pub fn snapshot(&self) -> Result<PathBuf, NodeError> {
        let storage = |e: io::Error| NodeError::StorageFailure(e.to_string());
        let snap = SnapshotFile {
            height: self.ledger.height().unwrap_or(0),
            state: self.state.to_document(),
            state_root: self.state.state_root().0,
        };
        let bytes = canonical::to_canonical(&snap).expect("snapshots are representable");
        let path = self.config.data_dir.join(SNAPSHOT_FILE);
        let tmp = self.config.data_dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = fs::File::create(&tmp).map_err(storage)?;
            f.write_all(&bytes).map_err(storage)?;
            f.sync_all().map_err(storage)?;
        }
        fs::rename(&tmp, &path).map_err(storage)?;
        Ok(path)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.config.data_dir.join(SNAPSHOT_FILE)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.config.data_dir.join(LEDGER_FILE)
    }

    pub fn role(&self, address: &Address) -> RoleResponse {
        RoleResponse {
            address: *address,
            role: self.state.role_of(address),
            next_nonce: self.ledger.next_nonce(address),
        }
    }

    pub fn certificate(&self, issuer: &Address, cert_id: &str) -> Result<CertificateRecord, NodeError> {
        self.state
            .certificate(issuer, cert_id)
            .cloned()
            .ok_or_else(|| NodeError::NotFound(format!("certificate {issuer}/{cert_id}")))
    }

    pub fn verify(&self, query: &VerifyQuery) -> Result<VerificationReport, NodeError> {
        self.verify_at(query, unix_now())
    }

    pub fn verify_at(&self, query: &VerifyQuery, now: u64) -> Result<VerificationReport, NodeError> {
        let verifier = Verifier {
            state: &self.state,
            store: &self.store,
            ledger_height: self.ledger.height().unwrap_or(0),
            signer: self.signer.as_ref(),
        };
        Ok(verifier.verify(query, now)?)
    }

    pub fn put_metadata(&self, content: &[u8]) -> Result<MetadataPutResponse, NodeError> {
        let cid = self.store.put(content)?;
        Ok(MetadataPutResponse {
            cid,
            size: content.len() as u64,
        })
    }

    pub fn get_metadata(&self, cid: &Cid) -> Result<Vec<u8>, NodeError> {
        Ok(self.store.get(cid)?)
    }

    pub fn block(&self, height: u64) -> Result<Block, NodeError> {
        self.ledger
            .block(height)
            .cloned()
            .ok_or_else(|| NodeError::NotFound(format!("block {height}")))
    }

    pub fn transaction(&self, hash: &TxHash) -> Result<TxView, NodeError> {
        let (tx, receipt) = self
            .ledger
            .transaction(hash)
            .ok_or_else(|| NodeError::NotFound(format!("transaction {hash}")))?;
        Ok(TxView {
            transaction: tx.clone(),
            receipt,
            events: self.events.get(hash).cloned().unwrap_or_default(),
        })
    }

    pub fn head(&self) -> HeadSummary {
        self.ledger.head()
    }

    pub fn state_root(&self) -> StateRootResponse {
        StateRootResponse {
            height: self.ledger.height(),
            state_root: self.state.state_root().0,
        }
    }

    pub fn stats(&self) -> Stats {
        self.state.stats()
    }

    pub fn audit(&self) -> ChainAudit {
        self.ledger.verify_chain()
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn store(&self) -> &CasStore {
        &self.store
    }
}

fn resolve_government(config: &NodeConfig) -> Result<Address, NodeError> {
    let path = config.data_dir.join(GENESIS_FILE);
    match fs::read(&path) {
        Ok(bytes) => {
            let recorded: GenesisFile = serde_json::from_slice(&bytes).map_err(|e| {
                NodeError::ConfigInvalid(format!("{}: {e}", path.display()))
            })?;
            match config.government {
                Some(g) if g != recorded.government => Err(NodeError::ConfigInvalid(format!(
                    "configured government {g} differs from genesis government {}",
                    recorded.government
                ))),
                _ => Ok(recorded.government),
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let government = config.government.ok_or_else(|| {
                NodeError::ConfigInvalid("government address is required on first boot".into())
            })?;
            let ledger_exists = fs::metadata(config.data_dir.join(LEDGER_FILE))
                .map(|m| m.len() > 0)
                .unwrap_or(false);
            if ledger_exists {
                return Err(NodeError::ConfigInvalid(format!(
                    "{} is missing but a ledger exists",
                    path.display()
                )));
            }
            let bytes = canonical::to_canonical(&GenesisFile { government })
                .expect("genesis is representable");
            fs::write(&path, bytes).map_err(|e| NodeError::StorageFailure(e.to_string()))?;
            Ok(government)
        }
        Err(e) => Err(NodeError::StorageFailure(e.to_string())),
    }
}

/// A snapshot that cannot be parsed or is internally inconsistent is ignored
/// and the node falls back to full replay.
fn read_snapshot(path: &Path) -> Option<SnapshotFile> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return None,
        Err(e) => {
            tracing::warn!(error = %e, "snapshot unreadable; replaying from genesis");
            return None;
        }
    };
    match parse_snapshot(&bytes) {
        Ok(snap) => Some(snap),
        Err(e) => {
            tracing::warn!(error = %e, "ignoring snapshot; replaying from genesis");
            None
        }
    }
}

/// Parses and self-checks a snapshot file.
pub fn parse_snapshot(bytes: &[u8]) -> Result<SnapshotFile, NodeError> {
    let snap: SnapshotFile = canonical::from_canonical(bytes)
        .map_err(|e| NodeError::SnapshotMismatch(e.to_string()))?;
    let state = ChainState::from_document(snap.state.clone())
        .map_err(|e| NodeError::SnapshotMismatch(e.to_string()))?;
    if state.state_root().0 != snap.state_root {
        return Err(NodeError::SnapshotMismatch(
            "state root does not match snapshot contents".into(),
        ));
    }
    Ok(snap)
}

/// Restores chain state directly from a snapshot file.
pub fn restore_snapshot(path: &Path) -> Result<(u64, ChainState), NodeError> {
    let bytes = fs::read(path).map_err(|e| NodeError::SnapshotMismatch(e.to_string()))?;
    let snap = parse_snapshot(&bytes)?;
    let state = ChainState::from_document(snap.state)
        .map_err(|e| NodeError::SnapshotMismatch(e.to_string()))?;
    Ok((snap.height, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::{canonicalize_metadata, MetadataDocument, METADATA_SCHEMA};
    use crate::identity::{sign_transaction, TxPayload};
    use crate::verifier::ReportStatus;

    const T0: u64 = 1_760_000_000;

    fn key(b: u8) -> KeyPair {
        KeyPair::generate(Some(&[b; 32])).unwrap()
    }

    fn config(dir: &Path) -> NodeConfig {
        let key_path = dir.join("node.key");
        if !key_path.exists() {
            key(99).save(&key_path).unwrap();
        }
        let mut c = NodeConfig::new(dir.join("data"));
        c.signing_key = Some(key_path);
        c.government = Some(key(1).address());
        c
    }

    struct Actors {
        g: KeyPair,
        r: KeyPair,
        i: KeyPair,
    }

    fn actors() -> Actors {
        Actors { g: key(1), r: key(2), i: key(3) }
    }

    fn send(node: &mut Node, k: &KeyPair, p: TxPayload) -> SubmitResponse {
        let nonce = node.role(&k.address()).next_nonce;
        node.submit_at(sign_transaction(k, p, nonce, T0), T0).unwrap()
    }

    fn onboard(node: &mut Node, a: &Actors) {
        send(node, &a.g, TxPayload::AuthorizeRegulator { regulator: a.r.address() });
        send(
            node,
            &a.r,
            TxPayload::RegisterInstitution { institution: a.i.address(), name: "Dhaka University".into() },
        );
    }

    fn metadata(cert_id: &str, issuer: &Address) -> Vec<u8> {
        canonicalize_metadata(&MetadataDocument {
            schema: METADATA_SCHEMA.into(),
            cert_id: cert_id.into(),
            student_name: "Student".into(),
            student_id_hash: "00".repeat(32),
            degree: "BSc".into(),
            field_of_study: "CSE".into(),
            institution_address: issuer.to_string(),
            institution_name: "Dhaka University".into(),
            issue_date: "2025-01-01".into(),
            grade: None,
            extra: Default::default(),
        })
        .unwrap()
    }

    fn issue(node: &mut Node, a: &Actors, cert_id: &str) -> SubmitResponse {
        let put = node.put_metadata(&metadata(cert_id, &a.i.address())).unwrap();
        send(
            node,
            &a.i,
            TxPayload::IssueCertificate {
                cert_id: cert_id.into(),
                cid: put.cid,
                metadata_hash: *put.cid.digest(),
            },
        )
    }

    #[test]
    fn fresh_boot_creates_genesis() {
        let dir = tempfile::tempdir().unwrap();
        let node = Node::boot(config(dir.path())).unwrap();
        assert_eq!(node.head().height, Some(0));
        assert_eq!(node.role(&key(1).address()).role, Role::Government);
        assert!(node.audit().ok);
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.block_interval = 0;
        assert!(matches!(Node::boot(c), Err(NodeError::ConfigInvalid(_))));

        let mut c = config(dir.path());
        c.government = None;
        assert!(matches!(Node::boot(c), Err(NodeError::ConfigInvalid(_))));

        Node::boot(config(dir.path())).unwrap();
        let mut c = config(dir.path());
        c.government = Some(key(5).address());
        assert!(matches!(Node::boot(c), Err(NodeError::ConfigInvalid(_))));
        // government may be omitted once recorded
        let mut c = config(dir.path());
        c.government = None;
        assert!(Node::boot(c).is_ok());
    }

    #[test]
    fn submit_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let mut node = Node::boot(config(dir.path())).unwrap();
        let a = actors();
        onboard(&mut node, &a);
        let out = issue(&mut node, &a, "BSC-2025-001");
        assert!(matches!(out.events[..], [Event::CertificateIssued { .. }]));
        assert_eq!(out.receipt.height, Some(3));
        assert_eq!(out.receipt.index, Some(0));

        let q = VerifyQuery::ById { issuer: a.i.address(), cert_id: "BSC-2025-001".into() };
        assert_eq!(node.verify(&q).unwrap().status, ReportStatus::Valid);

        // public sender: accepted onto the ledger, rejected by policy
        let p = key(30);
        let out = send(&mut node, &p, TxPayload::RevokeCertificate { cert_id: "BSC-2025-001".into(), reason: "x".into() });
        assert!(matches!(out.events[..], [Event::Rejected { .. }]));
        assert!(node.transaction(&out.receipt.tx_hash).is_ok());

        let mut garbage = sign_transaction(&p, TxPayload::RevokeRegulator { regulator: a.r.address() }, 5, T0);
        garbage.signature = [7; 64];
        let height = node.head().height;
        assert!(matches!(node.submit_at(garbage, T0), Err(NodeError::BadSignature(_))));
        assert_eq!(node.head().height, height);
    }

    #[test]
    fn clock_skew_and_replay_are_transport_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut node = Node::boot(config(dir.path())).unwrap();
        let g = key(1);
        let early = sign_transaction(&g, TxPayload::AuthorizeRegulator { regulator: key(2).address() }, 0, T0 - 86_401);
        assert!(matches!(node.submit_at(early, T0), Err(NodeError::ClockSkew { .. })));
        let edge = sign_transaction(&g, TxPayload::AuthorizeRegulator { regulator: key(2).address() }, 0, T0 - 86_400);
        node.submit_at(edge.clone(), T0).unwrap();
        assert!(matches!(node.submit_at(edge, T0), Err(NodeError::NonceReplay { .. })));
    }

    #[test]
    fn restart_replays_to_same_root() {
        let dir = tempfile::tempdir().unwrap();
        let a = actors();
        let root = {
            let mut node = Node::boot(config(dir.path())).unwrap();
            onboard(&mut node, &a);
            for n in 0..8 {
                issue(&mut node, &a, &format!("C-{n}"));
            }
            assert_eq!(node.head().height, Some(10));
            node.state_root()
        };
        let node = Node::boot(config(dir.path())).unwrap();
        assert_eq!(node.state_root(), root);
        assert_eq!(node.stats().issued_total, 8);
    }

    #[test]
    fn block_interval_batches() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.block_interval = 3;
        let mut node = Node::boot(c.clone()).unwrap();
        let g = key(1);
        let mut last = None;
        for n in 0..4u8 {
            let tx = sign_transaction(&g, TxPayload::AuthorizeRegulator { regulator: key(40 + n).address() }, n as u64, T0);
            last = Some(node.submit_at(tx, T0).unwrap());
        }
        assert_eq!(node.head().height, Some(1));
        let pending = last.unwrap();
        assert_eq!(pending.receipt.height, None);
        assert!(pending.events.is_empty());
        drop(node);
        let mut node = Node::boot(c).unwrap();
        assert_eq!(node.head().pending_transactions, 1);
        node.seal_pending(T0).unwrap();
        assert_eq!(node.stats().regulators_active, 4);
    }

    #[test]
    fn corrupt_ledger_aborts_boot() {
        let dir = tempfile::tempdir().unwrap();
        let a = actors();
        let path = {
            let mut node = Node::boot(config(dir.path())).unwrap();
            onboard(&mut node, &a);
            node.ledger_path()
        };
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(Node::boot(config(dir.path())), Err(NodeError::CorruptLedger(_))));
    }

    #[test]
    fn snapshot_restore_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let a = actors();
        let mut node = Node::boot(config(dir.path())).unwrap();
        let genesis_snap = node.snapshot().unwrap();
        let (h, st) = restore_snapshot(&genesis_snap).unwrap();
        assert_eq!(h, 0);
        assert_eq!(st.state_root(), node.state().state_root());

        onboard(&mut node, &a);
        issue(&mut node, &a, "C-1");
        let path = node.snapshot().unwrap();
        let (_, restored) = restore_snapshot(&path).unwrap();
        assert_eq!(restored.state_root(), node.state().state_root());

        // truncated snapshot: rejected on restore, boot falls back to replay
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(restore_snapshot(&path), Err(NodeError::SnapshotMismatch(_))));
        let root = node.state_root();
        drop(node);
        assert_eq!(Node::boot(config(dir.path())).unwrap().state_root(), root);
    }

    #[test]
    fn snapshot_disagreeing_with_replay_aborts_boot() {
        let dir = tempfile::tempdir().unwrap();
        let a = actors();
        let mut node = Node::boot(config(dir.path())).unwrap();
        onboard(&mut node, &a);
        let path = node.snapshot().unwrap();
        // a self-consistent snapshot of a different history
        let mut other = ChainState::new();
        other.init_genesis(key(1).address()).unwrap();
        let fake = SnapshotFile {
            height: node.head().height.unwrap(),
            state: other.to_document(),
            state_root: other.state_root().0,
        };
        fs::write(&path, canonical::to_canonical(&fake).unwrap()).unwrap();
        drop(node);
        assert!(matches!(Node::boot(config(dir.path())), Err(NodeError::SnapshotMismatch(_))));
    }

    #[test]
    fn unconfigured_node_cannot_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.signing_key = None;
        let node = Node::boot(c).unwrap();
        let err = node.verify(&VerifyQuery::MetadataHash([0; 32])).unwrap_err();
        assert_eq!(err.code(), "NodeUnconfigured");
    }
}
