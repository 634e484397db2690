//! Append-only, hash-chained transaction log.
//!
//! Accepted transactions wait in a pending set until [`Ledger::seal_block`]
//! drains them into a block committing to their hashes through a Merkle root.
//! On disk the log is a sequence of records, each a 4-byte big-endian length
//! followed by the canonical encoding of either a transaction or a block
//! header, in commit order.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::{self, hex_bytes};
use crate::identity::{verify_transaction, Address, SignedTransaction, TxHash};

pub const ZERO_HASH: [u8; 32] = [0u8; 32];

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("bad signature on transaction {0}")]
    BadSignature(TxHash),
    #[error("nonce replay: sender {sender} nonce {nonce} is not above last accepted {last}")]
    NonceReplay { sender: Address, nonce: u64, last: u64 },
    #[error("nothing to seal")]
    NothingToSeal,
    #[error("not found")]
    NotFound,
    #[error("malformed ledger record at byte offset {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("ledger i/o: {0}")]
    Io(#[from] io::Error),
}

/// Merkle root over an ordered list of hashes.
///
/// Leaves are used as given. Each level concatenates pairs and hashes them
/// with SHA-256, duplicating an odd trailing node. The empty list commits to
/// SHA-256 of the empty string; a single leaf `h` to SHA-256(h || h).
pub fn merkle_root(hashes: &[[u8; 32]]) -> [u8; 32] {
    if hashes.is_empty() {
        return canonical::sha256(b"");
    }
    let mut level: Vec<[u8; 32]> = hashes.to_vec();
    loop {
        if level.len() % 2 == 1 {
            level.push(*level.last().expect("non-empty"));
        }
        level = level
            .chunks_exact(2)
            .map(|pair| {
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(&pair[0]);
                buf[32..].copy_from_slice(&pair[1]);
                canonical::sha256(&buf)
            })
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    #[serde(with = "hex_bytes")]
    pub prev_hash: [u8; 32],
    pub tx_hashes: Vec<TxHash>,
    #[serde(with = "hex_bytes")]
    pub merkle_root: [u8; 32],
    pub sealed_at: u64,
    #[serde(with = "hex_bytes")]
    pub block_hash: [u8; 32],
}

#[derive(Serialize)]
struct BlockHashBody<'a> {
    height: u64,
    prev_hash: String,
    merkle_root: String,
    sealed_at: u64,
    tx_hashes: &'a [TxHash],
}

impl Block {
    pub fn compute_hash(
        height: u64,
        prev_hash: &[u8; 32],
        merkle_root: &[u8; 32],
        sealed_at: u64,
        tx_hashes: &[TxHash],
    ) -> [u8; 32] {
        let body = BlockHashBody {
            height,
            prev_hash: hex::encode(prev_hash),
            merkle_root: hex::encode(merkle_root),
            sealed_at,
            tx_hashes,
        };
        canonical::sha256(&canonical::to_canonical(&body).expect("block headers are representable"))
    }

    pub fn recompute_hash(&self) -> [u8; 32] {
        Self::compute_hash(
            self.height,
            &self.prev_hash,
            &self.merkle_root,
            self.sealed_at,
            &self.tx_hashes,
        )
    }

    pub fn recompute_merkle_root(&self) -> [u8; 32] {
        let leaves: Vec<[u8; 32]> = self.tx_hashes.iter().map(|h| h.0).collect();
        merkle_root(&leaves)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxReceipt {
    pub tx_hash: TxHash,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditFailure {
    PrevHashMismatch,
    MerkleMismatch,
    BlockHashMismatch,
    TxHashMismatch,
    SignatureInvalid,
    NonceReplay,
    MalformedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainAudit {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub first_bad_height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<AuditFailure>,
    pub blocks: u64,
    pub transactions: u64,
}

impl ChainAudit {
    fn failed(height: u64, reason: AuditFailure, blocks: u64, transactions: u64) -> Self {
        Self {
            ok: false,
            first_bad_height: Some(height),
            reason: Some(reason),
            blocks,
            transactions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSummary {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default, with = "opt_hex")]
    pub block_hash: Option<[u8; 32]>,
    pub sealed_transactions: u64,
    pub pending_transactions: u64,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_str(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; 32]>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| super::hex_bytes::parse::<32>(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub enum Selector {
    TxHash(TxHash),
    Height(u64),
    Head,
}

pub enum QueryResult<'a> {
    Transaction(&'a SignedTransaction, TxReceipt),
    Block(&'a Block),
    Head(HeadSummary),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Tx { tx: SignedTransaction },
    Block { block: Block },
}

#[derive(Debug, Clone)]
struct StoredTx {
    /// Canonical record bytes exactly as persisted.
    raw: Vec<u8>,
    tx: SignedTransaction,
    hash: TxHash,
    location: Option<(u64, u32)>,
}

#[derive(Debug, Clone)]
struct StoredBlock {
    block: Block,
    txs: Range<usize>,
}

struct LogFile {
    path: PathBuf,
    file: File,
}

impl LogFile {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        let len = u32::try_from(record.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record too large"))?;
        let mut buf = Vec::with_capacity(4 + record.len());
        buf.extend_from_slice(&len.to_be_bytes());
        buf.extend_from_slice(record);
        self.file.write_all(&buf)?;
        self.file.sync_data()
    }
}

/// The transaction log. Writes go through `&mut self`; the owning node
/// serializes them.
#[derive(Default)]
pub struct Ledger {
    blocks: Vec<StoredBlock>,
    txs: Vec<StoredTx>,
    by_hash: HashMap<TxHash, usize>,
    pending_from: usize,
    last_nonce: HashMap<Address, u64>,
    log: Option<LogFile>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("blocks", &self.blocks.len())
            .field("txs", &self.txs.len())
            .field("pending", &self.pending_len())
            .field("path", &self.log.as_ref().map(|l| l.path.clone()))
            .finish()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a ledger file. Records must parse and be canonical;
    /// hash links are left to [`Ledger::verify_chain`].
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut ledger = Self::decode(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        ledger.log = Some(LogFile {
            path: path.to_path_buf(),
            file,
        });
        Ok(ledger)
    }

    /// Rebuilds a ledger from serialized records without persisting anything.
    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut ledger = Self::default();
        let mut offset = 0usize;
        while offset < bytes.len() {
            let malformed = |detail: String| LedgerError::Malformed { offset, detail };
            if bytes.len() - offset < 4 {
                return Err(malformed("truncated length prefix".into()));
            }
            let len = u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
            let start = offset + 4;
            let end = start
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| malformed(format!("record length {len} runs past end of file")))?;
            let raw = &bytes[start..end];
            let record: Record =
                canonical::from_canonical(raw).map_err(|e| malformed(e.to_string()))?;
            match record {
                Record::Tx { tx } => ledger.push_tx(raw.to_vec(), tx),
                Record::Block { block } => ledger.push_block(block),
            }
            offset = end;
        }
        Ok(ledger)
    }

    /// Serializes every record in commit order, as it appears on disk.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |rec: &[u8]| {
            out.extend_from_slice(&(rec.len() as u32).to_be_bytes());
            out.extend_from_slice(rec);
        };
        let mut next_tx = 0;
        for sb in &self.blocks {
            for tx in &self.txs[next_tx..sb.txs.end] {
                push(&tx.raw);
            }
            next_tx = sb.txs.end;
            push(&encode_record(&Record::Block {
                block: sb.block.clone(),
            }));
        }
        for tx in &self.txs[next_tx..] {
            push(&tx.raw);
        }
        out
    }

    fn push_tx(&mut self, raw: Vec<u8>, tx: SignedTransaction) {
        let hash = tx.tx_hash();
        let last = self.last_nonce.entry(tx.sender).or_insert(tx.nonce);
        *last = (*last).max(tx.nonce);
        self.by_hash.entry(hash).or_insert(self.txs.len());
        self.txs.push(StoredTx {
            raw,
            tx,
            hash,
            location: None,
        });
    }

    fn push_block(&mut self, block: Block) {
        let range = self.pending_from..self.txs.len();
        for (i, idx) in range.clone().enumerate() {
            self.txs[idx].location = Some((block.height, i as u32));
        }
        self.pending_from = range.end;
        self.blocks.push(StoredBlock { block, txs: range });
    }

    pub fn next_nonce(&self, sender: &Address) -> u64 {
        self.last_nonce.get(sender).map_or(0, |n| n + 1)
    }

    pub fn last_nonce(&self, sender: &Address) -> Option<u64> {
        self.last_nonce.get(sender).copied()
    }

    /// Validates signature and nonce, then records the transaction as pending.
    pub fn append(&mut self, tx: SignedTransaction) -> Result<TxReceipt, LedgerError> {
        let hash = tx.tx_hash();
        if !verify_transaction(&tx) {
            return Err(LedgerError::BadSignature(hash));
        }
        if let Some(&last) = self.last_nonce.get(&tx.sender) {
            if tx.nonce <= last {
                return Err(LedgerError::NonceReplay {
                    sender: tx.sender,
                    nonce: tx.nonce,
                    last,
                });
            }
        }
        let raw = encode_record(&Record::Tx { tx: tx.clone() });
        if let Some(log) = self.log.as_mut() {
            log.append(&raw)?;
        }
        self.push_tx(raw, tx);
        Ok(TxReceipt {
            tx_hash: hash,
            height: None,
            index: None,
        })
    }

    pub fn pending_len(&self) -> usize {
        self.txs.len() - self.pending_from
    }

    pub fn pending(&self) -> impl Iterator<Item = &SignedTransaction> {
        self.txs[self.pending_from..].iter().map(|s| &s.tx)
    }

    /// Drains all pending transactions into a new block. An empty block is
    /// only allowed as genesis.
    pub fn seal_block(&mut self, now: u64) -> Result<Block, LedgerError> {
        if !self.blocks.is_empty() && self.pending_len() == 0 {
            return Err(LedgerError::NothingToSeal);
        }
        let (height, prev_hash) = match self.blocks.last() {
            Some(sb) => (sb.block.height + 1, sb.block.block_hash),
            None => (0, ZERO_HASH),
        };
        let tx_hashes: Vec<TxHash> = self.txs[self.pending_from..]
            .iter()
            .map(|s| s.hash)
            .collect();
        let leaves: Vec<[u8; 32]> = tx_hashes.iter().map(|h| h.0).collect();
        let root = merkle_root(&leaves);
        let block_hash = Block::compute_hash(height, &prev_hash, &root, now, &tx_hashes);
        let block = Block {
            height,
            prev_hash,
            tx_hashes,
            merkle_root: root,
            sealed_at: now,
            block_hash,
        };
        if let Some(log) = self.log.as_mut() {
            log.append(&encode_record(&Record::Block {
                block: block.clone(),
            }))?;
        }
        self.push_block(block.clone());
        Ok(block)
    }

    pub fn height(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.block.height)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().map(|sb| &sb.block)
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        usize::try_from(height)
            .ok()
            .and_then(|h| self.blocks.get(h))
            .map(|sb| &sb.block)
    }

    /// Transactions committed in the block at `height`, in block order.
    pub fn block_transactions(&self, height: u64) -> impl Iterator<Item = &SignedTransaction> {
        let range = usize::try_from(height)
            .ok()
            .and_then(|h| self.blocks.get(h))
            .map_or(0..0, |sb| sb.txs.clone());
        self.txs[range].iter().map(|s| &s.tx)
    }

    pub fn transaction(&self, hash: &TxHash) -> Option<(&SignedTransaction, TxReceipt)> {
        let stored = &self.txs[*self.by_hash.get(hash)?];
        Some((
            &stored.tx,
            TxReceipt {
                tx_hash: stored.hash,
                height: stored.location.map(|l| l.0),
                index: stored.location.map(|l| l.1),
            },
        ))
    }

    pub fn head(&self) -> HeadSummary {
        HeadSummary {
            height: self.height(),
            block_hash: self.blocks.last().map(|b| b.block.block_hash),
            sealed_transactions: self.pending_from as u64,
            pending_transactions: self.pending_len() as u64,
        }
    }

    pub fn query(&self, selector: Selector) -> Result<QueryResult<'_>, LedgerError> {
        match selector {
            Selector::TxHash(h) => self
                .transaction(&h)
                .map(|(tx, r)| QueryResult::Transaction(tx, r))
                .ok_or(LedgerError::NotFound),
            Selector::Height(h) => self.block(h).map(QueryResult::Block).ok_or(LedgerError::NotFound),
            Selector::Head => Ok(QueryResult::Head(self.head())),
        }
    }

    /// Recomputes every transaction hash, Merkle root, block hash and
    /// predecessor link from the stored record bytes.
    pub fn verify_chain(&self) -> ChainAudit {
        let blocks = self.blocks.len() as u64;
        let transactions = self.txs.len() as u64;
        let fail = |h: u64, r: AuditFailure| ChainAudit::failed(h, r, blocks, transactions);
        let mut seen: HashSet<TxHash> = HashSet::new();
        let mut nonces: HashMap<Address, u64> = HashMap::new();

        let mut check_tx = |stored: &StoredTx| -> Result<TxHash, AuditFailure> {
            let record: Record = canonical::from_canonical(&stored.raw)
                .map_err(|_| AuditFailure::MalformedRecord)?;
            let Record::Tx { tx } = record else {
                return Err(AuditFailure::MalformedRecord);
            };
            let hash = TxHash(canonical::sha256(
                &tx.signing_bytes().map_err(|_| AuditFailure::MalformedRecord)?,
            ));
            if !verify_transaction(&tx) {
                return Err(AuditFailure::SignatureInvalid);
            }
            if !seen.insert(hash) {
                return Err(AuditFailure::NonceReplay);
            }
            if let Some(last) = nonces.insert(tx.sender, tx.nonce) {
                if tx.nonce <= last {
                    return Err(AuditFailure::NonceReplay);
                }
            }
            Ok(hash)
        };

        let mut prev: Option<&Block> = None;
        for (i, sb) in self.blocks.iter().enumerate() {
            let b = &sb.block;
            let expected_prev = prev.map_or(ZERO_HASH, |p| p.block_hash);
            if b.height != i as u64 || b.prev_hash != expected_prev {
                return fail(i as u64, AuditFailure::PrevHashMismatch);
            }
            let stored = &self.txs[sb.txs.clone()];
            if stored.len() != b.tx_hashes.len() {
                return fail(b.height, AuditFailure::TxHashMismatch);
            }
            for (s, committed) in stored.iter().zip(&b.tx_hashes) {
                match check_tx(s) {
                    Ok(h) if h == *committed => {}
                    Ok(_) => return fail(b.height, AuditFailure::TxHashMismatch),
                    Err(reason) => return fail(b.height, reason),
                }
            }
            if b.recompute_merkle_root() != b.merkle_root {
                return fail(b.height, AuditFailure::MerkleMismatch);
            }
            if b.recompute_hash() != b.block_hash {
                return fail(b.height, AuditFailure::BlockHashMismatch);
            }
            prev = Some(b);
        }
        let pending_height = blocks;
        for s in &self.txs[self.pending_from..] {
            if let Err(reason) = check_tx(s) {
                return fail(pending_height, reason);
            }
        }
        ChainAudit {
            ok: true,
            first_bad_height: None,
            reason: None,
            blocks,
            transactions,
        }
    }

    #[cfg(test)]
    fn raw_tx_mut(&mut self, index: usize) -> &mut Vec<u8> {
        &mut self.txs[index].raw
    }

    #[cfg(test)]
    fn block_mut(&mut self, height: usize) -> &mut Block {
        &mut self.blocks[height].block
    }
}

fn encode_record(record: &Record) -> Vec<u8> {
    canonical::to_canonical(record).expect("ledger records are representable")
}

/// Decodes serialized ledger bytes and audits them. Undecodable input counts
/// as a failed audit.
pub fn audit_bytes(bytes: &[u8]) -> ChainAudit {
    match Ledger::decode(bytes) {
        Ok(ledger) => ledger.verify_chain(),
        Err(_) => ChainAudit::failed(0, AuditFailure::MalformedRecord, 0, 0),
    }
}
