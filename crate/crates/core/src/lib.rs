//! Core of the CredLedger permissioned credential ledger.
//!
//! * [`identity`] keys, addresses and signed transactions
//! * [`ledger`] append-only hash-chained log sealed into Merkle-rooted blocks
//! * [`chainstate`] role registry and certificate state machine
//! * [`cas`] content-addressed metadata store with CIDv1 identifiers
//! * [`verifier`] verification pipeline, signed reports, QR payloads
//! * [`node`] the service tying them together
//! * [`workload`] seeded generator of valid transaction sequences

pub mod canonical;
pub mod cas;
pub mod chainstate;
pub mod identity;
pub mod ledger;
pub mod node;
pub mod verifier;
pub mod workload;

pub use cas::{CasStore, Cid, MetadataDocument};
pub use chainstate::{CertStatus, ChainState, Event, RejectReason, Role};
pub use identity::{Address, KeyPair, SignedTransaction, TxHash, TxPayload};
pub use ledger::{Block, ChainAudit, Ledger};
pub use node::{Node, NodeConfig, NodeError};
pub use verifier::{ReportStatus, VerificationReport, VerifyQuery};
