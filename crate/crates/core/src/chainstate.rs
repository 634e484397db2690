//! Registry and certificate state machine driven by ledger order.
//!
//! State is derived only by replaying sealed transactions through
//! [`ChainState::apply`]. A transaction that breaks a rule yields a
//! `Rejected` event and leaves the state untouched; it still stays on the
//! ledger.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::canonical::{self, hex_bytes, CanonicalError};
use crate::cas::Cid;
use crate::identity::{Address, SignedTransaction, TxPayload};

pub const MAX_CERT_ID_LEN: usize = 128;
pub const MAX_NAME_LEN: usize = 256;
pub const MAX_REASON_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Government,
    Regulator,
    Institution,
    Public,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Government,
        Role::Regulator,
        Role::Institution,
        Role::Public,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorEntry {
    pub active: bool,
    pub authorized_by: Address,
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstitutionEntry {
    pub name: String,
    pub active: bool,
    pub registered_by: Address,
    pub since: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertStatus {
    Valid,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateRecord {
    pub cert_id: String,
    pub issuer: Address,
    pub cid: Cid,
    #[serde(with = "hex_bytes")]
    pub metadata_hash: [u8; 32],
    pub issued_at: u64,
    pub status: CertStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revoked_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    Unauthorized,
    RoleConflict,
    BadName,
    NotFound,
    DuplicateId,
    CidMismatch,
    BadId,
    AlreadyRevoked,
    BadReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Event {
    RegulatorAuthorized {
        regulator: Address,
        by: Address,
    },
    RegulatorRevoked {
        regulator: Address,
        by: Address,
    },
    InstitutionRegistered {
        institution: Address,
        name: String,
        by: Address,
    },
    InstitutionDeactivated {
        institution: Address,
        by: Address,
    },
    CertificateIssued {
        issuer: Address,
        cert_id: String,
        cid: Cid,
    },
    CertificateRevoked {
        issuer: Address,
        cert_id: String,
        reason: String,
    },
    Rejected {
        reason: RejectReason,
    },
}

impl Event {
    pub fn is_rejected(&self) -> bool {
        matches!(self, Event::Rejected { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("state already initialized")]
    AlreadyInitialized,
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateRoot(pub [u8; 32]);

impl std::fmt::Display for StateRoot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstitutionStats {
    pub name: String,
    pub issued: u64,
    pub revoked: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub issued_total: u64,
    pub revoked_total: u64,
    pub institutions_active: u64,
    pub regulators_active: u64,
    pub per_institution: BTreeMap<Address, InstitutionStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CertLookup {
    Valid(CertificateRecord),
    Revoked(CertificateRecord),
    Unknown,
}

impl CertLookup {
    pub fn record(&self) -> Option<&CertificateRecord> {
        match self {
            CertLookup::Valid(r) | CertLookup::Revoked(r) => Some(r),
            CertLookup::Unknown => None,
        }
    }
}

/// Full state in canonical shape; certificate keys are `"<issuer>/<cert_id>"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub government: Option<Address>,
    pub regulators: BTreeMap<Address, RegulatorEntry>,
    pub institutions: BTreeMap<Address, InstitutionEntry>,
    pub certificates: BTreeMap<String, CertificateRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct ChainState {
    government: Option<Address>,
    regulators: BTreeMap<Address, RegulatorEntry>,
    institutions: BTreeMap<Address, InstitutionEntry>,
    certificates: BTreeMap<(Address, String), CertificateRecord>,
    // derived indexes, not part of the state root
    by_metadata_hash: HashMap<[u8; 32], (Address, String)>,
    cert_ids: HashSet<String>,
    stats: Stats,
}

pub fn valid_cert_id(id: &str) -> bool {
    (1..=MAX_CERT_ID_LEN).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init_genesis(&mut self, government: Address) -> Result<(), StateError> {
        if self.government.is_some() {
            return Err(StateError::AlreadyInitialized);
        }
        self.government = Some(government);
        Ok(())
    }

    pub fn government(&self) -> Option<Address> {
        self.government
    }

    pub fn role_of(&self, address: &Address) -> Role {
        if self.government.as_ref() == Some(address) {
            Role::Government
        } else if self.regulators.get(address).is_some_and(|r| r.active) {
            Role::Regulator
        } else if self.institutions.get(address).is_some_and(|i| i.active) {
            Role::Institution
        } else {
            Role::Public
        }
    }

    pub fn regulator(&self, address: &Address) -> Option<&RegulatorEntry> {
        self.regulators.get(address)
    }

    pub fn institution(&self, address: &Address) -> Option<&InstitutionEntry> {
        self.institutions.get(address)
    }

    pub fn regulators(&self) -> impl Iterator<Item = (&Address, &RegulatorEntry)> {
        self.regulators.iter()
    }

    pub fn institutions(&self) -> impl Iterator<Item = (&Address, &InstitutionEntry)> {
        self.institutions.iter()
    }

    pub fn certificates(&self) -> impl Iterator<Item = &CertificateRecord> {
        self.certificates.values()
    }

    /// Applies one sealed transaction. `height` is the block it was sealed into.
    pub fn apply(&mut self, tx: &SignedTransaction, height: u64) -> Vec<Event> {
        let event = self.dispatch(tx).unwrap_or_else(|reason| Event::Rejected { reason });
        if let Event::Rejected { reason } = &event {
            tracing::debug!(height, tx = %tx.tx_hash(), ?reason, "transaction rejected");
        }
        vec![event]
    }

    fn dispatch(&mut self, tx: &SignedTransaction) -> Result<Event, RejectReason> {
        let sender = tx.sender;
        let at = tx.timestamp;
        match &tx.payload {
            TxPayload::AuthorizeRegulator { regulator } => {
                self.authorize_regulator(sender, *regulator, at)
            }
            TxPayload::RevokeRegulator { regulator } => self.revoke_regulator(sender, *regulator),
            TxPayload::RegisterInstitution { institution, name } => {
                self.register_institution(sender, *institution, name, at)
            }
            TxPayload::DeactivateInstitution { institution } => {
                self.deactivate_institution(sender, *institution)
            }
            TxPayload::IssueCertificate {
                cert_id,
                cid,
                metadata_hash,
            } => self.issue_certificate(sender, cert_id, *cid, *metadata_hash, at),
            TxPayload::RevokeCertificate { cert_id, reason } => {
                self.revoke_certificate(sender, cert_id, reason, at)
            }
        }
    }

    fn require(&self, sender: &Address, role: Role) -> Result<(), RejectReason> {
        if self.role_of(sender) == role {
            Ok(())
        } else {
            Err(RejectReason::Unauthorized)
        }
    }

    fn authorize_regulator(
        &mut self,
        sender: Address,
        regulator: Address,
        at: u64,
    ) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Government)?;
        if self.role_of(&regulator) != Role::Public {
            return Err(RejectReason::RoleConflict);
        }
        self.regulators.insert(
            regulator,
            RegulatorEntry {
                active: true,
                authorized_by: sender,
                since: at,
            },
        );
        self.stats.regulators_active += 1;
        Ok(Event::RegulatorAuthorized {
            regulator,
            by: sender,
        })
    }

    fn revoke_regulator(&mut self, sender: Address, regulator: Address) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Government)?;
        match self.regulators.get_mut(&regulator) {
            Some(entry) if entry.active => {
                entry.active = false;
                self.stats.regulators_active -= 1;
                Ok(Event::RegulatorRevoked {
                    regulator,
                    by: sender,
                })
            }
            _ => Err(RejectReason::NotFound),
        }
    }

    fn register_institution(
        &mut self,
        sender: Address,
        institution: Address,
        name: &str,
        at: u64,
    ) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Regulator)?;
        if self.role_of(&institution) != Role::Public {
            return Err(RejectReason::RoleConflict);
        }
        if name.trim().is_empty() || name.chars().count() > MAX_NAME_LEN {
            return Err(RejectReason::BadName);
        }
        self.institutions.insert(
            institution,
            InstitutionEntry {
                name: name.to_string(),
                active: true,
                registered_by: sender,
                since: at,
            },
        );
        self.stats.institutions_active += 1;
        self.stats
            .per_institution
            .entry(institution)
            .or_default()
            .name = name.to_string();
        Ok(Event::InstitutionRegistered {
            institution,
            name: name.to_string(),
            by: sender,
        })
    }

    fn deactivate_institution(
        &mut self,
        sender: Address,
        institution: Address,
    ) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Regulator)?;
        match self.institutions.get_mut(&institution) {
            Some(entry) if entry.active => {
                entry.active = false;
                self.stats.institutions_active -= 1;
                Ok(Event::InstitutionDeactivated {
                    institution,
                    by: sender,
                })
            }
            _ => Err(RejectReason::NotFound),
        }
    }

    fn issue_certificate(
        &mut self,
        sender: Address,
        cert_id: &str,
        cid: Cid,
        metadata_hash: [u8; 32],
        at: u64,
    ) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Institution)?;
        if !valid_cert_id(cert_id) {
            return Err(RejectReason::BadId);
        }
        let key = (sender, cert_id.to_string());
        if self.certificates.contains_key(&key) {
            return Err(RejectReason::DuplicateId);
        }
        if *cid.digest() != metadata_hash {
            return Err(RejectReason::CidMismatch);
        }
        self.certificates.insert(
            key.clone(),
            CertificateRecord {
                cert_id: cert_id.to_string(),
                issuer: sender,
                cid,
                metadata_hash,
                issued_at: at,
                status: CertStatus::Valid,
                revoked_at: None,
                revocation_reason: None,
            },
        );
        self.by_metadata_hash.entry(metadata_hash).or_insert(key);
        self.cert_ids.insert(cert_id.to_string());
        self.stats.issued_total += 1;
        self.stats.per_institution.entry(sender).or_default().issued += 1;
        Ok(Event::CertificateIssued {
            issuer: sender,
            cert_id: cert_id.to_string(),
            cid,
        })
    }

    fn revoke_certificate(
        &mut self,
        sender: Address,
        cert_id: &str,
        reason: &str,
        at: u64,
    ) -> Result<Event, RejectReason> {
        self.require(&sender, Role::Institution)?;
        if reason.chars().count() > MAX_REASON_LEN {
            return Err(RejectReason::BadReason);
        }
        let Some(record) = self.certificates.get_mut(&(sender, cert_id.to_string())) else {
            // Someone else's certificate: issuer-only revocation.
            return Err(if self.cert_ids.contains(cert_id) {
                RejectReason::Unauthorized
            } else {
                RejectReason::NotFound
            });
        };
        if record.status == CertStatus::Revoked {
            return Err(RejectReason::AlreadyRevoked);
        }
        record.status = CertStatus::Revoked;
        record.revoked_at = Some(at);
        record.revocation_reason = Some(reason.to_string());
        self.stats.revoked_total += 1;
        self.stats.per_institution.entry(sender).or_default().revoked += 1;
        Ok(Event::CertificateRevoked {
            issuer: sender,
            cert_id: cert_id.to_string(),
            reason: reason.to_string(),
        })
    }

    pub fn verify_certificate(&self, issuer: &Address, cert_id: &str) -> CertLookup {
        match self.certificates.get(&(*issuer, cert_id.to_string())) {
            Some(r) if r.status == CertStatus::Valid => CertLookup::Valid(r.clone()),
            Some(r) => CertLookup::Revoked(r.clone()),
            None => CertLookup::Unknown,
        }
    }

    pub fn certificate(&self, issuer: &Address, cert_id: &str) -> Option<&CertificateRecord> {
        self.certificates.get(&(*issuer, cert_id.to_string()))
    }

    /// Earliest-issued certificate committing to this metadata hash.
    pub fn certificate_by_metadata_hash(&self, hash: &[u8; 32]) -> Option<&CertificateRecord> {
        self.by_metadata_hash
            .get(hash)
            .and_then(|k| self.certificates.get(k))
    }

    pub fn certificate_by_cid(&self, cid: &Cid) -> Option<&CertificateRecord> {
        self.certificate_by_metadata_hash(cid.digest())
    }

    pub fn stats(&self) -> Stats {
        self.stats.clone()
    }

    pub fn to_document(&self) -> StateDocument {
        StateDocument {
            government: self.government,
            regulators: self.regulators.clone(),
            institutions: self.institutions.clone(),
            certificates: self
                .certificates
                .iter()
                .map(|((issuer, id), r)| (format!("{issuer}/{id}"), r.clone()))
                .collect(),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical(&self.to_document()).expect("state is representable")
    }

    pub fn state_root(&self) -> StateRoot {
        StateRoot(canonical::sha256(&self.canonical_bytes()))
    }

    /// Rebuilds state (and its derived indexes) from a snapshot document.
    pub fn from_document(doc: StateDocument) -> Result<Self, StateError> {
        let mut state = ChainState {
            government: doc.government,
            regulators: doc.regulators,
            institutions: doc.institutions,
            ..Default::default()
        };
        state.stats.regulators_active = state.regulators.values().filter(|r| r.active).count() as u64;
        state.stats.institutions_active =
            state.institutions.values().filter(|i| i.active).count() as u64;
        for (addr, inst) in &state.institutions {
            state.stats.per_institution.entry(*addr).or_default().name = inst.name.clone();
        }
        let mut records: Vec<CertificateRecord> = Vec::with_capacity(doc.certificates.len());
        for (key, record) in doc.certificates {
            if key != format!("{}/{}", record.issuer, record.cert_id) {
                return Err(StateError::InvalidSnapshot(format!("certificate key {key:?}")));
            }
            records.push(record);
        }
        // the hash index keeps the earliest issuance; ties resolved by key order
        records.sort_by(|a, b| {
            (a.issued_at, a.issuer, &a.cert_id).cmp(&(b.issued_at, b.issuer, &b.cert_id))
        });
        for r in records {
            let key = (r.issuer, r.cert_id.clone());
            state.by_metadata_hash.entry(r.metadata_hash).or_insert(key.clone());
            state.cert_ids.insert(r.cert_id.clone());
            state.stats.issued_total += 1;
            let per = state.stats.per_institution.entry(r.issuer).or_default();
            per.issued += 1;
            if r.status == CertStatus::Revoked {
                state.stats.revoked_total += 1;
                per.revoked += 1;
            }
            state.certificates.insert(key, r);
        }
        Ok(state)
    }
}
