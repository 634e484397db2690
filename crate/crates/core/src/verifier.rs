//! Public verification pipeline and signed verification reports.
//!
//! A query resolves a certificate record from chain state, then the metadata
//! blob is fetched from the content store and re-hashed. Any disagreement
//! between ledger and blob is reported as `IntegrityFailure`; it is a status
//! like any other, never an error.

use std::fmt;
use std::str::FromStr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{self, hex_bytes};
use crate::cas::{compute_cid, CasStore, Cid, MetadataDocument};
use crate::chainstate::{CertStatus, CertificateRecord, ChainState};
use crate::identity::{verify_signature, Address, KeyPair};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_EXTENSION: &str = "scvr";
pub const QR_PREFIX: &str = "shikkha:verify?";
const MAX_QR_CERT_ID: usize = 128;

/// Everything except RFC 3986 unreserved characters gets escaped.
const CERT_ID_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QrError {
    #[error("not a shikkha:verify URI")]
    BadScheme,
    #[error("unsupported payload version {0:?}")]
    BadVersion(String),
    #[error("malformed component: {0}")]
    MalformedComponent(String),
    #[error("bad component: {0}")]
    BadComponent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("node has no report-signing key configured")]
    NodeUnconfigured,
}

/// The (issuer, cert_id, cid) triple carried by a certificate QR code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrPayload {
    pub issuer: Address,
    pub cert_id: String,
    pub cid: Cid,
}

impl QrPayload {
    pub fn new(issuer: Address, cert_id: impl Into<String>, cid: Cid) -> Result<Self, QrError> {
        let cert_id = cert_id.into();
        check_qr_cert_id(&cert_id).map_err(QrError::BadComponent)?;
        Ok(Self { issuer, cert_id, cid })
    }

    pub fn encode(&self) -> String {
        format!(
            "{QR_PREFIX}v=1&i={}&c={}&d={}",
            self.issuer,
            utf8_percent_encode(&self.cert_id, CERT_ID_ESCAPE),
            self.cid
        )
    }
}

impl fmt::Display for QrPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl FromStr for QrPayload {
    type Err = QrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_qr_payload(s)
    }
}

fn check_qr_cert_id(cert_id: &str) -> Result<(), String> {
    if cert_id.is_empty() {
        return Err("cert_id is empty".into());
    }
    if cert_id.chars().count() > MAX_QR_CERT_ID {
        return Err(format!("cert_id longer than {MAX_QR_CERT_ID} chars"));
    }
    if cert_id.chars().any(char::is_control) {
        return Err("cert_id contains control characters".into());
    }
    Ok(())
}

pub fn encode_qr_payload(issuer: Address, cert_id: &str, cid: Cid) -> Result<String, QrError> {
    Ok(QrPayload::new(issuer, cert_id, cid)?.encode())
}

/// Strict parse: every one of `v`, `i`, `c`, `d` exactly once, nothing else.
pub fn decode_qr_payload(uri: &str) -> Result<QrPayload, QrError> {
    let query = uri.strip_prefix(QR_PREFIX).ok_or(QrError::BadScheme)?;
    let malformed = |m: String| QrError::MalformedComponent(m);
    let (mut v, mut i, mut c, mut d) = (None, None, None, None);
    for pair in query.split('&') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, got {pair:?}")))?;
        let slot = match key {
            "v" => &mut v,
            "i" => &mut i,
            "c" => &mut c,
            "d" => &mut d,
            other => return Err(malformed(format!("unknown key {other:?}"))),
        };
        if slot.replace(value).is_some() {
            return Err(malformed(format!("duplicate key {key:?}")));
        }
    }
    let version = v.ok_or_else(|| malformed("missing v".into()))?;
    if version != "1" {
        return Err(QrError::BadVersion(version.to_string()));
    }
    let issuer = i
        .ok_or_else(|| malformed("missing i".into()))?
        .parse::<Address>()
        .map_err(|e| malformed(e.to_string()))?;
    let cert_id = percent_decode_str(c.ok_or_else(|| malformed("missing c".into()))?)
        .decode_utf8()
        .map_err(|e| malformed(format!("cert_id is not utf-8: {e}")))?
        .into_owned();
    check_qr_cert_id(&cert_id).map_err(malformed)?;
    let cid = d
        .ok_or_else(|| malformed("missing d".into()))?
        .parse::<Cid>()
        .map_err(|e| malformed(e.to_string()))?;
    Ok(QrPayload { issuer, cert_id, cid })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyQuery {
    ById { issuer: Address, cert_id: String },
    MetadataHash([u8; 32]),
    Cid(Cid),
    Qr(QrPayload),
}

/// Normalized echo of the query inside a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryEcho {
    Id {
        issuer: Address,
        cert_id: String,
    },
    MetadataHash {
        #[serde(with = "hex_bytes")]
        metadata_hash: [u8; 32],
    },
    Cid {
        cid: Cid,
    },
    Qr {
        issuer: Address,
        cert_id: String,
        cid: Cid,
    },
}

impl From<&VerifyQuery> for QueryEcho {
    fn from(q: &VerifyQuery) -> Self {
        match q {
            VerifyQuery::ById { issuer, cert_id } => QueryEcho::Id {
                issuer: *issuer,
                cert_id: cert_id.clone(),
            },
            VerifyQuery::MetadataHash(h) => QueryEcho::MetadataHash { metadata_hash: *h },
            VerifyQuery::Cid(cid) => QueryEcho::Cid { cid: *cid },
            VerifyQuery::Qr(p) => QueryEcho::Qr {
                issuer: p.issuer,
                cert_id: p.cert_id.clone(),
                cid: p.cid,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportStatus {
    Valid,
    Revoked,
    Unknown,
    IntegrityFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    pub version: u32,
    pub query_echo: QueryEcho,
    pub status: ReportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer: Option<Address>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub institution_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cid: Option<Cid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<MetadataDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issued_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revoked_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_reason: Option<String>,
    pub ledger_height: u64,
    pub checked_at: u64,
    #[serde(with = "hex_bytes")]
    pub node_public_key: [u8; 32],
    #[serde(with = "hex_bytes")]
    pub signature: [u8; 64],
}

impl VerificationReport {
    /// Canonical encoding of every field except `signature`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut value = serde_json::to_value(self).expect("reports serialize");
        if let Value::Object(map) = &mut value {
            map.remove("signature");
        }
        canonical::value_to_canonical(&value).expect("reports are representable")
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("reports are representable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        canonical::from_canonical(bytes)
    }

    fn sign(&mut self, key: &KeyPair) {
        self.node_public_key = key.public_key();
        self.signature = key.sign(&self.signing_bytes());
    }
}

pub fn check_report(report: &VerificationReport, expected_node_key: Option<&[u8; 32]>) -> bool {
    if expected_node_key.is_some_and(|k| *k != report.node_public_key) {
        return false;
    }
    report.version == REPORT_VERSION
        && verify_signature(
            &report.node_public_key,
            &report.signing_bytes(),
            &report.signature,
        )
}

/// Checks a serialized `.scvr` document. Non-canonical or unparsable bytes fail.
pub fn check_report_bytes(bytes: &[u8], expected_node_key: Option<&[u8; 32]>) -> bool {
    VerificationReport::from_bytes(bytes).is_ok_and(|r| check_report(&r, expected_node_key))
}

/// Read-only view the pipeline runs against.
pub struct Verifier<'a> {
    pub state: &'a ChainState,
    pub store: &'a CasStore,
    pub ledger_height: u64,
    pub signer: Option<&'a KeyPair>,
}

enum MetadataCheck {
    Intact(Box<MetadataDocument>),
    Broken,
}

impl Verifier<'_> {
    pub fn verify(
        &self,
        query: &VerifyQuery,
        now: u64,
    ) -> Result<VerificationReport, VerifyError> {
        let signer = self.signer.ok_or(VerifyError::NodeUnconfigured)?;
        let mut report = VerificationReport {
            version: REPORT_VERSION,
            query_echo: query.into(),
            status: ReportStatus::Unknown,
            issuer: None,
            institution_name: None,
            cert_id: None,
            cid: None,
            metadata_hash: None,
            metadata: None,
            issued_at: None,
            revoked_at: None,
            revocation_reason: None,
            ledger_height: self.ledger_height,
            checked_at: now,
            node_public_key: [0; 32],
            signature: [0; 64],
        };

        if let Some(record) = self.resolve(query) {
            report.issuer = Some(record.issuer);
            report.institution_name = self.state.institution(&record.issuer).map(|i| i.name.clone());
            report.cert_id = Some(record.cert_id.clone());
            report.cid = Some(record.cid);
            report.metadata_hash = Some(hex::encode(record.metadata_hash));
            report.issued_at = Some(record.issued_at);
            report.revoked_at = record.revoked_at;
            report.revocation_reason = record.revocation_reason.clone();

            let qr_matches = match query {
                VerifyQuery::Qr(p) => p.cid == record.cid,
                _ => true,
            };
            report.status = match (qr_matches, self.check_metadata(record)) {
                (true, MetadataCheck::Intact(doc)) => {
                    report.metadata = Some(*doc);
                    match record.status {
                        CertStatus::Valid => ReportStatus::Valid,
                        CertStatus::Revoked => ReportStatus::Revoked,
                    }
                }
                _ => ReportStatus::IntegrityFailure,
            };
        }

        report.sign(signer);
        Ok(report)
    }

    fn resolve(&self, query: &VerifyQuery) -> Option<&CertificateRecord> {
        match query {
            VerifyQuery::ById { issuer, cert_id } => self.state.certificate(issuer, cert_id),
            VerifyQuery::MetadataHash(h) => self.state.certificate_by_metadata_hash(h),
            VerifyQuery::Cid(cid) => self.state.certificate_by_cid(cid),
            VerifyQuery::Qr(p) => self.state.certificate(&p.issuer, &p.cert_id),
        }
    }

    fn check_metadata(&self, record: &CertificateRecord) -> MetadataCheck {
        let Ok(bytes) = self.store.get(&record.cid) else {
            return MetadataCheck::Broken;
        };
        if canonical::sha256(&bytes) != record.metadata_hash
            || compute_cid(&bytes).ok() != Some(record.cid)
        {
            return MetadataCheck::Broken;
        }
        match MetadataDocument::from_canonical(&bytes) {
            Ok(doc)
                if doc.cert_id == record.cert_id
                    && doc.institution_address == record.issuer.to_string() =>
            {
                MetadataCheck::Intact(Box::new(doc))
            }
            _ => MetadataCheck::Broken,
        }
    }
}
