//! Embedded content-addressed blob store.
//!
//! Identifiers are CIDv1 / raw codec / sha2-256 multihash, rendered as
//! multibase base32-lowercase (`b...`). That is the same identifier external
//! IPFS tooling assigns a single raw-leaf block, so metadata stored here can be
//! cross-checked with `ipfs add --raw-leaves --cid-version 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::canonical::{self, CanonicalError};
use crate::identity::Address;

pub const MAX_BLOB_SIZE: usize = 1024 * 1024;
pub const METADATA_SCHEMA: &str = "shikkhachain/cert/v1";

const CID_VERSION: u8 = 0x01;
const CODEC_RAW: u8 = 0x55;
const MULTIHASH_SHA2_256: u8 = 0x12;
const DIGEST_LEN: u8 = 0x20;
const CID_PREFIX: [u8; 4] = [CID_VERSION, CODEC_RAW, MULTIHASH_SHA2_256, DIGEST_LEN];

#[derive(Debug, thiserror::Error)]
pub enum CasError {
    #[error("content too large: {0} bytes exceeds the 1 MiB single-block limit")]
    TooLarge(usize),
    #[error("blob not found: {0}")]
    NotFound(Cid),
    #[error("integrity failure: stored bytes for {0} no longer match their digest")]
    IntegrityFailure(Cid),
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("invalid cid: {0}")]
    InvalidCid(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

/// CIDv1, raw codec, sha2-256. Only the digest varies.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cid {
    digest: [u8; 32],
}

impl Cid {
    pub fn from_digest(digest: [u8; 32]) -> Self {
        Self { digest }
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn version(&self) -> u8 {
        CID_VERSION
    }

    pub fn codec(&self) -> u8 {
        CODEC_RAW
    }

    pub fn hash_algo(&self) -> u8 {
        MULTIHASH_SHA2_256
    }

    pub fn to_bytes(&self) -> [u8; 36] {
        let mut out = [0u8; 36];
        out[..4].copy_from_slice(&CID_PREFIX);
        out[4..].copy_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CasError> {
        if bytes.len() != 36 {
            return Err(CasError::InvalidCid(format!(
                "expected 36 binary bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[..4] != CID_PREFIX {
            return Err(CasError::InvalidCid(format!(
                "unsupported prefix {} (want cidv1/raw/sha2-256)",
                hex::encode(&bytes[..4])
            )));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&bytes[4..]);
        Ok(Self { digest })
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let encoded = BASE32_NOPAD.encode(&self.to_bytes()).to_ascii_lowercase();
        write!(f, "b{encoded}")
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix('b')
            .ok_or_else(|| CasError::InvalidCid("expected multibase prefix 'b'".into()))?;
        if body.bytes().any(|b| !matches!(b, b'a'..=b'z' | b'2'..=b'7')) {
            return Err(CasError::InvalidCid(
                "base32 body must be lowercase rfc4648 without padding".into(),
            ));
        }
        let bytes = BASE32_NOPAD
            .decode(body.to_ascii_uppercase().as_bytes())
            .map_err(|e| CasError::InvalidCid(e.to_string()))?;
        let cid = Self::from_bytes(&bytes)?;
        // Trailing bits must be zero so that exactly one text form exists.
        if cid.to_string() != s {
            return Err(CasError::InvalidCid("non-canonical base32 text".into()));
        }
        Ok(cid)
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn compute_cid(content: &[u8]) -> Result<Cid, CasError> {
    if content.len() > MAX_BLOB_SIZE {
        return Err(CasError::TooLarge(content.len()));
    }
    Ok(Cid::from_digest(canonical::sha256(content)))
}

/// Off-ledger certificate metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataDocument {
    pub schema: String,
    pub cert_id: String,
    pub student_name: String,
    /// SHA-256 of the salted student id, 64 lowercase hex chars.
    pub student_id_hash: String,
    pub degree: String,
    pub field_of_study: String,
    pub institution_address: String,
    pub institution_name: String,
    /// `YYYY-MM-DD`
    pub issue_date: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
}

impl MetadataDocument {
    pub fn validate(&self) -> Result<(), CasError> {
        let bad = |m: String| Err(CasError::SchemaViolation(m));
        if self.schema != METADATA_SCHEMA {
            return bad(format!("schema must be {METADATA_SCHEMA:?}, got {:?}", self.schema));
        }
        for (name, value) in [
            ("cert_id", &self.cert_id),
            ("student_name", &self.student_name),
            ("degree", &self.degree),
            ("field_of_study", &self.field_of_study),
            ("institution_name", &self.institution_name),
        ] {
            if value.trim().is_empty() {
                return bad(format!("{name} must be non-empty"));
            }
        }
        if canonical::hex_bytes::parse::<32>(&self.student_id_hash).is_err() {
            return bad("student_id_hash must be 64 lowercase hex chars".into());
        }
        if self.institution_address.parse::<Address>().is_err() {
            return bad(format!(
                "institution_address {:?} is not a 0x-prefixed address",
                self.institution_address
            ));
        }
        if chrono::NaiveDate::parse_from_str(&self.issue_date, "%Y-%m-%d").is_err()
            || self.issue_date.len() != 10
        {
            return bad(format!("issue_date {:?} is not YYYY-MM-DD", self.issue_date));
        }
        if matches!(&self.grade, Some(g) if g.trim().is_empty()) {
            return bad("grade, when present, must be non-empty".into());
        }
        Ok(())
    }

    /// Parses metadata from JSON in any field order, validating the schema.
    pub fn parse(json: &[u8]) -> Result<Self, CasError> {
        let doc: MetadataDocument =
            serde_json::from_slice(json).map_err(|e| CasError::SchemaViolation(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    /// Parses bytes that must already be the canonical form of a valid document.
    pub fn from_canonical(bytes: &[u8]) -> Result<Self, CasError> {
        let doc: MetadataDocument = canonical::from_canonical(bytes).map_err(|e| match e {
            CanonicalError::NotCanonical => {
                CasError::SchemaViolation("metadata bytes are not canonical".into())
            }
            other => CasError::SchemaViolation(other.to_string()),
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn metadata_hash(&self) -> Result<[u8; 32], CasError> {
        Ok(canonical::sha256(&canonicalize_metadata(self)?))
    }
}

pub fn canonicalize_metadata(doc: &MetadataDocument) -> Result<Vec<u8>, CasError> {
    doc.validate()?;
    canonical::to_canonical(doc).map_err(|e| CasError::SchemaViolation(e.to_string()))
}

/// Two-level hex-sharded blob directory: `<root>/ab/cd/<64 hex digest>`.
#[derive(Debug, Clone)]
pub struct CasStore {
    root: PathBuf,
}

impl CasStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CasError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, cid: &Cid) -> PathBuf {
        let name = hex::encode(cid.digest());
        self.root.join(&name[0..2]).join(&name[2..4]).join(name)
    }

    /// Idempotent; identical content always lands at the same path.
    pub fn put(&self, content: &[u8]) -> Result<Cid, CasError> {
        let cid = compute_cid(content)?;
        let path = self.blob_path(&cid);
        if path.exists() {
            return Ok(cid);
        }
        let dir = path.parent().expect("blob paths are nested");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            hex::encode(&cid.digest()[..8]),
            std::process::id()
        ));
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(content)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(cid)
    }

    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        let bytes = match fs::read(self.blob_path(cid)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(CasError::NotFound(*cid)),
            Err(e) => return Err(e.into()),
        };
        if canonical::sha256(&bytes) != *cid.digest() {
            return Err(CasError::IntegrityFailure(*cid));
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.blob_path(cid).is_file()
    }

    /// Number of stored blobs.
    pub fn len(&self) -> Result<usize, CasError> {
        let mut count = 0;
        for a in fs::read_dir(&self.root)? {
            let a = a?.path();
            if !a.is_dir() {
                continue;
            }
            for b in fs::read_dir(a)? {
                let b = b?.path();
                if !b.is_dir() {
                    continue;
                }
                count += fs::read_dir(b)?
                    .filter_map(Result::ok)
                    .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
                    .count();
            }
        }
        Ok(count)
    }

    pub fn is_empty(&self) -> Result<bool, CasError> {
        Ok(self.len()? == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_doc() -> MetadataDocument {
        MetadataDocument {
            schema: METADATA_SCHEMA.into(),
            cert_id: "BSC-2025-001".into(),
            student_name: "Rahim".into(),
            student_id_hash: "ab".repeat(32),
            degree: "BSc".into(),
            field_of_study: "CSE".into(),
            institution_address: format!("0x{}", "11".repeat(20)),
            institution_name: "Dhaka University".into(),
            issue_date: "2025-06-30".into(),
            grade: None,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn golden_empty_and_hello() {
        // values from python `multiformats` (CID('base32', 1, 'raw', sha2-256))
        assert_eq!(
            compute_cid(b"").unwrap().to_string(),
            "bafkreihdwdcefgh4dqkjv67uzcmw7ojee6xedzdetojuzjevtenxquvyku"
        );
        assert_eq!(
            compute_cid(b"hello").unwrap().to_string(),
            "bafkreibm6jg3ux5qumhcn2b3flc3tyu6dmlb4xa7u5bf44yegnrjhc4yeq"
        );
    }

    #[test]
    fn cid_text_parse_is_strict() {
        let cid = compute_cid(b"x").unwrap();
        let text = cid.to_string();
        assert_eq!(text.parse::<Cid>().unwrap(), cid);
        assert!(text.to_uppercase().parse::<Cid>().is_err());
        assert!(text[1..].parse::<Cid>().is_err());
        assert!(format!("{text}a").parse::<Cid>().is_err());
        assert!("bafybeigdyrzt5sfp7udm7hu76uh7y26nf3efuylqabf3oclgtqy55fbzdi"
            .parse::<Cid>()
            .is_err(), "dag-pb CIDs are not raw blocks");
    }

    #[test]
    fn too_large_rejected() {
        let big = vec![0u8; 2 * MAX_BLOB_SIZE];
        assert!(matches!(compute_cid(&big), Err(CasError::TooLarge(_))));
        assert!(compute_cid(&vec![0u8; MAX_BLOB_SIZE]).is_ok());
    }

    #[test]
    fn canonical_metadata_ignores_input_order() {
        let a = br#"{"schema":"shikkhachain/cert/v1","cert_id":"C1","student_name":"A","student_id_hash":"0000000000000000000000000000000000000000000000000000000000000000","degree":"BSc","field_of_study":"CSE","institution_address":"0x1111111111111111111111111111111111111111","institution_name":"DU","issue_date":"2025-01-01"}"#;
        let b = br#"{"issue_date":"2025-01-01","institution_name":"DU","institution_address":"0x1111111111111111111111111111111111111111","field_of_study":"CSE","degree":"BSc","student_id_hash":"0000000000000000000000000000000000000000000000000000000000000000","student_name":"A","cert_id":"C1","schema":"shikkhachain/cert/v1","extra":{}}"#;
        let ca = canonicalize_metadata(&MetadataDocument::parse(a).unwrap()).unwrap();
        let cb = canonicalize_metadata(&MetadataDocument::parse(b).unwrap()).unwrap();
        assert_eq!(ca, cb);
        // extra is always present in the canonical form
        assert!(std::str::from_utf8(&ca).unwrap().contains(r#""extra":{}"#));
        assert_eq!(MetadataDocument::from_canonical(&ca).unwrap(), MetadataDocument::parse(a).unwrap());
    }

    #[test]
    fn schema_violations() {
        let mut v = serde_json::to_value(sample_doc()).unwrap();
        v.as_object_mut().unwrap().remove("degree");
        let bytes = serde_json::to_vec(&v).unwrap();
        assert!(matches!(MetadataDocument::parse(&bytes), Err(CasError::SchemaViolation(_))));

        let mut v = serde_json::to_value(sample_doc()).unwrap();
        v["unexpected"] = "x".into();
        assert!(MetadataDocument::parse(&serde_json::to_vec(&v).unwrap()).is_err());

        let mut d = sample_doc();
        d.schema = "other/v2".into();
        assert!(canonicalize_metadata(&d).is_err());

        let mut d = sample_doc();
        d.issue_date = "30/06/2025".into();
        assert!(canonicalize_metadata(&d).is_err());

        let mut d = sample_doc();
        d.student_id_hash = "not-a-hash".into();
        assert!(canonicalize_metadata(&d).is_err());

        let mut d = sample_doc();
        d.extra.insert("score".into(), serde_json::json!(3.5));
        assert!(canonicalize_metadata(&d).is_err(), "floats are not canonical");
    }

    #[test]
    fn non_canonical_bytes_rejected() {
        let canon = canonicalize_metadata(&sample_doc()).unwrap();
        let pretty = serde_json::to_vec_pretty(&sample_doc()).unwrap();
        assert!(MetadataDocument::from_canonical(&canon).is_ok());
        assert!(MetadataDocument::from_canonical(&pretty).is_err());
    }

    #[test]
    fn put_get_roundtrip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let store = CasStore::open(dir.path()).unwrap();
        let cid = store.put(b"hello").unwrap();
        assert_eq!(store.get(&cid).unwrap(), b"hello");
        assert_eq!(store.put(b"hello").unwrap(), cid);
        assert_eq!(store.len().unwrap(), 1);
        let path = store.blob_path(&cid);
        let rel = path.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned();
        assert_eq!(
            rel,
            "2c/f2/2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(matches!(store.put(&vec![1u8; 2 * MAX_BLOB_SIZE]), Err(CasError::TooLarge(_))));
    }

    #[test]
    fn get_missing_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = CasStore::open(dir.path()).unwrap();
        let missing = compute_cid(b"never stored").unwrap();
        assert!(matches!(store.get(&missing), Err(CasError::NotFound(_))));

        let cid = store.put(b"certificate metadata").unwrap();
        let path = store.blob_path(&cid);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.get(&cid), Err(CasError::IntegrityFailure(_))));
    }
}
