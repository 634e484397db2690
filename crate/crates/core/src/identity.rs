//! Keys, addresses and signed transactions.
//!
//! Every actor is an Ed25519 key. Its [`Address`] is the last 20 bytes of
//! SHA-256 over the public key. Transactions are signed over their canonical
//! encoding, and the transaction hash is SHA-256 of that same encoding.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::{self, hex_bytes, CanonicalError};
use crate::cas::Cid;

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const ADDRESS_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("invalid seed length: expected 32 bytes, got {0}")]
    InvalidSeedLength(usize),
    #[error("invalid public key length: expected 32 bytes, got {0}")]
    InvalidKeyLength(usize),
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("key file {path}: {detail}")]
    KeyFile { path: String, detail: String },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

/// 20-byte actor identity, displayed as `0x` followed by 40 lowercase hex chars.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({self})")
    }
}

impl FromStr for Address {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix("0x")
            .ok_or_else(|| IdentityError::InvalidAddress(format!("missing 0x prefix: {s:?}")))?;
        hex_bytes::parse::<ADDRESS_LEN>(body)
            .map(Address)
            .map_err(IdentityError::InvalidAddress)
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn derive_address(public_key: &[u8]) -> Result<Address, IdentityError> {
    if public_key.len() != PUBLIC_KEY_LEN {
        return Err(IdentityError::InvalidKeyLength(public_key.len()));
    }
    let digest = canonical::sha256(public_key);
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest[32 - ADDRESS_LEN..]);
    Ok(Address(out))
}

pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Deterministic when `seed` is given, otherwise drawn from the OS RNG.
    pub fn generate(seed: Option<&[u8]>) -> Result<Self, IdentityError> {
        let signing = match seed {
            Some(seed) => {
                let seed: [u8; 32] = seed
                    .try_into()
                    .map_err(|_| IdentityError::InvalidSeedLength(seed.len()))?;
                SigningKey::from_bytes(&seed)
            }
            None => SigningKey::generate(&mut rand::rngs::OsRng),
        };
        Ok(Self { signing })
    }

    pub fn public_key(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn secret_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn address(&self) -> Address {
        derive_address(&self.public_key()).expect("ed25519 public keys are 32 bytes")
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.signing.sign(message).to_bytes()
    }

    /// Reads a key file holding the 32-byte secret as 64 hex characters.
    pub fn load(path: &Path) -> Result<Self, IdentityError> {
        let err = |detail: String| IdentityError::KeyFile {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let seed = hex_bytes::parse::<32>(text.trim()).map_err(err)?;
        Self::generate(Some(&seed))
    }

    /// Writes the secret as hex; the file is created with mode 0600 on unix.
    pub fn save(&self, path: &Path) -> Result<(), IdentityError> {
        let err = |e: std::io::Error| IdentityError::KeyFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut file = opts.open(path).map_err(err)?;
        writeln!(file, "{}", hex::encode(self.secret_key())).map_err(err)?;
        file.sync_all().map_err(err)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address())
            .finish_non_exhaustive()
    }
}

/// Checks an Ed25519 signature, rejecting malleable encodings.
pub fn verify_signature(public_key: &[u8; 32], message: &[u8], signature: &[u8; 64]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    key.verify_strict(message, &Signature::from_bytes(signature))
        .is_ok()
}

/// A state-transition request. The variant name is stored under `"type"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TxPayload {
    AuthorizeRegulator {
        regulator: Address,
    },
    RevokeRegulator {
        regulator: Address,
    },
    RegisterInstitution {
        institution: Address,
        name: String,
    },
    DeactivateInstitution {
        institution: Address,
    },
    IssueCertificate {
        cert_id: String,
        cid: Cid,
        #[serde(with = "hex_bytes")]
        metadata_hash: [u8; 32],
    },
    RevokeCertificate {
        cert_id: String,
        reason: String,
    },
}

impl TxPayload {
    pub const KINDS: [&'static str; 6] = [
        "authorize_regulator",
        "revoke_regulator",
        "register_institution",
        "deactivate_institution",
        "issue_certificate",
        "revoke_certificate",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            TxPayload::AuthorizeRegulator { .. } => Self::KINDS[0],
            TxPayload::RevokeRegulator { .. } => Self::KINDS[1],
            TxPayload::RegisterInstitution { .. } => Self::KINDS[2],
            TxPayload::DeactivateInstitution { .. } => Self::KINDS[3],
            TxPayload::IssueCertificate { .. } => Self::KINDS[4],
            TxPayload::RevokeCertificate { .. } => Self::KINDS[5],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxHash(pub [u8; 32]);

impl fmt::Display for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxHash({self})")
    }
}

impl FromStr for TxHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        hex_bytes::parse::<32>(s).map(TxHash)
    }
}

impl Serialize for TxHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for TxHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_bytes::deserialize(d).map(TxHash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedTransaction {
    pub payload: TxPayload,
    pub sender: Address,
    pub nonce: u64,
    pub timestamp: u64,
    #[serde(with = "hex_bytes")]
    pub signature: [u8; SIGNATURE_LEN],
    #[serde(with = "hex_bytes")]
    pub public_key: [u8; PUBLIC_KEY_LEN],
}

#[derive(Serialize)]
struct SigningBody<'a> {
    payload: &'a TxPayload,
    sender: &'a Address,
    nonce: u64,
    timestamp: u64,
}

/// The bytes a transaction signature and hash are computed over.
pub fn canonical_encode(
    payload: &TxPayload,
    sender: &Address,
    nonce: u64,
    timestamp: u64,
) -> Result<Vec<u8>, IdentityError> {
    Ok(canonical::to_canonical(&SigningBody {
        payload,
        sender,
        nonce,
        timestamp,
    })?)
}

pub fn sign_transaction(
    keypair: &KeyPair,
    payload: TxPayload,
    nonce: u64,
    timestamp: u64,
) -> SignedTransaction {
    let sender = keypair.address();
    let message = canonical_encode(&payload, &sender, nonce, timestamp)
        .expect("payload types contain only representable values");
    SignedTransaction {
        signature: keypair.sign(&message),
        public_key: keypair.public_key(),
        payload,
        sender,
        nonce,
        timestamp,
    }
}

pub fn verify_transaction(tx: &SignedTransaction) -> bool {
    match derive_address(&tx.public_key) {
        Ok(addr) if addr == tx.sender => {}
        _ => return false,
    }
    match tx.signing_bytes() {
        Ok(message) => verify_signature(&tx.public_key, &message, &tx.signature),
        Err(_) => false,
    }
}

impl SignedTransaction {
    pub fn signing_bytes(&self) -> Result<Vec<u8>, IdentityError> {
        canonical_encode(&self.payload, &self.sender, self.nonce, self.timestamp)
    }

    pub fn tx_hash(&self) -> TxHash {
        let bytes = self
            .signing_bytes()
            .expect("payload types contain only representable values");
        TxHash(canonical::sha256(&bytes))
    }

    /// Canonical encoding of the whole signed transaction, as stored on the ledger.
    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("transactions are always representable")
    }
}
