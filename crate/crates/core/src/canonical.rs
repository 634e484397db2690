//! Canonical JSON encoding shared by transactions, blocks, state and reports.
//!
//! Canonical form: objects with keys sorted by UTF-8 bytes, no insignificant
//! whitespace, integers in shortest decimal form, strings as UTF-8. Floating
//! point numbers are not representable.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("non-representable value at {path}: {detail}")]
    NotRepresentable { path: String, detail: String },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("document is not in canonical form")]
    NotCanonical,
}

/// Encodes any serializable value in canonical form.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value).map_err(|e| CanonicalError::NotRepresentable {
        path: "$".into(),
        detail: e.to_string(),
    })?;
    value_to_canonical(&value)
}

/// Encodes an already-built JSON value in canonical form.
pub fn value_to_canonical(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    check_representable(value, &mut String::from("$"))?;
    // serde_json's default map is a BTreeMap<String, _>, so keys come out in
    // byte order and the compact writer emits no whitespace.
    serde_json::to_vec(value).map_err(|e| CanonicalError::Malformed(e.to_string()))
}

/// Parses canonical bytes, rejecting input that is not already canonical.
pub fn from_canonical<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let parsed: T =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    if to_canonical(&parsed)? != bytes {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(parsed)
}

/// Re-encodes arbitrary JSON text into canonical form.
pub fn canonicalize_json(bytes: &[u8]) -> Result<Vec<u8>, CanonicalError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    value_to_canonical(&value)
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn check_representable(value: &Value, path: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => Err(CanonicalError::NotRepresentable {
            path: path.clone(),
            detail: format!("non-integer number {n}"),
        }),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                check_representable(item, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        Value::Object(map) => {
            for (k, v) in map {
                let len = path.len();
                path.push('.');
                path.push_str(k);
                check_representable(v, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Serde helpers for fixed-size byte arrays rendered as lowercase hex.
pub mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        bytes: &[u8; N],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        parse::<N>(&s).map_err(D::Error::custom)
    }

    /// Strict lowercase hex of exactly `N` bytes.
    pub fn parse<const N: usize>(s: &str) -> Result<[u8; N], String> {
        if s.len() != 2 * N {
            return Err(format!("expected {} hex chars, got {}", 2 * N, s.len()));
        }
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err("hex must be lowercase".into());
        }
        let mut out = [0u8; N];
        hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
