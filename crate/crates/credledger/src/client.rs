//! Blocking HTTP client used by the CLI and the integration tests.

use std::time::Duration;

use serde::de::DeserializeOwned;

use credledger_core::identity::{Address, SignedTransaction};
use credledger_core::node::{ErrorBody, RoleResponse, SubmitResponse};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("node returned {status}: {error}: {message}")]
    Api {
        status: u16,
        error: String,
        message: String,
    },
    #[error("unexpected response body: {0}")]
    Decode(#[from] serde_json::Error),
}

/// Raw response: status code plus the exact body bytes.
#[derive(Debug, Clone)]
pub struct Raw {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Raw {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn json<T: DeserializeOwned>(&self) -> Result<T, ClientError> {
        if !self.is_success() {
            let (error, message) = match serde_json::from_slice::<ErrorBody>(&self.body) {
                Ok(b) => (b.error, b.message),
                Err(_) => ("Unknown".into(), String::from_utf8_lossy(&self.body).into_owned()),
            };
            return Err(ClientError::Api {
                status: self.status,
                error,
                message,
            });
        }
        Ok(serde_json::from_slice(&self.body)?)
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn get(&self, path: &str) -> Result<Raw, ClientError> {
        let resp = self.http.get(format!("{}{path}", self.base)).send()?;
        Ok(Raw {
            status: resp.status().as_u16(),
            body: resp.bytes()?.to_vec(),
        })
    }

    pub fn get_query(&self, path: &str, query: &[(&str, &str)]) -> Result<Raw, ClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .query(query)
            .send()?;
        Ok(Raw {
            status: resp.status().as_u16(),
            body: resp.bytes()?.to_vec(),
        })
    }

    pub fn post(&self, path: &str, body: Vec<u8>) -> Result<Raw, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()?;
        Ok(Raw {
            status: resp.status().as_u16(),
            body: resp.bytes()?.to_vec(),
        })
    }

    pub fn submit_raw(&self, tx: &SignedTransaction) -> Result<Raw, ClientError> {
        self.post("/v1/tx", tx.to_canonical())
    }

    pub fn submit(&self, tx: &SignedTransaction) -> Result<SubmitResponse, ClientError> {
        self.submit_raw(tx)?.json()
    }

    pub fn role(&self, address: &Address) -> Result<RoleResponse, ClientError> {
        self.get(&format!("/v1/roles/{address}"))?.json()
    }

    pub fn next_nonce(&self, address: &Address) -> Result<u64, ClientError> {
        Ok(self.role(address)?.next_nonce)
    }
}
