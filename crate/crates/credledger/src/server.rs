//! HTTP/JSON transport for a [`Node`].
//!
//! The transport is unauthenticated; every mutation is a signed transaction.
//! Writes take the node's write lock, so `append -> seal -> apply` runs one
//! transaction at a time while readers share the read lock.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use credledger_core::canonical;
use credledger_core::identity::{Address, SignedTransaction, TxHash};
use credledger_core::node::ErrorBody;
use credledger_core::verifier::{decode_qr_payload, VerifyQuery};
use credledger_core::{Cid, Node, NodeError};

pub type SharedNode = Arc<RwLock<Node>>;

const BODY_LIMIT: usize = 4 * 1024 * 1024;

/// A canonical-encoding JSON response.
pub struct Canonical(pub StatusCode, pub Vec<u8>);

impl IntoResponse for Canonical {
    fn into_response(self) -> Response {
        (
            self.0,
            [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
            self.1,
        )
            .into_response()
    }
}

fn ok<T: Serialize>(value: &T) -> Canonical {
    Canonical(
        StatusCode::OK,
        canonical::to_canonical(value).expect("API types are representable"),
    )
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: "BadRequest".into(),
                message: message.into(),
            },
        }
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        let status = match e.code() {
            "BadSignature" | "ClockSkew" | "InvalidCid" | "SchemaViolation" => {
                StatusCode::BAD_REQUEST
            }
            "NonceReplay" => StatusCode::CONFLICT,
            "NotFound" => StatusCode::NOT_FOUND,
            "TooLarge" => StatusCode::PAYLOAD_TOO_LARGE,
            "NodeUnconfigured" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: ErrorBody {
                error: e.code().into(),
                message: e.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        Canonical(
            self.status,
            canonical::to_canonical(&self.body).expect("error bodies are representable"),
        )
        .into_response()
    }
}

type ApiResult = Result<Canonical, ApiError>;

async fn blocking<F, T>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: ErrorBody {
            error: "Internal".into(),
            message: e.to_string(),
        },
    })?
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| ApiError::bad_request(format!("invalid {what} {s:?}: {e}")))
}

async fn submit_tx(State(node): State<SharedNode>, body: Bytes) -> ApiResult {
    let tx: SignedTransaction = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid transaction: {e}")))?;
    blocking(move || Ok(ok(&node.write().submit(tx)?))).await
}

async fn role(State(node): State<SharedNode>, Path(address): Path<String>) -> ApiResult {
    let address: Address = parse("address", &address)?;
    Ok(ok(&node.read().role(&address)))
}

async fn certificate(
    State(node): State<SharedNode>,
    Path((issuer, cert_id)): Path<(String, String)>,
) -> ApiResult {
    let issuer: Address = parse("issuer", &issuer)?;
    Ok(ok(&node.read().certificate(&issuer, &cert_id)?))
}

#[derive(Debug, Default, Deserialize)]
pub struct VerifyParams {
    pub i: Option<String>,
    pub c: Option<String>,
    pub h: Option<String>,
    pub d: Option<String>,
    pub q: Option<String>,
}

impl VerifyParams {
    pub fn into_query(self) -> Result<VerifyQuery, ApiError> {
        match self {
            VerifyParams { i: Some(i), c: Some(c), h: None, d: None, q: None } => {
                Ok(VerifyQuery::ById { issuer: parse("issuer", &i)?, cert_id: c })
            }
            VerifyParams { i: None, c: None, h: Some(h), d: None, q: None } => {
                let hash = canonical::hex_bytes::parse::<32>(&h)
                    .map_err(|e| ApiError::bad_request(format!("invalid metadata hash: {e}")))?;
                Ok(VerifyQuery::MetadataHash(hash))
            }
            VerifyParams { i: None, c: None, h: None, d: Some(d), q: None } => {
                Ok(VerifyQuery::Cid(parse("cid", &d)?))
            }
            VerifyParams { i: None, c: None, h: None, d: None, q: Some(q) } => decode_qr_payload(&q)
                .map(VerifyQuery::Qr)
                .map_err(|e| ApiError::bad_request(e.to_string())),
            _ => Err(ApiError::bad_request(
                "use exactly one of ?i=&c=, ?h=, ?d= or ?q=",
            )),
        }
    }
}

async fn verify(State(node): State<SharedNode>, Query(params): Query<VerifyParams>) -> ApiResult {
    let query = params.into_query()?;
    blocking(move || Ok(ok(&node.read().verify(&query)?))).await
}

async fn put_metadata(State(node): State<SharedNode>, body: Bytes) -> ApiResult {
    blocking(move || Ok(ok(&node.read().put_metadata(&body)?))).await
}

async fn get_metadata(
    State(node): State<SharedNode>,
    Path(cid): Path<String>,
) -> Result<Response, ApiError> {
    let cid: Cid = parse("cid", &cid)?;
    let bytes = blocking(move || Ok(node.read().get_metadata(&cid)?)).await?;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        bytes,
    )
        .into_response())
}

async fn block(State(node): State<SharedNode>, Path(height): Path<String>) -> ApiResult {
    let height: u64 = parse("height", &height)?;
    Ok(ok(&node.read().block(height)?))
}

async fn transaction(State(node): State<SharedNode>, Path(hash): Path<String>) -> ApiResult {
    let hash: TxHash = parse("transaction hash", &hash)?;
    Ok(ok(&node.read().transaction(&hash)?))
}

async fn head(State(node): State<SharedNode>) -> ApiResult {
    Ok(ok(&node.read().head()))
}

async fn state_root(State(node): State<SharedNode>) -> ApiResult {
    Ok(ok(&node.read().state_root()))
}

async fn stats(State(node): State<SharedNode>) -> ApiResult {
    Ok(ok(&node.read().stats()))
}

async fn audit(State(node): State<SharedNode>) -> ApiResult {
    blocking(move || Ok(ok(&node.read().audit()))).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeInfo {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub government: Option<Address>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report_public_key: Option<String>,
    pub block_interval: u64,
}

async fn node_info(State(node): State<SharedNode>) -> ApiResult {
    let node = node.read();
    Ok(ok(&NodeInfo {
        government: node.state().government(),
        report_public_key: node.signer_public_key().map(hex::encode),
        block_interval: node.config().block_interval as u64,
    }))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        body: ErrorBody {
            error: "NotFound".into(),
            message: "no such endpoint".into(),
        },
    }
}

pub fn router(node: SharedNode) -> Router {
    Router::new()
        .route("/v1/tx", post(submit_tx))
        .route("/v1/tx/{hash}", get(transaction))
        .route("/v1/roles/{address}", get(role))
        .route("/v1/certificates/{issuer}/{cert_id}", get(certificate))
        .route("/v1/verify", get(verify))
        .route("/v1/metadata", post(put_metadata))
        .route("/v1/metadata/{cid}", get(get_metadata))
        .route("/v1/blocks/{height}", get(block))
        .route("/v1/head", get(head))
        .route("/v1/state-root", get(state_root))
        .route("/v1/stats", get(stats))
        .route("/v1/audit", get(audit))
        .route("/v1/node", get(node_info))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(node)
}

pub async fn serve(
    listener: TcpListener,
    node: SharedNode,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(node))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own runtime thread, for tests and embedding.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub node: SharedNode,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(node: Node, listen: &str) -> std::io::Result<Self> {
        let node: SharedNode = Arc::new(RwLock::new(node));
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let std_listener = std::net::TcpListener::bind(listen)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let shared = node.clone();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = TcpListener::from_std(std_listener).expect("tokio listener");
                let _ = serve(listener, shared, async {
                    let _ = rx.await;
                })
                .await;
            });
        });
        Ok(Self {
            addr,
            node,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}
