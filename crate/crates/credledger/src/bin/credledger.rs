//! Command-line client for a CredLedger node.
//!
//! Exit codes: 0 success, 1 domain rejection (rejected transaction or a
//! report that fails its check), 2 usage error, 3 transport or node error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use credledger::client::{Client, ClientError, Raw};
use credledger_core::cas::{canonicalize_metadata, compute_cid, MetadataDocument};
use credledger_core::identity::{sign_transaction, Address, KeyPair, TxPayload};
use credledger_core::node::{unix_now, MetadataPutResponse, SubmitResponse};
use credledger_core::verifier::{
    check_report_bytes, decode_qr_payload, encode_qr_payload, VerificationReport,
};
use credledger_core::Cid;

#[derive(Parser)]
#[command(name = "credledger", version, about = "CredLedger command-line client")]
struct Cli {
    /// Node base URL.
    #[arg(long, global = true, env = "CREDLEDGER_URL", default_value = "http://127.0.0.1:8650")]
    url: String,
    /// Print the node's raw JSON response instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Signer {
    /// Key file written by `credledger keygen`.
    #[arg(long)]
    key: PathBuf,
    /// Override the nonce instead of asking the node for the next one.
    #[arg(long)]
    nonce: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair and write it to a file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// 32-byte seed as 64 hex characters (deterministic key).
        #[arg(long)]
        seed: Option<String>,
    },
    /// Print the address of a key file.
    Address {
        #[arg(long)]
        key: PathBuf,
    },
    /// Government actions.
    #[command(subcommand)]
    Gov(GovCommand),
    /// Regulator actions.
    #[command(subcommand)]
    Reg(RegCommand),
    /// Institution actions.
    #[command(subcommand)]
    Inst(InstCommand),
    /// Verify a certificate. Exits 0 whatever the status.
    Verify {
        /// `<issuer>/<cert_id>`
        #[arg(long, group = "q")]
        id: Option<String>,
        /// Metadata hash, 64 hex characters.
        #[arg(long, group = "q")]
        hash: Option<String>,
        #[arg(long, group = "q")]
        cid: Option<String>,
        /// A `shikkha:verify?...` URI.
        #[arg(long, group = "q")]
        qr: Option<String>,
        /// Save the signed report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Offline report tools.
    #[command(subcommand)]
    Report(ReportCommand),
    /// QR payload tools.
    #[command(subcommand)]
    Qr(QrCommand),
    /// Node inspection.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Show the role and next nonce of an address.
    Role { address: String },
}

#[derive(Subcommand)]
enum GovCommand {
    AuthorizeRegulator {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        regulator: String,
    },
    RevokeRegulator {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        regulator: String,
    },
}

#[derive(Subcommand)]
enum RegCommand {
    RegisterInstitution {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        institution: String,
        #[arg(long)]
        name: String,
    },
    DeactivateInstitution {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        institution: String,
    },
}

#[derive(Subcommand)]
enum InstCommand {
    /// Store a metadata document and issue the certificate it describes.
    Issue {
        #[command(flatten)]
        signer: Signer,
        /// Metadata JSON file.
        #[arg(long)]
        metadata: PathBuf,
    },
    Revoke {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        cert_id: String,
        #[arg(long)]
        reason: String,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Check a saved report's signature. Exits 1 if it does not verify.
    Check {
        file: PathBuf,
        /// Expected node public key, 64 hex characters.
        #[arg(long)]
        node_key: Option<String>,
    },
}

#[derive(Subcommand)]
enum QrCommand {
    Encode {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        cert_id: String,
        #[arg(long)]
        cid: String,
    },
    Decode { uri: String },
}

#[derive(Subcommand)]
enum NodeCommand {
    Audit,
    Head,
    Stats,
    StateRoot,
    Info,
    Block { height: u64 },
    Tx { hash: String },
    Metadata { cid: String },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Rejected(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Client(_) | CliError::Io(_) => 3,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_address(s: &str) -> Result<Address, CliError> {
    s.parse().map_err(|e| usage(format!("address {s:?}: {e}")))
}

fn parse_cid(s: &str) -> Result<Cid, CliError> {
    s.parse().map_err(|e| usage(format!("cid {s:?}: {e}")))
}

fn load_key(path: &Path) -> Result<KeyPair, CliError> {
    KeyPair::load(path).map_err(|e| usage(format!("key {}: {e}", path.display())))
}

fn hex32(s: &str) -> Result<[u8; 32], CliError> {
    credledger_core::canonical::hex_bytes::parse::<32>(s).map_err(|e| usage(format!("{s:?}: {e}")))
}

fn print_raw(raw: &Raw) {
    println!("{}", String::from_utf8_lossy(&raw.body));
}

fn print_pretty(raw: &Raw) {
    match serde_json::from_slice::<Value>(&raw.body) {
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default()),
        Err(_) => print_raw(raw),
    }
}

/// Prints a read response and turns non-2xx statuses into errors.
fn show(cli: &Cli, raw: Raw) -> Result<(), CliError> {
    if !raw.is_success() {
        if cli.json {
            print_raw(&raw);
        }
        raw.json::<Value>()?;
    }
    if cli.json {
        print_raw(&raw);
    } else {
        print_pretty(&raw);
    }
    Ok(())
}

fn submit(cli: &Cli, client: &Client, signer: &Signer, payload: TxPayload) -> Result<(), CliError> {
    let key = load_key(&signer.key)?;
    let nonce = match signer.nonce {
        Some(n) => n,
        None => client.next_nonce(&key.address())?,
    };
    let tx = sign_transaction(&key, payload, nonce, unix_now());
    let raw = client.submit_raw(&tx)?;
    if cli.json {
        print_raw(&raw);
    }
    let resp: SubmitResponse = raw.json()?;
    let rejected = resp.events.iter().find_map(|e| match e {
        credledger_core::Event::Rejected { reason } => Some(*reason),
        _ => None,
    });
    if !cli.json {
        println!("tx {}", resp.receipt.tx_hash);
        if let Some(h) = resp.receipt.height {
            println!("height {h}");
        }
        for e in &resp.events {
            println!("event {}", serde_json::to_string(e).unwrap_or_default());
        }
    }
    match rejected {
        Some(reason) => Err(CliError::Rejected(format!("transaction rejected: {reason:?}"))),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let client = || Client::new(&cli.url).map_err(CliError::from);
    match &cli.command {
        Command::Keygen { out, seed } => {
            let seed = seed.as_deref().map(hex32).transpose()?;
            let key = KeyPair::generate(seed.as_ref().map(|s| s.as_slice())).map_err(usage)?;
            key.save(out)
                .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            if cli.json {
                println!(
                    "{{\"address\":\"{}\",\"public_key\":\"{}\"}}",
                    key.address(),
                    hex::encode(key.public_key())
                );
            } else {
                println!("{}", key.address());
            }
        }
        Command::Address { key } => println!("{}", load_key(key)?.address()),
        Command::Gov(cmd) => {
            let (signer, payload) = match cmd {
                GovCommand::AuthorizeRegulator { signer, regulator } => (
                    signer,
                    TxPayload::AuthorizeRegulator { regulator: parse_address(regulator)? },
                ),
                GovCommand::RevokeRegulator { signer, regulator } => (
                    signer,
                    TxPayload::RevokeRegulator { regulator: parse_address(regulator)? },
                ),
            };
            submit(cli, &client()?, signer, payload)?;
        }
        Command::Reg(cmd) => {
            let (signer, payload) = match cmd {
                RegCommand::RegisterInstitution { signer, institution, name } => (
                    signer,
                    TxPayload::RegisterInstitution {
                        institution: parse_address(institution)?,
                        name: name.clone(),
                    },
                ),
                RegCommand::DeactivateInstitution { signer, institution } => (
                    signer,
                    TxPayload::DeactivateInstitution { institution: parse_address(institution)? },
                ),
            };
            submit(cli, &client()?, signer, payload)?;
        }
        Command::Inst(InstCommand::Issue { signer, metadata }) => {
            let key = load_key(&signer.key)?;
            let text = std::fs::read(metadata)
                .map_err(|e| usage(format!("{}: {e}", metadata.display())))?;
            let doc = MetadataDocument::parse(&text).map_err(usage)?;
            if doc.institution_address != key.address().to_string() {
                return Err(usage(format!(
                    "metadata institution_address {} does not match key address {}",
                    doc.institution_address,
                    key.address()
                )));
            }
            let bytes = canonicalize_metadata(&doc).map_err(usage)?;
            let cid = compute_cid(&bytes).map_err(usage)?;
            let client = client()?;
            let stored: MetadataPutResponse = client.post("/v1/metadata", bytes)?.json()?;
            if stored.cid != cid {
                return Err(CliError::Io(format!(
                    "node stored metadata as {} but expected {cid}",
                    stored.cid
                )));
            }
            if !cli.json {
                println!("cid {cid}");
            }
            let payload = TxPayload::IssueCertificate {
                cert_id: doc.cert_id.clone(),
                cid,
                metadata_hash: *cid.digest(),
            };
            submit(cli, &client, signer, payload)?;
            if !cli.json {
                let qr = encode_qr_payload(key.address(), &doc.cert_id, cid).map_err(usage)?;
                println!("qr {qr}");
            }
        }
        Command::Inst(InstCommand::Revoke { signer, cert_id, reason }) => {
            let payload = TxPayload::RevokeCertificate {
                cert_id: cert_id.clone(),
                reason: reason.clone(),
            };
            submit(cli, &client()?, signer, payload)?;
        }
        Command::Verify { id, hash, cid, qr, out } => {
            let query: Vec<(&str, String)> = match (id, hash, cid, qr) {
                (Some(id), None, None, None) => {
                    let (issuer, cert_id) = id
                        .split_once('/')
                        .ok_or_else(|| usage("--id must be <issuer>/<cert_id>"))?;
                    parse_address(issuer)?;
                    vec![("i", issuer.to_string()), ("c", cert_id.to_string())]
                }
                (None, Some(h), None, None) => {
                    hex32(h)?;
                    vec![("h", h.clone())]
                }
                (None, None, Some(c), None) => {
                    parse_cid(c)?;
                    vec![("d", c.clone())]
                }
                (None, None, None, Some(q)) => {
                    decode_qr_payload(q).map_err(usage)?;
                    vec![("q", q.clone())]
                }
                _ => return Err(usage("give exactly one of --id, --hash, --cid, --qr")),
            };
            let pairs: Vec<(&str, &str)> = query.iter().map(|(k, v)| (*k, v.as_str())).collect();
            let raw = client()?.get_query("/v1/verify", &pairs)?;
            if cli.json {
                print_raw(&raw);
            }
            let report: VerificationReport = raw.json()?;
            if let Some(out) = out {
                std::fs::write(out, &raw.body)
                    .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            }
            if !cli.json {
                println!("status {:?}", report.status);
                if let (Some(issuer), Some(cert_id)) = (&report.issuer, &report.cert_id) {
                    println!("certificate {issuer}/{cert_id}");
                }
                if let Some(name) = &report.institution_name {
                    println!("institution {name}");
                }
                if let Some(reason) = &report.revocation_reason {
                    println!("revocation_reason {reason}");
                }
                println!("ledger_height {}", report.ledger_height);
            }
        }
        Command::Report(ReportCommand::Check { file, node_key }) => {
            let bytes = std::fs::read(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            let key = node_key.as_deref().map(hex32).transpose()?;
            if check_report_bytes(&bytes, key.as_ref()) {
                println!("ok");
            } else {
                return Err(CliError::Rejected("report signature does not verify".into()));
            }
        }
        Command::Qr(QrCommand::Encode { issuer, cert_id, cid }) => {
            let uri = encode_qr_payload(parse_address(issuer)?, cert_id, parse_cid(cid)?)
                .map_err(usage)?;
            println!("{uri}");
        }
        Command::Qr(QrCommand::Decode { uri }) => {
            let p = decode_qr_payload(uri).map_err(usage)?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({"issuer": p.issuer, "cert_id": p.cert_id, "cid": p.cid})
                );
            } else {
                println!("issuer {}\ncert_id {}\ncid {}", p.issuer, p.cert_id, p.cid);
            }
        }
        Command::Node(cmd) => {
            let path = match cmd {
                NodeCommand::Audit => "/v1/audit".to_string(),
                NodeCommand::Head => "/v1/head".to_string(),
                NodeCommand::Stats => "/v1/stats".to_string(),
                NodeCommand::StateRoot => "/v1/state-root".to_string(),
                NodeCommand::Info => "/v1/node".to_string(),
                NodeCommand::Block { height } => format!("/v1/blocks/{height}"),
                NodeCommand::Tx { hash } => format!("/v1/tx/{hash}"),
                NodeCommand::Metadata { cid } => format!("/v1/metadata/{}", parse_cid(cid)?),
            };
            let raw = client()?.get(&path)?;
            if matches!(cmd, NodeCommand::Audit) && raw.is_success() {
                let ok = serde_json::from_slice::<Value>(&raw.body)
                    .ok()
                    .and_then(|v| v.get("ok").and_then(Value::as_bool))
                    .unwrap_or(false);
                show(cli, raw)?;
                if !ok {
                    return Err(CliError::Rejected("ledger audit failed".into()));
                }
            } else {
                show(cli, raw)?;
            }
        }
        Command::Role { address } => {
            let address = parse_address(address)?;
            show(cli, client()?.get(&format!("/v1/roles/{address}"))?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
