mod common;

use std::path::Path;

use serde_json::Value;

use credledger_core::identity::KeyPair;
use credledger_core::workload::sample_metadata;

use common::{cli, free_port, run_node_to_exit, stdout, NodeProcess};

fn keygen(dir: &Path, name: &str, seed: u8) -> (String, String) {
    let path = dir.join(name);
    let seed = hex::encode([seed; 32]);
    let out = cli("http://unused", &["keygen", "--out", path.to_str().unwrap(), "--seed", &seed]);
    assert!(out.status.success(), "{out:?}");
    (path.to_str().unwrap().to_string(), stdout(&out).trim().to_string())
}

fn write_metadata(dir: &Path, cert_id: &str, issuer: &str) -> String {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let doc = sample_metadata(&mut rng, cert_id, &issuer.parse().unwrap(), "Test College");
    let path = dir.join(format!("{cert_id}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn lifecycle_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (gov, gov_addr) = keygen(d, "gov.key", 1);
    let (reg, reg_addr) = keygen(d, "reg.key", 2);
    let (inst, inst_addr) = keygen(d, "inst.key", 3);
    let (node_key, _) = keygen(d, "node.key", 4);
    let node = NodeProcess::spawn(
        &d.join("data"),
        Some(gov_addr.parse().unwrap()),
        Some(Path::new(&node_key)),
    );
    let url = node.url.clone();

    let out = cli(&url, &["gov", "authorize-regulator", "--key", &gov, "--regulator", &reg_addr]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout(&out).contains("RegulatorAuthorized"));

    let out = cli(
        &url,
        &["reg", "register-institution", "--key", &reg, "--institution", &inst_addr, "--name", "Test College"],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    let meta = write_metadata(d, "CERT-1", &inst_addr);
    let out = cli(&url, &["inst", "issue", "--key", &inst, "--metadata", &meta]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("CertificateIssued"));
    let qr = text.lines().find_map(|l| l.strip_prefix("qr ")).unwrap().to_string();

    let report = d.join("r.scvr");
    let id = format!("{inst_addr}/CERT-1");
    let out = cli(&url, &["verify", "--id", &id, "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("status Valid"));
    let out = cli(&url, &["verify", "--qr", &qr]);
    assert!(stdout(&out).contains("status Valid"), "{out:?}");

    let out = cli(&url, &["report", "check", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let mut tampered = std::fs::read(&report).unwrap();
    let pos = tampered.windows(5).position(|w| w == b"Valid").unwrap();
    tampered[pos..pos + 5].copy_from_slice(b"Vblid");
    std::fs::write(&report, &tampered).unwrap();
    let out = cli(&url, &["report", "check", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // wrong sender: rejected by the registry rules
    let out = cli(&url, &["inst", "revoke", "--key", &reg, "--cert-id", "CERT-1", "--reason", "x"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");

    let out = cli(&url, &["inst", "revoke", "--key", &inst, "--cert-id", "CERT-1", "--reason", "fraud"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let out = cli(&url, &["verify", "--id", &id]);
    assert!(stdout(&out).contains("status Revoked"));
    let out = cli(&url, &["verify", "--id", &format!("{inst_addr}/CERT-404")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("status Unknown"));

    // explicit stale nonce: the node refuses it
    let out = cli(
        &url,
        &["gov", "authorize-regulator", "--key", &gov, "--regulator", &inst_addr, "--nonce", "0"],
    );
    assert_eq!(out.status.code(), Some(3), "{out:?}");

    // --json prints the HTTP body unchanged
    for (args, path) in [
        (vec!["node", "state-root"], "/v1/state-root"),
        (vec!["node", "stats"], "/v1/stats"),
        (vec!["node", "head"], "/v1/head"),
        (vec!["node", "block", "2"], "/v1/blocks/2"),
    ] {
        let mut a = vec!["--json"];
        a.extend(args);
        let out = cli(&url, &a);
        let body = reqwest::blocking::get(format!("{url}{path}")).unwrap().bytes().unwrap();
        assert_eq!(out.stdout.strip_suffix(b"\n").unwrap(), &body[..], "{path}");
    }
    let out = cli(&url, &["--json", "node", "audit"]);
    let audit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(audit["ok"], true);
    let out = cli(&url, &["--json", "role", &inst_addr]);
    let role: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(role["role"], "Institution");
    assert_eq!(role["next_nonce"], 2);
}

#[test]
fn usage_and_transport_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dead = format!("http://127.0.0.1:{}", free_port());
    let (inst, inst_addr) = keygen(d, "inst.key", 3);
    let other = KeyPair::generate(Some(&[8; 32])).unwrap().address().to_string();

    assert_eq!(cli(&dead, &["gov"]).status.code(), Some(2));
    assert_eq!(cli(&dead, &["role", "nonsense"]).status.code(), Some(2));
    assert_eq!(cli(&dead, &["verify"]).status.code(), Some(2));
    assert_eq!(cli(&dead, &["verify", "--hash", "zz"]).status.code(), Some(2));
    assert_eq!(cli(&dead, &["role", &inst_addr]).status.code(), Some(3));
    assert_eq!(cli(&dead, &["node", "head"]).status.code(), Some(3));

    // metadata problems are caught before any network call
    let wrong_owner = write_metadata(d, "CERT-2", &other);
    let out = cli(&dead, &["inst", "issue", "--key", &inst, "--metadata", &wrong_owner]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let good = write_metadata(d, "CERT-3", &inst_addr);
    let mut v: Value = serde_json::from_slice(&std::fs::read(&good).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("degree");
    std::fs::write(&good, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = cli(&dead, &["inst", "issue", "--key", &inst, "--metadata", &good]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn qr_encode_decode() {
    let issuer = KeyPair::generate(Some(&[5; 32])).unwrap().address().to_string();
    let cid = "bafkreibm6jg3ux5qumhcn2b3flc3tyu6dmlb4xa7u5bf44yegnrjhc4yeq";
    let out = cli("http://unused", &["qr", "encode", "--issuer", &issuer, "--cert-id", "BSc/2025 #1", "--cid", cid]);
    assert!(out.status.success());
    let uri = stdout(&out).trim().to_string();
    assert!(uri.starts_with("shikkha:verify?v=1&i="));
    let out = cli("http://unused", &["--json", "qr", "decode", &uri]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cert_id"], "BSc/2025 #1");
    assert_eq!(v["issuer"], issuer);
    assert_eq!(v["cid"], cid);
    assert_eq!(cli("http://unused", &["qr", "decode", "shikkha:verify?v=2"]).status.code(), Some(2));
}

#[test]
fn node_binary_exit_codes_and_graceful_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gov = KeyPair::generate(Some(&[1; 32])).unwrap();

    // first boot needs a government
    let out = run_node_to_exit(&data, None);
    assert_eq!(out.status.code(), Some(2));

    let node = NodeProcess::spawn(&data, Some(gov.address()), None);
    let client = node.client();
    let reg = KeyPair::generate(Some(&[2; 32])).unwrap();
    let tx = credledger_core::identity::sign_transaction(
        &gov,
        credledger_core::TxPayload::AuthorizeRegulator { regulator: reg.address() },
        0,
        credledger_core::node::unix_now(),
    );
    client.submit(&tx).unwrap();
    let root_before = client.get("/v1/state-root").unwrap().body;
    assert_eq!(node.terminate(), Some(0));
    assert!(data.join("state.snapshot").exists());

    // restart without --government: read from genesis record
    let node = NodeProcess::spawn(&data, None, None);
    assert_eq!(node.client().get("/v1/state-root").unwrap().body, root_before);
    node.kill();

    // conflicting government
    let other = KeyPair::generate(Some(&[3; 32])).unwrap().address();
    assert_eq!(run_node_to_exit(&data, Some(other)).status.code(), Some(2));

    // one flipped byte in the ledger
    let ledger = data.join("ledger.log");
    let mut bytes = std::fs::read(&ledger).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&ledger, &bytes).unwrap();
    let out = run_node_to_exit(&data, None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CorruptLedger"));
}
