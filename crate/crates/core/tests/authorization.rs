//! Exhaustive role x payload authorization matrix.

use credledger_core::cas::compute_cid;
use credledger_core::chainstate::{ChainState, Event, RejectReason, Role};
use credledger_core::identity::{sign_transaction, KeyPair, TxPayload};

fn key(b: u8) -> KeyPair {
    KeyPair::generate(Some(&[b; 32])).unwrap()
}

fn permitted(role: Role, kind: &str) -> bool {
    matches!(
        (role, kind),
        (Role::Government, "authorize_regulator")
            | (Role::Government, "revoke_regulator")
            | (Role::Regulator, "register_institution")
            | (Role::Regulator, "deactivate_institution")
            | (Role::Institution, "issue_certificate")
            | (Role::Institution, "revoke_certificate")
    )
}

/// Government, two regulators, two institutions (each holding one certificate
/// `C-<n>`) and a public address. Returns state and actor keys by role.
fn world() -> (ChainState, [KeyPair; 4], KeyPair, KeyPair) {
    let (g, r1, r2, i1, i2, p) = (key(1), key(2), key(3), key(4), key(5), key(6));
    let mut s = ChainState::new();
    s.init_genesis(g.address()).unwrap();
    let mut n = 0;
    let mut run = |s: &mut ChainState, k: &KeyPair, payload: TxPayload| {
        n += 1;
        let ev = s.apply(&sign_transaction(k, payload, n, 1_700_000_000), n);
        assert!(!ev[0].is_rejected(), "{ev:?}");
    };
    run(&mut s, &g, TxPayload::AuthorizeRegulator { regulator: r1.address() });
    run(&mut s, &g, TxPayload::AuthorizeRegulator { regulator: r2.address() });
    run(&mut s, &r1, TxPayload::RegisterInstitution { institution: i1.address(), name: "A".into() });
    run(&mut s, &r1, TxPayload::RegisterInstitution { institution: i2.address(), name: "B".into() });
    for (k, id) in [(&i1, "C-1"), (&i2, "C-2")] {
        let cid = compute_cid(id.as_bytes()).unwrap();
        run(&mut s, k, TxPayload::IssueCertificate { cert_id: id.into(), cid, metadata_hash: *cid.digest() });
    }
    (s, [g, r1, i1, p], r2, i2)
}

#[test]
fn every_cell_matches_the_table() {
    let mut checked = 0;
    for (ri, role) in Role::ALL.into_iter().enumerate() {
        for kind in TxPayload::KINDS {
            let (mut s, actors, r2, i2) = world();
            let sender = &actors[ri];
            assert_eq!(s.role_of(&sender.address()), role);
            let cid = compute_cid(b"fresh").unwrap();
            let payload = match kind {
                "authorize_regulator" => TxPayload::AuthorizeRegulator { regulator: key(40).address() },
                "revoke_regulator" => TxPayload::RevokeRegulator { regulator: r2.address() },
                "register_institution" => TxPayload::RegisterInstitution {
                    institution: key(41).address(),
                    name: "New College".into(),
                },
                "deactivate_institution" => TxPayload::DeactivateInstitution { institution: i2.address() },
                "issue_certificate" => TxPayload::IssueCertificate {
                    cert_id: "NEW-1".into(),
                    cid,
                    metadata_hash: *cid.digest(),
                },
                "revoke_certificate" => TxPayload::RevokeCertificate {
                    cert_id: "C-1".into(),
                    reason: "matrix".into(),
                },
                other => unreachable!("{other}"),
            };
            let root = s.state_root();
            let tx = sign_transaction(sender, payload, 1_000, 1_700_000_000);
            let ev = s.apply(&tx, 100).pop().unwrap();
            if permitted(role, kind) {
                assert!(!ev.is_rejected(), "{role:?} x {kind} should be allowed, got {ev:?}");
                assert_ne!(s.state_root(), root);
            } else {
                assert_eq!(
                    ev,
                    Event::Rejected { reason: RejectReason::Unauthorized },
                    "{role:?} x {kind}"
                );
                assert_eq!(s.state_root(), root);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 24);
}
