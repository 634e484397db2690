//! Seeded generator of valid transaction sequences, for replay and load tests.
//!
//! The generator mirrors chain state locally so that every transaction it
//! emits is properly signed, carries a fresh nonce and passes the registry
//! rules when applied in order.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::cas::{canonicalize_metadata, compute_cid, MetadataDocument, METADATA_SCHEMA};
use crate::chainstate::{ChainState, Role};
use crate::identity::{sign_transaction, Address, KeyPair, SignedTransaction, TxPayload};

/// One step of a workload. `metadata`, when present, must be stored before
/// the transaction is submitted.
#[derive(Debug, Clone)]
pub struct WorkItem {
    pub metadata: Option<Vec<u8>>,
    pub tx: SignedTransaction,
}

pub struct Workload {
    rng: ChaCha20Rng,
    government: KeyPair,
    keys: HashMap<Address, KeyPair>,
    nonces: HashMap<Address, u64>,
    mirror: ChainState,
    issued: Vec<(Address, String)>,
    next_key: u64,
    next_cert: u64,
    timestamp: u64,
}

impl Workload {
    pub fn new(seed: u64, start_timestamp: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let government = KeyPair::generate(Some(&rng.gen::<[u8; 32]>())).expect("32-byte seed");
        let mut mirror = ChainState::new();
        mirror
            .init_genesis(government.address())
            .expect("fresh state");
        Self {
            rng,
            government,
            keys: HashMap::new(),
            nonces: HashMap::new(),
            mirror,
            issued: Vec::new(),
            next_key: 0,
            next_cert: 0,
            timestamp: start_timestamp,
        }
    }

    pub fn government(&self) -> Address {
        self.government.address()
    }

    pub fn key(&self, address: &Address) -> Option<&KeyPair> {
        if *address == self.government.address() {
            Some(&self.government)
        } else {
            self.keys.get(address)
        }
    }

    /// Locally mirrored state after every item produced so far.
    pub fn mirror(&self) -> &ChainState {
        &self.mirror
    }

    fn fresh_key(&mut self) -> Address {
        let seed: [u8; 32] = self.rng.gen();
        let key = KeyPair::generate(Some(&seed)).expect("32-byte seed");
        let addr = key.address();
        self.keys.insert(addr, key);
        self.next_key += 1;
        addr
    }

    fn with_role(&self, role: Role) -> Vec<Address> {
        let mut out: Vec<Address> = match role {
            Role::Regulator => self.mirror.regulators().map(|(a, _)| *a).collect(),
            Role::Institution => self.mirror.institutions().map(|(a, _)| *a).collect(),
            _ => Vec::new(),
        };
        out.retain(|a| self.mirror.role_of(a) == role);
        out
    }

    fn sign(&mut self, sender: Address, payload: TxPayload) -> SignedTransaction {
        let nonce = self.nonces.entry(sender).or_insert(0);
        let this = *nonce;
        *nonce += 1;
        self.timestamp += 1;
        let key = self.key(&sender).expect("generator owns every sender key");
        sign_transaction(key, payload, this, self.timestamp)
    }

    /// Produces the next valid item.
    pub fn next_item(&mut self) -> WorkItem {
        let regulators = self.with_role(Role::Regulator);
        let institutions = self.with_role(Role::Institution);
        let valid_certs: Vec<(Address, String)> = self
            .issued
            .iter()
            .filter(|(i, c)| {
                self.mirror.role_of(i) == Role::Institution
                    && matches!(
                        self.mirror.verify_certificate(i, c),
                        crate::chainstate::CertLookup::Valid(_)
                    )
            })
            .cloned()
            .collect();

        let roll: u32 = self.rng.gen_range(0..100);
        let item = if regulators.is_empty() || (roll < 5 && regulators.len() < 6) {
            let reg = self.fresh_key();
            let gov = self.government.address();
            WorkItem {
                metadata: None,
                tx: self.sign(gov, TxPayload::AuthorizeRegulator { regulator: reg }),
            }
        } else if institutions.is_empty() || (roll < 15 && institutions.len() < 12) {
            let reg = *regulators.choose(&mut self.rng).expect("non-empty");
            let inst = self.fresh_key();
            let name = format!("Institution {}", self.next_key);
            WorkItem {
                metadata: None,
                tx: self.sign(reg, TxPayload::RegisterInstitution { institution: inst, name }),
            }
        } else if roll < 17 && regulators.len() > 1 {
            let reg = *regulators.choose(&mut self.rng).expect("non-empty");
            let gov = self.government.address();
            WorkItem {
                metadata: None,
                tx: self.sign(gov, TxPayload::RevokeRegulator { regulator: reg }),
            }
        } else if roll < 19 && institutions.len() > 2 {
            let reg = *regulators.choose(&mut self.rng).expect("non-empty");
            let inst = *institutions.choose(&mut self.rng).expect("non-empty");
            WorkItem {
                metadata: None,
                tx: self.sign(reg, TxPayload::DeactivateInstitution { institution: inst }),
            }
        } else if roll < 35 && !valid_certs.is_empty() {
            let (issuer, cert_id) = valid_certs.choose(&mut self.rng).expect("non-empty").clone();
            let reason = format!("revocation {}", self.rng.gen::<u16>());
            WorkItem {
                metadata: None,
                tx: self.sign(issuer, TxPayload::RevokeCertificate { cert_id, reason }),
            }
        } else {
            let issuer = *institutions.choose(&mut self.rng).expect("non-empty");
            self.issue_from(issuer)
        };
        let height = self.timestamp;
        let events = self.mirror.apply(&item.tx, height);
        debug_assert!(!events[0].is_rejected(), "generator produced {events:?}");
        item
    }

    fn issue_from(&mut self, issuer: Address) -> WorkItem {
        self.next_cert += 1;
        let cert_id = format!("CERT-{:05}-{}", self.next_cert, self.rng.gen_range(1000..9999));
        let name = self
            .mirror
            .institution(&issuer)
            .map(|i| i.name.clone())
            .unwrap_or_default();
        let doc = sample_metadata(&mut self.rng, &cert_id, &issuer, &name);
        let bytes = canonicalize_metadata(&doc).expect("generated metadata is valid");
        let cid = compute_cid(&bytes).expect("metadata is small");
        self.issued.push((issuer, cert_id.clone()));
        let tx = self.sign(
            issuer,
            TxPayload::IssueCertificate {
                cert_id,
                cid,
                metadata_hash: *cid.digest(),
            },
        );
        WorkItem {
            metadata: Some(bytes),
            tx,
        }
    }

    /// Onboards one regulator and one institution, then issues `count`
    /// certificates from that institution.
    pub fn issuance_batch(&mut self, count: usize) -> (Address, Vec<WorkItem>) {
        let mut items = Vec::with_capacity(count + 2);
        let reg = self.fresh_key();
        let gov = self.government.address();
        items.push(WorkItem {
            metadata: None,
            tx: self.sign(gov, TxPayload::AuthorizeRegulator { regulator: reg }),
        });
        let inst = self.fresh_key();
        items.push(WorkItem {
            metadata: None,
            tx: self.sign(
                reg,
                TxPayload::RegisterInstitution {
                    institution: inst,
                    name: "Batch University".into(),
                },
            ),
        });
        for item in &items {
            self.mirror.apply(&item.tx, 0);
        }
        for _ in 0..count {
            let item = self.issue_from(inst);
            self.mirror.apply(&item.tx, 0);
            items.push(item);
        }
        (inst, items)
    }

    pub fn take(&mut self, n: usize) -> Vec<WorkItem> {
        (0..n).map(|_| self.next_item()).collect()
    }
}

pub fn sample_metadata(
    rng: &mut impl Rng,
    cert_id: &str,
    issuer: &Address,
    institution_name: &str,
) -> MetadataDocument {
    const DEGREES: [&str; 4] = [
        "Bachelor of Science",
        "Bachelor of Arts",
        "Master of Science",
        "Doctor of Philosophy",
    ];
    const FIELDS: [&str; 4] = ["Computer Science", "Physics", "Economics", "Bangla Literature"];
    let mut extra = BTreeMap::new();
    if rng.gen_bool(0.3) {
        extra.insert("credits".to_string(), serde_json::json!(rng.gen_range(120..160)));
    }
    MetadataDocument {
        schema: METADATA_SCHEMA.into(),
        cert_id: cert_id.into(),
        student_name: format!("Student {}", rng.gen::<u32>()),
        student_id_hash: hex::encode(rng.gen::<[u8; 32]>()),
        degree: DEGREES[rng.gen_range(0..DEGREES.len())].into(),
        field_of_study: FIELDS[rng.gen_range(0..FIELDS.len())].into(),
        institution_address: issuer.to_string(),
        institution_name: if institution_name.is_empty() {
            "Unnamed".into()
        } else {
            institution_name.into()
        },
        issue_date: format!(
            "20{:02}-{:02}-{:02}",
            rng.gen_range(10..26),
            rng.gen_range(1..13),
            rng.gen_range(1..29)
        ),
        grade: rng.gen_bool(0.5).then(|| format!("CGPA {}.{:02}", rng.gen_range(2..4), rng.gen_range(0..100))),
        extra,
    }
}
