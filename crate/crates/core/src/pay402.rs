//! HTTP 402 payment handshake: challenge, signed proof, verification and
//! settlement through a pluggable adapter.
//!
//! The bundled [`MockAdapter`] signs with HMAC-SHA256 over the digest of the
//! canonical terms; nothing leaves the process.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::econ::{Ledger, LedgerEntry, LedgerError, Micros, NewEntry};
use crate::{canonical_json, sha256_hex};

pub const DEFAULT_EXPIRY_MS: i64 = 60_000;
pub const MOCK_NETWORK: &str = "mock";

#[derive(Debug, Error)]
pub enum PayError {
    #[error("unknown wallet {0}")]
    UnknownWallet(String),
    #[error("payment proof signature does not verify")]
    BadSignature,
    #[error("payment terms expired")]
    Expired,
    #[error("nonce already consumed")]
    Replay,
    #[error("amount {paid} does not match issued {issued}")]
    AmountMismatch { issued: Micros, paid: Micros },
    #[error("terms were never issued by this gate")]
    UnknownTerms,
    #[error("terms differ from the issued challenge")]
    TermsMismatch,
    #[error("malformed payment header: {0}")]
    MalformedHeader(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentTerms {
    pub amount: Micros,
    pub currency: String,
    pub network: String,
    pub resource: String,
    /// 128-bit, hex.
    pub nonce: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl PaymentTerms {
    pub fn digest(&self) -> String {
        sha256_hex(canonical_json(self).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentProof {
    pub payer: String,
    pub terms_digest: String,
    pub signature: String,
}

/// What travels in the proof header: the proof and the terms it answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentEnvelope {
    pub proof: PaymentProof,
    pub terms: PaymentTerms,
}

impl PaymentEnvelope {
    pub fn to_header(&self) -> String {
        B64.encode(canonical_json(self))
    }

    pub fn from_header(value: &str) -> Result<Self, PayError> {
        let raw = B64.decode(value.trim()).map_err(|e| PayError::MalformedHeader(e.to_string()))?;
        serde_json::from_slice(&raw).map_err(|e| PayError::MalformedHeader(e.to_string()))
    }
}

/// Ledger entries a server settled, for the `X-Payment-Receipt` header.
pub fn encode_receipt(entries: &[LedgerEntry]) -> String {
    B64.encode(canonical_json(entries))
}

pub fn decode_receipt(value: &str) -> Result<Vec<LedgerEntry>, PayError> {
    let raw = B64.decode(value.trim()).map_err(|e| PayError::MalformedHeader(e.to_string()))?;
    serde_json::from_slice(&raw).map_err(|e| PayError::MalformedHeader(e.to_string()))
}

/// A payer's signing secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    pub payer: String,
    #[serde(with = "hex::serde")]
    pub secret: Vec<u8>,
}

impl Wallet {
    pub fn new(payer: impl Into<String>, secret: impl Into<Vec<u8>>) -> Self {
        Wallet { payer: payer.into(), secret: secret.into() }
    }

    pub fn generate(payer: impl Into<String>) -> Self {
        let mut secret = vec![0u8; 32];
        rand::thread_rng().fill_bytes(&mut secret);
        Wallet::new(payer, secret)
    }

    pub fn load(path: &Path) -> Result<Self, PayError> {
        let raw = std::fs::read(path)?;
        serde_json::from_slice(&raw).map_err(|e| PayError::MalformedHeader(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        crate::distill::write_private(path, canonical_json(self).as_bytes())
    }
}

/// Wallets known to the mock settlement network.
#[derive(Debug, Clone, Default)]
pub struct Keyring {
    keys: BTreeMap<String, Vec<u8>>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, w: &Wallet) {
        self.keys.insert(w.payer.clone(), w.secret.clone());
    }

    pub fn with(mut self, w: &Wallet) -> Self {
        self.add(w);
        self
    }

    pub fn secret(&self, payer: &str) -> Option<&[u8]> {
        self.keys.get(payer).map(Vec::as_slice)
    }
}

fn mac_hex(secret: &[u8], msg: &str) -> String {
    let mut m = Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
    m.update(msg.as_bytes());
    hex::encode(m.finalize().into_bytes())
}

/// Deterministic for fixed terms and secret.
pub fn sign_proof(terms: &PaymentTerms, keyring: &Keyring, payer: &str) -> Result<PaymentProof, PayError> {
    let secret = keyring.secret(payer).ok_or_else(|| PayError::UnknownWallet(payer.to_owned()))?;
    let digest = terms.digest();
    Ok(PaymentProof { payer: payer.to_owned(), signature: mac_hex(secret, &digest), terms_digest: digest })
}

pub fn sign_with_wallet(terms: &PaymentTerms, wallet: &Wallet) -> PaymentProof {
    let digest = terms.digest();
    PaymentProof { payer: wallet.payer.clone(), signature: mac_hex(&wallet.secret, &digest), terms_digest: digest }
}

/// Settlement seam. A real network adapter would verify on-chain signatures
/// and move funds; the mock checks a MAC and records to the ledger.
pub trait SettlementAdapter: Send + Sync {
    fn network(&self) -> &str;
    fn verify(&self, proof: &PaymentProof, terms: &PaymentTerms) -> bool;
    fn settle(&self, ledger: &Ledger, entries: Vec<NewEntry>) -> Result<Vec<LedgerEntry>, PayError> {
        Ok(ledger.append_batch(entries)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockAdapter {
    keyring: Arc<Mutex<Keyring>>,
}

impl MockAdapter {
    pub fn new(keyring: Keyring) -> Self {
        MockAdapter { keyring: Arc::new(Mutex::new(keyring)) }
    }

    /// Registers a wallet so its proofs verify.
    pub fn register(&self, w: &Wallet) {
        self.keyring.lock().unwrap_or_else(|e| e.into_inner()).add(w);
    }
}

impl SettlementAdapter for MockAdapter {
    fn network(&self) -> &str {
        MOCK_NETWORK
    }

    fn verify(&self, proof: &PaymentProof, terms: &PaymentTerms) -> bool {
        let ring = self.keyring.lock().unwrap_or_else(|e| e.into_inner());
        let Some(secret) = ring.secret(&proof.payer) else {
            return false;
        };
        let mut m = Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
        m.update(terms.digest().as_bytes());
        // constant-time comparison
        hex::decode(&proof.signature).is_ok_and(|sig| m.verify_slice(&sig).is_ok())
    }
}

#[derive(Default)]
struct NonceState {
    pending: HashMap<String, PaymentTerms>,
    consumed: HashSet<String>,
}

/// Server side of the handshake. Issues terms, and verifies and settles
/// proofs with atomic single-use nonces.
pub struct PaymentGate {
    adapter: Arc<dyn SettlementAdapter>,
    state: Mutex<NonceState>,
    /// Deterministic nonce stream for replayable runs; OS randomness if unset.
    nonce_rng: Option<Mutex<ChaCha8Rng>>,
    pub currency: String,
    pub expiry_ms: i64,
}

impl std::fmt::Debug for PaymentGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PaymentGate").field("network", &self.adapter.network()).finish()
    }
}

impl PaymentGate {
    pub fn new(adapter: Arc<dyn SettlementAdapter>) -> Self {
        PaymentGate {
            adapter,
            state: Mutex::default(),
            nonce_rng: None,
            currency: "USD".into(),
            expiry_ms: DEFAULT_EXPIRY_MS,
        }
    }

    /// Draws nonces from a seeded stream. Only for tests and replays: seeded
    /// nonces are predictable.
    pub fn with_seeded_nonces(mut self, seed: u64) -> Self {
        self.nonce_rng = Some(Mutex::new(ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    /// `None` when the resource is free.
    pub fn challenge(&self, resource: &str, fee: Micros, now: Timestamp) -> Option<PaymentTerms> {
        if fee.is_zero() {
            return None;
        }
        let mut nonce = [0u8; 16];
        match &self.nonce_rng {
            Some(r) => r.lock().unwrap_or_else(|e| e.into_inner()).fill_bytes(&mut nonce),
            None => rand::thread_rng().fill_bytes(&mut nonce),
        }
        let terms = PaymentTerms {
            amount: fee,
            currency: self.currency.clone(),
            network: self.adapter.network().to_owned(),
            resource: resource.to_owned(),
            nonce: hex::encode(nonce),
            issued_at: now,
            expires_at: now + self.expiry_ms,
        };
        self.state.lock().unwrap_or_else(|e| e.into_inner()).pending.insert(terms.nonce.clone(), terms.clone());
        Some(terms)
    }

    /// Checks the proof against the issued terms, consumes the nonce, then
    /// records `entries` through the adapter. If the ledger write fails the
    /// nonce is released so the payer can retry.
    pub fn verify_and_settle(
        &self,
        proof: &PaymentProof,
        terms: &PaymentTerms,
        ledger: &Ledger,
        entries: Vec<NewEntry>,
        now: Timestamp,
    ) -> Result<Vec<LedgerEntry>, PayError> {
        if proof.terms_digest != terms.digest() || !self.adapter.verify(proof, terms) {
            return Err(PayError::BadSignature);
        }
        let issued = {
            let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
            if st.consumed.contains(&terms.nonce) {
                return Err(PayError::Replay);
            }
            let issued = st.pending.get(&terms.nonce).cloned().ok_or(PayError::UnknownTerms)?;
            if issued.amount != terms.amount {
                return Err(PayError::AmountMismatch { issued: issued.amount, paid: terms.amount });
            }
            if issued != *terms {
                return Err(PayError::TermsMismatch);
            }
            if now > issued.expires_at {
                st.pending.remove(&terms.nonce);
                return Err(PayError::Expired);
            }
            st.pending.remove(&terms.nonce);
            st.consumed.insert(terms.nonce.clone());
            issued
        };
        match self.adapter.settle(ledger, entries) {
            Ok(v) => Ok(v),
            Err(e) => {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                st.consumed.remove(&issued.nonce);
                st.pending.insert(issued.nonce.clone(), issued);
                Err(e)
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::EntryKind;

    fn setup() -> (PaymentGate, Wallet, Keyring) {
        let w = Wallet::new("agent-a", b"secret-a".to_vec());
        let ring = Keyring::new().with(&w);
        (PaymentGate::new(Arc::new(MockAdapter::new(ring.clone()))), w, ring)
    }

    fn charge(t: &PaymentTerms) -> Vec<NewEntry> {
        vec![NewEntry::new(0, EntryKind::Tier3, "agent-a", "platform", t.amount, t.nonce.clone())]
    }

    #[test]
    fn happy_path_then_replay() {
        let (gate, w, ring) = setup();
        let ledger = Ledger::in_memory();
        let t = gate.challenge("/v1/skills/search", Micros(1_000), 0).unwrap();
        let p = sign_proof(&t, &ring, &w.payer).unwrap();
        assert_eq!(p, sign_with_wallet(&t, &w));
        assert_eq!(gate.verify_and_settle(&p, &t, &ledger, charge(&t), 10).unwrap().len(), 1);
        assert!(matches!(gate.verify_and_settle(&p, &t, &ledger, charge(&t), 10), Err(PayError::Replay)));
        assert_eq!(ledger.len(), 1);
    }

    #[test]
    fn nonces_are_distinct_and_free_is_ungated() {
        let (gate, _, _) = setup();
        let a = gate.challenge("/r", Micros(1), 0).unwrap();
        let b = gate.challenge("/r", Micros(1), 0).unwrap();
        assert_ne!(a.nonce, b.nonce);
        assert_eq!(a.nonce.len(), 32);
        assert!(gate.challenge("/r", Micros(0), 0).is_none());
    }

    #[test]
    fn seeded_nonces_replay() {
        let draw = || {
            let (gate, _, _) = setup();
            let gate = gate.with_seeded_nonces(7);
            (gate.challenge("/r", Micros(1), 0).unwrap().nonce, gate.challenge("/r", Micros(1), 0).unwrap().nonce)
        };
        let (a, b) = draw();
        assert_ne!(a, b);
        assert_eq!((a, b), draw());
    }

    #[test]
    fn tampering_and_expiry() {
        let (gate, w, ring) = setup();
        let ledger = Ledger::in_memory();
        let t = gate.challenge("/r", Micros(5_000), 0).unwrap();
        let p = sign_proof(&t, &ring, &w.payer).unwrap();
        let mut cheap = t.clone();
        cheap.amount = Micros(1);
        assert!(matches!(gate.verify_and_settle(&p, &cheap, &ledger, charge(&cheap), 1), Err(PayError::BadSignature)));
        // re-signed tampered terms still fail on the amount
        let p2 = sign_proof(&cheap, &ring, &w.payer).unwrap();
        assert!(matches!(
            gate.verify_and_settle(&p2, &cheap, &ledger, charge(&cheap), 1),
            Err(PayError::AmountMismatch { .. })
        ));
        assert!(matches!(
            gate.verify_and_settle(&p, &t, &ledger, charge(&t), t.expires_at + 1),
            Err(PayError::Expired)
        ));
        assert!(ledger.is_empty());
    }

    #[test]
    fn wallets_differ_and_unknown_wallet_errors() {
        let t = PaymentTerms {
            amount: Micros(1),
            currency: "USD".into(),
            network: "mock".into(),
            resource: "/r".into(),
            nonce: "00".into(),
            issued_at: 0,
            expires_at: 1,
        };
        let a = Wallet::new("a", b"k1".to_vec());
        let b = Wallet::new("b", b"k2".to_vec());
        assert_ne!(sign_with_wallet(&t, &a).signature, sign_with_wallet(&t, &b).signature);
        assert!(matches!(sign_proof(&t, &Keyring::new(), "a"), Err(PayError::UnknownWallet(_))));
    }

    #[test]
    fn header_round_trip() {
        let (gate, w, _) = setup();
        let t = gate.challenge("/r", Micros(3), 0).unwrap();
        let env = PaymentEnvelope { proof: sign_with_wallet(&t, &w), terms: t };
        assert_eq!(PaymentEnvelope::from_header(&env.to_header()).unwrap(), env);
        assert!(PaymentEnvelope::from_header("%%%").is_err());
    }

    #[test]
    fn concurrent_settles_single_winner() {
        let (gate, w, _) = setup();
        let gate = Arc::new(gate);
        let ledger = Arc::new(Ledger::in_memory());
        let t = gate.challenge("/r", Micros(7), 0).unwrap();
        let p = sign_with_wallet(&t, &w);
        let wins: usize = std::thread::scope(|s| {
            let hs: Vec<_> = (0..16)
                .map(|_| {
                    let (gate, ledger, t, p) = (gate.clone(), ledger.clone(), t.clone(), p.clone());
                    s.spawn(move || gate.verify_and_settle(&p, &t, &ledger, charge(&t), 0).is_ok() as usize)
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(wins, 1);
        assert_eq!(ledger.len(), 1);
    }
}
