//! Pluggable crypto contract used by the composition protocol.
//!
//! [`LedgerCrypto`] is a deterministic model, not a cipher: it tracks which
//! holon holds which composition secret so that confinement can be audited,
//! and sealing succeeds or fails purely on ledger membership.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::holon::HolonId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecretId(pub u64);

impl fmt::Display for SecretId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: Vec<u8>,
    pub secret: Vec<u8>,
}

/// Ciphertext tagged with the secret it was sealed under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub secret: SecretId,
    pub ciphertext: Vec<u8>,
}

pub trait CryptoProvider {
    fn generate_keypair(&mut self, owner: &HolonId) -> KeyPair;
    fn sign(&self, signer: &KeyPair, message: &[u8]) -> Vec<u8>;
    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool;

    /// Creates a fresh group secret with no holders.
    fn generate_secret(&mut self) -> SecretId;
    /// Records that `holder` received `secret`.
    fn grant(&mut self, holder: &HolonId, secret: SecretId);
    /// Forgets an undistributed or rejected secret entirely.
    fn destroy(&mut self, secret: SecretId);
    fn holders(&self, secret: SecretId) -> BTreeSet<HolonId>;
    fn holds(&self, holder: &HolonId, secret: SecretId) -> bool;

    fn seal(&self, secret: SecretId, plaintext: &[u8]) -> Sealed;
    /// Succeeds only when `holder` has been granted the sealing secret.
    fn unseal(&self, holder: &HolonId, sealed: &Sealed) -> Option<Vec<u8>>;
}

#[derive(Debug, Default, Clone)]
pub struct LedgerCrypto {
    key_counter: u64,
    secrets: BTreeMap<SecretId, [u8; 32]>,
    ledger: BTreeMap<SecretId, BTreeSet<HolonId>>,
    next_secret: u64,
}

impl LedgerCrypto {
    pub fn new() -> Self {
        Self::default()
    }

    /// Secrets currently known to the ledger, destroyed ones excluded.
    pub fn live_secrets(&self) -> impl Iterator<Item = SecretId> + '_ {
        self.secrets.keys().copied()
    }

    fn keystream(key: &[u8; 32], len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut block = 0u64;
        while out.len() < len {
            let mut h = Sha256::new();
            h.update(key);
            h.update(block.to_be_bytes());
            out.extend_from_slice(&h.finalize());
            block += 1;
        }
        out.truncate(len);
        out
    }
}

fn public_from_secret(secret: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"pk");
    h.update(secret);
    h.finalize().to_vec()
}

fn signature(public: &[u8], message: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"sig");
    h.update(public);
    h.update(message);
    h.finalize().to_vec()
}

impl CryptoProvider for LedgerCrypto {
    fn generate_keypair(&mut self, owner: &HolonId) -> KeyPair {
        self.key_counter += 1;
        let mut h = Sha256::new();
        h.update(b"sk");
        h.update(owner.as_str().as_bytes());
        h.update(self.key_counter.to_be_bytes());
        let secret = h.finalize().to_vec();
        KeyPair { public: public_from_secret(&secret), secret }
    }

    fn sign(&self, signer: &KeyPair, message: &[u8]) -> Vec<u8> {
        signature(&signer.public, message)
    }

    fn verify(&self, public: &[u8], message: &[u8], sig: &[u8]) -> bool {
        signature(public, message) == sig
    }

    fn generate_secret(&mut self) -> SecretId {
        self.next_secret += 1;
        let id = SecretId(self.next_secret);
        let mut h = Sha256::new();
        h.update(b"group");
        h.update(id.0.to_be_bytes());
        self.secrets.insert(id, h.finalize().into());
        self.ledger.insert(id, BTreeSet::new());
        id
    }

    fn grant(&mut self, holder: &HolonId, secret: SecretId) {
        if self.secrets.contains_key(&secret) {
            self.ledger.entry(secret).or_default().insert(holder.clone());
        }
    }

    fn destroy(&mut self, secret: SecretId) {
        self.secrets.remove(&secret);
        self.ledger.remove(&secret);
    }

    fn holders(&self, secret: SecretId) -> BTreeSet<HolonId> {
        self.ledger.get(&secret).cloned().unwrap_or_default()
    }

    fn holds(&self, holder: &HolonId, secret: SecretId) -> bool {
        self.ledger.get(&secret).is_some_and(|h| h.contains(holder))
    }

    fn seal(&self, secret: SecretId, plaintext: &[u8]) -> Sealed {
        let ciphertext = match self.secrets.get(&secret) {
            Some(key) => plaintext
                .iter()
                .zip(Self::keystream(key, plaintext.len()))
                .map(|(p, k)| p ^ k)
                .collect(),
            None => Vec::new(),
        };
        Sealed { secret, ciphertext }
    }

    fn unseal(&self, holder: &HolonId, sealed: &Sealed) -> Option<Vec<u8>> {
        if !self.holds(holder, sealed.secret) {
            return None;
        }
        let key = self.secrets.get(&sealed.secret)?;
        Some(
            sealed
                .ciphertext
                .iter()
                .zip(Self::keystream(key, sealed.ciphertext.len()))
                .map(|(c, k)| c ^ k)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_and_verify() {
        let mut c = LedgerCrypto::new();
        let kp = c.generate_keypair(&"C2".into());
        let sig = c.sign(&kp, b"hello");
        assert!(c.verify(&kp.public, b"hello", &sig));
        assert!(!c.verify(&kp.public, b"hellO", &sig));
        let other = c.generate_keypair(&"C2".into());
        assert_ne!(other.public, kp.public);
        assert!(!c.verify(&other.public, b"hello", &sig));
    }

    #[test]
    fn unseal_requires_grant() {
        let mut c = LedgerCrypto::new();
        let s = c.generate_secret();
        c.grant(&"A".into(), s);
        let sealed = c.seal(s, b"payload");
        assert_ne!(sealed.ciphertext, b"payload");
        assert_eq!(c.unseal(&"A".into(), &sealed).unwrap(), b"payload");
        assert!(c.unseal(&"B".into(), &sealed).is_none());
        c.destroy(s);
        assert!(c.holders(s).is_empty());
        assert!(c.unseal(&"A".into(), &sealed).is_none());
    }
}
