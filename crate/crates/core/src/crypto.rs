//! Signatures.
//!
//! The ledger only needs to answer "did this actor sign these bytes", so the
//! scheme is a trait object. The default is HMAC-SHA256 over a per-actor
//! secret that is published in the genesis block; any real signature scheme
//! can be slotted in by implementing [`SignatureScheme`].

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::codec::{self, Encoder};
use crate::ids::ActorId;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Signature(#[serde(with = "codec::hex_bytes")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = faster_hex::hex_string(&self.0);
        write!(f, "Signature({})", &h[..h.len().min(16)])
    }
}

/// Key material as registered for an actor.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyMaterial(#[serde(with = "codec::hex_bytes")] pub Vec<u8>);

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyMaterial(..)")
    }
}

pub trait SignatureScheme: Send + Sync {
    fn sign(&self, key: &KeyMaterial, msg: &[u8]) -> Signature;
    fn verify(&self, key: &KeyMaterial, msg: &[u8], sig: &Signature) -> bool;
}

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Default, Clone, Copy)]
pub struct HmacScheme;

impl SignatureScheme for HmacScheme {
    fn sign(&self, key: &KeyMaterial, msg: &[u8]) -> Signature {
        let mut mac = HmacSha256::new_from_slice(&key.0).expect("hmac accepts any key length");
        mac.update(msg);
        Signature(mac.finalize().into_bytes().to_vec())
    }

    fn verify(&self, key: &KeyMaterial, msg: &[u8], sig: &Signature) -> bool {
        let mut mac = HmacSha256::new_from_slice(&key.0).expect("hmac accepts any key length");
        mac.update(msg);
        mac.verify_slice(&sig.0).is_ok()
    }
}

/// Derives an actor's secret from the scenario seed, so key material is
/// reproducible without any OS entropy.
pub fn derive_key(seed: u64, actor: &ActorId) -> KeyMaterial {
    let mut enc = Encoder::new();
    enc.str("dice/actor-key").u64(seed).str(actor.as_str());
    KeyMaterial(codec::sha256(&enc.finish()).0.to_vec())
}

/// Actor → key lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyRing(pub BTreeMap<ActorId, KeyMaterial>);

impl KeyRing {
    pub fn insert(&mut self, actor: ActorId, key: KeyMaterial) {
        self.0.insert(actor, key);
    }

    pub fn get(&self, actor: &ActorId) -> Option<&KeyMaterial> {
        self.0.get(actor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hmac_sign_verify() {
        let key = derive_key(7, &ActorId::new("MNO-A"));
        let other = derive_key(7, &ActorId::new("MNO-B"));
        let sig = HmacScheme.sign(&key, b"payload");
        assert!(HmacScheme.verify(&key, b"payload", &sig));
        assert!(!HmacScheme.verify(&key, b"payloaD", &sig));
        assert!(!HmacScheme.verify(&other, b"payload", &sig));
    }

    #[test]
    fn derived_keys_depend_on_seed() {
        let a = ActorId::new("R-1");
        assert_eq!(derive_key(1, &a), derive_key(1, &a));
        assert_ne!(derive_key(1, &a), derive_key(2, &a));
    }
}
