//! Canonical binary encoding and SHA-256 digests.
//!
//! Every hashed or signed structure is encoded field by field in declaration
//! order: integers as fixed-width big-endian, variable-length data with a
//! `u64` length prefix, enum variants with a one-byte tag. The encoding is
//! never decoded; it only feeds the hash.

use std::borrow::Cow;
use std::fmt;

use faster_hex::CheckCase;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        faster_hex::hex_string(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        match faster_hex::hex_decode_array_with_case(s.as_bytes(), CheckCase::Lower) {
            Ok(arr) => Ok(Digest(arr)),
            Err(faster_hex::Error::LengthMismatch { actual, .. }) => Err(HexError::Length(actual)),
            Err(_) => Err(HexError::NotCanonical),
        }
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <Cow<'de, str>>::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HexError {
    #[error("hex string must be lowercase [0-9a-f] with even length")]
    NotCanonical,
    #[error("expected 32 bytes, got {0}")]
    Length(usize),
}

/// Decodes hex, rejecting uppercase digits so that every byte string has
/// exactly one textual form.
pub fn decode_strict_hex(s: &str) -> Result<Vec<u8>, HexError> {
    faster_hex::hex_decode_vec_with_case(s.as_bytes(), CheckCase::Lower).map_err(|_| HexError::NotCanonical)
}

/// Serde helper for `Vec<u8>` fields stored as strict lowercase hex.
pub mod hex_bytes {
    use std::borrow::Cow;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&faster_hex::hex_string(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = <Cow<'de, str>>::deserialize(d)?;
        super::decode_strict_hex(&s).map_err(de::Error::custom)
    }
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Append-only writer for the canonical encoding.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(&mut self, t: u8) -> &mut Self {
        self.buf.push(t);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.buf.push(v as u8);
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn encode<T: Canonical + ?Sized>(&mut self, v: &T) -> &mut Self {
        v.encode(self);
        self
    }

    pub fn seq<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u64(items.len() as u64);
        for item in items {
            item.encode(self);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Types with a fixed, field-ordered binary form.
pub trait Canonical {
    fn encode(&self, enc: &mut Encoder);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    fn canonical_digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_hex_is_strict() {
        let d = sha256(b"abc");
        let hex = d.to_hex();
        assert_eq!(Digest::from_hex(&hex).unwrap(), d);
        assert_eq!(Digest::from_hex(&hex.to_uppercase()), Err(HexError::NotCanonical));
        assert_eq!(Digest::from_hex("00"), Err(HexError::Length(1)));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn length_prefix_separates_fields() {
        let mut a = Encoder::new();
        a.str("ab").str("c");
        let mut b = Encoder::new();
        b.str("a").str("bc");
        assert_ne!(a.finish(), b.finish());
    }
}
