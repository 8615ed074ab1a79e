use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Canonical, Digest, Encoder};
use crate::crypto::KeyRing;
use crate::ids::MnoId;

use super::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub id: MnoId,
    pub may_issue: bool,
}

impl Canonical for RosterEntry {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.id).bool(self.may_issue);
    }
}

/// Consortium formation: the member roster and every signer's key.
/// Carried by the block at height 0 and covered by its `tx_root`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genesis {
    pub created_at: u64,
    pub roster: Vec<RosterEntry>,
    pub keys: KeyRing,
}

impl Genesis {
    pub fn member(&self, id: &MnoId) -> Option<&RosterEntry> {
        self.roster.iter().find(|e| &e.id == id)
    }

    /// Round-robin validator for a block height.
    pub fn validator_for(&self, height: u64) -> Option<&MnoId> {
        if self.roster.is_empty() {
            return None;
        }
        Some(&self.roster[(height % self.roster.len() as u64) as usize].id)
    }
}

impl Canonical for Genesis {
    fn encode(&self, enc: &mut Encoder) {
        enc.str("dice/genesis").u64(self.created_at).seq(&self.roster);
        enc.u64(self.keys.0.len() as u64);
        for (actor, key) in &self.keys.0 {
            enc.encode(actor).bytes(&key.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub validator: MnoId,
    pub sealed_at: u64,
    pub block_hash: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genesis: Option<Genesis>,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn compute_hash(
        height: u64,
        prev_hash: &Digest,
        tx_root: &Digest,
        validator: &MnoId,
        sealed_at: u64,
    ) -> Digest {
        let mut enc = Encoder::new();
        enc.str("dice/block").u64(height).digest(prev_hash).digest(tx_root).encode(validator).u64(sealed_at);
        sha256(&enc.finish())
    }

    /// Merkle leaves: the genesis digest (height 0 only) followed by the
    /// stored transaction ids.
    pub fn leaves(&self) -> Vec<Digest> {
        let mut leaves = Vec::with_capacity(self.txs.len() + 1);
        if let Some(g) = &self.genesis {
            leaves.push(g.canonical_digest());
        }
        leaves.extend(self.txs.iter().map(|t| t.tx_id));
        leaves
    }
}

/// Binary SHA-256 Merkle root. Odd levels duplicate their last node; the
/// root of no leaves is all zeros.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let left = pair[0];
                let right = *pair.get(1).unwrap_or(&left);
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(&left.0);
                buf[32..].copy_from_slice(&right.0);
                sha256(&buf)
            })
            .collect();
    }
    level[0]
}
