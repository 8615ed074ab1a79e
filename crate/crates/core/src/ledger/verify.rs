use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::Digest;
use crate::crypto::SignatureScheme;

use super::block::{merkle_root, Block, Genesis};

/// Why a block failed verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum InvalidReason {
    HeightMismatch {
        stored: u64,
    },
    MissingGenesis,
    UnexpectedGenesis,
    GenesisMismatch,
    BadPrevHash,
    WrongValidator {
        expected: String,
        found: String,
    },
    EmptyBlock,
    TxIdMismatch {
        position: usize,
    },
    UnknownSigner {
        position: usize,
    },
    BadSignature {
        position: usize,
    },
    BadPayload {
        position: usize,
        detail: String,
    },
    DuplicateTx {
        position: usize,
    },
    SealedBeforeTx {
        position: usize,
    },
    SealTimeRegressed,
    TxRootMismatch,
    BlockHashMismatch,
    /// Set by ledger-file verification when a later check (replay, supply
    /// closure) fails at this height.
    Replay {
        detail: String,
    },
    /// The line holding this block could not be parsed.
    Unparseable {
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub blocks_checked: u64,
    pub first_invalid_height: Option<u64>,
    pub reason: Option<InvalidReason>,
}

impl ValidityReport {
    pub fn ok(blocks_checked: u64) -> Self {
        ValidityReport { valid: true, blocks_checked, first_invalid_height: None, reason: None }
    }

    pub fn invalid(height: u64, reason: InvalidReason) -> Self {
        ValidityReport {
            valid: false,
            blocks_checked: height,
            first_invalid_height: Some(height),
            reason: Some(reason),
        }
    }
}

/// Recomputes every tx id, signature, Merkle root, block hash and link.
/// `expected_genesis` pins the genesis when the caller already knows it (an
/// in-memory ledger); a loaded file takes it from block 0.
pub fn verify_blocks(
    blocks: &[Block],
    expected_genesis: Option<&Genesis>,
    scheme: &dyn SignatureScheme,
) -> ValidityReport {
    let mut v = ChainVerifier::new(expected_genesis.cloned(), scheme);
    for block in blocks {
        if let Err(reason) = v.push(block) {
            return ValidityReport::invalid(v.height(), reason);
        }
    }
    ValidityReport::ok(v.height())
}

/// Block-at-a-time form of [`verify_blocks`], for streaming a chain.
pub struct ChainVerifier<'s> {
    scheme: &'s dyn SignatureScheme,
    expected_genesis: Option<Genesis>,
    genesis: Option<Genesis>,
    seen: BTreeSet<Digest>,
    prev: Option<(Digest, u64)>,
    height: u64,
}

impl<'s> ChainVerifier<'s> {
    pub fn new(expected_genesis: Option<Genesis>, scheme: &'s dyn SignatureScheme) -> Self {
        ChainVerifier { scheme, expected_genesis, genesis: None, seen: BTreeSet::new(), prev: None, height: 0 }
    }

    /// Height the next block must have; equals the number accepted so far.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn genesis(&self) -> Option<&Genesis> {
        self.genesis.as_ref()
    }

    /// Checks `block` as the next one in the chain.
    pub fn push(&mut self, block: &Block) -> Result<(), InvalidReason> {
        if self.height == 0 {
            let g = match (&block.genesis, &self.expected_genesis) {
                (None, _) => return Err(InvalidReason::MissingGenesis),
                (Some(g), Some(expected)) if g != expected => return Err(InvalidReason::GenesisMismatch),
                (Some(g), _) => g.clone(),
            };
            self.genesis = Some(g);
        }
        let genesis = self.genesis.as_ref().expect("set at height 0");
        check_block(block, self.height, self.prev, genesis, self.scheme, &mut self.seen)?;
        self.prev = Some((block.block_hash, block.sealed_at));
        self.height += 1;
        Ok(())
    }
}

fn check_block(
    block: &Block,
    height: u64,
    prev: Option<(Digest, u64)>,
    genesis: &Genesis,
    scheme: &dyn SignatureScheme,
    seen: &mut BTreeSet<Digest>,
) -> Result<(), InvalidReason> {
    if block.height != height {
        return Err(InvalidReason::HeightMismatch { stored: block.height });
    }
    match prev {
        None => {
            if block.prev_hash != Digest::ZERO {
                return Err(InvalidReason::BadPrevHash);
            }
        }
        Some((prev_hash, prev_sealed)) => {
            if block.genesis.is_some() {
                return Err(InvalidReason::UnexpectedGenesis);
            }
            if block.prev_hash != prev_hash {
                return Err(InvalidReason::BadPrevHash);
            }
            if block.sealed_at < prev_sealed {
                return Err(InvalidReason::SealTimeRegressed);
            }
        }
    }
    let expected_validator = genesis.validator_for(height).expect("genesis roster is non-empty");
    if &block.validator != expected_validator {
        return Err(InvalidReason::WrongValidator {
            expected: expected_validator.to_string(),
            found: block.validator.to_string(),
        });
    }
    if block.txs.is_empty() {
        return Err(InvalidReason::EmptyBlock);
    }
    for (position, tx) in block.txs.iter().enumerate() {
        if !tx.id_matches() {
            return Err(InvalidReason::TxIdMismatch { position });
        }
        let Some(key) = genesis.keys.get(&tx.signer) else {
            return Err(InvalidReason::UnknownSigner { position });
        };
        if !scheme.verify(key, &tx.tx_id.0, &tx.signature) {
            return Err(InvalidReason::BadSignature { position });
        }
        if let Err(detail) = tx.payload.check_structure() {
            return Err(InvalidReason::BadPayload { position, detail });
        }
        if tx.timestamp > block.sealed_at {
            return Err(InvalidReason::SealedBeforeTx { position });
        }
        if !seen.insert(tx.tx_id) {
            return Err(InvalidReason::DuplicateTx { position });
        }
    }
    if merkle_root(&block.leaves()) != block.tx_root {
        return Err(InvalidReason::TxRootMismatch);
    }
    let hash = Block::compute_hash(height, &block.prev_hash, &block.tx_root, &block.validator, block.sealed_at);
    if hash != block.block_hash {
        return Err(InvalidReason::BlockHashMismatch);
    }
    Ok(())
}
