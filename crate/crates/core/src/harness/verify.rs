use std::fs;
use std::io;
use std::path::Path;

use crate::crypto::HmacScheme;
use crate::ledger::persist::{BlockLines, PersistError};
use crate::ledger::{ChainVerifier, InvalidReason, ValidityReport};
use crate::tokenbank::LedgerReplay;

/// Checks a persisted ledger file: hash chain, signatures, then a token
/// replay with supply closure after every block.
pub fn verify_ledger(path: &Path) -> io::Result<ValidityReport> {
    Ok(verify_ledger_bytes(&fs::read(path)?))
}

/// As [`verify_ledger`] on in-memory bytes. Blocks are parsed and checked
/// one at a time, stopping at the first bad line; a line that fails to
/// parse counts as the block it would hold. Only an intact chain is
/// replayed, since a replay failure under a valid hash chain means the
/// ledger itself recorded an invalid transfer.
pub fn verify_ledger_bytes(bytes: &[u8]) -> ValidityReport {
    let mut chain = ChainVerifier::new(None, &HmacScheme);
    let mut blocks = Vec::new();
    for parsed in BlockLines::new(bytes) {
        let height = chain.height();
        let block = match parsed {
            Ok(b) => b,
            Err(PersistError::Parse { line, detail }) => {
                let detail = format!("line {line}: {detail}");
                return ValidityReport::invalid(line as u64 - 1, InvalidReason::Unparseable { detail });
            }
            Err(PersistError::Io(e)) => {
                return ValidityReport::invalid(height, InvalidReason::Unparseable { detail: e.to_string() })
            }
        };
        if let Err(reason) = chain.push(&block) {
            return ValidityReport::invalid(height, reason);
        }
        blocks.push(block);
    }
    let Some(genesis) = chain.genesis() else {
        return ValidityReport::ok(0);
    };
    let mut replay = LedgerReplay::new(genesis);
    for block in &blocks {
        let fail = |detail: String| ValidityReport::invalid(block.height, InvalidReason::Replay { detail });
        for tx in &block.txs {
            if let Err(e) = replay.apply(tx) {
                return fail(e.to_string());
            }
        }
        if let Err(detail) = replay.bank().check_supply_closure() {
            return fail(detail);
        }
    }
    ValidityReport::ok(chain.height())
}
