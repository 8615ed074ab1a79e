//! JSON-Lines persistence: one sealed block per line, fields in declaration
//! order, no insignificant whitespace.

use std::io::{self, Write};

use super::Block;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_blocks<W: Write>(blocks: &[Block], mut out: W) -> io::Result<()> {
    for block in blocks {
        serde_json::to_writer(&mut out, block)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn blocks_to_bytes(blocks: &[Block]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_blocks(blocks, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Parses a ledger file. Every line, including the last, must be
/// newline-terminated; a missing terminator means the file was truncated.
/// Line numbers are 1-based, so line `n` holds height `n - 1`.
pub fn parse_blocks(bytes: &[u8]) -> Result<Vec<Block>, PersistError> {
    BlockLines::new(bytes).collect()
}

/// Lazily parses a ledger file one line at a time, with the same rules as
/// [`parse_blocks`]. Stops after the first error.
pub struct BlockLines<'a> {
    rest: &'a [u8],
    line: usize,
    failed: bool,
}

impl<'a> BlockLines<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BlockLines { rest: bytes, line: 0, failed: false }
    }
}

impl Iterator for BlockLines<'_> {
    type Item = Result<Block, PersistError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.rest.is_empty() {
            return None;
        }
        self.line += 1;
        let line = self.line;
        let Some(end) = memchr::memchr(b'\n', self.rest) else {
            self.failed = true;
            return Some(Err(PersistError::Parse { line, detail: "unterminated final line".into() }));
        };
        let parsed =
            serde_json::from_slice(&self.rest[..end]).map_err(|e| PersistError::Parse { line, detail: e.to_string() });
        self.failed = parsed.is_err();
        self.rest = &self.rest[end + 1..];
        Some(parsed)
    }
}
