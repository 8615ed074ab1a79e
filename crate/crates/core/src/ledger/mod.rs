//! Append-only consortium ledger.
//!
//! Transactions are submitted into a pending pool and sealed into blocks on
//! demand. Sealing is deterministic: the validator is chosen round-robin
//! over the genesis roster by height, and `sealed_at` is the latest
//! timestamp seen so far, so identical submission sequences give
//! byte-identical chains.

mod block;
pub mod persist;
mod tx;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use block::{merkle_root, Block, Genesis, RosterEntry};
pub use tx::{AgreementTerms, Transaction, TxId, TxKind, TxPayload};
pub use verify::{verify_blocks, ChainVerifier, InvalidReason, ValidityReport};

use crate::codec::Digest;
use crate::crypto::{HmacScheme, SignatureScheme};
use crate::ids::{ActorId, ChannelId, MnoId, WalletId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("transaction {0} already known")]
    DuplicateTx(TxId),
    #[error("signature does not verify for signer {0}")]
    BadSignature(ActorId),
    #[error("payload rejected: {0}")]
    PayloadRejected(String),
    #[error("no key registered for signer {0}")]
    UnknownSigner(ActorId),
    #[error("no pending transactions to seal")]
    EmptyPending,
    #[error("reader {0} is not a consortium member")]
    UnknownReader(MnoId),
    #[error("block 0 does not carry a genesis record")]
    MissingGenesis,
}

/// Where a known transaction lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxLocation {
    Sealed { height: u64, position: usize },
    Pending { position: usize },
}

/// A payload-specific admission check registered by a domain module.
pub type PayloadValidator = Arc<dyn Fn(&Transaction) -> Result<(), String> + Send + Sync>;

#[derive(Debug, Clone, Default)]
pub struct QueryFilter {
    pub kind: Option<TxKind>,
    pub wallet: Option<WalletId>,
    pub channel: Option<ChannelId>,
    pub sealed_only: bool,
}

impl QueryFilter {
    pub fn kind(kind: TxKind) -> Self {
        QueryFilter { kind: Some(kind), ..Default::default() }
    }

    fn matches(&self, tx: &Transaction) -> bool {
        self.kind.is_none_or(|k| tx.kind() == k)
            && self.wallet.as_ref().is_none_or(|w| tx.payload.wallet() == Some(w))
            && self.channel.as_ref().is_none_or(|c| tx.payload.channel() == Some(c))
    }
}

#[derive(Clone)]
pub struct Ledger {
    genesis: Genesis,
    chain: Vec<Block>,
    tx_index: BTreeMap<TxId, TxLocation>,
    channel_index: BTreeMap<ChannelId, Vec<TxId>>,
    pending: Vec<Transaction>,
    roster_set: BTreeSet<MnoId>,
    channel_scopes: BTreeMap<ChannelId, BTreeSet<MnoId>>,
    validators: BTreeMap<TxKind, Vec<PayloadValidator>>,
    scheme: Arc<dyn SignatureScheme>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("height", &self.chain.len())
            .field("pending", &self.pending.len())
            .field("roster", &self.roster_set)
            .finish()
    }
}

impl Ledger {
    pub fn new(genesis: Genesis) -> Self {
        Self::with_scheme(genesis, Arc::new(HmacScheme))
    }

    pub fn with_scheme(genesis: Genesis, scheme: Arc<dyn SignatureScheme>) -> Self {
        assert!(!genesis.roster.is_empty(), "consortium roster must not be empty");
        let roster_set = genesis.roster.iter().map(|e| e.id.clone()).collect();
        Ledger {
            genesis,
            chain: Vec::new(),
            tx_index: BTreeMap::new(),
            channel_index: BTreeMap::new(),
            pending: Vec::new(),
            roster_set,
            channel_scopes: BTreeMap::new(),
            validators: BTreeMap::new(),
            scheme,
        }
    }

    /// Rebuilds a ledger value from sealed blocks without verifying them.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, LedgerError> {
        let genesis = blocks.first().and_then(|b| b.genesis.clone()).ok_or(LedgerError::MissingGenesis)?;
        let mut ledger = Ledger::new(genesis);
        for block in &blocks {
            for (position, tx) in block.txs.iter().enumerate() {
                ledger.tx_index.insert(tx.tx_id, TxLocation::Sealed { height: block.height, position });
                ledger.index_channel(tx);
            }
        }
        ledger.chain = blocks;
        Ok(ledger)
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn scheme(&self) -> &dyn SignatureScheme {
        self.scheme.as_ref()
    }

    pub fn is_member(&self, mno: &MnoId) -> bool {
        self.roster_set.contains(mno)
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn register_validator(&mut self, kind: TxKind, validator: PayloadValidator) {
        self.validators.entry(kind).or_default().push(validator);
    }

    /// Admits a signed transaction into the pending pool.
    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<TxId, LedgerError> {
        if self.tx_index.contains_key(&tx.tx_id) {
            return Err(LedgerError::DuplicateTx(tx.tx_id));
        }
        let key = self.genesis.keys.get(&tx.signer).ok_or_else(|| LedgerError::UnknownSigner(tx.signer.clone()))?;
        if !tx.id_matches() || !self.scheme.verify(key, &tx.tx_id.0, &tx.signature) {
            return Err(LedgerError::BadSignature(tx.signer.clone()));
        }
        tx.payload.check_structure().map_err(LedgerError::PayloadRejected)?;
        if let Some(validators) = self.validators.get(&tx.kind()) {
            for v in validators {
                v(&tx).map_err(LedgerError::PayloadRejected)?;
            }
        }
        let id = tx.tx_id;
        self.tx_index.insert(id, TxLocation::Pending { position: self.pending.len() });
        self.index_channel(&tx);
        self.pending.push(tx);
        Ok(id)
    }

    /// Seals every pending transaction, in submission order, into a new block.
    pub fn seal_block(&mut self) -> Result<&Block, LedgerError> {
        if self.pending.is_empty() {
            return Err(LedgerError::EmptyPending);
        }
        let height = self.height();
        let txs = std::mem::take(&mut self.pending);
        let prev = self.chain.last();
        let prev_hash = prev.map_or(Digest::ZERO, |b| b.block_hash);
        let latest_tx = txs.iter().map(|t| t.timestamp).max().unwrap_or(0);
        let sealed_at = prev.map_or(latest_tx, |b| b.sealed_at.max(latest_tx));
        let validator = self.genesis.validator_for(height).expect("non-empty roster").clone();
        let genesis = (height == 0).then(|| self.genesis.clone());

        let mut block = Block {
            height,
            prev_hash,
            tx_root: Digest::ZERO,
            validator,
            sealed_at,
            block_hash: Digest::ZERO,
            genesis,
            txs,
        };
        block.tx_root = merkle_root(&block.leaves());
        block.block_hash = Block::compute_hash(height, &block.prev_hash, &block.tx_root, &block.validator, sealed_at);
        for (position, tx) in block.txs.iter().enumerate() {
            self.tx_index.insert(tx.tx_id, TxLocation::Sealed { height, position });
        }
        self.chain.push(block);
        Ok(self.chain.last().expect("just pushed"))
    }

    pub fn verify_chain(&self) -> ValidityReport {
        verify_blocks(&self.chain, Some(&self.genesis), self.scheme.as_ref())
    }

    pub fn location(&self, id: &TxId) -> Option<TxLocation> {
        self.tx_index.get(id).copied()
    }

    /// Looks a transaction up in the chain or the pending pool.
    pub fn get_tx(&self, id: &TxId) -> Option<&Transaction> {
        match self.tx_index.get(id)? {
            TxLocation::Sealed { height, position } => {
                self.chain.get(*height as usize).and_then(|b| b.txs.get(*position))
            }
            TxLocation::Pending { position } => self.pending.get(*position),
        }
    }

    pub fn is_sealed(&self, id: &TxId) -> bool {
        matches!(self.tx_index.get(id), Some(TxLocation::Sealed { .. }))
    }

    /// Sealed transactions in chain order, then pending ones.
    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.chain.iter().flat_map(|b| b.txs.iter()).chain(self.pending.iter())
    }

    /// Every transaction naming `channel`, in submission order.
    pub fn channel_txs(&self, channel: &ChannelId) -> Vec<&Transaction> {
        self.channel_index
            .get(channel)
            .map(|ids| ids.iter().filter_map(|id| self.get_tx(id)).collect())
            .unwrap_or_default()
    }

    fn index_channel(&mut self, tx: &Transaction) {
        if let Some(channel) = tx.payload.channel() {
            self.channel_index.entry(channel.clone()).or_default().push(tx.tx_id);
        }
    }

    pub fn grant_scope<'a>(&mut self, channel: &ChannelId, readers: impl IntoIterator<Item = &'a MnoId>) {
        self.channel_scopes.entry(channel.clone()).or_default().extend(readers.into_iter().cloned());
    }

    pub fn is_visible(&self, tx: &Transaction, reader: &MnoId) -> bool {
        if let Some(channel) = tx.payload.channel() {
            return self.channel_scopes.get(channel).is_some_and(|s| s.contains(reader));
        }
        tx.payload.parties().contains(&reader)
    }

    /// Transactions matching `filter` that `reader` is allowed to see.
    pub fn query(&self, reader: &MnoId, filter: &QueryFilter) -> Result<Vec<&Transaction>, LedgerError> {
        if !self.is_member(reader) {
            return Err(LedgerError::UnknownReader(reader.clone()));
        }
        Ok(self.candidates(filter).filter(|tx| self.is_visible(tx, reader)).collect())
    }

    /// The same query with every scope granted (auditor view).
    pub fn query_unrestricted(&self, filter: &QueryFilter) -> Vec<&Transaction> {
        self.candidates(filter).collect()
    }

    fn candidates<'a>(&'a self, filter: &QueryFilter) -> impl Iterator<Item = &'a Transaction> + 'a {
        let filter = filter.clone();
        let pending: &[Transaction] = if filter.sealed_only { &[] } else { &self.pending };
        self.chain.iter().flat_map(|b| b.txs.iter()).chain(pending.iter()).filter(move |tx| filter.matches(tx))
    }

    #[doc(hidden)]
    pub fn blocks_mut_for_tamper_tests(&mut self) -> &mut Vec<Block> {
        &mut self.chain
    }
}
