//! The protocol engine: one owner for the ledger, the token bank, every
//! payment channel and every roamer session. Channel, protocol and
//! settlement operations are methods on [`Engine`] defined in their own
//! modules.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{BalanceProof, PaymentChannel, RoamerChannel};
use crate::codec::Encoder;
use crate::crypto::{derive_key, HmacScheme, KeyMaterial, KeyRing, SignatureScheme};
use crate::ids::{ActorId, ChannelId, MnoId, SessionId, WalletId};
use crate::ledger::{
    Genesis, Ledger, LedgerError, PayloadValidator, RosterEntry, Transaction, TxId, TxKind, TxPayload,
};
use crate::protocol::{Event, EventKind, RoamerSession, RoamingAgreement};
use crate::settlement::FiatLedger;
use crate::tokenbank::{issue_validator, BankError, TokenBank};

pub const DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub timelock_window: u64,
    pub inactivity_window: u64,
    /// Charge a started 100KB block at cooperative close.
    pub round_partial_block: bool,
    pub expected_visit_bytes: u64,
    /// Keep every accepted proof for export.
    pub record_proofs: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            timelock_window: 7 * DAY,
            inactivity_window: DAY,
            round_partial_block: true,
            expected_visit_bytes: 2_500_000,
            record_proofs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub proofs_accepted: u64,
    pub proofs_rejected: u64,
    pub rounding_tokens: u64,
    pub bytes_serviced: u64,
    pub bytes_unserviced: u64,
    pub attach_rejected: u64,
}

pub struct Engine {
    pub(crate) config: EngineConfig,
    pub(crate) ledger: Ledger,
    pub(crate) bank: TokenBank,
    /// Signing keys for every actor, including roamer wallets. Only the
    /// operator keys are published in genesis.
    pub(crate) keys: KeyRing,
    pub(crate) scheme: Arc<dyn SignatureScheme>,
    pub(crate) rng: ChaCha20Rng,
    pub(crate) channels: BTreeMap<ChannelId, PaymentChannel>,
    pub(crate) roamer_channels: BTreeMap<ChannelId, RoamerChannel>,
    pub(crate) latest_proofs: BTreeMap<ChannelId, BalanceProof>,
    pub(crate) agreements: BTreeMap<(MnoId, MnoId), RoamingAgreement>,
    pub(crate) sessions: BTreeMap<SessionId, RoamerSession>,
    pub(crate) channel_sessions: BTreeMap<ChannelId, SessionId>,
    pub(crate) fiat: FiatLedger,
    pub(crate) events: Vec<Event>,
    pub(crate) proof_log: Vec<BalanceProof>,
    pub(crate) stats: EngineStats,
    next_roamer: u64,
    pub(crate) next_channel: u64,
    pub(crate) next_session: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("ledger", &self.ledger)
            .field("channels", &self.channels.len())
            .field("sessions", &self.sessions.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown operator {0}")]
    UnknownMno(MnoId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

fn signer_must_be(kind: TxKind, pick: fn(&TxPayload) -> Option<&MnoId>) -> (TxKind, PayloadValidator) {
    let v: PayloadValidator = Arc::new(move |tx: &Transaction| match pick(&tx.payload) {
        Some(expected) if expected.as_str() != tx.signer.as_str() => {
            Err(format!("{kind} must be signed by {expected}, not {}", tx.signer))
        }
        _ => Ok(()),
    });
    (kind, v)
}

impl Engine {
    /// An engine over a fresh ledger whose genesis lists `roster`.
    pub fn new(config: EngineConfig, roster: Vec<RosterEntry>) -> Self {
        let mut keys = KeyRing::default();
        let mut published = KeyRing::default();
        for entry in &roster {
            let actor = ActorId::from(&entry.id);
            let key = derive_key(config.seed, &actor);
            keys.insert(actor.clone(), key.clone());
            published.insert(actor, key);
        }
        let genesis = Genesis { created_at: 0, roster: roster.clone(), keys: published };
        let scheme: Arc<dyn SignatureScheme> = Arc::new(HmacScheme);
        let mut ledger = Ledger::with_scheme(genesis, scheme.clone());
        ledger.register_validator(TxKind::Issue, issue_validator());
        for (kind, v) in [
            signer_must_be(TxKind::AgreementRegistration, |p| match p {
                TxPayload::AgreementRegistration { hmno, .. } => Some(hmno),
                _ => None,
            }),
            signer_must_be(TxKind::AttachCheck, |p| match p {
                TxPayload::AttachCheck { vmno, .. } => Some(vmno),
                _ => None,
            }),
            signer_must_be(TxKind::ChannelOpen, |p| match p {
                TxPayload::ChannelOpen { vmno, .. } => Some(vmno),
                _ => None,
            }),
            signer_must_be(TxKind::Redeem, |p| match p {
                TxPayload::Redeem { hmno, .. } => Some(hmno),
                _ => None,
            }),
        ] {
            ledger.register_validator(kind, v);
        }
        let mut rng_seed = Encoder::new();
        rng_seed.str("dice/engine-rng").u64(config.seed);
        let rng = ChaCha20Rng::from_seed(crate::codec::sha256(&rng_seed.finish()).0);
        Engine {
            bank: TokenBank::new(&roster),
            fiat: FiatLedger::new(roster.iter().map(|e| e.id.clone())),
            config,
            ledger,
            keys,
            scheme,
            rng,
            channels: BTreeMap::new(),
            roamer_channels: BTreeMap::new(),
            latest_proofs: BTreeMap::new(),
            agreements: BTreeMap::new(),
            sessions: BTreeMap::new(),
            channel_sessions: BTreeMap::new(),
            events: Vec::new(),
            proof_log: Vec::new(),
            stats: EngineStats::default(),
            next_roamer: 0,
            next_channel: 0,
            next_session: 0,
        }
    }

    /// Convenience constructor: every listed operator may issue.
    pub fn with_mnos<'a>(config: EngineConfig, mnos: impl IntoIterator<Item = &'a str>) -> Self {
        let roster = mnos.into_iter().map(|m| RosterEntry { id: MnoId::new(m), may_issue: true }).collect();
        Self::new(config, roster)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn bank(&self) -> &TokenBank {
        &self.bank
    }

    pub fn fiat(&self) -> &FiatLedger {
        &self.fiat
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn proof_log(&self) -> &[BalanceProof] {
        &self.proof_log
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn channel(&self, id: &ChannelId) -> Option<&PaymentChannel> {
        self.channels.get(id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &PaymentChannel> {
        self.channels.values()
    }

    pub fn latest_proof(&self, id: &ChannelId) -> Option<&BalanceProof> {
        self.latest_proofs.get(id)
    }

    pub fn session(&self, id: &SessionId) -> Option<&RoamerSession> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &RoamerSession> {
        self.sessions.values()
    }

    pub fn agreement(&self, hmno: &MnoId, vmno: &MnoId) -> Option<&RoamingAgreement> {
        self.agreements.get(&(hmno.clone(), vmno.clone()))
    }

    pub fn seal(&mut self) -> Option<u64> {
        self.ledger.seal_block().ok().map(|b| b.height)
    }

    /// Signs `payload` as operator `signer` and submits it.
    pub(crate) fn submit(&mut self, now: u64, signer: &MnoId, payload: TxPayload) -> Result<TxId, LedgerError> {
        let actor = ActorId::from(signer);
        let key = self.keys.get(&actor).ok_or_else(|| LedgerError::UnknownSigner(actor.clone()))?.clone();
        let tx = Transaction::new_signed(now, actor, payload, &key, self.scheme.as_ref());
        self.ledger.submit_transaction(tx)
    }

    /// The signing key of a roamer wallet. The engine plays every roamer,
    /// so it holds these too.
    pub fn wallet_key(&mut self, wallet: &WalletId) -> KeyMaterial {
        let actor = ActorId::new(format!("wallet:{wallet}"));
        if let Some(k) = self.keys.get(&actor) {
            return k.clone();
        }
        let k = derive_key(self.config.seed, &actor);
        self.keys.insert(actor, k.clone());
        k
    }

    pub(crate) fn log(&mut self, time: u64, session: Option<&SessionId>, kind: EventKind) {
        self.events.push(Event { time, session_id: session.cloned(), kind });
    }

    /// Creates a roamer of `hmno` with one wallet funded by `allotment`
    /// tokens (one on-chain Issue; none when `allotment` is zero).
    pub fn enroll_roamer(
        &mut self,
        hmno: &MnoId,
        allotment: u64,
        now: u64,
    ) -> Result<(ActorId, WalletId), EngineError> {
        if !self.ledger.is_member(hmno) {
            return Err(EngineError::UnknownMno(hmno.clone()));
        }
        self.next_roamer += 1;
        let roamer = ActorId::new(format!("roamer-{:08}", self.next_roamer));
        let wallet = self.add_wallet(&roamer, hmno, allotment, now)?;
        Ok((roamer, wallet))
    }

    /// Gives `roamer` another wallet identity. Wallet ids are random so they
    /// reveal nothing about their owner.
    pub fn add_wallet(
        &mut self,
        roamer: &ActorId,
        hmno: &MnoId,
        allotment: u64,
        now: u64,
    ) -> Result<WalletId, EngineError> {
        let wallet = loop {
            let raw: [u8; 12] = self.rng.random();
            let id = WalletId::new(format!("w-{}", faster_hex::hex_string(&raw)));
            if self.bank.wallet(&id).is_err() {
                break id;
            }
        };
        self.bank.open_wallet(wallet.clone(), hmno.clone(), Some(roamer.clone()))?;
        if allotment > 0 {
            self.issue(hmno, &wallet, allotment, now)?;
        }
        Ok(wallet)
    }

    /// Issues `amount` tokens of `hmno` into one of its customers' wallets.
    pub fn issue(&mut self, hmno: &MnoId, wallet: &WalletId, amount: u64, now: u64) -> Result<TxId, EngineError> {
        self.bank.check_issue(hmno, wallet, amount as i64)?;
        let tx = self.submit(
            now,
            hmno,
            TxPayload::Issue { issuer: hmno.clone(), wallet: wallet.clone(), amount: amount as i64 },
        )?;
        self.bank.credit_issue(hmno, wallet, amount, tx)?;
        Ok(tx)
    }

    /// Direct wallet-to-wallet move outside any channel. Honest roamers never
    /// do this; it exists to model acquisition paths settlement must refuse.
    pub fn transfer_direct(
        &mut self,
        from: &WalletId,
        to: &WalletId,
        issuer: &MnoId,
        amount: u64,
        cause: TxId,
    ) -> Result<Vec<crate::ids::LotId>, EngineError> {
        Ok(self.bank.transfer(from, to, issuer, amount, cause)?)
    }

    #[doc(hidden)]
    pub fn bank_mut_for_adversarial_tests(&mut self) -> &mut TokenBank {
        &mut self.bank
    }

    #[doc(hidden)]
    pub fn submit_as_for_adversarial_tests(
        &mut self,
        now: u64,
        signer: &MnoId,
        payload: TxPayload,
    ) -> Result<TxId, LedgerError> {
        self.submit(now, signer, payload)
    }
}
