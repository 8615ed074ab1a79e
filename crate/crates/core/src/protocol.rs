//! The roamer lifecycle: agreement registration, the on-chain attach check,
//! profile provisioning, the payment channel session and detach.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelError, ChannelStatus, CloseReason, SweepReport, BLOCK_BYTES};
use crate::engine::Engine;
use crate::ids::{ActorId, ChannelId, MnoId, SessionId, WalletId};
use crate::ledger::{AgreementTerms, LedgerError, TxId, TxPayload};
use crate::settlement::{ChargingModel, Money};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Local breakout: the visited network provisions a local profile.
    Lbo,
    /// Home-routed: no profile change.
    Hr,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lbo => "lbo",
            Mode::Hr => "hr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Home,
    Checked,
    Contracted,
    Provisioned,
    ChannelOpen,
    Active,
    Closing,
    Settled,
}

impl SessionState {
    /// Whether `self → to` is a legal step for a session in `mode`.
    pub fn can_step(self, to: SessionState, mode: Mode) -> bool {
        use SessionState::*;
        matches!(
            (self, to, mode),
            (Home, Checked, _)
                | (Checked, Contracted, _)
                | (Contracted, Provisioned, Mode::Lbo)
                | (Provisioned, ChannelOpen, Mode::Lbo)
                | (Contracted, ChannelOpen, Mode::Hr)
                | (ChannelOpen, Active, _)
                | (ChannelOpen, Closing, _)
                | (Active, Closing, _)
                | (Closing, Settled, _)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoamingAgreement {
    pub hmno: MnoId,
    pub vmno: MnoId,
    pub accepts_tokens_of: BTreeSet<MnoId>,
    pub charging_model: ChargingModel,
    pub registered_tx: TxId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachRefusal {
    NoAgreement,
    NoTokens,
    UnverifiableIssuance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoamerSession {
    pub session_id: SessionId,
    pub roamer: ActorId,
    pub active_wallet: WalletId,
    pub hmno: MnoId,
    pub vmno: MnoId,
    pub mode: Mode,
    pub state: SessionState,
    pub channel: Option<ChannelId>,
    pub opened_at: u64,
    pub closed_at: Option<u64>,
    pub attach_tx: Option<TxId>,
    pub refusal: Option<AttachRefusal>,
    pub history: Vec<SessionState>,
    pub proofs_accepted: u64,
    pub bytes_serviced: u64,
    pub unserviced_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceDecision {
    pub accepted: bool,
    pub tx_id: TxId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("an agreement between {hmno} and {vmno} is already registered")]
    DuplicateAgreement { hmno: MnoId, vmno: MnoId },
    #[error("unknown operator {0}")]
    UnknownMno(MnoId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown wallet {0}")]
    UnknownWallet(WalletId),
    #[error("operation not allowed in state {0:?}")]
    WrongState(SessionState),
    #[error("operation not available in {0} mode")]
    WrongMode(Mode),
    #[error("no roaming agreement accepts these tokens")]
    NoAgreement,
    #[error("wallet holds no tokens of the home operator")]
    NoTokens,
    #[error("token issuance cannot be verified on the ledger")]
    UnverifiableIssuance,
    #[error("invalid charging model: {0}")]
    InvalidTerms(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl From<AttachRefusal> for ProtocolError {
    fn from(r: AttachRefusal) -> Self {
        match r {
            AttachRefusal::NoAgreement => ProtocolError::NoAgreement,
            AttachRefusal::NoTokens => ProtocolError::NoTokens,
            AttachRefusal::UnverifiableIssuance => ProtocolError::UnverifiableIssuance,
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: u64,
    pub session_id: Option<SessionId>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    AgreementRegistered { hmno: MnoId, vmno: MnoId, tx_id: TxId },
    SessionCreated { wallet: WalletId, hmno: MnoId, vmno: MnoId },
    StateChanged { from: SessionState, to: SessionState },
    AttachDecision { accepted: bool, refusal: Option<AttachRefusal>, tx_id: TxId },
    ChannelOpened { channel: ChannelId, deposit: u64, tx_id: TxId },
    ProofsAccepted { channel: ChannelId, count: u64, cumulative: u64 },
    DepositExhausted { channel: ChannelId, unserviced_bytes: u64 },
    ChannelClosed { channel: ChannelId, paid: u64, refunded: u64, rounding: u64, reason: CloseReason, tx_id: TxId },
    ProfileReverted,
    Redeemed { vmno: MnoId, hmno: MnoId, tokens: u64, fiat: Money, tx_id: TxId },
}

impl EventKind {
    /// Events that exist only because of local-breakout profile handling.
    pub fn is_provisioning(&self) -> bool {
        match self {
            EventKind::StateChanged { from, to } => {
                *from == SessionState::Provisioned || *to == SessionState::Provisioned
            }
            EventKind::ProfileReverted => true,
            _ => false,
        }
    }
}

pub fn write_events<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Result of feeding traffic into a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficOutcome {
    pub proofs_accepted: u64,
    pub unserviced_bytes: u64,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvents {
    pub session_id: SessionId,
    pub channel: ChannelId,
    pub proofs_accepted: u64,
    pub unserviced_bytes: u64,
    pub exhausted: bool,
    pub onchain_txs: Vec<TxId>,
}

impl Engine {
    pub fn register_agreement(
        &mut self,
        hmno: &MnoId,
        vmno: &MnoId,
        terms: AgreementTerms,
        now: u64,
    ) -> Result<TxId, ProtocolError> {
        for m in [hmno, vmno] {
            if !self.ledger.is_member(m) {
                return Err(ProtocolError::UnknownMno(m.clone()));
            }
        }
        let key = (hmno.clone(), vmno.clone());
        if self.agreements.contains_key(&key) {
            return Err(ProtocolError::DuplicateAgreement { hmno: hmno.clone(), vmno: vmno.clone() });
        }
        terms.charging_model.validate().map_err(ProtocolError::InvalidTerms)?;
        let tx = self.submit(
            now,
            hmno,
            TxPayload::AgreementRegistration { hmno: hmno.clone(), vmno: vmno.clone(), terms: terms.clone() },
        )?;
        self.agreements.insert(
            key,
            RoamingAgreement {
                hmno: hmno.clone(),
                vmno: vmno.clone(),
                accepts_tokens_of: terms.accepts_tokens_of.into_iter().collect(),
                charging_model: terms.charging_model,
                registered_tx: tx,
            },
        );
        self.log(now, None, EventKind::AgreementRegistered { hmno: hmno.clone(), vmno: vmno.clone(), tx_id: tx });
        Ok(tx)
    }

    /// Starts a session for a roamer arriving at `vmno` with `wallet`.
    pub fn new_session(
        &mut self,
        roamer: &ActorId,
        wallet: &WalletId,
        vmno: &MnoId,
        mode: Mode,
        now: u64,
    ) -> Result<SessionId, ProtocolError> {
        if !self.ledger.is_member(vmno) {
            return Err(ProtocolError::UnknownMno(vmno.clone()));
        }
        let hmno = self.bank.wallet(wallet).map_err(|_| ProtocolError::UnknownWallet(wallet.clone()))?.home_mno.clone();
        self.next_session += 1;
        let id = SessionId::new(format!("S-{:08}", self.next_session));
        self.sessions.insert(
            id.clone(),
            RoamerSession {
                session_id: id.clone(),
                roamer: roamer.clone(),
                active_wallet: wallet.clone(),
                hmno: hmno.clone(),
                vmno: vmno.clone(),
                mode,
                state: SessionState::Home,
                channel: None,
                opened_at: now,
                closed_at: None,
                attach_tx: None,
                refusal: None,
                history: vec![SessionState::Home],
                proofs_accepted: 0,
                bytes_serviced: 0,
                unserviced_bytes: 0,
            },
        );
        self.log(now, Some(&id), EventKind::SessionCreated { wallet: wallet.clone(), hmno, vmno: vmno.clone() });
        Ok(id)
    }

    fn session_ref(&self, id: &SessionId) -> Result<&RoamerSession, ProtocolError> {
        self.sessions.get(id).ok_or_else(|| ProtocolError::UnknownSession(id.clone()))
    }

    fn step(&mut self, id: &SessionId, to: SessionState, now: u64) -> Result<(), ProtocolError> {
        let s = self.sessions.get_mut(id).ok_or_else(|| ProtocolError::UnknownSession(id.clone()))?;
        let from = s.state;
        if !from.can_step(to, s.mode) {
            return Err(ProtocolError::WrongState(from));
        }
        s.state = to;
        s.history.push(to);
        self.log(now, Some(id), EventKind::StateChanged { from, to });
        Ok(())
    }

    /// The attach-time contract check. Its outcome, accepted or not, is
    /// recorded in one AttachCheck transaction.
    pub fn attach_check(&mut self, id: &SessionId, now: u64) -> Result<AcceptanceDecision, ProtocolError> {
        let s = self.session_ref(id)?;
        if s.state != SessionState::Home {
            return Err(ProtocolError::WrongState(s.state));
        }
        let (wallet, hmno, vmno) = (s.active_wallet.clone(), s.hmno.clone(), s.vmno.clone());
        let refusal = self.evaluate_attach(&wallet, &hmno, &vmno);
        let tx_id = self.submit(
            now,
            &vmno,
            TxPayload::AttachCheck {
                session: id.clone(),
                roamer_wallet: wallet,
                vmno: vmno.clone(),
                hmno,
                accepted: refusal.is_none(),
            },
        )?;
        let s = self.sessions.get_mut(id).expect("checked");
        s.attach_tx = Some(tx_id);
        s.refusal = refusal;
        self.log(now, Some(id), EventKind::AttachDecision { accepted: refusal.is_none(), refusal, tx_id });
        if let Some(r) = refusal {
            self.stats.attach_rejected += 1;
            return Err(r.into());
        }
        self.step(id, SessionState::Checked, now)?;
        self.step(id, SessionState::Contracted, now)?;
        Ok(AcceptanceDecision { accepted: true, tx_id })
    }

    fn evaluate_attach(&self, wallet: &WalletId, hmno: &MnoId, vmno: &MnoId) -> Option<AttachRefusal> {
        match self.agreement(hmno, vmno) {
            Some(a) if a.accepts_tokens_of.contains(hmno) => {}
            _ => return Some(AttachRefusal::NoAgreement),
        }
        let lots: Vec<_> = match self.bank.held(wallet, Some(hmno)) {
            Ok(it) => it.filter(|l| l.locked_by.is_none()).collect(),
            Err(_) => return Some(AttachRefusal::NoTokens),
        };
        if lots.iter().map(|l| l.amount).sum::<u64>() == 0 {
            return Some(AttachRefusal::NoTokens);
        }
        let verified = lots.iter().all(|l| {
            l.lineage.first().is_some_and(|root| {
                matches!(
                    self.ledger.get_tx(&root.tx_id).map(|t| &t.payload),
                    Some(TxPayload::Issue { issuer, wallet: w, .. }) if issuer == hmno && *w == root.holder
                )
            })
        });
        (!verified).then_some(AttachRefusal::UnverifiableIssuance)
    }

    /// Local-breakout profile download, as a state transition.
    pub fn provision_profile(&mut self, id: &SessionId, now: u64) -> Result<(), ProtocolError> {
        let s = self.session_ref(id)?;
        if s.state != SessionState::Contracted {
            return Err(ProtocolError::WrongState(s.state));
        }
        if s.mode != Mode::Lbo {
            return Err(ProtocolError::WrongMode(s.mode));
        }
        self.step(id, SessionState::Provisioned, now)
    }

    /// Deposit locked when none is given: enough for the expected visit,
    /// capped by the wallet balance.
    pub fn default_deposit(&self, wallet: &WalletId) -> u64 {
        let Ok(w) = self.bank.wallet(wallet) else { return 0 };
        let balance = self.bank.balance(wallet, Some(&w.home_mno)).unwrap_or(0);
        balance.min(self.config.expected_visit_bytes.div_ceil(BLOCK_BYTES))
    }

    /// Opens the session's payment channel.
    pub fn open_session_channel(
        &mut self,
        id: &SessionId,
        deposit: Option<u64>,
        now: u64,
    ) -> Result<ChannelId, ProtocolError> {
        let s = self.session_ref(id)?;
        let ready = match s.mode {
            Mode::Hr => SessionState::Contracted,
            Mode::Lbo => SessionState::Provisioned,
        };
        if s.state != ready {
            return Err(ProtocolError::WrongState(s.state));
        }
        let (wallet, vmno) = (s.active_wallet.clone(), s.vmno.clone());
        let deposit = deposit.unwrap_or_else(|| self.default_deposit(&wallet));
        let channel = self.open_channel(&wallet, &vmno, deposit, now)?;
        self.channel_sessions.insert(channel.clone(), id.clone());
        self.sessions.get_mut(id).expect("checked").channel = Some(channel.clone());
        let tx_id = self.channels[&channel].open_tx;
        self.log(now, Some(id), EventKind::ChannelOpened { channel: channel.clone(), deposit, tx_id });
        self.step(id, SessionState::ChannelOpen, now)?;
        Ok(channel)
    }

    /// Feeds `bytes` of traffic through the session's channel: the roamer
    /// signs proofs and the VMNO checks and stores them.
    pub fn session_traffic(&mut self, id: &SessionId, bytes: u64, now: u64) -> Result<TrafficOutcome, ProtocolError> {
        let s = self.session_ref(id)?;
        if !matches!(s.state, SessionState::ChannelOpen | SessionState::Active) {
            return Err(ProtocolError::WrongState(s.state));
        }
        let (channel, vmno) = (s.channel.clone().expect("set once a channel is open"), s.vmno.clone());
        if s.state == SessionState::ChannelOpen {
            self.step(id, SessionState::Active, now)?;
        }
        let before = self.stats.bytes_serviced;
        let (proofs, unserviced_bytes, exhausted) = match self.pay_for_traffic(&channel, bytes, now) {
            Ok(p) => (p, 0, false),
            Err(ChannelError::DepositExhausted { proofs, unserviced_bytes }) => (proofs, unserviced_bytes, true),
            Err(e) => return Err(e.into()),
        };
        let mut accepted = 0;
        for p in &proofs {
            self.receive_proof(&vmno, p)?;
            accepted += 1;
        }
        let serviced = self.stats.bytes_serviced - before;
        let s = self.sessions.get_mut(id).expect("checked");
        s.proofs_accepted += accepted;
        s.bytes_serviced += serviced;
        s.unserviced_bytes += unserviced_bytes;
        if accepted > 0 {
            let cumulative = self.channels[&channel].cumulative_paid;
            self.log(
                now,
                Some(id),
                EventKind::ProofsAccepted { channel: channel.clone(), count: accepted, cumulative },
            );
        }
        if exhausted {
            self.log(now, Some(id), EventKind::DepositExhausted { channel, unserviced_bytes });
        }
        Ok(TrafficOutcome { proofs_accepted: accepted, unserviced_bytes, exhausted })
    }

    /// Opens the channel and replays a traffic trace of `(time, bytes)` in
    /// time order. An LBO session still in `Contracted` is provisioned
    /// first.
    pub fn run_session(
        &mut self,
        id: &SessionId,
        trace: &[(u64, u64)],
        deposit: Option<u64>,
    ) -> Result<SessionEvents, ProtocolError> {
        let s = self.session_ref(id)?;
        let start = s.opened_at;
        if s.mode == Mode::Lbo && s.state == SessionState::Contracted {
            self.provision_profile(id, start)?;
        }
        let channel = self.open_session_channel(id, deposit, start)?;
        let mut trace = trace.to_vec();
        trace.sort_by_key(|&(t, _)| t);
        let mut out = SessionEvents {
            session_id: id.clone(),
            channel: channel.clone(),
            proofs_accepted: 0,
            unserviced_bytes: 0,
            exhausted: false,
            onchain_txs: Vec::new(),
        };
        if trace.is_empty() {
            self.step(id, SessionState::Active, start)?;
        }
        for (t, bytes) in trace {
            if out.exhausted {
                out.unserviced_bytes += bytes;
                self.sessions.get_mut(id).expect("checked").unserviced_bytes += bytes;
                self.stats.bytes_unserviced += bytes;
                continue;
            }
            let o = self.session_traffic(id, bytes, t)?;
            out.proofs_accepted += o.proofs_accepted;
            out.unserviced_bytes += o.unserviced_bytes;
            out.exhausted |= o.exhausted;
        }
        let s = &self.sessions[id];
        out.onchain_txs.extend(s.attach_tx);
        out.onchain_txs.push(self.channels[&channel].open_tx);
        Ok(out)
    }

    /// Roamer leaves: the channel is closed cooperatively (unless a timeout
    /// already closed it) and the session settles.
    pub fn detach(&mut self, id: &SessionId, now: u64) -> Result<(), ProtocolError> {
        let s = self.session_ref(id)?;
        if !matches!(s.state, SessionState::Active | SessionState::ChannelOpen) {
            return Err(ProtocolError::WrongState(s.state));
        }
        let channel = s.channel.clone().expect("set once a channel is open");
        self.step(id, SessionState::Closing, now)?;
        if self.channels[&channel].status == ChannelStatus::Open {
            self.close_channel(&channel, self.config.round_partial_block, now)?;
            self.log_close(Some(id), &channel);
        }
        self.finish_session(id, now)
    }

    fn finish_session(&mut self, id: &SessionId, now: u64) -> Result<(), ProtocolError> {
        if self.sessions[id].mode == Mode::Lbo {
            self.log(now, Some(id), EventKind::ProfileReverted);
        }
        self.step(id, SessionState::Settled, now)?;
        self.sessions.get_mut(id).expect("checked").closed_at = Some(now);
        Ok(())
    }

    /// Runs the channel timeout sweep and settles the sessions whose
    /// channels it closed.
    pub fn sweep(&mut self, now: u64) -> SweepReport {
        let report = self.timeout_sweep(now);
        for channel in &report.closed {
            let session = self.channel_sessions.get(channel).cloned();
            self.log_close(session.as_ref(), channel);
            if let Some(id) = session {
                if matches!(self.sessions[&id].state, SessionState::Active | SessionState::ChannelOpen) {
                    self.step(&id, SessionState::Closing, now).expect("legal from an open state");
                    self.finish_session(&id, now).expect("legal from closing");
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, DAY};
    use crate::ledger::TxKind;
    use crate::tokenbank::LineageEntry;
    use proptest::prelude::*;

    fn m(s: &str) -> MnoId {
        MnoId::new(s)
    }

    fn terms(hmno: &str) -> AgreementTerms {
        AgreementTerms { accepts_tokens_of: vec![m(hmno)], charging_model: ChargingModel::default() }
    }

    fn engine() -> Engine {
        let mut e = Engine::with_mnos(EngineConfig::default(), ["H", "V", "W"]);
        e.register_agreement(&m("H"), &m("V"), terms("H"), 0).unwrap();
        e
    }

    fn session(e: &mut Engine, mode: Mode, allotment: u64) -> SessionId {
        let (r, w) = e.enroll_roamer(&m("H"), allotment, 0).unwrap();
        e.new_session(&r, &w, &m("V"), mode, 10).unwrap()
    }

    fn count(e: &Engine) -> usize {
        e.ledger().transactions().count()
    }

    #[test]
    fn agreement_registration() {
        let mut e = engine();
        assert_eq!(
            e.register_agreement(&m("H"), &m("V"), terms("H"), 1),
            Err(ProtocolError::DuplicateAgreement { hmno: m("H"), vmno: m("V") })
        );
        assert_eq!(e.register_agreement(&m("H"), &m("Z"), terms("H"), 1), Err(ProtocolError::UnknownMno(m("Z"))));
        assert!(e.agreement(&m("H"), &m("V")).is_some());
    }

    #[test]
    fn attach_accepted_with_one_tx() {
        let mut e = engine();
        let s = session(&mut e, Mode::Lbo, 100);
        let before = count(&e);
        let d = e.attach_check(&s, 11).unwrap();
        assert!(d.accepted);
        assert_eq!(count(&e) - before, 1);
        assert_eq!(e.session(&s).unwrap().state, SessionState::Contracted);
    }

    #[test]
    fn attach_refusals() {
        let mut e = engine();
        let (r, w) = e.enroll_roamer(&m("H"), 100, 0).unwrap();
        let s = e.new_session(&r, &w, &m("W"), Mode::Hr, 1).unwrap();
        let before = count(&e);
        assert_eq!(e.attach_check(&s, 2), Err(ProtocolError::NoAgreement));
        assert_eq!(count(&e) - before, 1, "the refusal is still recorded");
        assert_eq!(e.session(&s).unwrap().state, SessionState::Home);

        let empty = session(&mut e, Mode::Hr, 0);
        assert_eq!(e.attach_check(&empty, 2), Err(ProtocolError::NoTokens));
        assert!(matches!(e.session_traffic(&empty, 1_000_000, 3), Err(ProtocolError::WrongState(SessionState::Home))));
    }

    #[test]
    fn forged_lot_is_unverifiable() {
        let mut e = engine();
        let forged = session(&mut e, Mode::Hr, 0);
        let w = e.session(&forged).unwrap().active_wallet.clone();
        let fake = LineageEntry { holder: w.clone(), tx_id: crate::codec::sha256(b"nowhere") };
        e.bank_mut_for_adversarial_tests().insert_forged_lot(&w, &m("H"), 25, vec![fake]);
        assert_eq!(e.attach_check(&forged, 2), Err(ProtocolError::UnverifiableIssuance));
    }

    #[test]
    fn provisioning_rules() {
        let mut e = engine();
        let lbo = session(&mut e, Mode::Lbo, 100);
        e.attach_check(&lbo, 11).unwrap();
        e.provision_profile(&lbo, 12).unwrap();
        assert_eq!(e.session(&lbo).unwrap().state, SessionState::Provisioned);

        let hr = session(&mut e, Mode::Hr, 100);
        e.attach_check(&hr, 11).unwrap();
        assert_eq!(e.provision_profile(&hr, 12), Err(ProtocolError::WrongMode(Mode::Hr)));

        let active = session(&mut e, Mode::Lbo, 100);
        e.attach_check(&active, 11).unwrap();
        e.run_session(&active, &[(20, 500_000)], None).unwrap();
        assert_eq!(e.provision_profile(&active, 30), Err(ProtocolError::WrongState(SessionState::Active)));
    }

    #[test]
    fn happy_path_three_txs_25_proofs() {
        let mut e = engine();
        let s = session(&mut e, Mode::Lbo, 100);
        let before = count(&e);
        e.attach_check(&s, 11).unwrap();
        let ev = e.run_session(&s, &[(20, 1_000_000), (30, 1_500_000)], Some(25)).unwrap();
        assert_eq!(ev.proofs_accepted, 25);
        e.detach(&s, 40).unwrap();
        assert_eq!(count(&e) - before, 3);
        assert_eq!(e.bank().balance(&crate::ids::WalletId::treasury(&m("V")), None).unwrap(), 25);
        assert_eq!(e.session(&s).unwrap().state, SessionState::Settled);
        assert_eq!(e.detach(&s, 41), Err(ProtocolError::WrongState(SessionState::Settled)));
    }

    #[test]
    fn silent_session_closed_by_sweep_still_three_txs() {
        let mut e = engine();
        let s = session(&mut e, Mode::Hr, 100);
        let before = count(&e);
        e.attach_check(&s, 11).unwrap();
        let ev = e.run_session(&s, &[], None).unwrap();
        assert_eq!(ev.proofs_accepted, 0);
        e.sweep(10 + DAY);
        assert_eq!(e.session(&s).unwrap().state, SessionState::Settled);
        assert_eq!(count(&e) - before, 3);
        let kinds: Vec<_> = e.ledger().transactions().skip(before).map(|t| t.kind()).collect();
        assert_eq!(kinds, vec![TxKind::AttachCheck, TxKind::ChannelOpen, TxKind::ChannelClose]);
    }

    #[test]
    fn exhaustion_is_surfaced() {
        let mut e = engine();
        let s = session(&mut e, Mode::Hr, 100);
        e.attach_check(&s, 11).unwrap();
        let ev = e.run_session(&s, &[(20, 400_000), (30, 400_000)], Some(5)).unwrap();
        assert!(ev.exhausted);
        assert_eq!(ev.proofs_accepted, 5);
        assert_eq!(ev.unserviced_bytes, 300_000);
    }

    #[test]
    fn detach_before_traffic_refunds() {
        let mut e = engine();
        let s = session(&mut e, Mode::Hr, 100);
        e.attach_check(&s, 11).unwrap();
        e.open_session_channel(&s, None, 12).unwrap();
        e.detach(&s, 13).unwrap();
        let w = e.session(&s).unwrap().active_wallet.clone();
        assert_eq!(e.bank().balance(&w, None).unwrap(), 100);
    }

    #[test]
    fn default_deposit_covers_expected_visit() {
        let mut e = engine();
        let (_, w) = e.enroll_roamer(&m("H"), 100, 0).unwrap();
        assert_eq!(e.default_deposit(&w), 25);
        let (_, small) = e.enroll_roamer(&m("H"), 7, 0).unwrap();
        assert_eq!(e.default_deposit(&small), 7);
    }

    #[test]
    fn events_export_as_jsonl() {
        let mut e = engine();
        let s = session(&mut e, Mode::Lbo, 100);
        e.attach_check(&s, 11).unwrap();
        let mut buf = Vec::new();
        write_events(e.events(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: Event = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(matches!(first.kind, EventKind::AgreementRegistered { .. }));
        assert!(text.contains(r#""kind":"state_changed""#));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Attach,
        Provision,
        Open,
        Traffic(u64),
        Detach,
        Sweep(u64),
    }

    proptest! {
        #[test]
        fn histories_only_take_legal_steps(
            lbo in any::<bool>(),
            funded in any::<bool>(),
            ops in proptest::collection::vec(prop_oneof![
                Just(Op::Attach),
                Just(Op::Provision),
                Just(Op::Open),
                (0u64..3_000_000).prop_map(Op::Traffic),
                Just(Op::Detach),
                (0u64..2 * DAY).prop_map(Op::Sweep),
            ], 0..20),
        ) {
            let mut e = engine();
            let mode = if lbo { Mode::Lbo } else { Mode::Hr };
            let s = session(&mut e, mode, if funded { 100 } else { 0 });
            let mut now = 10;
            for op in ops {
                now += 60;
                let _ = match op {
                    Op::Attach => e.attach_check(&s, now).map(|_| ()),
                    Op::Provision => e.provision_profile(&s, now),
                    Op::Open => e.open_session_channel(&s, None, now).map(|_| ()),
                    Op::Traffic(b) => e.session_traffic(&s, b, now).map(|_| ()),
                    Op::Detach => e.detach(&s, now),
                    Op::Sweep(dt) => { now += dt; e.sweep(now); Ok(()) }
                };
            }
            let sess = e.session(&s).unwrap();
            for w in sess.history.windows(2) {
                prop_assert!(w[0].can_step(w[1], mode), "{:?} -> {:?}", w[0], w[1]);
            }
            prop_assert_eq!(sess.channel.is_some(), sess.state >= SessionState::ChannelOpen);
            if !funded {
                prop_assert_eq!(e.stats().proofs_accepted, 0);
            }
        }
    }
}
