//! Unidirectional roamer → VMNO payment channels.
//!
//! Opening locks a deposit in the roamer's wallet and writes one on-chain
//! transaction. Every completed 100KB block of traffic produces a signed
//! off-chain balance proof with the cumulative amount owed. Closing writes
//! the second on-chain transaction and splits the escrow into payment and
//! refund.
//!
//! The hashed time-lock is modeled by a random preimage chosen at open: the
//! first proof reveals it, and without it the VMNO cannot claim anything.
//! After `timelock_expiry` an unclaimed deposit goes back to the roamer.

use serde::{Deserialize, Serialize};

use crate::codec::{self, sha256, Canonical, Digest, Encoder};
use crate::crypto::{KeyMaterial, Signature, SignatureScheme};
use crate::engine::Engine;
use crate::ids::{ChannelId, MnoId, WalletId};
use crate::ledger::{LedgerError, TxId, TxPayload};
use crate::protocol::EventKind;
use crate::tokenbank::BankError;

pub const BLOCK_BYTES: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    /// Roamer-initiated, at detach.
    Cooperative,
    /// VMNO-initiated after the inactivity window.
    Inactivity,
    /// Time-lock expired after the preimage was revealed.
    Expired,
    /// Time-lock expired with the preimage never revealed.
    TimelockRefund,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseOutcome {
    pub paid: u64,
    pub refunded: u64,
    /// Tokens charged for a partial final block.
    pub rounding: u64,
    pub reason: CloseReason,
    pub closed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentChannel {
    pub channel_id: ChannelId,
    pub roamer_wallet: WalletId,
    pub vmno: MnoId,
    pub issuer: MnoId,
    pub deposit: u64,
    pub cumulative_paid: u64,
    pub last_seq: u64,
    pub hashlock: Digest,
    pub preimage_revealed: bool,
    pub timelock_expiry: u64,
    pub last_activity: u64,
    pub opened_at: u64,
    pub status: ChannelStatus,
    pub open_tx: TxId,
    pub close_tx: Option<TxId>,
    pub outcome: Option<CloseOutcome>,
}

/// A roamer's signed statement that it owes `cumulative` tokens on a channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceProof {
    pub channel_id: ChannelId,
    pub seq: u64,
    pub cumulative: u64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_hex")]
    pub preimage: Option<Vec<u8>>,
    pub signature: Signature,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&faster_hex::hex_string(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| crate::codec::decode_strict_hex(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl BalanceProof {
    /// The bytes the roamer signs.
    pub fn signing_bytes(channel: &ChannelId, seq: u64, cumulative: u64) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("dice/proof").encode(channel).u64(seq).u64(cumulative);
        enc.finish()
    }

    pub fn signed(
        channel: &ChannelId,
        seq: u64,
        cumulative: u64,
        preimage: Option<Vec<u8>>,
        key: &KeyMaterial,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let signature = scheme.sign(key, &Self::signing_bytes(channel, seq, cumulative));
        BalanceProof { channel_id: channel.clone(), seq, cumulative, preimage, signature }
    }
}

impl Canonical for BalanceProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.channel_id).u64(self.seq).u64(self.cumulative);
        match &self.preimage {
            Some(p) => enc.bool(true).bytes(p),
            None => enc.bool(false),
        };
        enc.bytes(&self.signature.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficMeter {
    pub bytes_total: u64,
    pub blocks_paid: u64,
}

/// Roamer-side channel state: the secret preimage and the meter.
#[derive(Debug, Clone)]
pub(crate) struct RoamerChannel {
    pub(crate) preimage: [u8; 32],
    pub(crate) meter: TrafficMeter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofAck {
    pub seq: u64,
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("deposit must be at least one token")]
    ZeroDeposit,
    #[error("insufficient balance: need {needed}, have {available}")]
    InsufficientBalance { needed: u64, available: u64 },
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("unknown wallet {0}")]
    UnknownWallet(WalletId),
    #[error("unknown operator {0}")]
    UnknownMno(MnoId),
    #[error("channel is not open")]
    ChannelNotOpen,
    #[error("channel already closed")]
    AlreadyClosed,
    #[error("channel time-lock expired")]
    Expired,
    #[error("deposit exhausted, {unserviced_bytes} bytes unserviced")]
    DepositExhausted { proofs: Vec<BalanceProof>, unserviced_bytes: u64 },
    #[error("channel belongs to {actual}, not {claimed}")]
    WrongCounterparty { claimed: MnoId, actual: MnoId },
    #[error("proof signature does not verify")]
    BadSignature,
    #[error("stale proof: seq {seq} <= last accepted {last_seq}")]
    StaleProof { seq: u64, last_seq: u64 },
    #[error("sequence gap: expected {expected}, got {seq}")]
    GapSeq { expected: u64, seq: u64 },
    #[error("overdraft: cumulative {cumulative} exceeds deposit {deposit}")]
    Overdraft { cumulative: u64, deposit: u64 },
    #[error("cumulative {cumulative} does not exceed previous {previous}")]
    NonIncreasing { cumulative: u64, previous: u64 },
    #[error("first proof must carry the hashlock preimage")]
    BadPreimage,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

/// Outcome of a timeout sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub closed: Vec<ChannelId>,
    pub failures: Vec<(ChannelId, ChannelError)>,
}

impl Engine {
    /// Opens a channel from `wallet` to `vmno`, locking `deposit` tokens of
    /// the wallet's home issuer.
    pub fn open_channel(
        &mut self,
        wallet: &WalletId,
        vmno: &MnoId,
        deposit: u64,
        now: u64,
    ) -> Result<ChannelId, ChannelError> {
        if deposit == 0 {
            return Err(ChannelError::ZeroDeposit);
        }
        if !self.ledger.is_member(vmno) {
            return Err(ChannelError::UnknownMno(vmno.clone()));
        }
        let issuer =
            self.bank.wallet(wallet).map_err(|_| ChannelError::UnknownWallet(wallet.clone()))?.home_mno.clone();
        let available = self.bank.balance(wallet, Some(&issuer))?;
        if available < deposit {
            return Err(ChannelError::InsufficientBalance { needed: deposit, available });
        }
        self.next_channel += 1;
        let channel = ChannelId::new(format!("CH-{:08}", self.next_channel));
        let preimage: [u8; 32] = rand::Rng::random(&mut self.rng);
        let hashlock = sha256(&preimage);
        let timelock_expiry = now + self.config.timelock_window;
        let open_tx = self.submit(
            now,
            vmno,
            TxPayload::ChannelOpen {
                channel: channel.clone(),
                wallet: wallet.clone(),
                vmno: vmno.clone(),
                deposit: deposit as i64,
                hashlock,
                timelock_expiry,
            },
        )?;
        self.ledger.grant_scope(&channel, [vmno, &issuer]);
        self.bank.lock(wallet, &issuer, deposit, &channel)?;
        self.channels.insert(
            channel.clone(),
            PaymentChannel {
                channel_id: channel.clone(),
                roamer_wallet: wallet.clone(),
                vmno: vmno.clone(),
                issuer,
                deposit,
                cumulative_paid: 0,
                last_seq: 0,
                hashlock,
                preimage_revealed: false,
                timelock_expiry,
                last_activity: now,
                opened_at: now,
                status: ChannelStatus::Open,
                open_tx,
                close_tx: None,
                outcome: None,
            },
        );
        self.roamer_channels.insert(channel.clone(), RoamerChannel { preimage, meter: TrafficMeter::default() });
        Ok(channel)
    }

    /// Roamer side: meters `new_bytes` and signs one proof per newly
    /// completed 100KB block. Nothing touches the ledger. Bytes beyond what
    /// the deposit covers are reported in `DepositExhausted`, which also
    /// carries the proofs signed before the cap was hit.
    pub fn pay_for_traffic(
        &mut self,
        channel: &ChannelId,
        new_bytes: u64,
        now: u64,
    ) -> Result<Vec<BalanceProof>, ChannelError> {
        let ch = self.channels.get(channel).ok_or_else(|| ChannelError::UnknownChannel(channel.clone()))?;
        if ch.status != ChannelStatus::Open {
            return Err(ChannelError::ChannelNotOpen);
        }
        if now >= ch.timelock_expiry {
            return Err(ChannelError::Expired);
        }
        let (deposit, wallet) = (ch.deposit, ch.roamer_wallet.clone());
        let key = self.wallet_key(&wallet);
        let rc = self.roamer_channels.get_mut(channel).expect("roamer side exists for every channel");
        let capacity = (deposit * BLOCK_BYTES).saturating_sub(rc.meter.bytes_total);
        let accepted = new_bytes.min(capacity);
        let unserviced_bytes = new_bytes - accepted;
        rc.meter.bytes_total += accepted;
        let blocks = rc.meter.bytes_total / BLOCK_BYTES;
        let mut proofs = Vec::new();
        while rc.meter.blocks_paid < blocks {
            rc.meter.blocks_paid += 1;
            let seq = rc.meter.blocks_paid;
            let preimage = (seq == 1).then(|| rc.preimage.to_vec());
            proofs.push(BalanceProof::signed(channel, seq, seq, preimage, &key, self.scheme.as_ref()));
        }
        self.channels.get_mut(channel).expect("checked").last_activity = now;
        self.stats.bytes_serviced += accepted;
        self.stats.bytes_unserviced += unserviced_bytes;
        if unserviced_bytes > 0 {
            return Err(ChannelError::DepositExhausted { proofs, unserviced_bytes });
        }
        Ok(proofs)
    }

    /// VMNO side: validates a proof and stores it as the latest.
    pub fn receive_proof(&mut self, vmno: &MnoId, proof: &BalanceProof) -> Result<ProofAck, ChannelError> {
        let result = self.check_proof(vmno, proof);
        match result {
            Ok(()) => {
                let ch = self.channels.get_mut(&proof.channel_id).expect("checked");
                ch.last_seq = proof.seq;
                ch.cumulative_paid = proof.cumulative;
                if proof.seq == 1 {
                    ch.preimage_revealed = true;
                }
                self.latest_proofs.insert(proof.channel_id.clone(), proof.clone());
                self.stats.proofs_accepted += 1;
                if self.config.record_proofs {
                    self.proof_log.push(proof.clone());
                }
                Ok(ProofAck { seq: proof.seq, cumulative: proof.cumulative })
            }
            Err(e) => {
                self.stats.proofs_rejected += 1;
                Err(e)
            }
        }
    }

    fn check_proof(&mut self, vmno: &MnoId, proof: &BalanceProof) -> Result<(), ChannelError> {
        let ch = self
            .channels
            .get(&proof.channel_id)
            .ok_or_else(|| ChannelError::UnknownChannel(proof.channel_id.clone()))?;
        if &ch.vmno != vmno {
            return Err(ChannelError::WrongCounterparty { claimed: vmno.clone(), actual: ch.vmno.clone() });
        }
        if ch.status != ChannelStatus::Open {
            return Err(ChannelError::ChannelNotOpen);
        }
        let (wallet, last_seq, deposit, previous, hashlock) =
            (ch.roamer_wallet.clone(), ch.last_seq, ch.deposit, ch.cumulative_paid, ch.hashlock);
        let key = self.wallet_key(&wallet);
        let msg = BalanceProof::signing_bytes(&proof.channel_id, proof.seq, proof.cumulative);
        if !self.scheme.verify(&key, &msg, &proof.signature) {
            return Err(ChannelError::BadSignature);
        }
        if proof.seq <= last_seq {
            return Err(ChannelError::StaleProof { seq: proof.seq, last_seq });
        }
        if proof.seq != last_seq + 1 {
            return Err(ChannelError::GapSeq { expected: last_seq + 1, seq: proof.seq });
        }
        if proof.cumulative > deposit {
            return Err(ChannelError::Overdraft { cumulative: proof.cumulative, deposit });
        }
        if proof.cumulative <= previous {
            return Err(ChannelError::NonIncreasing { cumulative: proof.cumulative, previous });
        }
        if proof.seq == 1 && proof.preimage.as_deref().is_none_or(|p| codec::sha256(p) != hashlock) {
            return Err(ChannelError::BadPreimage);
        }
        Ok(())
    }

    /// Cooperative close. The VMNO receives the latest accepted cumulative,
    /// plus one token for a started final block when `round_partial` is
    /// set; the rest unlocks in the roamer's wallet.
    pub fn close_channel(&mut self, channel: &ChannelId, round_partial: bool, now: u64) -> Result<TxId, ChannelError> {
        self.close_with(channel, round_partial, now, CloseReason::Cooperative)
    }

    fn close_with(
        &mut self,
        channel: &ChannelId,
        round_partial: bool,
        now: u64,
        reason: CloseReason,
    ) -> Result<TxId, ChannelError> {
        let ch = self.channels.get(channel).ok_or_else(|| ChannelError::UnknownChannel(channel.clone()))?;
        if ch.status == ChannelStatus::Closed {
            return Err(ChannelError::AlreadyClosed);
        }
        let meter = self.roamer_channels[channel].meter;
        let mut paid = if reason == CloseReason::TimelockRefund { 0 } else { ch.cumulative_paid };
        let partial_outstanding =
            !meter.bytes_total.is_multiple_of(BLOCK_BYTES) && meter.blocks_paid == ch.cumulative_paid;
        let rounding = u64::from(round_partial && partial_outstanding && paid < ch.deposit);
        paid += rounding;
        let refunded = ch.deposit - paid;
        let (wallet, vmno) = (ch.roamer_wallet.clone(), ch.vmno.clone());
        let close_tx = self.submit(
            now,
            &vmno,
            TxPayload::ChannelClose {
                channel: channel.clone(),
                paid: paid as i64,
                refunded: refunded as i64,
                final_seq: ch.last_seq,
            },
        )?;
        self.bank.settle_lock(channel, &wallet, paid, &WalletId::treasury(&vmno), close_tx)?;
        let ch = self.channels.get_mut(channel).expect("checked");
        ch.status = ChannelStatus::Closed;
        ch.close_tx = Some(close_tx);
        ch.last_activity = now;
        ch.outcome = Some(CloseOutcome { paid, refunded, rounding, reason, closed_at: now });
        self.stats.rounding_tokens += rounding;
        Ok(close_tx)
    }

    /// Closes channels that are idle or past their time-lock. Timeout
    /// closes use only the VMNO's latest stored proof, so no rounding.
    pub fn timeout_sweep(&mut self, now: u64) -> SweepReport {
        let due: Vec<(ChannelId, CloseReason)> = self
            .channels
            .values()
            .filter(|c| c.status == ChannelStatus::Open)
            .filter_map(|c| {
                if now >= c.timelock_expiry {
                    let reason = if c.preimage_revealed { CloseReason::Expired } else { CloseReason::TimelockRefund };
                    Some((c.channel_id.clone(), reason))
                } else if now - c.last_activity >= self.config.inactivity_window {
                    Some((c.channel_id.clone(), CloseReason::Inactivity))
                } else {
                    None
                }
            })
            .collect();
        let mut report = SweepReport::default();
        for (id, reason) in due {
            match self.close_with(&id, false, now, reason) {
                Ok(_) => report.closed.push(id),
                Err(e) => report.failures.push((id, e)),
            }
        }
        report
    }

    pub(crate) fn log_close(&mut self, session: Option<&crate::ids::SessionId>, channel: &ChannelId) {
        let ch = &self.channels[channel];
        let (o, tx) = (ch.outcome.expect("closed"), ch.close_tx.expect("closed"));
        self.log(
            o.closed_at,
            session,
            EventKind::ChannelClosed {
                channel: channel.clone(),
                paid: o.paid,
                refunded: o.refunded,
                rounding: o.rounding,
                reason: o.reason,
                tx_id: tx,
            },
        );
    }

    /// Roamer-side meter, for tests and reports.
    pub fn meter(&self, channel: &ChannelId) -> Option<TrafficMeter> {
        self.roamer_channels.get(channel).map(|r| r.meter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, DAY};
    use crate::ledger::QueryFilter;
    use crate::ledger::TxKind;

    fn setup(allotment: u64) -> (Engine, WalletId) {
        let mut e = Engine::with_mnos(EngineConfig::default(), ["H", "V"]);
        let (_, w) = e.enroll_roamer(&MnoId::new("H"), allotment, 0).unwrap();
        (e, w)
    }

    fn v() -> MnoId {
        MnoId::new("V")
    }

    fn onchain(e: &Engine) -> usize {
        e.ledger().transactions().count()
    }

    fn deliver(e: &mut Engine, proofs: &[BalanceProof]) {
        for p in proofs {
            e.receive_proof(&v(), p).unwrap();
        }
    }

    #[test]
    fn open_locks_deposit_with_one_tx() {
        let (mut e, w) = setup(25);
        let before = onchain(&e);
        let ch = e.open_channel(&w, &v(), 25, 10).unwrap();
        assert_eq!(onchain(&e) - before, 1);
        assert_eq!(e.bank().balance(&w, None).unwrap(), 0);
        assert_eq!(e.bank().escrowed(&w).unwrap(), 25);
        let c = e.channel(&ch).unwrap();
        assert_eq!((c.cumulative_paid, c.last_seq, c.status), (0, 0, ChannelStatus::Open));
        assert_eq!(c.timelock_expiry, 10 + 7 * DAY);
    }

    #[test]
    fn open_errors() {
        let (mut e, w) = setup(25);
        assert_eq!(e.open_channel(&w, &v(), 0, 0), Err(ChannelError::ZeroDeposit));
        assert_eq!(
            e.open_channel(&w, &v(), 30, 0),
            Err(ChannelError::InsufficientBalance { needed: 30, available: 25 })
        );
    }

    #[test]
    fn visit_of_2_5_mb_pays_25_offchain() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let before = onchain(&e);
        let proofs = e.pay_for_traffic(&ch, 2_500_000, 5).unwrap();
        assert_eq!(proofs.len(), 25);
        assert_eq!(proofs.last().unwrap().cumulative, 25);
        assert!(proofs[0].preimage.is_some() && proofs[1].preimage.is_none());
        deliver(&mut e, &proofs);
        assert_eq!(onchain(&e), before);
        e.close_channel(&ch, true, 10).unwrap();
        let o = e.channel(&ch).unwrap().outcome.unwrap();
        assert_eq!((o.paid, o.refunded), (25, 0));
        assert_eq!(e.bank().balance(&WalletId::treasury(&v()), None).unwrap(), 25);
    }

    #[test]
    fn below_one_block_emits_nothing() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        assert!(e.pay_for_traffic(&ch, 50_000, 1).unwrap().is_empty());
    }

    #[test]
    fn partial_block_rounds_up_at_close() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 150_000, 1).unwrap();
        assert_eq!(proofs.len(), 1);
        deliver(&mut e, &proofs);
        e.close_channel(&ch, true, 2).unwrap();
        let o = e.channel(&ch).unwrap().outcome.unwrap();
        assert_eq!((o.paid, o.refunded, o.rounding), (2, 23, 1));
    }

    #[test]
    fn floor_accounting_without_rounding() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 150_000, 1).unwrap();
        deliver(&mut e, &proofs);
        e.close_channel(&ch, false, 2).unwrap();
        assert_eq!(e.channel(&ch).unwrap().outcome.unwrap().paid, 1);
    }

    #[test]
    fn proofs_in_order_then_replay_is_stale() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 300_000, 1).unwrap();
        deliver(&mut e, &proofs);
        assert_eq!(e.channel(&ch).unwrap().last_seq, 3);
        assert_eq!(e.receive_proof(&v(), &proofs[1]), Err(ChannelError::StaleProof { seq: 2, last_seq: 3 }));
    }

    #[test]
    fn overdraft_and_gap_and_forgery() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 2_500_000, 1).unwrap();
        deliver(&mut e, &proofs);
        let key = e.wallet_key(&w);
        let sign = |seq, cum| BalanceProof::signed(&ch, seq, cum, None, &key, &crate::crypto::HmacScheme);
        assert_eq!(e.receive_proof(&v(), &sign(26, 26)), Err(ChannelError::Overdraft { cumulative: 26, deposit: 25 }));
        assert_eq!(e.receive_proof(&v(), &sign(28, 25)), Err(ChannelError::GapSeq { expected: 26, seq: 28 }));
        let mut forged = sign(26, 25);
        forged.cumulative = 24;
        assert_eq!(e.receive_proof(&v(), &forged), Err(ChannelError::BadSignature));
        assert!(matches!(
            e.receive_proof(&MnoId::new("H"), &sign(26, 25)),
            Err(ChannelError::WrongCounterparty { .. })
        ));
    }

    #[test]
    fn first_proof_needs_preimage() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let mut p = e.pay_for_traffic(&ch, 100_000, 1).unwrap().remove(0);
        p.preimage = Some(vec![0; 32]);
        assert_eq!(e.receive_proof(&v(), &p), Err(ChannelError::BadPreimage));
        p.preimage = None;
        assert_eq!(e.receive_proof(&v(), &p), Err(ChannelError::BadPreimage));
    }

    #[test]
    fn deposit_exhaustion_caps_service() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 5, 0).unwrap();
        match e.pay_for_traffic(&ch, 800_000, 1) {
            Err(ChannelError::DepositExhausted { proofs, unserviced_bytes }) => {
                assert_eq!(proofs.len(), 5);
                assert_eq!(unserviced_bytes, 300_000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn silent_close_refunds_everything() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        e.close_channel(&ch, true, 5).unwrap();
        let o = e.channel(&ch).unwrap().outcome.unwrap();
        assert_eq!((o.paid, o.refunded), (0, 25));
        assert_eq!(e.bank().balance(&w, None).unwrap(), 25);
        assert_eq!(e.close_channel(&ch, true, 6), Err(ChannelError::AlreadyClosed));
    }

    #[test]
    fn inactivity_sweep_uses_latest_proof() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 750_000, 100).unwrap();
        deliver(&mut e, &proofs);
        assert!(e.timeout_sweep(100 + 23 * 3600).closed.is_empty());
        assert_eq!(e.timeout_sweep(100 + 25 * 3600).closed, vec![ch.clone()]);
        let o = e.channel(&ch).unwrap().outcome.unwrap();
        assert_eq!((o.paid, o.reason), (7, CloseReason::Inactivity));
    }

    #[test]
    fn expired_without_preimage_refunds() {
        let cfg = EngineConfig { inactivity_window: 30 * DAY, ..Default::default() };
        let mut e = Engine::with_mnos(cfg, ["H", "V"]);
        let (_, w) = e.enroll_roamer(&MnoId::new("H"), 25, 0).unwrap();
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        e.pay_for_traffic(&ch, 50_000, 10).unwrap();
        assert_eq!(e.pay_for_traffic(&ch, 1, 7 * DAY), Err(ChannelError::Expired));
        e.timeout_sweep(7 * DAY);
        let o = e.channel(&ch).unwrap().outcome.unwrap();
        assert_eq!((o.paid, o.refunded, o.reason), (0, 25, CloseReason::TimelockRefund));
    }

    #[test]
    fn exactly_two_onchain_txs_per_channel() {
        let (mut e, w) = setup(25);
        let ch = e.open_channel(&w, &v(), 25, 0).unwrap();
        let proofs = e.pay_for_traffic(&ch, 1_234_567, 1).unwrap();
        deliver(&mut e, &proofs);
        e.close_channel(&ch, true, 2).unwrap();
        let txs = e.ledger().channel_txs(&ch);
        assert_eq!(txs.iter().map(|t| t.kind()).collect::<Vec<_>>(), vec![TxKind::ChannelOpen, TxKind::ChannelClose]);
        assert_eq!(e.ledger().query(&MnoId::new("V"), &QueryFilter::kind(TxKind::ChannelClose)).unwrap().len(), 1);
    }
}
