//! Token custody and provenance.
//!
//! Tokens live in lots. A lot has one issuer, one current holder wallet and
//! a lineage of `(holder, tx_id)` entries starting at its issuance. Moving
//! part of a lot splits off a child that inherits the parent's lineage.
//! Escrow for a payment channel is a lock on lots that stay in the roamer's
//! wallet, so it leaves the lineage untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{ActorId, ChannelId, LotId, MnoId, WalletId};
use crate::ledger::{Genesis, PayloadValidator, RosterEntry, Transaction, TxId, TxPayload};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BankError {
    #[error("{0} may not issue tokens")]
    NotIssuer(MnoId),
    #[error("wallet {wallet} belongs to {home}, not the issuing operator")]
    ForeignWallet { wallet: WalletId, home: MnoId },
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("insufficient balance: need {needed}, have {available}")]
    InsufficientBalance { needed: u64, available: u64 },
    #[error("unknown wallet {0}")]
    UnknownWallet(WalletId),
    #[error("wallet {0} already exists")]
    WalletExists(WalletId),
    #[error("unknown lot {0}")]
    UnknownLot(LotId),
    #[error("lot {0} already burned")]
    AlreadyBurned(LotId),
    #[error("lot {0} is locked in a channel")]
    LotLocked(LotId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub holder: WalletId,
    pub tx_id: TxId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLot {
    pub lot_id: LotId,
    pub issuer: MnoId,
    pub amount: u64,
    pub holder: WalletId,
    pub lineage: Vec<LineageEntry>,
    pub locked_by: Option<ChannelId>,
    pub burned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    pub wallet_id: WalletId,
    pub home_mno: MnoId,
    pub lots: BTreeSet<LotId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Supply {
    pub issued: u64,
    pub circulating: u64,
    pub burned: u64,
}

/// Everything about the bank that is derivable from the ledger. Wallet
/// owners are deliberately absent: they are never written on-chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerView {
    pub wallets: BTreeMap<WalletId, Wallet>,
    pub lots: BTreeMap<LotId, TokenLot>,
    pub issued: BTreeMap<MnoId, u64>,
    pub burned: BTreeMap<MnoId, u64>,
}

#[derive(Debug, Clone, Default)]
pub struct TokenBank {
    issuers: BTreeMap<MnoId, bool>,
    wallets: BTreeMap<WalletId, Wallet>,
    owners: BTreeMap<WalletId, ActorId>,
    lots: BTreeMap<LotId, TokenLot>,
    issued: BTreeMap<MnoId, u64>,
    burned: BTreeMap<MnoId, u64>,
    next_lot: u64,
}

impl TokenBank {
    /// A bank for the given roster; every member gets a treasury wallet.
    pub fn new(roster: &[RosterEntry]) -> Self {
        let mut bank = TokenBank::default();
        for entry in roster {
            bank.issuers.insert(entry.id.clone(), entry.may_issue);
            let treasury = WalletId::treasury(&entry.id);
            bank.wallets.insert(
                treasury.clone(),
                Wallet { wallet_id: treasury, home_mno: entry.id.clone(), lots: BTreeSet::new() },
            );
        }
        bank
    }

    pub fn open_wallet(&mut self, wallet: WalletId, home: MnoId, owner: Option<ActorId>) -> Result<(), BankError> {
        if self.wallets.contains_key(&wallet) {
            return Err(BankError::WalletExists(wallet));
        }
        if let Some(owner) = owner {
            self.owners.insert(wallet.clone(), owner);
        }
        self.wallets.insert(wallet.clone(), Wallet { wallet_id: wallet, home_mno: home, lots: BTreeSet::new() });
        Ok(())
    }

    pub fn wallet(&self, id: &WalletId) -> Result<&Wallet, BankError> {
        self.wallets.get(id).ok_or_else(|| BankError::UnknownWallet(id.clone()))
    }

    pub fn owner(&self, id: &WalletId) -> Option<&ActorId> {
        self.owners.get(id)
    }

    pub fn wallets(&self) -> impl Iterator<Item = &Wallet> {
        self.wallets.values()
    }

    pub fn lot(&self, id: &LotId) -> Result<&TokenLot, BankError> {
        self.lots.get(id).ok_or_else(|| BankError::UnknownLot(id.clone()))
    }

    pub fn lots(&self) -> impl Iterator<Item = &TokenLot> {
        self.lots.values()
    }

    pub fn may_issue(&self, mno: &MnoId) -> bool {
        self.issuers.get(mno).copied().unwrap_or(false)
    }

    /// Preconditions for an issuance, checked before the Issue transaction
    /// is signed.
    pub fn check_issue(&self, hmno: &MnoId, wallet: &WalletId, amount: i64) -> Result<(), BankError> {
        if !self.may_issue(hmno) {
            return Err(BankError::NotIssuer(hmno.clone()));
        }
        let w = self.wallet(wallet)?;
        if &w.home_mno != hmno {
            return Err(BankError::ForeignWallet { wallet: wallet.clone(), home: w.home_mno.clone() });
        }
        if amount <= 0 {
            return Err(BankError::NonPositiveAmount);
        }
        Ok(())
    }

    /// Records an issuance whose transaction has been accepted.
    pub fn credit_issue(
        &mut self,
        hmno: &MnoId,
        wallet: &WalletId,
        amount: u64,
        tx_id: TxId,
    ) -> Result<LotId, BankError> {
        self.check_issue(hmno, wallet, amount as i64)?;
        let lot_id = self.fresh_lot_id();
        self.lots.insert(
            lot_id.clone(),
            TokenLot {
                lot_id: lot_id.clone(),
                issuer: hmno.clone(),
                amount,
                holder: wallet.clone(),
                lineage: vec![LineageEntry { holder: wallet.clone(), tx_id }],
                locked_by: None,
                burned: false,
            },
        );
        self.wallets.get_mut(wallet).expect("checked").lots.insert(lot_id.clone());
        *self.issued.entry(hmno.clone()).or_default() += amount;
        Ok(lot_id)
    }

    /// Spendable (unlocked) balance, optionally restricted to one issuer.
    pub fn balance(&self, wallet: &WalletId, issuer: Option<&MnoId>) -> Result<u64, BankError> {
        Ok(self.held(wallet, issuer)?.filter(|l| l.locked_by.is_none()).map(|l| l.amount).sum())
    }

    /// Tokens locked in channel escrow.
    pub fn escrowed(&self, wallet: &WalletId) -> Result<u64, BankError> {
        Ok(self.held(wallet, None)?.filter(|l| l.locked_by.is_some()).map(|l| l.amount).sum())
    }

    pub fn held<'a>(
        &'a self,
        wallet: &WalletId,
        issuer: Option<&'a MnoId>,
    ) -> Result<impl Iterator<Item = &'a TokenLot> + 'a, BankError> {
        let w = self.wallet(wallet)?;
        Ok(w.lots.iter().map(|id| &self.lots[id]).filter(move |l| issuer.is_none_or(|i| &l.issuer == i)))
    }

    pub fn trace(&self, lot: &LotId) -> Result<&[LineageEntry], BankError> {
        Ok(&self.lot(lot)?.lineage)
    }

    /// Moves `amount` unlocked tokens of `issuer` between wallets, splitting
    /// lots as needed. Each moved lot's lineage gains `(to, cause_tx)`.
    pub fn transfer(
        &mut self,
        from: &WalletId,
        to: &WalletId,
        issuer: &MnoId,
        amount: u64,
        cause_tx: TxId,
    ) -> Result<Vec<LotId>, BankError> {
        self.wallet(to)?;
        let candidates: Vec<LotId> =
            self.held(from, Some(issuer))?.filter(|l| l.locked_by.is_none()).map(|l| l.lot_id.clone()).collect();
        self.move_from(candidates, amount, to, cause_tx)
    }

    /// Locks `amount` tokens of `issuer` in `wallet` as escrow for `channel`.
    pub fn lock(
        &mut self,
        wallet: &WalletId,
        issuer: &MnoId,
        amount: u64,
        channel: &ChannelId,
    ) -> Result<Vec<LotId>, BankError> {
        let candidates: Vec<LotId> =
            self.held(wallet, Some(issuer))?.filter(|l| l.locked_by.is_none()).map(|l| l.lot_id.clone()).collect();
        let picked = self.pick(candidates, amount)?;
        let mut locked = Vec::new();
        for (id, take) in picked {
            let target = if take == self.lots[&id].amount { id } else { self.split(&id, take) };
            self.lots.get_mut(&target).expect("exists").locked_by = Some(channel.clone());
            locked.push(target);
        }
        Ok(locked)
    }

    /// Closes a channel's escrow: `paid` tokens move to `to` with lineage
    /// cause `close_tx`, the rest unlock in place.
    pub fn settle_lock(
        &mut self,
        channel: &ChannelId,
        wallet: &WalletId,
        paid: u64,
        to: &WalletId,
        close_tx: TxId,
    ) -> Result<Vec<LotId>, BankError> {
        self.wallet(to)?;
        let candidates: Vec<LotId> = self
            .held(wallet, None)?
            .filter(|l| l.locked_by.as_ref() == Some(channel))
            .map(|l| l.lot_id.clone())
            .collect();
        let moved = self.move_from(candidates.clone(), paid, to, close_tx)?;
        for id in candidates {
            if let Some(lot) = self.lots.get_mut(&id) {
                if lot.holder == *wallet {
                    lot.locked_by = None;
                }
            }
        }
        Ok(moved)
    }

    /// Removes lots from circulation.
    pub fn burn(&mut self, lots: &[LotId]) -> Result<u64, BankError> {
        for id in lots {
            let lot = self.lot(id)?;
            if lot.burned {
                return Err(BankError::AlreadyBurned(id.clone()));
            }
            if lot.locked_by.is_some() {
                return Err(BankError::LotLocked(id.clone()));
            }
        }
        let mut total = 0;
        for id in lots {
            let lot = self.lots.get_mut(id).expect("checked");
            lot.burned = true;
            total += lot.amount;
            let (holder, issuer, amount) = (lot.holder.clone(), lot.issuer.clone(), lot.amount);
            if let Some(w) = self.wallets.get_mut(&holder) {
                w.lots.remove(id);
            }
            *self.burned.entry(issuer).or_default() += amount;
        }
        Ok(total)
    }

    pub fn supply(&self, issuer: &MnoId) -> Supply {
        let circulating = self.lots.values().filter(|l| &l.issuer == issuer && !l.burned).map(|l| l.amount).sum();
        Supply {
            issued: self.issued.get(issuer).copied().unwrap_or(0),
            circulating,
            burned: self.burned.get(issuer).copied().unwrap_or(0),
        }
    }

    /// `issued == circulating + burned` for every issuer, every lot has a
    /// positive amount and sits in exactly its holder's wallet.
    pub fn check_supply_closure(&self) -> Result<(), String> {
        let mut circulating: BTreeMap<&MnoId, u64> = BTreeMap::new();
        for l in self.lots.values().filter(|l| !l.burned) {
            *circulating.entry(&l.issuer).or_default() += l.amount;
        }
        let issuers: BTreeSet<&MnoId> = self.issued.keys().chain(circulating.keys().copied()).collect();
        for issuer in issuers {
            let issued = self.issued.get(issuer).copied().unwrap_or(0);
            let live = circulating.get(issuer).copied().unwrap_or(0);
            let burned = self.burned.get(issuer).copied().unwrap_or(0);
            if issued != live + burned {
                return Err(format!("{issuer}: issued {issued} != circulating {live} + burned {burned}"));
            }
        }
        let mut seen = 0usize;
        for w in self.wallets.values() {
            for id in &w.lots {
                let lot = self.lots.get(id).ok_or_else(|| format!("wallet {} lists missing lot {id}", w.wallet_id))?;
                if lot.holder != w.wallet_id || lot.burned {
                    return Err(format!("lot {id} listed in {} but held by {}", w.wallet_id, lot.holder));
                }
                seen += 1;
            }
        }
        let live = self.lots.values().filter(|l| !l.burned).count();
        if seen != live {
            return Err(format!("{live} live lots but {seen} wallet entries"));
        }
        if let Some(l) = self.lots.values().find(|l| l.amount == 0) {
            return Err(format!("lot {} has zero amount", l.lot_id));
        }
        Ok(())
    }

    pub fn ledger_view(&self) -> LedgerView {
        LedgerView {
            wallets: self.wallets.clone(),
            lots: self.lots.clone(),
            issued: self.issued.clone(),
            burned: self.burned.clone(),
        }
    }

    /// Places a lot in a wallet with an arbitrary lineage, bypassing
    /// issuance. Exists so adversarial tests can model forged tokens.
    #[doc(hidden)]
    pub fn insert_forged_lot(
        &mut self,
        wallet: &WalletId,
        issuer: &MnoId,
        amount: u64,
        lineage: Vec<LineageEntry>,
    ) -> LotId {
        let lot_id = self.fresh_lot_id();
        self.lots.insert(
            lot_id.clone(),
            TokenLot {
                lot_id: lot_id.clone(),
                issuer: issuer.clone(),
                amount,
                holder: wallet.clone(),
                lineage,
                locked_by: None,
                burned: false,
            },
        );
        self.wallets.get_mut(wallet).expect("wallet exists").lots.insert(lot_id.clone());
        lot_id
    }

    fn fresh_lot_id(&mut self) -> LotId {
        self.next_lot += 1;
        LotId(format!("LOT-{:010}", self.next_lot))
    }

    /// Largest-first selection, ties broken by lot id. Returns how much to
    /// take from each picked lot; only the last one can be partial.
    fn pick(&self, mut candidates: Vec<LotId>, amount: u64) -> Result<Vec<(LotId, u64)>, BankError> {
        let available: u64 = candidates.iter().map(|id| self.lots[id].amount).sum();
        if available < amount {
            return Err(BankError::InsufficientBalance { needed: amount, available });
        }
        candidates.sort_by(|a, b| self.lots[b].amount.cmp(&self.lots[a].amount).then_with(|| a.cmp(b)));
        let mut remaining = amount;
        let mut picked = Vec::new();
        for id in candidates {
            if remaining == 0 {
                break;
            }
            let take = remaining.min(self.lots[&id].amount);
            picked.push((id, take));
            remaining -= take;
        }
        Ok(picked)
    }

    /// Splits `take` tokens off `parent` into a new lot with the same
    /// holder, issuer, lock and lineage.
    fn split(&mut self, parent: &LotId, take: u64) -> LotId {
        let child_id = self.fresh_lot_id();
        let p = self.lots.get_mut(parent).expect("exists");
        debug_assert!(take > 0 && take < p.amount);
        p.amount -= take;
        let child = TokenLot { lot_id: child_id.clone(), amount: take, ..p.clone() };
        self.wallets.get_mut(&child.holder).expect("holder exists").lots.insert(child_id.clone());
        self.lots.insert(child_id.clone(), child);
        child_id
    }

    fn move_from(
        &mut self,
        candidates: Vec<LotId>,
        amount: u64,
        to: &WalletId,
        cause: TxId,
    ) -> Result<Vec<LotId>, BankError> {
        let picked = self.pick(candidates, amount)?;
        let mut moved = Vec::new();
        for (id, take) in picked {
            let target = if take == self.lots[&id].amount { id } else { self.split(&id, take) };
            let lot = self.lots.get_mut(&target).expect("exists");
            let from = std::mem::replace(&mut lot.holder, to.clone());
            lot.locked_by = None;
            lot.lineage.push(LineageEntry { holder: to.clone(), tx_id: cause });
            self.wallets.get_mut(&from).expect("holder exists").lots.remove(&target);
            self.wallets.get_mut(to).expect("checked").lots.insert(target.clone());
            moved.push(target);
        }
        Ok(moved)
    }
}

/// Ledger validator for Issue transactions: positive amount, signed by the
/// issuer itself.
pub fn issue_validator() -> PayloadValidator {
    Arc::new(|tx: &Transaction| match &tx.payload {
        TxPayload::Issue { issuer, amount, .. } => {
            if *amount <= 0 {
                Err("issue amount must be positive".into())
            } else if tx.signer.as_str() != issuer.as_str() {
                Err(format!("issue for {issuer} signed by {}", tx.signer))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("replay failed at tx {tx_id}: {detail}")]
pub struct ReplayError {
    pub tx_id: TxId,
    pub detail: String,
}

/// Incremental replay of ledger transactions into a fresh bank.
#[derive(Debug, Clone)]
pub struct LedgerReplay {
    bank: TokenBank,
    channels: BTreeMap<ChannelId, (WalletId, MnoId)>,
}

impl LedgerReplay {
    pub fn new(genesis: &Genesis) -> Self {
        LedgerReplay { bank: TokenBank::new(&genesis.roster), channels: BTreeMap::new() }
    }

    pub fn apply(&mut self, tx: &Transaction) -> Result<(), ReplayError> {
        self.bank.replay(tx, &mut self.channels).map_err(|detail| ReplayError { tx_id: tx.tx_id, detail })
    }

    pub fn bank(&self) -> &TokenBank {
        &self.bank
    }

    pub fn into_bank(self) -> TokenBank {
        self.bank
    }
}

/// Reconstructs bank state by replaying ledger transactions in order.
pub fn rebuild_from_ledger<'a>(
    genesis: &Genesis,
    txs: impl IntoIterator<Item = &'a Transaction>,
) -> Result<TokenBank, ReplayError> {
    let mut replay = LedgerReplay::new(genesis);
    for tx in txs {
        replay.apply(tx)?;
    }
    Ok(replay.into_bank())
}

impl TokenBank {
    fn replay(
        &mut self,
        tx: &Transaction,
        channels: &mut BTreeMap<ChannelId, (WalletId, MnoId)>,
    ) -> Result<(), String> {
        match &tx.payload {
            TxPayload::Issue { issuer, wallet, amount } => {
                if !self.wallets.contains_key(wallet) {
                    self.open_wallet(wallet.clone(), issuer.clone(), None).map_err(|e| e.to_string())?;
                }
                let amount = u64::try_from(*amount).map_err(|_| "negative issue".to_string())?;
                self.credit_issue(issuer, wallet, amount, tx.tx_id).map_err(|e| e.to_string())?;
            }
            TxPayload::ChannelOpen { channel, wallet, vmno, deposit, .. } => {
                let home = self.wallet(wallet).map_err(|e| e.to_string())?.home_mno.clone();
                let deposit = u64::try_from(*deposit).map_err(|_| "negative deposit".to_string())?;
                self.lock(wallet, &home, deposit, channel).map_err(|e| e.to_string())?;
                channels.insert(channel.clone(), (wallet.clone(), vmno.clone()));
            }
            TxPayload::ChannelClose { channel, paid, .. } => {
                let (wallet, vmno) =
                    channels.get(channel).ok_or_else(|| format!("close of unknown channel {channel}"))?;
                let paid = u64::try_from(*paid).map_err(|_| "negative payment".to_string())?;
                self.settle_lock(channel, wallet, paid, &WalletId::treasury(vmno), tx.tx_id)
                    .map_err(|e| e.to_string())?;
            }
            TxPayload::Redeem { lots, .. } => {
                self.burn(lots).map_err(|e| e.to_string())?;
            }
            TxPayload::AgreementRegistration { .. } | TxPayload::AttachCheck { .. } => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::sha256;
    use proptest::prelude::*;

    fn h() -> MnoId {
        MnoId::new("H")
    }

    fn bank() -> TokenBank {
        let mut b = TokenBank::new(&[
            RosterEntry { id: h(), may_issue: true },
            RosterEntry { id: MnoId::new("V"), may_issue: true },
            RosterEntry { id: MnoId::new("X"), may_issue: false },
        ]);
        b.open_wallet(WalletId::new("alice"), h(), Some(ActorId::new("alice"))).unwrap();
        b.open_wallet(WalletId::new("bob"), h(), None).unwrap();
        b.open_wallet(WalletId::new("vcust"), MnoId::new("V"), None).unwrap();
        b
    }

    fn tx(n: u64) -> TxId {
        sha256(&n.to_be_bytes())
    }

    fn alice() -> WalletId {
        WalletId::new("alice")
    }

    #[test]
    fn issue_creates_lot() {
        let mut b = bank();
        let lot = b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        assert_eq!(b.balance(&alice(), Some(&h())).unwrap(), 25);
        assert_eq!(b.trace(&lot).unwrap().len(), 1);
        assert_eq!(b.supply(&h()), Supply { issued: 25, circulating: 25, burned: 0 });
    }

    #[test]
    fn issue_preconditions() {
        let b = bank();
        assert_eq!(b.check_issue(&MnoId::new("X"), &alice(), 5), Err(BankError::NotIssuer(MnoId::new("X"))));
        assert_eq!(b.check_issue(&MnoId::new("Nobody"), &alice(), 5), Err(BankError::NotIssuer(MnoId::new("Nobody"))));
        assert!(matches!(b.check_issue(&h(), &WalletId::new("vcust"), 10), Err(BankError::ForeignWallet { .. })));
        assert_eq!(b.check_issue(&h(), &alice(), 0), Err(BankError::NonPositiveAmount));
    }

    #[test]
    fn balance_lifecycle() {
        let mut b = bank();
        assert_eq!(b.balance(&alice(), None).unwrap(), 0);
        b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        assert_eq!(b.balance(&alice(), None).unwrap(), 25);
        b.transfer(&alice(), &WalletId::new("bob"), &h(), 10, tx(2)).unwrap();
        assert_eq!(b.balance(&alice(), None).unwrap(), 15);
        assert_eq!(b.balance(&WalletId::new("nope"), None), Err(BankError::UnknownWallet(WalletId::new("nope"))));
    }

    #[test]
    fn whole_lot_transfer_extends_lineage() {
        let mut b = bank();
        let lot = b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        let moved = b.transfer(&alice(), &WalletId::new("bob"), &h(), 25, tx(2)).unwrap();
        assert_eq!(moved, vec![lot.clone()]);
        assert_eq!(b.trace(&lot).unwrap().len(), 2);
        assert_eq!(b.lot(&lot).unwrap().holder, WalletId::new("bob"));
    }

    #[test]
    fn partial_transfer_splits_and_conserves() {
        let mut b = bank();
        let parent = b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        let moved = b.transfer(&alice(), &WalletId::new("bob"), &h(), 10, tx(2)).unwrap();
        assert_eq!(moved.len(), 1);
        let child = &moved[0];
        assert_ne!(child, &parent);
        assert_eq!(b.lot(child).unwrap().amount, 10);
        assert_eq!(b.lot(&parent).unwrap().amount, 15);
        let parent_lineage = b.trace(&parent).unwrap().to_vec();
        let child_lineage = b.trace(child).unwrap();
        assert_eq!(&child_lineage[..parent_lineage.len()], &parent_lineage[..]);
        assert_eq!(child_lineage.last().unwrap(), &LineageEntry { holder: WalletId::new("bob"), tx_id: tx(2) });
        b.check_supply_closure().unwrap();
    }

    #[test]
    fn overdraw_rejected() {
        let mut b = bank();
        b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        assert_eq!(
            b.transfer(&alice(), &WalletId::new("bob"), &h(), 30, tx(2)),
            Err(BankError::InsufficientBalance { needed: 30, available: 25 })
        );
    }

    #[test]
    fn lock_and_settle() {
        let mut b = bank();
        b.credit_issue(&h(), &alice(), 25, tx(1)).unwrap();
        let ch = ChannelId::new("ch");
        b.lock(&alice(), &h(), 25, &ch).unwrap();
        assert_eq!(b.balance(&alice(), None).unwrap(), 0);
        assert_eq!(b.escrowed(&alice()).unwrap(), 25);
        let treasury = WalletId::treasury(&MnoId::new("V"));
        let moved = b.settle_lock(&ch, &alice(), 10, &treasury, tx(3)).unwrap();
        assert_eq!(b.balance(&treasury, Some(&h())).unwrap(), 10);
        assert_eq!(b.balance(&alice(), None).unwrap(), 15);
        assert_eq!(b.escrowed(&alice()).unwrap(), 0);
        // issuance then close-transfer: two lineage entries, no escrow hop.
        assert_eq!(b.trace(&moved[0]).unwrap().len(), 2);
        b.check_supply_closure().unwrap();
    }

    #[test]
    fn largest_first_selection() {
        let mut b = bank();
        let small = b.credit_issue(&h(), &alice(), 3, tx(1)).unwrap();
        let big = b.credit_issue(&h(), &alice(), 10, tx(2)).unwrap();
        let moved = b.transfer(&alice(), &WalletId::new("bob"), &h(), 10, tx(3)).unwrap();
        assert_eq!(moved, vec![big]);
        assert_eq!(b.lot(&small).unwrap().holder, alice());
    }

    #[test]
    fn burn_once() {
        let mut b = bank();
        let lot = b.credit_issue(&h(), &alice(), 5, tx(1)).unwrap();
        assert_eq!(b.burn(std::slice::from_ref(&lot)).unwrap(), 5);
        assert_eq!(b.burn(std::slice::from_ref(&lot)), Err(BankError::AlreadyBurned(lot)));
        assert_eq!(b.supply(&h()), Supply { issued: 5, circulating: 0, burned: 5 });
        b.check_supply_closure().unwrap();
    }

    #[derive(Debug, Clone)]
    enum Op {
        Issue(u64),
        Transfer { to_bob: bool, amount: u64 },
        Lock(u64),
        Settle { paid_pct: u64 },
        Burn,
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        proptest::collection::vec(
            prop_oneof![
                (1u64..50).prop_map(Op::Issue),
                (any::<bool>(), 1u64..60).prop_map(|(to_bob, amount)| Op::Transfer { to_bob, amount }),
                (1u64..40).prop_map(Op::Lock),
                (0u64..=100).prop_map(|paid_pct| Op::Settle { paid_pct }),
                Just(Op::Burn),
            ],
            1..60,
        )
    }

    proptest! {
        #[test]
        fn conservation_and_non_negativity(ops in ops()) {
            let mut b = bank();
            let bob = WalletId::new("bob");
            let treasury = WalletId::treasury(&MnoId::new("V"));
            let mut open: Option<(ChannelId, u64)> = None;
            for (i, op) in ops.into_iter().enumerate() {
                let t = tx(i as u64 + 100);
                match op {
                    Op::Issue(a) => { b.credit_issue(&h(), &alice(), a, t).unwrap(); }
                    Op::Transfer { to_bob, amount } => {
                        let (from, to) = if to_bob { (alice(), bob.clone()) } else { (bob.clone(), alice()) };
                        let before = b.balance(&from, None).unwrap();
                        match b.transfer(&from, &to, &h(), amount, t) {
                            Ok(_) => prop_assert_eq!(b.balance(&from, None).unwrap(), before - amount),
                            Err(BankError::InsufficientBalance { .. }) => prop_assert!(before < amount),
                            Err(e) => prop_assert!(false, "{e}"),
                        }
                    }
                    Op::Lock(a) => {
                        if open.is_none() {
                            let ch = ChannelId::new(format!("ch{i}"));
                            if b.lock(&alice(), &h(), a, &ch).is_ok() {
                                open = Some((ch, a));
                            }
                        }
                    }
                    Op::Settle { paid_pct } => {
                        if let Some((ch, deposit)) = open.take() {
                            let paid = deposit * paid_pct / 100;
                            let before_t = b.balance(&treasury, None).unwrap();
                            let before_a = b.balance(&alice(), None).unwrap();
                            b.settle_lock(&ch, &alice(), paid, &treasury, t).unwrap();
                            prop_assert_eq!(b.balance(&treasury, None).unwrap() - before_t, paid);
                            prop_assert_eq!(b.balance(&alice(), None).unwrap() - before_a, deposit - paid);
                        }
                    }
                    Op::Burn => {
                        let lots: Vec<LotId> = b.held(&treasury, None).unwrap().map(|l| l.lot_id.clone()).collect();
                        b.burn(&lots).unwrap();
                    }
                }
                prop_assert!(b.check_supply_closure().is_ok(), "{:?}", b.check_supply_closure());
                // every lot has exactly one holder wallet
                let mut holders = BTreeMap::new();
                for w in b.wallets() {
                    for id in &w.lots {
                        prop_assert!(holders.insert(id.clone(), w.wallet_id.clone()).is_none());
                    }
                }
            }
        }
    }
}
