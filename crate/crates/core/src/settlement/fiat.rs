use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Money;
use crate::ids::MnoId;
use crate::ledger::TxId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiatEntry {
    pub time: u64,
    pub debit: MnoId,
    pub credit: MnoId,
    pub amount: Money,
    pub redeem_tx: TxId,
}

/// Double-entry fiat accounts, one per operator. Balances always sum to
/// zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiatLedger {
    balances: BTreeMap<MnoId, Money>,
    entries: Vec<FiatEntry>,
}

impl FiatLedger {
    pub fn new(mnos: impl IntoIterator<Item = MnoId>) -> Self {
        FiatLedger { balances: mnos.into_iter().map(|m| (m, Money::ZERO)).collect(), entries: Vec::new() }
    }

    pub fn post(&mut self, time: u64, debit: &MnoId, credit: &MnoId, amount: Money, redeem_tx: TxId) {
        *self.balances.entry(debit.clone()).or_default() -= amount;
        *self.balances.entry(credit.clone()).or_default() += amount;
        self.entries.push(FiatEntry { time, debit: debit.clone(), credit: credit.clone(), amount, redeem_tx });
    }

    pub fn balance(&self, mno: &MnoId) -> Money {
        self.balances.get(mno).copied().unwrap_or_default()
    }

    pub fn entries(&self) -> &[FiatEntry] {
        &self.entries
    }

    pub fn net(&self) -> Money {
        self.balances.values().copied().sum()
    }
}
