use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{RedemptionClaim, SettlementError};
use crate::ids::{LotId, WalletId};
use crate::ledger::{Ledger, TxId, TxPayload};
use crate::tokenbank::TokenBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    DuplicateLot,
    /// Issued by someone other than the claimed HMNO.
    WrongIssuer,
    /// Not (or no longer) sitting unlocked in the claimant's treasury.
    NotHeldByClaimant,
    /// The lineage root is not an Issue transaction on the ledger.
    MissingIssuance,
    /// Issued into a wallet that is not one of the HMNO's customers.
    NotHomeCustomer,
    /// A hop in the lineage was not caused by a channel close.
    NotServicePayment,
    /// A channel close moved the lot, but between the wrong parties.
    WrongChannelCounterparty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvenanceVerdict {
    Accept,
    Reject { lot: LotId, reason: RejectReason },
}

/// Checks that every claimed lot was issued by `claim.hmno` to one of its
/// customers and reached `claim.vmno` only through channel closes. Read
/// only; the first offending lot is reported.
pub fn validate_provenance(
    bank: &TokenBank,
    ledger: &Ledger,
    claim: &RedemptionClaim,
) -> Result<ProvenanceVerdict, SettlementError> {
    // Tokens attributed to each close hop across every lot the bank knows.
    // A close cannot have moved more than it paid, so over-attribution
    // means some lot cites a close that did not carry it.
    let mut attributed: BTreeMap<TxId, u64> = BTreeMap::new();
    for lot in bank.lots() {
        let hops: BTreeSet<TxId> = lot.lineage.iter().skip(1).map(|h| h.tx_id).collect();
        for tx in hops {
            *attributed.entry(tx).or_default() += lot.amount;
        }
    }
    let mut seen = BTreeSet::new();
    for id in &claim.lots {
        let lot = bank.lot(id).map_err(|_| SettlementError::UnknownLot(id.clone()))?;
        let reject = |reason| Ok(ProvenanceVerdict::Reject { lot: id.clone(), reason });
        if !seen.insert(id) {
            return reject(RejectReason::DuplicateLot);
        }
        if lot.issuer != claim.hmno {
            return reject(RejectReason::WrongIssuer);
        }
        if lot.burned || lot.locked_by.is_some() || lot.holder != WalletId::treasury(&claim.vmno) {
            return reject(RejectReason::NotHeldByClaimant);
        }
        let Some(root) = lot.lineage.first() else {
            return reject(RejectReason::MissingIssuance);
        };
        match ledger.get_tx(&root.tx_id) {
            Some(tx) => match &tx.payload {
                TxPayload::Issue { issuer, wallet, .. } => {
                    if issuer != &claim.hmno || tx.signer.as_str() != claim.hmno.as_str() {
                        return reject(RejectReason::WrongIssuer);
                    }
                    if wallet != &root.holder {
                        return reject(RejectReason::MissingIssuance);
                    }
                }
                _ => return reject(RejectReason::MissingIssuance),
            },
            None => return reject(RejectReason::MissingIssuance),
        }
        if bank.wallet(&root.holder).map(|w| &w.home_mno) != Ok(&claim.hmno) {
            return reject(RejectReason::NotHomeCustomer);
        }
        if lot.lineage.len() < 2 {
            return reject(RejectReason::NotServicePayment);
        }
        for hop in lot.lineage.windows(2) {
            let (prev, next) = (&hop[0], &hop[1]);
            let Some(TxPayload::ChannelClose { channel, paid, .. }) = ledger.get_tx(&next.tx_id).map(|t| &t.payload)
            else {
                return reject(RejectReason::NotServicePayment);
            };
            let open = ledger.channel_txs(channel).into_iter().find_map(|t| match &t.payload {
                TxPayload::ChannelOpen { wallet, vmno, .. } => Some((wallet.clone(), vmno.clone())),
                _ => None,
            });
            let Some((wallet, vmno)) = open else {
                return reject(RejectReason::NotServicePayment);
            };
            if wallet != prev.holder || WalletId::treasury(&vmno) != next.holder {
                return reject(RejectReason::WrongChannelCounterparty);
            }
            if attributed.get(&next.tx_id).copied().unwrap_or(0) > u64::try_from(*paid).unwrap_or(0) {
                return reject(RejectReason::NotServicePayment);
            }
        }
    }
    Ok(ProvenanceVerdict::Accept)
}
