//! Financial clearing: provenance-checked redemption of VMNO-held tokens
//! against the issuing HMNO.

mod fiat;
mod pricing;
mod provenance;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use fiat::{FiatEntry, FiatLedger};
pub use pricing::{price, ChargingModel, Money, MICROS_PER_EURO, PPM};
pub use provenance::{validate_provenance, ProvenanceVerdict, RejectReason};

use crate::engine::Engine;
use crate::ids::{LotId, MnoId, WalletId};
use crate::ledger::{LedgerError, TxId, TxPayload};
use crate::protocol::EventKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionClaim {
    pub vmno: MnoId,
    pub hmno: MnoId,
    pub lots: Vec<LotId>,
    pub period: (u64, u64),
    pub fiat_due: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SettlementError {
    #[error("unknown lot {0}")]
    UnknownLot(LotId),
    #[error("lot {0} already burned")]
    AlreadyBurned(LotId),
    #[error("provenance rejected for lot {lot}: {reason:?}")]
    ProvenanceRejected { lot: LotId, reason: RejectReason },
    #[error("no agreement between {hmno} and {vmno}")]
    NoAgreement { hmno: MnoId, vmno: MnoId },
    #[error("claim states {claimed} but the agreed model prices it at {expected}")]
    FiatMismatch { claimed: Money, expected: Money },
    #[error("claim has no lots")]
    EmptyClaim,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// One line of the settlement report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementRow {
    pub period_start: u64,
    pub period_end: u64,
    pub vmno: MnoId,
    pub hmno: MnoId,
    pub tokens: u64,
    pub model: String,
    pub fiat: Money,
    pub tx_id: TxId,
}

pub fn write_settlement_csv<W: Write>(rows: &[SettlementRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period_start", "period_end", "vmno", "hmno", "tokens", "model", "fiat"])?;
    for r in rows {
        w.write_record([
            r.period_start.to_string(),
            r.period_end.to_string(),
            r.vmno.to_string(),
            r.hmno.to_string(),
            r.tokens.to_string(),
            r.model.clone(),
            r.fiat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl Engine {
    /// Everything `vmno` currently holds of `hmno`'s tokens, priced under
    /// the pair's agreement.
    pub fn build_claim(
        &self,
        vmno: &MnoId,
        hmno: &MnoId,
        period: (u64, u64),
    ) -> Result<RedemptionClaim, SettlementError> {
        let agreement = self
            .agreement(hmno, vmno)
            .ok_or_else(|| SettlementError::NoAgreement { hmno: hmno.clone(), vmno: vmno.clone() })?;
        let treasury = WalletId::treasury(vmno);
        let lots: Vec<_> = self
            .bank
            .held(&treasury, Some(hmno))
            .map(|it| it.filter(|l| l.locked_by.is_none()).collect())
            .unwrap_or_default();
        let tokens = lots.iter().map(|l| l.amount).sum();
        Ok(RedemptionClaim {
            vmno: vmno.clone(),
            hmno: hmno.clone(),
            lots: lots.into_iter().map(|l| l.lot_id.clone()).collect(),
            period,
            fiat_due: price(&agreement.charging_model, tokens),
        })
    }

    /// Burns the claimed lots against a Redeem transaction signed by the
    /// issuer and posts the fiat transfer.
    pub fn redeem(&mut self, claim: &RedemptionClaim, now: u64) -> Result<TxId, SettlementError> {
        if claim.lots.is_empty() {
            return Err(SettlementError::EmptyClaim);
        }
        for id in &claim.lots {
            let lot = self.bank.lot(id).map_err(|_| SettlementError::UnknownLot(id.clone()))?;
            if lot.burned {
                return Err(SettlementError::AlreadyBurned(id.clone()));
            }
        }
        if let ProvenanceVerdict::Reject { lot, reason } = validate_provenance(&self.bank, &self.ledger, claim)? {
            return Err(SettlementError::ProvenanceRejected { lot, reason });
        }
        let agreement = self
            .agreement(&claim.hmno, &claim.vmno)
            .ok_or_else(|| SettlementError::NoAgreement { hmno: claim.hmno.clone(), vmno: claim.vmno.clone() })?;
        let tokens: u64 = claim.lots.iter().map(|id| self.bank.lot(id).expect("checked").amount).sum();
        let expected = price(&agreement.charging_model, tokens);
        if expected != claim.fiat_due {
            return Err(SettlementError::FiatMismatch { claimed: claim.fiat_due, expected });
        }
        let tx_id = self.submit(
            now,
            &claim.hmno,
            TxPayload::Redeem {
                vmno: claim.vmno.clone(),
                hmno: claim.hmno.clone(),
                lots: claim.lots.clone(),
                fiat: claim.fiat_due,
            },
        )?;
        self.bank.burn(&claim.lots).expect("lots checked above");
        self.fiat.post(now, &claim.hmno, &claim.vmno, claim.fiat_due, tx_id);
        self.log(
            now,
            None,
            EventKind::Redeemed {
                vmno: claim.vmno.clone(),
                hmno: claim.hmno.clone(),
                tokens,
                fiat: claim.fiat_due,
                tx_id,
            },
        );
        Ok(tx_id)
    }

    /// End-of-period clearing: one redemption per agreement pair whose
    /// VMNO holds any of the HMNO's tokens.
    pub fn redeem_all(&mut self, period: (u64, u64), now: u64) -> Result<Vec<SettlementRow>, SettlementError> {
        let pairs: Vec<(MnoId, MnoId)> = self.agreements.keys().cloned().collect();
        let mut rows = Vec::new();
        for (hmno, vmno) in pairs {
            let claim = self.build_claim(&vmno, &hmno, period)?;
            if claim.lots.is_empty() {
                continue;
            }
            let tokens = claim.lots.iter().map(|id| self.bank.lot(id).expect("held").amount).sum();
            let tx_id = self.redeem(&claim, now)?;
            rows.push(SettlementRow {
                period_start: period.0,
                period_end: period.1,
                vmno,
                hmno: hmno.clone(),
                tokens,
                model: self.agreements[&(hmno, claim.vmno.clone())].charging_model.label().to_owned(),
                fiat: claim.fiat_due,
                tx_id,
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests;
