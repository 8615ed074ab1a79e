use super::*;
use crate::engine::{Engine, EngineConfig};
use crate::ids::{ActorId, MnoId};
use crate::ledger::AgreementTerms;
use crate::protocol::Mode;
use crate::tokenbank::LineageEntry;

fn m(s: &str) -> MnoId {
    MnoId::new(s)
}

fn engine(model: ChargingModel) -> Engine {
    let mut e = Engine::with_mnos(EngineConfig::default(), ["H", "V", "V2", "X"]);
    for (h, v) in [("H", "V"), ("H", "V2"), ("X", "V")] {
        let terms = AgreementTerms { accepts_tokens_of: vec![m(h)], charging_model: model.clone() };
        e.register_agreement(&m(h), &m(v), terms, 0).unwrap();
    }
    e
}

/// One roamer of `hmno` visiting `vmno` for `bytes`; returns the wallet.
fn visit(e: &mut Engine, hmno: &str, vmno: &str, bytes: u64) -> WalletId {
    let (r, w) = e.enroll_roamer(&m(hmno), 100, 1).unwrap();
    let s = e.new_session(&r, &w, &m(vmno), Mode::Hr, 2).unwrap();
    e.attach_check(&s, 2).unwrap();
    e.run_session(&s, &[(3, bytes)], Some(25)).unwrap();
    e.detach(&s, 4).unwrap();
    w
}

fn claim(e: &Engine, vmno: &str, hmno: &str) -> RedemptionClaim {
    e.build_claim(&m(vmno), &m(hmno), (0, 100)).unwrap()
}

fn verdict(e: &Engine, c: &RedemptionClaim) -> ProvenanceVerdict {
    validate_provenance(e.bank(), e.ledger(), c).unwrap()
}

fn reason(e: &Engine, c: &RedemptionClaim) -> RejectReason {
    match verdict(e, c) {
        ProvenanceVerdict::Reject { reason, .. } => reason,
        ProvenanceVerdict::Accept => panic!("accepted"),
    }
}

#[test]
fn honest_session_is_accepted_and_pays_one_euro() {
    let mut e = engine(ChargingModel::default());
    visit(&mut e, "H", "V", 2_500_000);
    let c = claim(&e, "V", "H");
    assert_eq!(verdict(&e, &c), ProvenanceVerdict::Accept);
    assert_eq!(c.fiat_due, Money::from_euros(1.0));
    e.redeem(&c, 10).unwrap();
    assert_eq!(e.fiat().balance(&m("V")), Money::from_euros(1.0));
    assert_eq!(e.fiat().balance(&m("H")), Money::from_euros(-1.0));
    assert_eq!(e.fiat().net(), Money::ZERO);
    assert_eq!(e.redeem(&c, 11), Err(SettlementError::AlreadyBurned(c.lots[0].clone())));
    let s = e.bank().supply(&m("H"));
    assert_eq!((s.issued, s.burned), (100, 25));
}

#[test]
fn direct_transfer_is_not_service_payment() {
    let mut e = engine(ChargingModel::default());
    let w = visit(&mut e, "H", "V", 0);
    let cause = e.ledger().transactions().last().unwrap().tx_id;
    e.transfer_direct(&w, &WalletId::treasury(&m("V")), &m("H"), 10, cause).unwrap();
    let c = claim(&e, "V", "H");
    assert_eq!(reason(&e, &c), RejectReason::NotServicePayment);
    assert!(matches!(e.redeem(&c, 10), Err(SettlementError::ProvenanceRejected { .. })));
}

#[test]
fn wrong_issuer() {
    let mut e = engine(ChargingModel::default());
    visit(&mut e, "X", "V", 1_000_000);
    let mut c = claim(&e, "V", "X");
    c.hmno = m("H");
    assert_eq!(reason(&e, &c), RejectReason::WrongIssuer);
}

#[test]
fn cross_vmno_relay() {
    let mut e = engine(ChargingModel::default());
    visit(&mut e, "H", "V", 1_000_000);
    let close = e.ledger().transactions().last().unwrap().tx_id;
    e.transfer_direct(&WalletId::treasury(&m("V")), &WalletId::treasury(&m("V2")), &m("H"), 10, close).unwrap();
    let c = claim(&e, "V2", "H");
    assert_eq!(reason(&e, &c), RejectReason::WrongChannelCounterparty);
}

#[test]
fn forged_lineage() {
    let mut e = engine(ChargingModel::default());
    let w = visit(&mut e, "H", "V", 1_000_000);
    let close = e.ledger().transactions().last().unwrap().tx_id;
    let treasury = WalletId::treasury(&m("V"));
    let lineage = vec![
        LineageEntry { holder: w, tx_id: crate::codec::sha256(b"fake issue") },
        LineageEntry { holder: treasury.clone(), tx_id: close },
    ];
    let forged = e.bank_mut_for_adversarial_tests().insert_forged_lot(&treasury, &m("H"), 50, lineage);
    let c = RedemptionClaim { vmno: m("V"), hmno: m("H"), lots: vec![forged], period: (0, 1), fiat_due: Money::ZERO };
    assert_eq!(reason(&e, &c), RejectReason::MissingIssuance);
}

#[test]
fn self_issue_is_refused_by_the_ledger() {
    let mut e = engine(ChargingModel::default());
    let payload = crate::ledger::TxPayload::Issue { issuer: m("H"), wallet: WalletId::treasury(&m("V")), amount: 10 };
    assert!(matches!(
        e.submit_as_for_adversarial_tests(5, &m("V"), payload),
        Err(crate::ledger::LedgerError::PayloadRejected(_))
    ));
    // Issuing its own tokens to itself does not help either.
    let err = e.issue(&m("V"), &WalletId::treasury(&m("V")), 10, 5);
    assert!(err.is_ok(), "treasury is a V wallet, so V may issue into it");
    let c = RedemptionClaim {
        vmno: m("V"),
        hmno: m("V"),
        lots: e.bank().held(&WalletId::treasury(&m("V")), Some(&m("V"))).unwrap().map(|l| l.lot_id.clone()).collect(),
        period: (0, 1),
        fiat_due: Money::ZERO,
    };
    assert_eq!(reason(&e, &c), RejectReason::NotServicePayment);
    let _ = ActorId::new("unused");
}

#[test]
fn parity_ten_tokens_is_one_euro() {
    let mut e = engine(ChargingModel::parity());
    visit(&mut e, "H", "V", 1_000_000);
    let c = claim(&e, "V", "H");
    assert_eq!(c.fiat_due, Money::from_euros(1.0));
    e.redeem(&c, 9).unwrap();
}

#[test]
fn fiat_must_match_agreement() {
    let mut e = engine(ChargingModel::default());
    visit(&mut e, "H", "V", 1_000_000);
    let mut c = claim(&e, "V", "H");
    c.fiat_due = Money::from_euros(99.0);
    assert!(matches!(e.redeem(&c, 9), Err(SettlementError::FiatMismatch { .. })));
}

#[test]
fn redeem_all_writes_csv() {
    let mut e = engine(ChargingModel::default());
    visit(&mut e, "H", "V", 2_500_000);
    visit(&mut e, "X", "V", 1_000_000);
    let rows = e.redeem_all((0, 28 * 86_400), 100).unwrap();
    assert_eq!(rows.len(), 2);
    let mut buf = Vec::new();
    write_settlement_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "period_start,period_end,vmno,hmno,tokens,model,fiat");
    assert_eq!(lines[1], "0,2419200,V,H,25,per_unit,1.000000");
    e.bank().check_supply_closure().unwrap();
}
