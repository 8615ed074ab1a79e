use super::*;
use crate::ids::MnoId;
use crate::ledger::persist::blocks_to_bytes;
use crate::ledger::InvalidReason;
use crate::settlement::Money;
use crate::workload::{Arrival, TrafficRecord};

fn one_roamer(bytes: Option<u64>) -> SessionEventTrace {
    SessionEventTrace {
        days: 1,
        arrivals: vec![Arrival {
            roamer: 0,
            day: 0,
            arrival: 3_600,
            departure: 4 * 3_600,
            hmno: MnoId::new("H"),
            country: "C000".into(),
            planned_stay_hours: 3,
            silent: bytes.is_none(),
            carried_in: false,
            carried_over: false,
        }],
        traffic: bytes.map(|b| TrafficRecord { roamer: 0, day: 0, time: 7_200, bytes: b }).into_iter().collect(),
    }
}

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.workload.scale = 0.0002;
    cfg.workload.days = 5;
    cfg
}

#[test]
fn toy_example_end_to_end() {
    let out = run_trace(&ScenarioConfig::default(), &one_roamer(Some(2_500_000))).unwrap();
    let r = &out.report;
    assert_eq!(r.offchain_proofs_total, 25);
    assert_eq!(r.onchain_tx_by_kind["AgreementRegistration"], 1);
    assert_eq!(r.onchain_tx_by_kind["Issue"], 1);
    assert_eq!(r.onchain_tx_by_kind["Redeem"], 1);
    assert_eq!(r.session_txs, 3);
    assert_eq!(r.onchain_tx_total, 6);
    assert_eq!(r.tokens_settled_by_pair["V000/H"], 25);
    assert_eq!(r.fiat_cleared_by_pair["V000/H"], Money(1_000_000));
    assert_eq!(r.rounding_tokens, 0);
    assert!(r.audit.clean(), "{:?}", r.audit);
}

#[test]
fn silent_roamer_clears_nothing() {
    let out = run_trace(&ScenarioConfig::default(), &one_roamer(None)).unwrap();
    let r = &out.report;
    assert_eq!(r.offchain_proofs_total, 0);
    assert_eq!(r.silent_sessions, 1);
    assert_eq!(r.fiat_cleared_total, Money::ZERO);
    assert!(!r.onchain_tx_by_kind.contains_key("Redeem"));
    assert_eq!(r.session_txs, 3);
}

#[test]
fn partial_block_is_rounded_up_on_detach() {
    let out = run_trace(&ScenarioConfig::default(), &one_roamer(Some(1_050_000))).unwrap();
    assert_eq!(out.report.offchain_proofs_total, 10);
    assert_eq!(out.report.tokens_paid_to_vmno, 11);
    assert_eq!(out.report.rounding_tokens, 1);

    let cfg = ScenarioConfig { round_partial_block: false, ..ScenarioConfig::default() };
    let out = run_trace(&cfg, &one_roamer(Some(1_050_000))).unwrap();
    assert_eq!(out.report.tokens_paid_to_vmno, 10);
}

#[test]
fn exhausted_deposit_renews_the_session() {
    let out = run_trace(&ScenarioConfig::default(), &one_roamer(Some(6_000_000))).unwrap();
    let r = &out.report;
    assert_eq!(r.sessions_completed, 3);
    assert_eq!(r.sessions_renewed, 2);
    assert_eq!(r.bytes_unserviced, 0);
    assert_eq!(r.offchain_proofs_total, 60);
    assert_eq!(r.session_txs, 9);
    assert_eq!(r.audit.three_tx_violations, 0);
}

#[test]
fn empty_wallet_tops_up_or_stops() {
    let cfg = ScenarioConfig { allotment: 30, ..ScenarioConfig::default() };
    let out = run_trace(&cfg, &one_roamer(Some(5_000_000))).unwrap();
    assert_eq!(out.report.top_ups, 1);
    assert_eq!(out.report.bytes_unserviced, 0);

    let cfg = ScenarioConfig { allotment: 30, top_up: false, ..ScenarioConfig::default() };
    let out = run_trace(&cfg, &one_roamer(Some(5_000_000))).unwrap();
    assert_eq!(out.report.top_ups, 0);
    assert_eq!(out.report.bytes_serviced, 3_000_000);
    assert_eq!(out.report.bytes_unserviced, 2_000_000);
    assert!(out.report.audit.clean());
}

#[test]
fn generated_scenario_audits_clean() {
    let out = run_scenario(&small(), None).unwrap();
    let r = &out.report;
    assert!(r.sessions_completed > 50);
    assert!(r.audit.clean(), "{:?}", r.audit);
    assert_eq!(r.scenario.home_mnos, 400);
    assert_eq!(r.audit.three_tx_sessions_checked, r.sessions_completed);
    assert_eq!(r.offchain_proofs_total, out.engine.stats().proofs_accepted);
    assert_eq!(r.tokens_redeemed + r.tokens_held_by_vmno, r.tokens_paid_to_vmno);
    assert_eq!(r.extrapolated.session_txs, r.session_txs * 5_000 * 800);
    assert_eq!(r.daily_session_txs.len(), 5);
}

#[test]
fn same_config_same_report() {
    let a = run_scenario(&small(), None).unwrap();
    let b = run_scenario(&small(), None).unwrap();
    assert_eq!(report_digest(&a.report), report_digest(&b.report));
    assert_eq!(blocks_to_bytes(a.engine.ledger().chain()), blocks_to_bytes(b.engine.ledger().chain()));
    let mut other = small();
    other.workload.seed = 43;
    let c = run_scenario(&other, None).unwrap();
    assert_ne!(report_digest(&a.report), report_digest(&c.report));
}

#[test]
fn modes_agree_on_money_and_counts() {
    let lbo = run_scenario(&small(), None).unwrap().report;
    let hr = run_scenario(&ScenarioConfig { mode: Mode::Hr, ..small() }, None).unwrap().report;
    assert_eq!(lbo.onchain_tx_by_kind, hr.onchain_tx_by_kind);
    assert_eq!(lbo.tokens_settled_by_pair, hr.tokens_settled_by_pair);
    assert_eq!(lbo.fiat_cleared_by_pair, hr.fiat_cleared_by_pair);
    assert_eq!(lbo.offchain_proofs_total, hr.offchain_proofs_total);
}

#[test]
fn periodic_settlement_splits_redemptions() {
    let cfg = ScenarioConfig { settlement_period_days: Some(2), ..small() };
    let out = run_scenario(&cfg, None).unwrap();
    let periods: std::collections::BTreeSet<_> =
        out.settlement.iter().map(|r| (r.period_start, r.period_end)).collect();
    assert!(periods.len() >= 2, "{periods:?}");
    assert!(out.report.audit.clean());
    assert_eq!(out.report.tokens_held_by_vmno, 0);
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    assert!(matches!(ScenarioConfig::from_json(br#"{"allotmnet": 5}"#), Err(HarnessError::InvalidConfig(_))));
    assert!(matches!(ScenarioConfig::from_json(br#"{"deposit": 0}"#), Err(HarnessError::InvalidConfig(_))));
    let cfg = ScenarioConfig::from_json(br#"{"mode": "hr", "workload": {"days": 3}}"#).unwrap();
    assert_eq!(cfg.mode, Mode::Hr);
    assert_eq!(cfg.workload.days, 3);
    assert_eq!(cfg.allotment, 100);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { record_proofs: true, ..ScenarioConfig::default() };
    run_trace(&cfg, &one_roamer(Some(2_500_000))).unwrap().write(dir.path()).unwrap();
    for f in ["report.json", "settlement.csv", "ledger.jsonl", "events.jsonl", "proofs.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let proofs = fs::read_to_string(dir.path().join("proofs.jsonl")).unwrap();
    assert_eq!(proofs.lines().count(), 25);
    let csv = fs::read_to_string(dir.path().join("settlement.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "0,86400,V000,H,25,per_unit,1.000000");
    assert!(verify_ledger(&dir.path().join("ledger.jsonl")).unwrap().valid);
}

#[test]
fn verify_reports_edits_and_truncation() {
    let out = run_trace(&ScenarioConfig::default(), &one_roamer(Some(2_500_000))).unwrap();
    let bytes = blocks_to_bytes(out.engine.ledger().chain());
    assert!(verify_ledger_bytes(&bytes).valid);
    let lines: Vec<usize> = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i).collect();
    assert!(lines.len() >= 3);

    let truncated = &bytes[..bytes.len() - 1];
    let r = verify_ledger_bytes(truncated);
    assert_eq!(r.first_invalid_height, Some(lines.len() as u64 - 1));
    assert!(matches!(r.reason, Some(InvalidReason::Unparseable { .. })));

    let mut edited = bytes.clone();
    let pos = lines[1] + 20;
    edited[pos] ^= 0x01;
    let r = verify_ledger_bytes(&edited);
    assert!(!r.valid);
    assert_eq!(r.first_invalid_height, Some(2));
}

#[test]
fn requirements_projection() {
    let out = run_scenario(&small(), None).unwrap();
    let a = Assumptions { visited_daily_bytes: Some(10_000_000_000_000), ..Assumptions::default() };
    let v = check_requirements(&out.report, &a);
    assert_eq!(v.daily_offchain_projected, 100_000_000);
    assert_eq!(v.offchain_basis, "assumed_traffic");
    let expected = (out.report.extrapolated.session_txs + 2) / 5;
    assert_eq!(v.daily_onchain_projected, expected);
    assert!((v.projected_peak_tps - expected as f64 / 14_400.0).abs() < 1e-9);
    assert_eq!(v.pass, v.projected_peak_tps < 20_000.0);

    let tight = Assumptions { concentration_hours: 0.001, ..Assumptions::default() };
    assert!(!check_requirements(&out.report, &tight).pass);
}
