use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStatus;
use crate::codec::{sha256, Digest};
use crate::engine::{Engine, DAY};
use crate::ids::{SessionId, WalletId};
use crate::ledger::{TxKind, TxPayload};
use crate::protocol::{EventKind, SessionState};
use crate::settlement::{Money, SettlementRow};
use crate::workload::SessionEventTrace;

use super::ScenarioConfig;

/// Counters the runner keeps itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub sessions_started: u64,
    pub sessions_renewed: u64,
    pub top_ups: u64,
    pub bytes_offered: u64,
    pub supply_checks: u64,
    pub supply_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub mode: String,
    pub days: u32,
    pub scale: f64,
    pub num_mnos: u64,
    pub vmno: String,
    pub home_mnos: u64,
    pub roamers: u64,
    pub config_digest: Digest,
}

/// Exact accounting checks over the finished run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub three_tx_sessions_checked: u64,
    pub three_tx_violations: u64,
    pub channels_checked: u64,
    pub channel_conservation_violations: u64,
    pub supply_checks: u64,
    pub supply_violations: u64,
    /// Total = issues + agreements + 3 x completed + refused attaches + redeems.
    pub onchain_identity_holds: bool,
    /// Tokens paid to the VMNO = redeemed + still held by the VMNO.
    pub token_flow_holds: bool,
    /// Tokens paid = whole 100KB blocks metered + rounding.
    pub block_accounting_holds: bool,
}

impl Audit {
    pub fn clean(&self) -> bool {
        self.three_tx_violations == 0
            && self.channel_conservation_violations == 0
            && self.supply_violations == 0
            && self.onchain_identity_holds
            && self.token_flow_holds
            && self.block_accounting_holds
    }
}

/// Raw counts multiplied by `round(1 / scale)` and by `num_mnos`, in
/// integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub scale_factor: u64,
    pub mno_factor: u64,
    pub onchain_tx_total: u64,
    pub session_txs: u64,
    pub offchain_proofs_total: u64,
    pub sessions_completed: u64,
    pub silent_sessions: u64,
    pub bytes_serviced: u64,
    pub tokens_settled: u64,
    pub fiat_cleared: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: ScenarioSummary,
    pub onchain_tx_total: u64,
    pub onchain_tx_by_kind: BTreeMap<String, u64>,
    /// AttachCheck, ChannelOpen and ChannelClose transactions.
    pub session_txs: u64,
    pub offchain_proofs_total: u64,
    pub peak_onchain_tps: u64,
    pub blocks: u64,
    pub sessions_started: u64,
    pub sessions_completed: u64,
    pub sessions_renewed: u64,
    pub top_ups: u64,
    pub attach_rejected: u64,
    pub silent_sessions: u64,
    pub bytes_offered: u64,
    pub bytes_serviced: u64,
    pub bytes_unserviced: u64,
    pub tokens_issued: u64,
    pub tokens_paid_to_vmno: u64,
    pub rounding_tokens: u64,
    pub tokens_redeemed: u64,
    pub tokens_held_by_vmno: u64,
    /// Keyed `vmno/hmno`.
    pub tokens_settled_by_pair: BTreeMap<String, u64>,
    /// Micro-euros, keyed `vmno/hmno`.
    pub fiat_cleared_by_pair: BTreeMap<String, Money>,
    pub fiat_cleared_total: Money,
    pub channel_closes_by_reason: BTreeMap<String, u64>,
    pub daily_onchain: Vec<u64>,
    pub daily_session_txs: Vec<u64>,
    pub daily_offchain_proofs: Vec<u64>,
    pub audit: Audit,
    pub extrapolated: Extrapolated,
}

/// SHA-256 of the report's JSON encoding.
pub fn report_digest(report: &MetricsReport) -> Digest {
    sha256(&serde_json::to_vec(report).expect("report serializes"))
}

fn pair_key(vmno: &str, hmno: &str) -> String {
    format!("{vmno}/{hmno}")
}

fn snake(v: &impl Serialize) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

pub(super) fn build(
    cfg: &ScenarioConfig,
    trace: &SessionEventTrace,
    engine: &Engine,
    totals: &RunTotals,
    settlement: &[SettlementRow],
) -> MetricsReport {
    let days = trace.days.max(1) as usize;
    let day_of = |t: u64| ((t / DAY) as usize).min(days - 1);
    let ledger = engine.ledger();
    let stats = engine.stats();

    let mut by_kind: BTreeMap<String, u64> = BTreeMap::new();
    let mut per_second: BTreeMap<u64, u64> = BTreeMap::new();
    let mut daily_onchain = vec![0u64; days];
    let mut daily_session_txs = vec![0u64; days];
    let mut attach_per_session: BTreeMap<&SessionId, u64> = BTreeMap::new();
    let mut total = 0u64;
    for tx in ledger.transactions() {
        total += 1;
        *by_kind.entry(tx.kind().name().to_owned()).or_default() += 1;
        *per_second.entry(tx.timestamp).or_default() += 1;
        daily_onchain[day_of(tx.timestamp)] += 1;
        if matches!(tx.kind(), TxKind::AttachCheck | TxKind::ChannelOpen | TxKind::ChannelClose) {
            daily_session_txs[day_of(tx.timestamp)] += 1;
        }
        if let TxPayload::AttachCheck { session, .. } = &tx.payload {
            *attach_per_session.entry(session).or_default() += 1;
        }
    }
    let kind = |k: TxKind| by_kind.get(k.name()).copied().unwrap_or(0);
    let session_txs = daily_session_txs.iter().sum();

    let mut daily_offchain = vec![0u64; days];
    for e in engine.events() {
        if let EventKind::ProofsAccepted { count, .. } = e.kind {
            daily_offchain[day_of(e.time)] += count;
        }
    }

    let mut audit =
        Audit { supply_checks: totals.supply_checks, supply_violations: totals.supply_violations, ..Audit::default() };
    let (mut completed, mut silent) = (0u64, 0u64);
    for s in engine.sessions() {
        if s.state != SessionState::Settled {
            continue;
        }
        completed += 1;
        if s.bytes_serviced == 0 {
            silent += 1;
        }
        audit.three_tx_sessions_checked += 1;
        let attaches = attach_per_session.get(&s.session_id).copied().unwrap_or(0);
        let channel_kinds: Vec<TxKind> =
            s.channel.as_ref().map(|c| ledger.channel_txs(c).iter().map(|t| t.kind()).collect()).unwrap_or_default();
        if attaches != 1 || channel_kinds != [TxKind::ChannelOpen, TxKind::ChannelClose] {
            audit.three_tx_violations += 1;
        }
    }

    let mut closes_by_reason: BTreeMap<String, u64> = BTreeMap::new();
    let (mut paid_total, mut metered_blocks, mut blocks_ok) = (0u64, 0u64, true);
    for ch in engine.channels() {
        audit.channels_checked += 1;
        let Some(o) = ch.outcome else {
            audit.channel_conservation_violations += u64::from(ch.status != ChannelStatus::Open);
            continue;
        };
        if o.paid + o.refunded != ch.deposit {
            audit.channel_conservation_violations += 1;
        }
        *closes_by_reason.entry(snake(&o.reason)).or_default() += 1;
        paid_total += o.paid;
        metered_blocks += engine.meter(&ch.channel_id).unwrap_or_default().blocks_paid;
        blocks_ok &= o.paid - o.rounding == ch.cumulative_paid;
    }

    let bank = engine.bank();
    let vmno = crate::ids::MnoId::new(cfg.vmno.clone());
    let held = bank.balance(&WalletId::treasury(&vmno), None).unwrap_or(0);
    let redeemed: u64 = settlement.iter().map(|r| r.tokens).sum();
    let mut issued = 0u64;
    for m in &ledger.genesis().roster {
        issued += bank.supply(&m.id).issued;
    }
    let mut tokens_by_pair = BTreeMap::new();
    let mut fiat_by_pair = BTreeMap::new();
    let mut fiat_total = Money::ZERO;
    for r in settlement {
        let key = pair_key(r.vmno.as_str(), r.hmno.as_str());
        *tokens_by_pair.entry(key.clone()).or_default() += r.tokens;
        let f: &mut Money = fiat_by_pair.entry(key).or_default();
        *f = Money(f.0 + r.fiat.0);
        fiat_total = Money(fiat_total.0 + r.fiat.0);
    }

    let agreements = kind(TxKind::AgreementRegistration);
    audit.onchain_identity_holds =
        total == kind(TxKind::Issue) + agreements + 3 * completed + stats.attach_rejected + kind(TxKind::Redeem);
    audit.token_flow_holds = paid_total == redeemed + held;
    audit.block_accounting_holds = blocks_ok && paid_total == metered_blocks + stats.rounding_tokens;

    let scale_factor = (1.0 / cfg.workload.scale).round() as u64;
    let mno_factor = cfg.workload.num_mnos;
    let x = |v: u64| v * scale_factor * mno_factor;
    let extrapolated = Extrapolated {
        scale_factor,
        mno_factor,
        onchain_tx_total: x(total),
        session_txs: x(session_txs),
        offchain_proofs_total: x(stats.proofs_accepted),
        sessions_completed: x(completed),
        silent_sessions: x(silent),
        bytes_serviced: x(stats.bytes_serviced),
        tokens_settled: x(redeemed),
        fiat_cleared: Money(fiat_total.0 * (scale_factor * mno_factor) as i64),
    };

    let config_digest = sha256(&serde_json::to_vec(cfg).expect("config serializes"));
    MetricsReport {
        scenario: ScenarioSummary {
            seed: cfg.workload.seed,
            mode: cfg.mode.to_string(),
            days: trace.days,
            scale: cfg.workload.scale,
            num_mnos: cfg.workload.num_mnos,
            vmno: cfg.vmno.clone(),
            home_mnos: agreements,
            roamers: trace.arrivals.len() as u64,
            config_digest,
        },
        onchain_tx_total: total,
        onchain_tx_by_kind: by_kind,
        session_txs,
        offchain_proofs_total: stats.proofs_accepted,
        peak_onchain_tps: per_second.values().copied().max().unwrap_or(0),
        blocks: ledger.height(),
        sessions_started: totals.sessions_started,
        sessions_completed: completed,
        sessions_renewed: totals.sessions_renewed,
        top_ups: totals.top_ups,
        attach_rejected: stats.attach_rejected,
        silent_sessions: silent,
        bytes_offered: totals.bytes_offered,
        bytes_serviced: stats.bytes_serviced,
        bytes_unserviced: totals.bytes_offered - stats.bytes_serviced,
        tokens_issued: issued,
        tokens_paid_to_vmno: paid_total,
        rounding_tokens: stats.rounding_tokens,
        tokens_redeemed: redeemed,
        tokens_held_by_vmno: held,
        tokens_settled_by_pair: tokens_by_pair,
        fiat_cleared_by_pair: fiat_by_pair,
        fiat_cleared_total: fiat_total,
        channel_closes_by_reason: closes_by_reason,
        daily_onchain,
        daily_session_txs,
        daily_offchain_proofs: daily_offchain,
        audit,
        extrapolated,
    }
}
