//! The throughput feasibility audit: desk-scale counts projected to a full
//! consortium and compared with a ledger's sustained capacity.

use serde::{Deserialize, Serialize};

use crate::channel::BLOCK_BYTES;

use super::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assumptions {
    pub capacity_tps: f64,
    /// Hours per day into which the on-chain load is compressed.
    pub concentration_hours: f64,
    /// Aggregate roamer traffic per visited MNO per day. When unset the
    /// off-chain projection uses the simulated proof count instead.
    pub visited_daily_bytes: Option<u64>,
    pub granularity_bytes: u64,
}

impl Default for Assumptions {
    fn default() -> Self {
        Assumptions {
            capacity_tps: 20_000.0,
            concentration_hours: 4.0,
            visited_daily_bytes: None,
            granularity_bytes: BLOCK_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementsVerdict {
    pub capacity_tps: f64,
    pub concentration_hours: f64,
    /// Session transactions per day at one visited MNO, full scale.
    pub daily_onchain_per_mno: u64,
    /// Session transactions per day across all MNOs.
    pub daily_onchain_projected: u64,
    pub projected_peak_tps: f64,
    /// Capacity over projected peak; unset when nothing is projected.
    pub headroom_ratio: Option<f64>,
    /// Off-chain payments per day at one visited MNO.
    pub daily_offchain_projected: u64,
    pub daily_offchain_all_mnos: u64,
    pub offchain_basis: String,
    pub pass: bool,
}

/// Projects a report to full scale. Daily figures average the scenario's
/// session transactions (attach, open, close) over its days; enrollment
/// issues, agreements and redemptions are one-off or per-period and are
/// left out. Integer division rounds to nearest.
pub fn check_requirements(report: &MetricsReport, a: &Assumptions) -> RequirementsVerdict {
    let days = u64::from(report.scenario.days.max(1));
    let x = &report.extrapolated;
    let per_day = |v: u64| (v + days / 2) / days;
    let daily_onchain_per_mno = per_day(report.session_txs * x.scale_factor);
    let daily_onchain_projected = per_day(x.session_txs);
    let projected_peak_tps = daily_onchain_projected as f64 / (a.concentration_hours * 3_600.0);
    let (daily_offchain_projected, offchain_basis) = match a.visited_daily_bytes {
        Some(bytes) => (bytes.div_ceil(a.granularity_bytes.max(1)), "assumed_traffic"),
        None => (per_day(report.offchain_proofs_total * x.scale_factor), "simulated"),
    };
    RequirementsVerdict {
        capacity_tps: a.capacity_tps,
        concentration_hours: a.concentration_hours,
        daily_onchain_per_mno,
        daily_onchain_projected,
        projected_peak_tps,
        headroom_ratio: (projected_peak_tps > 0.0).then(|| a.capacity_tps / projected_peak_tps),
        daily_offchain_projected,
        daily_offchain_all_mnos: daily_offchain_projected * x.mno_factor,
        offchain_basis: offchain_basis.to_owned(),
        pass: projected_peak_tps < a.capacity_tps,
    }
}
