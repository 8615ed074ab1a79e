//! Scenario runner: drives a generated (or supplied) roaming trace through
//! the protocol engine as a single deterministic event loop, then audits
//! and writes the results.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelError, ChannelStatus, BLOCK_BYTES};
use crate::engine::{Engine, EngineConfig, DAY};
use crate::ids::{ActorId, MnoId, SessionId, WalletId};
use crate::ledger::persist::write_blocks;
use crate::ledger::{AgreementTerms, RosterEntry};
use crate::protocol::{write_events, Mode, ProtocolError, SessionState};
use crate::settlement::{write_settlement_csv, ChargingModel, SettlementRow};
use crate::workload::{generate, read_trace, Popularity, SessionEventTrace, WorkloadConfig, WorkloadError};

mod report;
mod requirements;
mod verify;

pub use report::{report_digest, Audit, Extrapolated, MetricsReport, RunTotals};
pub use requirements::{check_requirements, Assumptions, RequirementsVerdict};
pub use verify::{verify_ledger, verify_ledger_bytes};

pub const HOUR: u64 = 3_600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub workload: WorkloadConfig,
    /// Replay this trace file instead of generating one from `workload`.
    /// The workload section still supplies seed and scale.
    pub trace_path: Option<PathBuf>,
    pub vmno: String,
    pub mode: Mode,
    /// Tokens issued to each roamer on enrollment.
    pub allotment: u64,
    /// Issue another allotment when a roamer with traffic left runs dry.
    pub top_up: bool,
    pub charging_model: ChargingModel,
    /// Tokens locked per channel, capped by the wallet balance; `None`
    /// sizes it to the expected visit.
    pub deposit: Option<u64>,
    pub expected_visit_bytes: u64,
    pub round_partial_block: bool,
    pub timelock_window_secs: u64,
    pub inactivity_window_secs: u64,
    pub seal_interval_secs: u64,
    /// Redemption cadence; `None` clears once at the end of the run.
    pub settlement_period_days: Option<u32>,
    pub record_proofs: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        ScenarioConfig {
            workload: WorkloadConfig::default(),
            trace_path: None,
            vmno: "V000".into(),
            mode: Mode::Lbo,
            allotment: 100,
            top_up: true,
            charging_model: ChargingModel::default(),
            deposit: None,
            expected_visit_bytes: engine.expected_visit_bytes,
            round_partial_block: engine.round_partial_block,
            timelock_window_secs: engine.timelock_window,
            inactivity_window_secs: engine.inactivity_window,
            seal_interval_secs: HOUR,
            settlement_period_days: None,
            record_proofs: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_owned()));
        if self.trace_path.is_none() {
            self.workload.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        }
        if self.vmno.is_empty() {
            return bad("vmno must be non-empty");
        }
        if self.seal_interval_secs == 0 {
            return bad("seal_interval_secs must be positive");
        }
        if self.timelock_window_secs == 0 || self.inactivity_window_secs == 0 {
            return bad("channel windows must be positive");
        }
        if self.settlement_period_days == Some(0) {
            return bad("settlement_period_days must be positive");
        }
        if self.deposit == Some(0) {
            return bad("deposit must be positive");
        }
        if !(self.workload.scale > 0.0 && self.workload.scale <= 1.0) {
            return bad("scale must lie in (0, 1]");
        }
        self.charging_model.validate().map_err(HarnessError::InvalidConfig)?;
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig =
            serde_json::from_slice(bytes).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&bytes)
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            seed: self.workload.seed,
            timelock_window: self.timelock_window_secs,
            inactivity_window: self.inactivity_window_secs,
            round_partial_block: self.round_partial_block,
            expected_visit_bytes: self.expected_visit_bytes,
            record_proofs: self.record_proofs,
        }
    }

    /// The trace this config describes.
    pub fn trace(&self) -> Result<SessionEventTrace, HarnessError> {
        match &self.trace_path {
            Some(p) => {
                let f = File::open(p).map_err(|e| HarnessError::io(p, e))?;
                Ok(read_trace(BufReader::new(f))?)
            }
            None => Ok(generate(&self.workload)?),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("engine: {0}")]
    Engine(String),
}

impl HarnessError {
    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_owned(), source }
    }
}

/// Everything a run produced. The engine is kept for audits and tests.
pub struct ScenarioOutcome {
    pub report: MetricsReport,
    pub settlement: Vec<SettlementRow>,
    pub engine: Engine,
}

impl std::fmt::Debug for ScenarioOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioOutcome").field("report", &self.report).finish_non_exhaustive()
    }
}

impl ScenarioOutcome {
    /// Writes `report.json`, `settlement.csv`, `ledger.jsonl`,
    /// `events.jsonl` and, when proofs were recorded, `proofs.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let create = |name: &str| -> Result<(PathBuf, BufWriter<File>), HarnessError> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| HarnessError::io(&p, e))?;
            Ok((p, BufWriter::new(f)))
        };

        let (p, mut w) = create("report.json")?;
        let mut json = serde_json::to_vec_pretty(&self.report).expect("report serializes");
        json.push(b'\n');
        w.write_all(&json).and_then(|_| w.flush()).map_err(|e| HarnessError::io(&p, e))?;

        let (p, w) = create("settlement.csv")?;
        write_settlement_csv(&self.settlement, w).map_err(|e| HarnessError::io(&p, io::Error::other(e)))?;

        let (p, w) = create("ledger.jsonl")?;
        write_blocks(self.engine.ledger().chain(), w).map_err(|e| HarnessError::io(&p, e))?;

        let (p, w) = create("events.jsonl")?;
        write_events(self.engine.events(), w).map_err(|e| HarnessError::io(&p, e))?;

        if self.engine.config().record_proofs {
            let (p, mut w) = create("proofs.jsonl")?;
            let res: io::Result<()> = (|| {
                for proof in self.engine.proof_log() {
                    serde_json::to_writer(&mut w, proof)?;
                    w.write_all(b"\n")?;
                }
                w.flush()
            })();
            res.map_err(|e| HarnessError::io(&p, e))?;
        }
        Ok(())
    }
}

/// Generates the workload, runs it and writes the outputs to `out_dir`
/// when one is given.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ScenarioOutcome, HarnessError> {
    cfg.validate()?;
    let trace = cfg.trace()?;
    let homes = match cfg.trace_path {
        None => Popularity::calibrate(&cfg.workload).mnos.into_iter().map(|(id, _, _)| id).collect(),
        Some(_) => Vec::new(),
    };
    let outcome = run_with(cfg, &trace, homes)?;
    if let Some(dir) = out_dir {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

/// Event classes in processing order for equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Sweep,
    Redeem,
    Departure,
    Arrival,
    Traffic,
    Seal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Tick {
    time: u64,
    class: Class,
    seq: usize,
}

struct Roamer {
    hmno: MnoId,
    actor: Option<(ActorId, WalletId)>,
    session: Option<SessionId>,
    sessions: u64,
    refused: bool,
    last_top_up: Option<(u64, u64)>,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    engine: Engine,
    vmno: MnoId,
    roamers: Vec<Roamer>,
    totals: RunTotals,
    settlement: Vec<SettlementRow>,
    last_period_end: u64,
}

/// Runs an already materialised trace. Agreements are registered for the
/// home operators that appear in it.
pub fn run_trace(cfg: &ScenarioConfig, trace: &SessionEventTrace) -> Result<ScenarioOutcome, HarnessError> {
    cfg.validate()?;
    run_with(cfg, trace, Vec::new())
}

fn run_with(
    cfg: &ScenarioConfig,
    trace: &SessionEventTrace,
    mut homes: Vec<MnoId>,
) -> Result<ScenarioOutcome, HarnessError> {
    let vmno = MnoId::new(cfg.vmno.clone());
    for a in &trace.arrivals {
        if !homes.contains(&a.hmno) {
            homes.push(a.hmno.clone());
        }
    }
    if homes.contains(&vmno) {
        return Err(HarnessError::InvalidConfig(format!("vmno {vmno} is also a home operator")));
    }
    let mut roster = vec![RosterEntry { id: vmno.clone(), may_issue: true }];
    roster.extend(homes.iter().map(|h| RosterEntry { id: h.clone(), may_issue: true }));
    let mut engine = Engine::new(cfg.engine_config(), roster);

    let engine_err = |e: &dyn std::fmt::Display| HarnessError::Engine(e.to_string());
    for h in &homes {
        let terms = AgreementTerms { accepts_tokens_of: vec![h.clone()], charging_model: cfg.charging_model.clone() };
        engine.register_agreement(h, &vmno, terms, 0).map_err(|e| engine_err(&e))?;
    }

    let horizon = trace.horizon();
    let mut ticks: Vec<Tick> = Vec::new();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, a) in trace.arrivals.iter().enumerate() {
        index.insert(a.roamer, i);
        ticks.push(Tick { time: a.arrival.max(0) as u64, class: Class::Arrival, seq: i });
        if a.departure >= 0 && (a.departure as u64) < horizon {
            ticks.push(Tick { time: a.departure as u64, class: Class::Departure, seq: i });
        }
    }
    for (i, r) in trace.traffic.iter().enumerate() {
        if r.time < horizon {
            ticks.push(Tick { time: r.time, class: Class::Traffic, seq: i });
        }
    }
    for d in 1..u64::from(trace.days) {
        ticks.push(Tick { time: d * DAY, class: Class::Sweep, seq: 0 });
    }
    if let Some(p) = cfg.settlement_period_days {
        let step = u64::from(p) * DAY;
        let mut t = step;
        while t < horizon {
            ticks.push(Tick { time: t, class: Class::Redeem, seq: 0 });
            t += step;
        }
    }
    let mut t = cfg.seal_interval_secs;
    while t < horizon {
        ticks.push(Tick { time: t, class: Class::Seal, seq: 0 });
        t += cfg.seal_interval_secs;
    }
    ticks.sort();

    let roamers = trace
        .arrivals
        .iter()
        .map(|a| Roamer {
            hmno: a.hmno.clone(),
            actor: None,
            session: None,
            sessions: 0,
            refused: false,
            last_top_up: None,
        })
        .collect();
    let mut run =
        Runner { cfg, engine, vmno, roamers, totals: RunTotals::default(), settlement: Vec::new(), last_period_end: 0 };
    run.seal();

    for tick in ticks {
        match tick.class {
            Class::Sweep => run.engine.sweep(tick.time).failures.first().map_or(Ok(()), |(_, e)| Err(engine_err(e)))?,
            Class::Redeem => run.redeem(tick.time)?,
            Class::Departure => run.depart(tick.seq, tick.time)?,
            Class::Arrival => run.arrive(tick.seq, tick.time)?,
            Class::Traffic => {
                let r = &trace.traffic[tick.seq];
                let Some(&i) = index.get(&r.roamer) else {
                    return Err(HarnessError::InvalidConfig(format!("traffic for unknown roamer {}", r.roamer)));
                };
                run.traffic(i, r.bytes, r.time)?;
            }
            Class::Seal => run.seal(),
        }
    }

    for i in 0..run.roamers.len() {
        run.depart(i, horizon)?;
    }
    run.seal();
    run.redeem(horizon)?;
    run.seal();

    let report = report::build(cfg, trace, &run.engine, &run.totals, &run.settlement);
    Ok(ScenarioOutcome { report, settlement: run.settlement, engine: run.engine })
}

impl Runner<'_> {
    fn seal(&mut self) {
        if self.engine.seal().is_some() {
            self.totals.supply_checks += 1;
            if self.engine.bank().check_supply_closure().is_err() {
                self.totals.supply_violations += 1;
            }
        }
    }

    fn redeem(&mut self, now: u64) -> Result<(), HarnessError> {
        let period = (self.last_period_end, now);
        let rows = self.engine.redeem_all(period, now).map_err(|e| HarnessError::Engine(e.to_string()))?;
        self.settlement.extend(rows);
        self.last_period_end = now;
        Ok(())
    }

    fn arrive(&mut self, i: usize, now: u64) -> Result<(), HarnessError> {
        let hmno = self.roamers[i].hmno.clone();
        let enrolled = self
            .engine
            .enroll_roamer(&hmno, self.cfg.allotment, now)
            .map_err(|e| HarnessError::Engine(e.to_string()))?;
        self.roamers[i].actor = Some(enrolled);
        self.start_session(i, now)?;
        Ok(())
    }

    /// Attaches, provisions (LBO) and opens a channel. Returns false when the
    /// contract check refused the roamer.
    fn start_session(&mut self, i: usize, now: u64) -> Result<bool, HarnessError> {
        let (actor, wallet) = self.roamers[i].actor.clone().expect("enrolled on arrival");
        let err = |e: ProtocolError| HarnessError::Engine(e.to_string());
        let id = self.engine.new_session(&actor, &wallet, &self.vmno, self.cfg.mode, now).map_err(err)?;
        self.totals.sessions_started += 1;
        self.totals.sessions_renewed += u64::from(self.roamers[i].sessions > 0);
        self.roamers[i].sessions += 1;
        self.roamers[i].session = None;
        match self.engine.attach_check(&id, now) {
            Ok(_) => {}
            Err(ProtocolError::NoAgreement | ProtocolError::NoTokens | ProtocolError::UnverifiableIssuance) => {
                self.roamers[i].refused = true;
                return Ok(false);
            }
            Err(e) => return Err(err(e)),
        }
        if self.cfg.mode == Mode::Lbo {
            self.engine.provision_profile(&id, now).map_err(err)?;
        }
        let hmno = self.roamers[i].hmno.clone();
        let balance = self.engine.bank().balance(&wallet, Some(&hmno)).unwrap_or(0);
        let deposit = self.cfg.deposit.map(|d| d.min(balance));
        self.engine.open_session_channel(&id, deposit, now).map_err(err)?;
        self.roamers[i].session = Some(id);
        Ok(true)
    }

    fn depart(&mut self, i: usize, now: u64) -> Result<(), HarnessError> {
        if let Some(id) = self.roamers[i].session.take() {
            let state = self.engine.session(&id).expect("known").state;
            if matches!(state, SessionState::ChannelOpen | SessionState::Active) {
                self.engine.detach(&id, now).map_err(|e| HarnessError::Engine(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// The session can carry traffic at `now`: still open and not past its
    /// time-lock.
    fn usable(&self, id: &SessionId, now: u64) -> bool {
        let s = self.engine.session(id).expect("known");
        if !matches!(s.state, SessionState::ChannelOpen | SessionState::Active) {
            return false;
        }
        let ch = self.engine.channel(s.channel.as_ref().expect("open")).expect("known");
        ch.status == ChannelStatus::Open && now < ch.timelock_expiry
    }

    /// Carries `bytes` for roamer `i`. A session whose deposit runs out, or
    /// whose channel was closed or is about to expire, is detached and a
    /// fresh one takes over while the wallet still holds tokens.
    fn traffic(&mut self, i: usize, bytes: u64, now: u64) -> Result<(), HarnessError> {
        self.totals.bytes_offered += bytes;
        let mut remaining = bytes;
        while remaining > 0 {
            let id = match self.roamers[i].session.clone() {
                Some(id) if self.usable(&id, now) => id,
                _ => {
                    self.depart(i, now)?;
                    if !self.can_renew(i, remaining, now)? || !self.start_session(i, now)? {
                        return Ok(());
                    }
                    self.roamers[i].session.clone().expect("just opened")
                }
            };
            match self.engine.session_traffic(&id, remaining, now) {
                Ok(o) if o.exhausted => {
                    remaining = o.unserviced_bytes;
                    self.depart(i, now)?;
                }
                Ok(_) => remaining = 0,
                Err(ProtocolError::Channel(ChannelError::Expired)) => self.depart(i, now)?,
                Err(e) => return Err(HarnessError::Engine(e.to_string())),
            }
        }
        Ok(())
    }

    /// Whether roamer `i` can open another session, topping up an empty
    /// wallet when the scenario allows it. A top-up covers at least the
    /// pending bytes; identical top-ups in one second would share a tx id,
    /// so a repeat is one token larger.
    fn can_renew(&mut self, i: usize, pending: u64, now: u64) -> Result<bool, HarnessError> {
        let r = &self.roamers[i];
        let Some((_, wallet)) = r.actor.clone() else { return Ok(false) };
        if r.refused {
            return Ok(false);
        }
        let hmno = r.hmno.clone();
        if self.engine.bank().balance(&wallet, Some(&hmno)).unwrap_or(0) > 0 {
            return Ok(true);
        }
        if !self.cfg.top_up || self.cfg.allotment == 0 {
            return Ok(false);
        }
        let mut amount = self.cfg.allotment.max(pending.div_ceil(BLOCK_BYTES) + 1);
        if self.roamers[i].last_top_up == Some((now, amount)) {
            amount += 1;
        }
        self.engine.issue(&hmno, &wallet, amount, now).map_err(|e| HarnessError::Engine(e.to_string()))?;
        self.roamers[i].last_top_up = Some((now, amount));
        self.totals.top_ups += 1;
        Ok(true)
    }
}

#[cfg(test)]
mod tests;
