//! Deterministic synthetic inbound-roamer population for one visited
//! operator.
//!
//! Each simulated day a fraction of the target population arrives, drawn
//! uniformly from the churn band. Stays are geometric at hourly resolution
//! with the configured median, a Bernoulli draw marks silent roamers, and
//! every day a non-silent roamer is present gets a log-normal byte count.
//! Home countries and home operators follow truncated power laws whose
//! exponents are solved so the top-10 shares match the configuration.
//!
//! A burn-in period before day 0 produces the roamers already present when
//! the window opens.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use crate::engine::DAY;
use crate::ids::MnoId;

const HOUR: u64 = 3_600;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub seed: u64,
    /// Operators worldwide; used when extrapolating to the whole system.
    pub num_mnos: u64,
    /// Average number of inbound roamers present per day at full scale.
    pub roamers_per_vmno_day: u64,
    pub churn_fraction_range: (f64, f64),
    pub stay_days_median: f64,
    pub silent_fraction: f64,
    pub daily_traffic_median_bytes: u64,
    /// Log-scale sigma of daily traffic.
    pub traffic_dispersion: f64,
    pub home_country_top10_share: f64,
    pub home_mno_top10_traffic_share: f64,
    pub num_home_countries: u32,
    pub num_home_mnos: u32,
    pub days: u32,
    pub burn_in_days: u32,
    pub scale: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 42,
            num_mnos: 800,
            roamers_per_vmno_day: 200_000,
            churn_fraction_range: (0.10, 0.30),
            stay_days_median: 2.5,
            silent_fraction: 0.5,
            daily_traffic_median_bytes: 1_000_000,
            traffic_dispersion: 1.0,
            home_country_top10_share: 0.60,
            home_mno_top10_traffic_share: 0.50,
            num_home_countries: 188,
            num_home_mnos: 400,
            days: 28,
            burn_in_days: 14,
            scale: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.to_owned()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let (lo, hi) = self.churn_fraction_range;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return bad("churn_fraction_range must satisfy 0 <= lo <= hi <= 1");
        }
        for (name, v) in [
            ("silent_fraction", self.silent_fraction),
            ("home_country_top10_share", self.home_country_top10_share),
            ("home_mno_top10_traffic_share", self.home_mno_top10_traffic_share),
        ] {
            if !unit(v) {
                return Err(WorkloadError::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive");
        }
        if self.days < 1 {
            return bad("days must be at least 1");
        }
        if !(self.stay_days_median > 0.0 && self.stay_days_median.is_finite()) {
            return bad("stay_days_median must be positive");
        }
        if self.daily_traffic_median_bytes == 0 {
            return bad("daily_traffic_median_bytes must be positive");
        }
        if !(self.traffic_dispersion >= 0.0 && self.traffic_dispersion.is_finite()) {
            return bad("traffic_dispersion must be non-negative");
        }
        if self.num_home_countries == 0 || self.num_home_mnos < self.num_home_countries {
            return bad("need at least one home country and one home operator per country");
        }
        if self.num_mnos == 0 {
            return bad("num_mnos must be positive");
        }
        Ok(())
    }

    /// Desk-scale average population.
    pub fn target_active(&self) -> f64 {
        self.roamers_per_vmno_day as f64 * self.scale
    }

    /// Per-hour departure probability giving the configured median stay.
    pub fn departure_probability(&self) -> f64 {
        1.0 - 0.5f64.powf(1.0 / (self.stay_days_median * 24.0))
    }

    /// Arrivals are `f × target × k` with `f` drawn from the churn band.
    /// `k` makes the steady-state count of roamers present on a day equal
    /// the target: a stay of mean `S` days touches `S + 1` calendar days on
    /// average.
    pub fn arrival_factor(&self) -> f64 {
        let (lo, hi) = self.churn_fraction_range;
        let mean_f = (lo + hi) / 2.0;
        let touched = 1.0 / self.departure_probability() / 24.0 + 1.0;
        if mean_f == 0.0 {
            0.0
        } else {
            1.0 / (mean_f * touched)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arrival {
    pub roamer: u64,
    /// Day index of arrival; negative for roamers carried in from burn-in.
    pub day: i64,
    /// Seconds relative to the start of day 0.
    pub arrival: i64,
    pub departure: i64,
    pub hmno: MnoId,
    pub country: String,
    pub planned_stay_hours: u64,
    pub silent: bool,
    pub carried_in: bool,
    /// Still present when the window closes.
    pub carried_over: bool,
}

impl Arrival {
    pub fn planned_stay_days(&self) -> f64 {
        self.planned_stay_hours as f64 / 24.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficRecord {
    pub roamer: u64,
    pub day: u32,
    /// Midpoint of the roamer's presence on that day, seconds from day 0.
    pub time: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayCount {
    pub day: u32,
    pub arrivals: u64,
    pub active: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEventTrace {
    pub days: u32,
    pub arrivals: Vec<Arrival>,
    pub traffic: Vec<TrafficRecord>,
}

impl SessionEventTrace {
    pub fn horizon(&self) -> u64 {
        self.days as u64 * DAY
    }

    /// Per-day arrivals and roamers present at any time during the day.
    pub fn day_counts(&self) -> Vec<DayCount> {
        let mut out: Vec<DayCount> = (0..self.days).map(|day| DayCount { day, arrivals: 0, active: 0 }).collect();
        let horizon = self.horizon() as i64;
        for a in &self.arrivals {
            if a.arrival >= 0 {
                out[(a.arrival / DAY as i64) as usize].arrivals += 1;
            }
            let first = a.arrival.max(0) / DAY as i64;
            let last = (a.departure.min(horizon) - 1) / DAY as i64;
            for d in first..=last {
                out[d as usize].active += 1;
            }
        }
        out
    }
}

/// Weights `i^-alpha` for `i = 1..=n`.
fn power_law(n: usize, alpha: f64) -> Vec<f64> {
    (1..=n).map(|i| (i as f64).powf(-alpha)).collect()
}

fn top_share(weights: &[f64], k: usize) -> f64 {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    sorted.iter().take(k).sum::<f64>() / total
}

/// Smallest `x` in `[lo, hi]` with `f(x) >= target`, for `f` non-decreasing.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    if f(lo) >= target {
        return lo;
    }
    if f(hi) <= target {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Home operators with their popularity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub country_alpha: f64,
    pub mno_beta: f64,
    pub mnos: Vec<(MnoId, String, f64)>,
}

impl Popularity {
    pub fn calibrate(cfg: &WorkloadConfig) -> Self {
        let nc = cfg.num_home_countries as usize;
        let country_alpha = if nc <= 10 {
            0.0
        } else {
            bisect(|a| top_share(&power_law(nc, a), 10), cfg.home_country_top10_share, 0.0, 20.0)
        };
        let cw = power_law(nc, country_alpha);
        let ctotal: f64 = cw.iter().sum();
        let cw: Vec<f64> = cw.iter().map(|w| w / ctotal).collect();

        // One operator per country, the rest by largest remainder on weight.
        let extra = cfg.num_home_mnos as usize - nc;
        let quotas: Vec<f64> = cw.iter().map(|w| w * extra as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
        let mut left = cfg.num_home_mnos as usize - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..nc).collect();
        order.sort_by(|&a, &b| {
            (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b))
        });
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[c] += 1;
            left -= 1;
        }

        let global = |beta: f64| -> Vec<f64> {
            let mut out = Vec::with_capacity(cfg.num_home_mnos as usize);
            for (c, &n) in counts.iter().enumerate() {
                let v = power_law(n, beta);
                let vt: f64 = v.iter().sum();
                out.extend(v.iter().map(|x| cw[c] * x / vt));
            }
            out
        };
        let mno_beta = if cfg.num_home_mnos <= 10 {
            0.0
        } else {
            bisect(|b| top_share(&global(b), 10), cfg.home_mno_top10_traffic_share, 0.0, 20.0)
        };
        let weights = global(mno_beta);
        let mut mnos = Vec::with_capacity(weights.len());
        let mut i = 0;
        for (c, &n) in counts.iter().enumerate() {
            for j in 0..n {
                mnos.push((MnoId::new(format!("H{c:03}-{j:02}")), format!("C{c:03}"), weights[i]));
                i += 1;
            }
        }
        Popularity { country_alpha, mno_beta, mnos }
    }
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generates the trace. A pure function of `cfg`.
pub fn generate(cfg: &WorkloadConfig) -> Result<SessionEventTrace, WorkloadError> {
    cfg.validate()?;
    let pop = Popularity::calibrate(cfg);
    let cdf: Vec<f64> = pop
        .mnos
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m.2;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().expect("at least one operator");
    let stay = Geometric::new(cfg.departure_probability()).map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;
    let traffic = LogNormal::new((cfg.daily_traffic_median_bytes as f64).ln(), cfg.traffic_dispersion)
        .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;
    let (lo, hi) = cfg.churn_fraction_range;
    let per_day = cfg.target_active() * cfg.arrival_factor();
    let horizon = cfg.days as i64 * DAY as i64;

    let mut rng = rng_for(cfg.seed);
    // Home operators come from a randomly offset golden-ratio sequence fed
    // through the inverse CDF: same law as iid draws, but per-operator
    // counts track the weights closely at desk-scale sample sizes.
    let mut u: f64 = rng.random();
    // The day's churn fraction lives on its own stream so it does not
    // depend on how many roamers were drawn before it.
    let mut churn = rng_for(cfg.seed);
    churn.set_stream(1);
    let mut arrivals = Vec::new();
    let mut records = Vec::new();
    let mut next_id = 0u64;
    for day in -(cfg.burn_in_days as i64)..cfg.days as i64 {
        let f = if hi > lo { churn.random_range(lo..=hi) } else { lo };
        let n = (f * per_day).round() as u64;
        for _ in 0..n {
            let arrival = day * DAY as i64 + rng.random_range(0..DAY) as i64;
            let hours = stay.sample(&mut rng) + 1;
            let departure = arrival + (hours * HOUR) as i64;
            let silent = rng.random_bool(cfg.silent_fraction);
            u = (u + GOLDEN).fract();
            let idx = cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1);
            let (hmno, country, _) = &pop.mnos[idx];
            if departure <= 0 {
                continue;
            }
            let roamer = next_id;
            next_id += 1;
            if !silent {
                let first = arrival.max(0) / DAY as i64;
                let last = (departure.min(horizon) - 1) / DAY as i64;
                for d in first..=last {
                    let start = arrival.max(d * DAY as i64);
                    let end = departure.min((d + 1) * DAY as i64);
                    let bytes = traffic.sample(&mut rng).round().max(1.0) as u64;
                    records.push(TrafficRecord { roamer, day: d as u32, time: ((start + end) / 2) as u64, bytes });
                }
            }
            arrivals.push(Arrival {
                roamer,
                day,
                arrival,
                departure,
                hmno: hmno.clone(),
                country: country.clone(),
                planned_stay_hours: hours,
                silent,
                carried_in: arrival < 0,
                carried_over: departure > horizon,
            });
        }
    }
    records.sort_by_key(|r| (r.time, r.roamer));
    Ok(SessionEventTrace { days: cfg.days, arrivals, traffic: records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub roamers: u64,
    pub top10_country_share: f64,
    pub top10_mno_traffic_share: f64,
    pub silent_share: f64,
    /// Over roamers arriving inside the window, so carried-in stays (which
    /// are length-biased) do not skew it.
    pub median_stay_days: f64,
    pub median_daily_traffic_bytes: f64,
    pub total_bytes: u64,
    /// Fraction of days whose arrivals/active ratio lies in [0.08, 0.33].
    pub churn_days_in_band: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

fn top10_share<K: Ord>(counts: BTreeMap<K, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut v: Vec<u64> = counts.into_values().collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v.iter().take(10).sum::<u64>() as f64 / total as f64
}

pub fn calibration_report(trace: &SessionEventTrace) -> Result<CalibrationStats, WorkloadError> {
    if trace.arrivals.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    let mut by_country = BTreeMap::new();
    let mut home = BTreeMap::new();
    for a in &trace.arrivals {
        *by_country.entry(a.country.as_str()).or_insert(0u64) += 1;
        home.insert(a.roamer, &a.hmno);
    }
    let mut by_mno_bytes: BTreeMap<&MnoId, u64> = BTreeMap::new();
    for r in &trace.traffic {
        *by_mno_bytes.entry(home[&r.roamer]).or_default() += r.bytes;
    }
    let silent = trace.arrivals.iter().filter(|a| a.silent).count();
    let mut stays: Vec<f64> = trace.arrivals.iter().filter(|a| !a.carried_in).map(|a| a.planned_stay_days()).collect();
    let mut daily: Vec<f64> = trace.traffic.iter().map(|r| r.bytes as f64).collect();
    let days = trace.day_counts();
    let in_band =
        days.iter().filter(|d| d.active > 0 && (0.08..=0.33).contains(&(d.arrivals as f64 / d.active as f64))).count();
    Ok(CalibrationStats {
        roamers: trace.arrivals.len() as u64,
        top10_country_share: top10_share(by_country),
        top10_mno_traffic_share: top10_share(by_mno_bytes),
        silent_share: silent as f64 / trace.arrivals.len() as f64,
        median_stay_days: median(&mut stays).unwrap_or(0.0),
        median_daily_traffic_bytes: median(&mut daily).unwrap_or(0.0),
        total_bytes: trace.traffic.iter().map(|r| r.bytes).sum(),
        churn_days_in_band: in_band as f64 / days.len() as f64,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header { days: u32 },
    Arrival(Arrival),
    Traffic(TrafficRecord),
}

pub fn write_trace<W: Write>(trace: &SessionEventTrace, mut out: W) -> io::Result<()> {
    let mut line = |l: &TraceLine| -> io::Result<()> {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")
    };
    line(&TraceLine::Header { days: trace.days })?;
    for a in &trace.arrivals {
        line(&TraceLine::Arrival(a.clone()))?;
    }
    for r in &trace.traffic {
        line(&TraceLine::Traffic(r.clone()))?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<SessionEventTrace, WorkloadError> {
    let mut trace = SessionEventTrace { days: 0, arrivals: Vec::new(), traffic: Vec::new() };
    for (i, line) in input.lines().enumerate() {
        let parse = |detail: String| WorkloadError::Parse { line: i + 1, detail };
        let line = line.map_err(|e| parse(e.to_string()))?;
        match serde_json::from_str(&line).map_err(|e| parse(e.to_string()))? {
            TraceLine::Header { days } => trace.days = days,
            TraceLine::Arrival(a) => trace.arrivals.push(a),
            TraceLine::Traffic(r) => trace.traffic.push(r),
        }
    }
    Ok(trace)
}
