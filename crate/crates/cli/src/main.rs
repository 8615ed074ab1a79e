use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dice_core::harness::{
    check_requirements, run_scenario, verify_ledger, Assumptions, HarnessError, MetricsReport, ScenarioConfig,
};
use dice_core::protocol::Mode;
use dice_core::workload::{calibration_report, write_trace};

#[derive(Parser)]
#[command(name = "dice", version, about = "Roaming settlement simulator and ledger tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, settlement.csv, ledger.jsonl
    /// and events.jsonl.
    Simulate {
        /// Scenario config (JSON). Defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Fraction of full-scale roamer volume to simulate.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Ledger file tools.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Project a report to full scale and check it against ledger capacity.
    Requirements {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 20_000.0)]
        tps_capacity: f64,
        #[arg(long, default_value_t = 4.0)]
        concentration_hours: f64,
        /// Aggregate roamer bytes per visited MNO per day; replaces the
        /// simulated off-chain count.
        #[arg(long)]
        visited_daily_bytes: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        granularity_bytes: u64,
    },
    /// Generate the workload only and print its calibration statistics.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the generated trace as JSON Lines.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Verify hashes, signatures, token replay and supply closure.
    Verify {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lbo,
    Hr,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Lbo => Mode::Lbo,
            ModeArg::Hr => Mode::Hr,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    let cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out_dir, seed, days, mode, scale } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.workload.seed = s;
            }
            if let Some(d) = days {
                cfg.workload.days = d;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(s) = scale {
                cfg.workload.scale = s;
            }
            let outcome = run_scenario(&cfg, Some(&out_dir))?;
            let r = &outcome.report;
            println!(
                "sessions {} | on-chain txs {} | off-chain proofs {} | tokens redeemed {} | audit {}",
                r.sessions_completed,
                r.onchain_tx_total,
                r.offchain_proofs_total,
                r.tokens_redeemed,
                if r.audit.clean() { "clean" } else { "FAILED" }
            );
            println!("wrote {}", out_dir.display());
            Ok(if r.audit.clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Ledger { command: LedgerCommand::Verify { path } } => {
            let report = verify_ledger(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            print_json(&report)?;
            Ok(if report.valid { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Requirements { report, tps_capacity, concentration_hours, visited_daily_bytes, granularity_bytes } => {
            let bytes = fs::read(&report).with_context(|| format!("reading {}", report.display()))?;
            let parsed: MetricsReport = serde_json::from_slice(&bytes)
                .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", report.display())))?;
            if tps_capacity <= 0.0 || concentration_hours <= 0.0 || granularity_bytes == 0 {
                return Err(
                    HarnessError::InvalidConfig("capacity, hours and granularity must be positive".into()).into()
                );
            }
            let a =
                Assumptions { capacity_tps: tps_capacity, concentration_hours, visited_daily_bytes, granularity_bytes };
            let verdict = check_requirements(&parsed, &a);
            print_json(&verdict)?;
            Ok(if verdict.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Calibrate { config, trace_out } => {
            let cfg = load_config(config.as_deref())?;
            let trace = cfg.trace()?;
            if let Some(p) = trace_out {
                let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                write_trace(&trace, std::io::BufWriter::new(f))?;
            }
            print_json(&calibration_report(&trace)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<HarnessError>() {
                Some(HarnessError::InvalidConfig(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
