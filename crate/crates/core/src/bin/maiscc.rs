use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use maiscc::driver::Scheme;
use maiscc::harness::{self, ExperimentRecord, RunMeta, SweepKind, DEFAULT_POWER_DBM};
use maiscc::scenario::ScenarioConfig;
use maiscc::{Error, Result};

#[derive(Parser)]
#[command(name = "maiscc", version, about = "Movable-antenna sensing/communication/control optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme on one seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ao")]
        scheme: String,
    },
    /// Sum rate versus transmit power for all schemes.
    SweepPower {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        many: Many,
        /// Power levels in dBm (default 30,35,40,45,50).
        #[arg(long, value_delimiter = ',')]
        dbm: Vec<f64>,
    },
    /// Sum rate versus LQR budget for all schemes.
    SweepLqr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        many: Many,
        /// Absolute budgets (default: 1.5, 2, 3, 5, 10 times the minimum cost).
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<f64>,
    },
    /// Time each scheme on one seed; prints to stdout only.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Many {
    /// Seeds as `a..b` (half-open) or a comma list.
    #[arg(long, default_value = "0..20")]
    seeds: String,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--seeds: cannot parse {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn load(path: &Option<PathBuf>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::from_path(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn emit(rows: &[ExperimentRecord], out: &Path, command: &str, cfg: &ScenarioConfig, seeds: &[u64], started: Instant) -> Result<()> {
    let meta = RunMeta::new(command, cfg, seeds, rows, started.elapsed().as_secs_f64());
    harness::emit_outputs(rows, out, &meta)?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Run { common, seed, scheme } => {
            let scheme: Scheme = scheme.parse()?;
            let cfg = ScenarioConfig { seed, ..load(&common.config)? };
            let row = harness::run(&cfg, scheme, SweepKind::Single)?;
            println!("{} seed={} status={} sum_rate={}", row.scheme, row.seed, row.status.as_str(), row.sum_rate);
            emit(&[row], &common.out, "run", &cfg, &[seed], started)
        }
        Command::SweepPower { common, many, dbm } => {
            let cfg = load(&common.config)?;
            let seeds = parse_seeds(&many.seeds)?;
            let dbm = if dbm.is_empty() { DEFAULT_POWER_DBM.to_vec() } else { dbm };
            let rows = harness::sweep_power(&cfg, &seeds, &dbm, many.jobs)?;
            emit(&rows, &common.out, "sweep-power", &cfg, &seeds, started)
        }
        Command::SweepLqr { common, many, budgets } => {
            let cfg = load(&common.config)?;
            let seeds = parse_seeds(&many.seeds)?;
            let budgets = if budgets.is_empty() { harness::default_budgets(&cfg)? } else { budgets };
            let rows = harness::sweep_lqr(&cfg, &seeds, &budgets, many.jobs)?;
            emit(&rows, &common.out, "sweep-lqr", &cfg, &seeds, started)
        }
        Command::Bench { common, seed } => {
            let cfg = ScenarioConfig { seed, ..load(&common.config)? };
            for scheme in Scheme::ALL {
                let t = Instant::now();
                let row = harness::run(&cfg, scheme, SweepKind::Single)?;
                println!("{scheme:>4}  {:>8.3} s  sum_rate={:.4}  status={}", t.elapsed().as_secs_f64(), row.sum_rate, row.status.as_str());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
