//! Experiment runs, parameter sweeps, and their CSV / SVG / JSON outputs.
//!
//! `records.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `sweep` | `single`, `power` or `lqr` |
//! | `scheme` | `ao`, `rap` or `fap` |
//! | `seed` | scenario seed |
//! | `p_max_dbm` | transmit power budget |
//! | `lqr_budget` | LQR cost budget shared by all CAVs |
//! | `status` | `converged`, `max_iters`, `infeasible`, `infeasible_budget`, `error` |
//! | `sum_rate` | GU sum rate, bits/s/Hz |
//! | `min_sensing_slack` | smallest `(gain - d^2 Gamma) / (d^2 Gamma)` |
//! | `outer_iters` | outer passes recorded (0 for the baselines) |
//! | `gu_rates`, `cav_rates`, `r_min` | `;`-separated lists |
//!
//! Floats use the shortest representation that parses back to the same
//! value, so a CSV written twice from the same records is byte-identical and
//! reading it back restores the records exactly. Wall-clock times are kept out
//! of the CSVs and go to `run_meta.json`.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{minimum_lqr_cost, DareOptions};
use crate::driver::{run_scheme, AoStatus, Scheme, Scenario};
use crate::scenario::{stream_rng, RngStream, ScenarioConfig};
use crate::{Error, Result};

pub const DEFAULT_POWER_DBM: [f64; 5] = [30.0, 35.0, 40.0, 45.0, 50.0];
/// LQR budgets as multiples of the smallest achievable cost.
pub const DEFAULT_BUDGET_MULTIPLES: [f64; 5] = [1.5, 2.0, 3.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Single,
    Power,
    Lqr,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Single => "single",
            SweepKind::Power => "power",
            SweepKind::Lqr => "lqr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Converged,
    MaxIters,
    Infeasible,
    InfeasibleBudget,
    Error,
}

impl RecordStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, RecordStatus::Converged | RecordStatus::MaxIters)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Converged => "converged",
            RecordStatus::MaxIters => "max_iters",
            RecordStatus::Infeasible => "infeasible",
            RecordStatus::InfeasibleBudget => "infeasible_budget",
            RecordStatus::Error => "error",
        }
    }
}

impl From<AoStatus> for RecordStatus {
    fn from(s: AoStatus) -> Self {
        match s {
            AoStatus::Converged => RecordStatus::Converged,
            AoStatus::MaxIters => RecordStatus::MaxIters,
            AoStatus::Infeasible => RecordStatus::Infeasible,
        }
    }
}

/// One (seed, scheme, sweep point) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub sweep: SweepKind,
    pub scheme: Scheme,
    pub seed: u64,
    pub p_max_dbm: f64,
    pub lqr_budget: f64,
    pub status: RecordStatus,
    pub sum_rate: f64,
    pub min_sensing_slack: f64,
    pub outer_iters: usize,
    pub gu_rates: Vec<f64>,
    pub cav_rates: Vec<f64>,
    pub r_min: Vec<f64>,
    /// Not written to the CSV.
    pub runtime_seconds: f64,
}

impl ExperimentRecord {
    /// The sweep coordinate (power for power sweeps, budget otherwise).
    pub fn x(&self) -> f64 {
        match self.sweep {
            SweepKind::Power | SweepKind::Single => self.p_max_dbm,
            SweepKind::Lqr => self.lqr_budget,
        }
    }

    fn failed(sweep: SweepKind, scheme: Scheme, config: &ScenarioConfig, status: RecordStatus) -> Self {
        Self {
            sweep,
            scheme,
            seed: config.seed,
            p_max_dbm: config.max_power_dbm,
            lqr_budget: shared_budget(config),
            status,
            sum_rate: f64::NAN,
            min_sensing_slack: f64::NAN,
            outer_iters: 0,
            gu_rates: vec![],
            cav_rates: vec![],
            r_min: vec![],
            runtime_seconds: 0.0,
        }
    }
}

fn shared_budget(config: &ScenarioConfig) -> f64 {
    config.plants.first().map_or(f64::NAN, |p| p.lqr_budget)
}

/// Runs one scheme end to end. Configuration and numerical errors are
/// returned; an infeasible scenario yields a record with that status.
pub fn run(config: &ScenarioConfig, scheme: Scheme, sweep: SweepKind) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let scenario = match Scenario::prepare(config) {
        Ok(s) => s,
        Err(Error::InfeasibleBudget { .. }) => return Ok(ExperimentRecord::failed(sweep, scheme, config, RecordStatus::InfeasibleBudget)),
        Err(e) => return Err(e),
    };
    let r = run_scheme(&scenario, scheme)?;
    Ok(ExperimentRecord {
        sweep,
        scheme,
        seed: config.seed,
        p_max_dbm: config.max_power_dbm,
        lqr_budget: shared_budget(config),
        status: r.status.into(),
        sum_rate: r.sum_rate,
        min_sensing_slack: r.report.min_sensing(),
        outer_iters: if scheme == Scheme::Ao { r.outer_trace.len().saturating_sub(1) } else { 0 },
        gu_rates: r.gu_rates,
        cav_rates: r.cav_rates,
        r_min: r.r_min,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Like [`run`] but never fails: errors become `error` rows.
fn run_row(config: &ScenarioConfig, scheme: Scheme, sweep: SweepKind) -> ExperimentRecord {
    run(config, scheme, sweep).unwrap_or_else(|_| ExperimentRecord::failed(sweep, scheme, config, RecordStatus::Error))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn sweep(base: &ScenarioConfig, seeds: &[u64], kind: SweepKind, points: Vec<ScenarioConfig>, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    base.validate()?;
    let mut work = Vec::new();
    for cfg in &points {
        for &seed in seeds {
            for scheme in Scheme::ALL {
                work.push((ScenarioConfig { seed, ..cfg.clone() }, scheme));
            }
        }
    }
    let mut rows = with_pool(jobs, || work.par_iter().map(|(cfg, scheme)| run_row(cfg, *scheme, kind)).collect::<Vec<_>>())?;
    sort_records(&mut rows);
    Ok(rows)
}

/// Every (seed, scheme, power) combination.
pub fn sweep_power(base: &ScenarioConfig, seeds: &[u64], dbm: &[f64], jobs: usize) -> Result<Vec<ExperimentRecord>> {
    if dbm.is_empty() || seeds.is_empty() {
        return Err(Error::config("power sweep needs at least one power level and one seed"));
    }
    let points = dbm.iter().map(|&p| ScenarioConfig { max_power_dbm: p, ..base.clone() }).collect();
    sweep(base, seeds, SweepKind::Power, points, jobs)
}

/// Every (seed, scheme, budget) combination. Budgets at or below the smallest
/// achievable cost produce `infeasible_budget` rows.
pub fn sweep_lqr(base: &ScenarioConfig, seeds: &[u64], budgets: &[f64], jobs: usize) -> Result<Vec<ExperimentRecord>> {
    if budgets.is_empty() || seeds.is_empty() {
        return Err(Error::config("LQR sweep needs at least one budget and one seed"));
    }
    let points = budgets
        .iter()
        .map(|&b| {
            let mut cfg = base.clone();
            cfg.set_lqr_budget(b);
            cfg
        })
        .collect();
    sweep(base, seeds, SweepKind::Lqr, points, jobs)
}

/// Default LQR budgets: fixed multiples of the first plant's minimum cost.
pub fn default_budgets(config: &ScenarioConfig) -> Result<Vec<f64>> {
    let plant = config.cav_plants().into_iter().next().ok_or_else(|| Error::config("no control plant configured"))?;
    let min = minimum_lqr_cost(&plant, &DareOptions { tol: config.ao.dare_tol, max_iters: config.ao.dare_max_iters })?;
    Ok(DEFAULT_BUDGET_MULTIPLES.iter().map(|k| k * min).collect())
}

/// Output order: sweep, scheme, sweep point, seed.
pub fn sort_records(rows: &mut [ExperimentRecord]) {
    rows.sort_by(|a, b| {
        (a.sweep, a.scheme)
            .cmp(&(b.sweep, b.scheme))
            .then(a.x().total_cmp(&b.x()))
            .then(a.seed.cmp(&b.seed))
    });
}

pub const RECORD_COLUMNS: [&str; 12] = [
    "sweep",
    "scheme",
    "seed",
    "p_max_dbm",
    "lqr_budget",
    "status",
    "sum_rate",
    "min_sensing_slack",
    "outer_iters",
    "gu_rates",
    "cav_rates",
    "r_min",
];

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(';').map(parse_f64).collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::config(format!("bad number {s:?} in records")))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_records_csv<W: Write>(rows: &[ExperimentRecord], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(RECORD_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.sweep.as_str().to_string(),
            r.scheme.as_str().to_string(),
            r.seed.to_string(),
            r.p_max_dbm.to_string(),
            r.lqr_budget.to_string(),
            r.status.as_str().to_string(),
            r.sum_rate.to_string(),
            r.min_sensing_slack.to_string(),
            r.outer_iters.to_string(),
            join(&r.gu_rates),
            join(&r.cav_rates),
            join(&r.r_min),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RECORD_COLUMNS) {
        return Err(Error::config(format!("unexpected record columns {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let sweep = match f(0) {
            "single" => SweepKind::Single,
            "power" => SweepKind::Power,
            "lqr" => SweepKind::Lqr,
            other => return Err(Error::config(format!("unknown sweep {other:?}"))),
        };
        let status = match f(5) {
            "converged" => RecordStatus::Converged,
            "max_iters" => RecordStatus::MaxIters,
            "infeasible" => RecordStatus::Infeasible,
            "infeasible_budget" => RecordStatus::InfeasibleBudget,
            "error" => RecordStatus::Error,
            other => return Err(Error::config(format!("unknown status {other:?}"))),
        };
        rows.push(ExperimentRecord {
            sweep,
            scheme: f(1).parse()?,
            seed: f(2).parse().map_err(|_| Error::config(format!("bad seed {:?}", f(2))))?,
            p_max_dbm: parse_f64(f(3))?,
            lqr_budget: parse_f64(f(4))?,
            status,
            sum_rate: parse_f64(f(6))?,
            min_sensing_slack: parse_f64(f(7))?,
            outer_iters: f(8).parse().map_err(|_| Error::config(format!("bad count {:?}", f(8))))?,
            gu_rates: split(f(9))?,
            cav_rates: split(f(10))?,
            r_min: split(f(11))?,
            runtime_seconds: 0.0,
        });
    }
    Ok(rows)
}

/// Mean and standard error of the solved rows at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep: SweepKind,
    pub scheme: Scheme,
    pub x: f64,
    pub runs: usize,
    pub solved: usize,
    pub mean_sum_rate: f64,
    pub std_error: f64,
}

pub fn summarize(rows: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut sorted = rows.to_vec();
    sort_records(&mut sorted);
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut group: Vec<&ExperimentRecord> = Vec::new();
    let flush = |group: &mut Vec<&ExperimentRecord>, out: &mut Vec<SummaryRow>| {
        let Some(first) = group.first() else { return };
        let vals: Vec<f64> = group.iter().filter(|r| r.status.is_solved()).map(|r| r.sum_rate).collect();
        let (mean, se) = mean_and_stderr(&vals);
        out.push(SummaryRow { sweep: first.sweep, scheme: first.scheme, x: first.x(), runs: group.len(), solved: vals.len(), mean_sum_rate: mean, std_error: se });
        group.clear();
    };
    for r in &sorted {
        if let Some(g) = group.first() {
            if (g.sweep, g.scheme) != (r.sweep, r.scheme) || g.x().to_bits() != r.x().to_bits() {
                flush(&mut group, &mut out);
            }
        }
        group.push(r);
    }
    flush(&mut group, &mut out);
    out
}

/// Sample mean and standard error (`NaN` when undefined).
pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["sweep", "scheme", "x", "runs", "solved", "mean_sum_rate", "std_error"])?;
    for r in rows {
        out.write_record([
            r.sweep.as_str().to_string(),
            r.scheme.as_str().to_string(),
            r.x.to_string(),
            r.runs.to_string(),
            r.solved.to_string(),
            r.mean_sum_rate.to_string(),
            r.std_error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Percentile bootstrap interval for the mean of paired differences `a - b`.
pub fn bootstrap_mean_diff(a: &[f64], b: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = stream_rng(seed, RngStream::Randomization);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..d.len()).map(|_| d[rng.random_range(0..d.len())]).sum::<f64>() / d.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1);
    (means[idx(tail)], means[idx(1.0 - tail)])
}

/// Line plot of the mean sum rate per scheme against the sweep coordinate.
pub fn render_svg(title: &str, x_label: &str, rows: &[SummaryRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 110.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let pts: Vec<&SummaryRow> = rows.iter().filter(|r| r.mean_sum_rate.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in &pts {
        x0 = x0.min(r.x);
        x1 = x1.max(r.x);
        y0 = y0.min(r.mean_sum_rate);
        y1 = y1.max(r.mean_sum_rate);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let pad = ((y1 - y0) * 0.1).max(1e-3);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - B + 18.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, L - 6.0, sy(yv) + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 16.0, xml_escape(x_label));
    let _ = writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">sum rate (bits/s/Hz)</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    for (k, scheme) in Scheme::ALL.iter().enumerate() {
        let color = ["#1f77b4", "#d62728", "#2ca02c"][k];
        let line: Vec<String> = pts.iter().filter(|r| r.scheme == *scheme).map(|r| format!("{:.2},{:.2}", sx(r.x), sy(r.mean_sum_rate))).collect();
        if !line.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, line.join(" "));
        }
        let ly = T + 20.0 * k as f64 + 10.0;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - R + 10.0, W - R + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R + 35.0, ly + 4.0, scheme.as_str().to_uppercase());
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 { format!("{v:.0}") } else { format!("{v:.2}") }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Run metadata written next to the CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    /// Per record, in CSV order.
    pub runtime_seconds: Vec<f64>,
    pub total_seconds: f64,
}

impl RunMeta {
    pub fn new(command: &str, config: &ScenarioConfig, seeds: &[u64], rows: &[ExperimentRecord], total_seconds: f64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.config_hash(),
            seeds: seeds.to_vec(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            runtime_seconds: rows.iter().map(|r| r.runtime_seconds).collect(),
            total_seconds,
        }
    }
}

/// Writes `records.csv`, `summary.csv`, `fig_power.svg` / `fig_lqr.svg` (for
/// the sweeps present) and `run_meta.json` into `dir`.
pub fn emit_outputs(rows: &[ExperimentRecord], dir: &Path, meta: &RunMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sorted = rows.to_vec();
    sort_records(&mut sorted);
    write_records_csv(&sorted, fs::File::create(dir.join("records.csv"))?)?;
    let summary = summarize(&sorted);
    write_summary_csv(&summary, fs::File::create(dir.join("summary.csv"))?)?;
    for (kind, name, title, label) in [
        (SweepKind::Power, "fig_power.svg", "Sum rate versus transmit power", "P_max (dBm)"),
        (SweepKind::Lqr, "fig_lqr.svg", "Sum rate versus LQR budget", "LQR budget"),
    ] {
        let part: Vec<SummaryRow> = summary.iter().filter(|r| r.sweep == kind).cloned().collect();
        if !part.is_empty() {
            fs::write(dir.join(name), render_svg(title, label, &part))?;
        }
    }
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(dir.join("run_meta.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scheme: Scheme, seed: u64, x: f64, rate: f64) -> ExperimentRecord {
        ExperimentRecord {
            sweep: SweepKind::Power,
            scheme,
            seed,
            p_max_dbm: x,
            lqr_budget: 5.5,
            status: RecordStatus::Converged,
            sum_rate: rate,
            min_sensing_slack: 0.125,
            outer_iters: 3,
            gu_rates: vec![rate / 3.0; 3],
            cav_rates: vec![6.1, 7.25],
            r_min: vec![5.76, 5.76],
            runtime_seconds: 1.5,
        }
    }

    #[test]
    fn empty_records_give_header_only() {
        let mut buf = Vec::new();
        write_records_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), RECORD_COLUMNS.join(",") + "\n");
        let mut buf = Vec::new();
        write_summary_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn one_record_round_trips() {
        let r = record(Scheme::Rap, 7, 40.0, 0.1 + 0.2);
        let mut buf = Vec::new();
        write_records_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], ExperimentRecord { runtime_seconds: 0.0, ..r });
    }

    #[test]
    fn nan_rows_round_trip() {
        let cfg = ScenarioConfig::default();
        let r = ExperimentRecord::failed(SweepKind::Lqr, Scheme::Ao, &cfg, RecordStatus::InfeasibleBudget);
        let mut buf = Vec::new();
        write_records_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert!(back[0].sum_rate.is_nan());
        assert_eq!(back[0].status, RecordStatus::InfeasibleBudget);
        assert!(back[0].gu_rates.is_empty());
    }

    #[test]
    fn summary_groups_and_stats() {
        let rows = vec![
            record(Scheme::Fap, 1, 30.0, 2.0),
            record(Scheme::Ao, 2, 30.0, 4.0),
            record(Scheme::Ao, 1, 30.0, 2.0),
            record(Scheme::Ao, 1, 35.0, 5.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].scheme, s[0].x, s[0].runs), (Scheme::Ao, 30.0, 2));
        assert_eq!(s[0].mean_sum_rate, 3.0);
        assert!((s[0].std_error - 1.0).abs() < 1e-15);
        assert!(s[1].std_error.is_nan());
        assert_eq!(s[2].scheme, Scheme::Fap);
    }

    #[test]
    fn records_sort_by_scheme_point_seed() {
        let mut rows = vec![record(Scheme::Fap, 0, 30.0, 1.0), record(Scheme::Ao, 1, 35.0, 1.0), record(Scheme::Ao, 0, 35.0, 1.0), record(Scheme::Ao, 5, 30.0, 1.0)];
        sort_records(&mut rows);
        let keys: Vec<(Scheme, f64, u64)> = rows.iter().map(|r| (r.scheme, r.p_max_dbm, r.seed)).collect();
        assert_eq!(keys, vec![(Scheme::Ao, 30.0, 5), (Scheme::Ao, 35.0, 0), (Scheme::Ao, 35.0, 1), (Scheme::Fap, 30.0, 0)]);
    }

    #[test]
    fn bootstrap_interval_brackets_constant_shift() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 + 1.0).collect();
        let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_mean_diff(&a, &b, 0.9, 500, 1);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);

        let a: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (lo, hi) = bootstrap_mean_diff(&a, &vec![0.0; 40], 0.9, 2000, 2);
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn svg_parses_and_has_one_line_per_scheme() {
        let rows = summarize(&[
            record(Scheme::Ao, 1, 30.0, 2.0),
            record(Scheme::Ao, 1, 35.0, 3.0),
            record(Scheme::Rap, 1, 30.0, 1.5),
            record(Scheme::Rap, 1, 35.0, 2.5),
        ]);
        let svg = render_svg("a < b & c", "P_max (dBm)", &rows);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
        assert!(roxmltree::Document::parse(&render_svg("empty", "x", &[])).is_ok());
    }
}
