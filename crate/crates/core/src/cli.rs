//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and returns the process exit code: 0 on success, 2 on a usage
//! error, 1 on a runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::counterfactual::{counterfactual_table, load_programs, load_roster, run_counterfactual};
use crate::da::run_mosm;
use crate::error::{Error, Result};
use crate::experiments::{
    hop_table, sweep_table, threshold_table, Engine, Harness, SummaryStats, ThresholdKind,
    ThresholdSpec,
};
use crate::lazy::run_mosm_lazy;
use crate::market::{generate_market, MarketConfig};
use crate::oracle::cross_check_small_markets;
use crate::rng::{derive_seed, rng_from_seed};
use crate::table::{emit_table, write_table, Cell, Format, Table};

#[derive(Parser, Debug)]
#[command(
    name = "matchsim",
    version,
    about = "Stable matching experiments on random partially connected markets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replicate one (n, k, d) cell and summarize ranks and unmatched counts.
    Simulate(SimulateArgs),
    /// Sweep the list length d at fixed n and k.
    SweepDegree(SweepDegreeArgs),
    /// Sweep the imbalance k at fixed n and d.
    SweepImbalance(SweepImbalanceArgs),
    /// Locate the smallest d where a market statistic crosses its target.
    Threshold(ThresholdArgs),
    /// Fraction of man pairs within 1, 2, ... hops of each other.
    Hopstats(HopArgs),
    /// School-choice counterfactual on roster and program files.
    Counterfactual(CounterfactualArgs),
    /// Compare deferred acceptance with exhaustive enumeration on small markets.
    OracleCheck(OracleArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Master seed; every replication seed is derived from it.
    #[arg(long)]
    seed: u64,
    /// Output file; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (defaults to available parallelism). Output does not
    /// depend on this.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,
}

#[derive(Args, Debug)]
struct EngineArgs {
    /// Reveal preferences on demand instead of building the market. Worth it
    /// once n * sqrt(d) exceeds about 1e7 proposals.
    #[arg(long)]
    lazy: bool,
    /// Also write the unmatched-count trajectory of replication 0 next to
    /// `--out` as `<stem>.trace.<ext>`.
    #[arg(long)]
    record_trace: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Number of women.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Men minus women.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    k: i64,
    /// Preference list length of every man.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Also run woman-proposing DA on each market.
    #[arg(long)]
    wosm: bool,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct SweepDegreeArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    k: i64,
    /// List lengths: comma-separated values and `start:end[:step]` ranges,
    /// e.g. `5:150:5`.
    #[arg(long)]
    d: String,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    wosm: bool,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct SweepImbalanceArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Imbalances: comma-separated values and `start:end[:step]` ranges,
    /// e.g. `-50:50`.
    #[arg(long, allow_hyphen_values = true)]
    k: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    wosm: bool,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long, value_enum)]
    kind: ThresholdKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n: u64,
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    k: i64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Override the default target (1.15, 0.5 or 2 by kind).
    #[arg(long)]
    target: Option<f64>,
    /// Lower end of the search interval (default 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_lo: Option<u64>,
    /// Upper end of the search interval (default n).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_hi: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct HopArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    k: i64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    /// Number of random markets.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Source men sampled per market (default: all of them).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    sample: Option<u64>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    max_hops: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CounterfactualArgs {
    /// CSV with `student_id,rank,program_id[,priority_class]`.
    #[arg(long)]
    roster: PathBuf,
    /// CSV with `program_id,capacity`.
    #[arg(long)]
    programs: PathBuf,
    /// Population changes: comma-separated values and `start:end[:step]`
    /// ranges. Negative drops students, positive duplicates them.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    delta: String,
    /// Lottery draws per delta.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Redraw preferences in proportion to program popularity.
    #[arg(long)]
    randomize: bool,
    /// Report the share assigned within each top-k.
    #[arg(long, default_value = "1,3")]
    ks: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Largest number of women per instance.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Largest |k| per instance.
    #[arg(long, default_value_t = 2)]
    k: u64,
    /// Number of random instances.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[command(flatten)]
    output: OutputArgs,
}

/// Parse, run and report. Errors are printed to stderr.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::TooLarge { .. } => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Simulate(a) => {
            let cfg = MarketConfig::new(a.n as usize, a.k, a.d as usize, 0)?;
            suggest_lazy(&cfg, a.engine.lazy);
            let harness = harness(&a.output, &a.engine, a.wosm)?;
            let stats = harness.run_replications(&cfg, a.reps as usize, a.output.seed)?;
            emit(&sweep_table(std::slice::from_ref(&stats)), &a.output)?;
            record_trace(&cfg, &a.output, &a.engine)?;
            Ok(cell_summary(&stats))
        }
        Command::SweepDegree(a) => {
            let ds: Vec<usize> = parse_list(&a.d, "--d")?
                .into_iter()
                .map(|d| {
                    usize::try_from(d)
                        .map_err(|_| Error::InvalidConfig(format!("--d: {d} is negative")))
                })
                .collect::<Result<_>>()?;
            let cells: Vec<MarketConfig> = ds
                .iter()
                .map(|&d| MarketConfig::new(a.n as usize, a.k, d, 0))
                .collect::<Result<_>>()?;
            let harness = harness(&a.output, &a.engine, a.wosm)?;
            let stats =
                harness.sweep_degree(a.n as usize, a.k, &ds, a.reps as usize, a.output.seed)?;
            emit(&sweep_table(&stats), &a.output)?;
            record_trace(&cells[0], &a.output, &a.engine)?;
            Ok(format!(
                "swept {} degrees at n={} k={} with {} reps each",
                ds.len(),
                a.n,
                a.k,
                a.reps
            ))
        }
        Command::SweepImbalance(a) => {
            let ks = parse_list(&a.k, "--k")?;
            let cells: Vec<MarketConfig> = ks
                .iter()
                .map(|&k| MarketConfig::new(a.n as usize, k, a.d as usize, 0))
                .collect::<Result<_>>()?;
            let harness = harness(&a.output, &a.engine, a.wosm)?;
            let stats = harness.sweep_imbalance(
                a.n as usize,
                a.d as usize,
                &ks,
                a.reps as usize,
                a.output.seed,
            )?;
            emit(&sweep_table(&stats), &a.output)?;
            record_trace(&cells[0], &a.output, &a.engine)?;
            Ok(format!(
                "swept {} imbalances at n={} d={} with {} reps each",
                ks.len(),
                a.n,
                a.d,
                a.reps
            ))
        }
        Command::Threshold(a) => {
            let n = a.n as usize;
            let mut spec = ThresholdSpec::new(a.kind, n, a.reps as usize).with_bounds(
                a.d_lo.map_or(1, |d| d as usize),
                a.d_hi.map_or(n, |d| d as usize),
            );
            spec.k = a.k;
            if let Some(t) = a.target {
                spec.target = t;
            }
            spec.validate()?;
            if a.engine.record_trace {
                return Err(Error::InvalidConfig(
                    "--record-trace is not supported by threshold".into(),
                ));
            }
            let result =
                harness(&a.output, &a.engine, false)?.find_threshold(&spec, a.output.seed)?;
            emit(&threshold_table(std::slice::from_ref(&result)), &a.output)?;
            Ok(format!(
                "d* = {} ({} at n={}, {} probes)",
                result.d_star,
                a.kind.name(),
                n,
                result.probes.len()
            ))
        }
        Command::Hopstats(a) => {
            let cfg = MarketConfig::new(a.n as usize, a.k, a.d as usize, 0)?;
            let harness = Harness::new(a.output.workers.map(usize::from))?;
            let stats = harness.hop_stats(
                &cfg,
                a.reps as usize,
                a.sample.map(|s| s as usize),
                a.max_hops as usize,
                a.output.seed,
            )?;
            emit(&hop_table(&stats), &a.output)?;
            let means: Vec<String> = stats
                .within
                .iter()
                .map(|s| format!("{:.3}", s.mean))
                .collect();
            Ok(format!(
                "within 1..{} hops: {}",
                a.max_hops,
                means.join(" ")
            ))
        }
        Command::Counterfactual(a) => {
            let deltas = parse_list(&a.delta, "--delta")?;
            let ks: Vec<usize> = parse_list(&a.ks, "--ks")?
                .into_iter()
                .map(|k| {
                    usize::try_from(k).ok().filter(|&k| k >= 1).ok_or_else(|| {
                        Error::InvalidConfig(format!("--ks: {k} must be at least 1"))
                    })
                })
                .collect::<Result<_>>()?;
            let roster = load_roster(&a.roster)?;
            let programs = load_programs(&a.programs)?;
            let harness = Harness::new(a.output.workers.map(usize::from))?;
            let reps = a.reps as usize;
            let rows = harness.run_indexed(deltas.len() * reps, |idx| {
                let delta = deltas[idx / reps];
                let seed = derive_seed(a.output.seed, &[delta as u64, (idx % reps) as u64]);
                run_counterfactual(&roster, &programs, delta, seed, a.randomize, &ks)
            })?;
            emit(&counterfactual_table(&rows, &ks), &a.output)?;
            Ok(format!(
                "{} counterfactual cells over {} students and {} programs",
                rows.len(),
                roster.len(),
                programs.len()
            ))
        }
        Command::OracleCheck(a) => {
            let report = cross_check_small_markets(
                a.reps as usize,
                a.n as usize,
                a.k as usize,
                a.output.seed,
            )?;
            let mut table = Table::new([
                "instances",
                "mosm_mismatches",
                "wosm_mismatches",
                "blocking_pairs",
                "unmatched_set_violations",
                "passed",
            ]);
            table.push(vec![
                report.instances.into(),
                report.mosm_mismatches.into(),
                report.wosm_mismatches.into(),
                report.blocking_pairs.into(),
                report.unmatched_set_violations.into(),
                report.passed().into(),
            ]);
            emit(&table, &a.output)?;
            if report.passed() {
                Ok(format!(
                    "{} instances agree with enumeration",
                    report.instances
                ))
            } else {
                Err(Error::Integrity(format!("oracle disagreement: {report:?}")))
            }
        }
    }
}

fn harness(output: &OutputArgs, engine: &EngineArgs, wosm: bool) -> Result<Harness> {
    if wosm && engine.lazy {
        return Err(Error::InvalidConfig(
            "--wosm needs the full market and cannot be combined with --lazy".into(),
        ));
    }
    Ok(Harness::new(output.workers.map(usize::from))?
        .with_engine(if engine.lazy {
            Engine::Lazy
        } else {
            Engine::Eager
        })
        .with_wosm(wosm))
}

fn suggest_lazy(cfg: &MarketConfig, lazy: bool) {
    if !lazy && cfg.n as f64 * (cfg.d as f64).sqrt() > 1e7 {
        eprintln!("hint: n * sqrt(d) exceeds 1e7; --lazy avoids building the market");
    }
}

fn emit(table: &Table, output: &OutputArgs) -> Result<()> {
    match &output.out {
        Some(path) => emit_table(table, path, output.format),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_table(table, &mut lock, output.format)
                .and_then(|_| lock.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn trace_path(out: &Path, format: Format) -> PathBuf {
    let ext = match format {
        Format::Csv => "trace.csv",
        Format::Json => "trace.json",
    };
    out.with_extension(ext)
}

/// Re-run replication 0 of `cfg` and write `t, delta_m, delta_w`.
fn record_trace(cfg: &MarketConfig, output: &OutputArgs, engine: &EngineArgs) -> Result<()> {
    if !engine.record_trace {
        return Ok(());
    }
    let out = output
        .out
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--record-trace needs --out".into()))?;
    let seed = Harness::replication_seed(cfg, output.seed, 0);
    let cfg = cfg.with_seed(seed);
    let mut rng = rng_from_seed(seed);
    let trace = if engine.lazy {
        run_mosm_lazy(&cfg, &mut rng)?.result.trace
    } else {
        run_mosm(&generate_market(&cfg, &mut rng)?).trace
    };
    let mut table = Table::new(["t", "delta_m", "delta_w"]);
    for (idx, (&m, &w)) in trace
        .delta_m_series
        .iter()
        .zip(&trace.delta_w_series)
        .enumerate()
    {
        table.push(vec![trace.time_at(idx).into(), m.into(), w.into()]);
    }
    emit_table(&table, &trace_path(out, output.format), output.format)
}

fn cell_summary(stats: &SummaryStats) -> String {
    use crate::experiments::Metric;
    format!(
        "n={} k={} d={} reps={}: r_men={} r_women={} delta_m={} delta_w={}",
        stats.n,
        stats.k,
        stats.d,
        stats.reps,
        Cell::Float(stats.mean(Metric::RMen)).to_csv(),
        Cell::Float(stats.mean(Metric::RWomen)).to_csv(),
        Cell::Float(stats.mean(Metric::DeltaM)).to_csv(),
        Cell::Float(stats.mean(Metric::DeltaW)).to_csv(),
    )
}

/// Comma-separated integers and inclusive `start:end[:step]` ranges.
fn parse_list(spec: &str, flag: &str) -> Result<Vec<i64>> {
    let bad = |msg: String| Error::InvalidConfig(format!("{flag}: {msg}"));
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(bad(format!("empty entry in {spec:?}")));
        }
        let parts: Vec<&str> = item.split(':').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| bad(format!("{s:?} is not an integer")))
        };
        match parts.as_slice() {
            [v] => out.push(num(v)?),
            [a, b] | [a, b, _] => {
                let (start, end) = (num(a)?, num(b)?);
                let step = if parts.len() == 3 { num(parts[2])? } else { 1 };
                if step <= 0 || end < start {
                    return Err(bad(format!(
                        "range {item:?} needs start <= end and step >= 1"
                    )));
                }
                out.extend((start..=end).step_by(step as usize));
            }
            _ => return Err(bad(format!("cannot parse {item:?}"))),
        }
    }
    Ok(out)
}
