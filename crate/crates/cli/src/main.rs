mod audit;

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rationing::choice::{fit_mle, fit_table, predicted_peak_rate, read_observations_csv, FitConfig, ObservationSet};
use rationing::dynamics::{
    brd_limit, brd_table, run_brd, run_pfu_sim, BotPolicy, BrdRow, InitialProfile, RevisionConfig, RunLength, TieBreak,
};
use rationing::equilibrium::{contingent_reasoning_table, profile_share_table, region_grid_table, report_class_table};
use rationing::ospu::{build_tree, export_tree, node_count_table, schedule_walk};
use rationing::session::{audit as audit_log, observations_from_log, outcome_table, read_jsonl, replay_outcomes, write_jsonl};
use rationing::{schedule_table, Format, PayoffParams, Schedule, Table, Valuation};
use rationing_service::{write_atomic, Hub, HubConfig};

#[derive(Debug, Parser)]
#[command(name = "rationing", version, about = "Uniform-rule rationing analyses, simulations and live sessions")]
struct Cli {
    /// Restrict to one valuation id (1-6).
    #[arg(long, global = true, env = "RATIONING_VALUATION")]
    valuation: Option<u8>,
    #[arg(long, global = true, env = "RATIONING_SEED", default_value_t = 0)]
    seed: u64,
    /// csv or markdown.
    #[arg(long, global = true, env = "RATIONING_FORMAT", default_value = "markdown")]
    format: Format,
    /// Write output here instead of stdout.
    #[arg(long, global = true, env = "RATIONING_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "RATIONING_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, global = true, env = "RATIONING_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit the computable analysis tables.
    Tables(TablesArgs),
    /// Walk the clock game trees and count node categories.
    ClassifyTree(TreeArgs),
    /// Myopic best-response dynamics on the direct report game.
    SimulateBrd(BrdArgs),
    /// Bot play in the feedback mechanism at 10 Hz.
    SimulatePfu(PfuArgs),
    /// Fit the logit choice model to a CSV of observations or event logs.
    Fit(FitArgs),
    /// Run the live session server.
    Serve(ServeArgs),
    /// Replay an event log and score every pair.
    Replay { path: PathBuf },
    /// Re-run the invariant checks; exits nonzero on any violation.
    Audit {
        /// Event logs to audit as well.
        logs: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Schedule,
    Contingent,
    ProfileShares,
    Regions,
    ReportClasses,
    All,
}

#[derive(Debug, Args)]
struct TablesArgs {
    #[arg(long, value_enum, default_value_t = Which::All)]
    which: Which,
    /// Peak used by the contingent-reasoning table.
    #[arg(long, default_value_t = 5)]
    peak: u32,
    /// Own reports compared in the contingent-reasoning table.
    #[arg(long, value_delimiter = ',', default_value = "4,5")]
    reports: Vec<u32>,
}

#[derive(Debug, Args)]
struct TreeArgs {
    /// `standard` or a path to a schedule file.
    #[arg(long, default_value = "standard")]
    schedule: String,
    /// Subjects in the clock-mechanism sessions (even).
    #[arg(long, default_value_t = 46)]
    subjects: u32,
    /// Dump the full tree of the selected valuation instead of the counts.
    #[arg(long)]
    export: bool,
}

#[derive(Debug, Args)]
struct BrdArgs {
    #[arg(long, default_value_t = TieBreak::UniformOverBr)]
    tie_break: TieBreak,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 100_000, conflicts_with = "time")]
    revisions: u64,
    /// Simulated time instead of a revision count.
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, default_value_t = 1_000)]
    burn_in: u64,
    /// Start from the truthful profile instead of a uniform draw.
    #[arg(long)]
    truthful_start: bool,
    /// Skip the exact stationary column.
    #[arg(long)]
    no_exact: bool,
}

#[derive(Debug, Args)]
struct PfuArgs {
    /// truthful, myopic, stubborn:R or logit:E,D, with optional @latency.
    #[arg(long, default_value = "truthful", value_parser = BotPolicy::parse)]
    seat_a: BotPolicy,
    #[arg(long, default_value = "truthful", value_parser = BotPolicy::parse)]
    seat_b: BotPolicy,
    /// Reporting window in 100 ms ticks.
    #[arg(long, default_value_t = 300)]
    ticks: u32,
    /// Also write each valuation's event log into this directory.
    #[arg(long)]
    events_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV observation files or `.jsonl` event logs (one cluster per log).
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Pause between periods, in seconds.
    #[arg(long, default_value_t = 3.0)]
    inter_period: f64,
    #[arg(long)]
    reporting_seconds: Option<f64>,
    #[arg(long)]
    step_seconds: Option<f64>,
}

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    if matches!(&cli.command, Command::ClassifyTree(a) if a.export) && cli.valuation.is_none() {
        Cli::command()
            .error(ErrorKind::MissingRequiredArgument, "--export needs --valuation")
            .exit();
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    eprintln!("seed: {}", cli.seed);
    let params = PayoffParams::default();
    let valuations = selected(cli.valuation)?;
    let tables = match &cli.command {
        Command::Tables(a) => tables(a, &valuations, &params, cli.valuation)?,
        Command::ClassifyTree(a) => {
            if a.export {
                let tree = build_tree(&valuations[0])?;
                emit(&cli, &export_tree(&tree, &params))?;
                return Ok(0);
            }
            let schedule = load_schedule(&a.schedule)?;
            vec![node_count_table(&schedule_walk(&schedule, a.subjects, &params)?)]
        }
        Command::SimulateBrd(a) => vec![simulate_brd(a, &valuations, cli.seed, &params)?],
        Command::SimulatePfu(a) => vec![simulate_pfu(a, &valuations, cli.seed, &params)?],
        Command::Fit(a) => vec![fit(a, cli.seed, &params)?],
        Command::Serve(a) => {
            serve(a, &cli)?;
            return Ok(0);
        }
        Command::Replay { path } => {
            let log = read_log(path)?;
            audit_log(&log).with_context(|| format!("{} fails the visibility audit", path.display()))?;
            vec![outcome_table(&replay_outcomes(&log, &params)?)]
        }
        Command::Audit { logs } => {
            let (table, failures) = audit::run(logs, &params)?;
            emit(&cli, &table.render(cli.format))?;
            return Ok(if failures == 0 { 0 } else { 3 });
        }
    };
    let text: Vec<String> = tables.iter().map(|t| t.render(cli.format)).collect();
    emit(&cli, &text.join("\n"))?;
    Ok(0)
}

fn selected(id: Option<u8>) -> Result<Vec<Valuation>> {
    let all = Schedule::standard().distinct_valuations();
    match id {
        None => Ok(all),
        Some(id) => match all.into_iter().find(|v| v.id == Some(id)) {
            Some(v) => Ok(vec![v]),
            None => bail!("no valuation {id}; ids run from 1 to 6"),
        },
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_schedule(spec: &str) -> Result<Schedule> {
    if matches!(spec, "standard" | "paper") {
        return Ok(Schedule::standard());
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading schedule {spec}"))?;
    Ok(text.parse()?)
}

fn read_log(path: &Path) -> Result<Vec<rationing::session::SessionEvent>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn tables(a: &TablesArgs, valuations: &[Valuation], params: &PayoffParams, filter: Option<u8>) -> Result<Vec<Table>> {
    let mut out = Vec::new();
    let want = |w: Which| a.which == w || a.which == Which::All;
    if want(Which::Schedule) {
        let mut schedule = Schedule::standard();
        if let Some(id) = filter {
            schedule.periods.retain(|p| p.valuation.id == Some(id));
        }
        out.push(schedule_table(&schedule, params));
    }
    if want(Which::Contingent) {
        if a.peak > params.supply || a.reports.iter().any(|r| *r > params.supply) {
            bail!("peak and reports must lie in 0..={}", params.supply);
        }
        out.push(contingent_reasoning_table(a.peak, &a.reports, params));
    }
    if want(Which::ProfileShares) {
        out.push(profile_share_table(valuations, params));
    }
    if want(Which::Regions) {
        out.extend(valuations.iter().map(|v| region_grid_table(v, params)));
    }
    if want(Which::ReportClasses) {
        out.push(report_class_table(valuations, params));
    }
    Ok(out)
}

fn simulate_brd(a: &BrdArgs, valuations: &[Valuation], seed: u64, params: &PayoffParams) -> Result<Table> {
    let cfg = RevisionConfig {
        arrival_rate: a.rate,
        tie_break: a.tie_break,
        horizon: a.time.map_or(RunLength::Revisions(a.revisions), RunLength::Time),
        burn_in_revisions: a.burn_in,
        initial: if a.truthful_start { InitialProfile::Truthful } else { InitialProfile::Uniform },
        seed,
    };
    let rows: Vec<Result<BrdRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = valuations
            .iter()
            .map(|v| {
                let cfg = &cfg;
                s.spawn(move || -> Result<BrdRow> {
                    let simulated = run_brd(v, cfg, params)?;
                    let exact = if a.no_exact {
                        None
                    } else {
                        Some(brd_limit(v, cfg.tie_break, cfg.initial, params)?)
                    };
                    Ok(BrdRow { valuation: v.clone(), simulated, exact })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let rows: Vec<BrdRow> = rows.into_iter().collect::<Result<_>>()?;
    Ok(brd_table(&rows, &cfg))
}

fn simulate_pfu(a: &PfuArgs, valuations: &[Valuation], seed: u64, params: &PayoffParams) -> Result<Table> {
    let mut outcomes = Vec::new();
    for v in valuations {
        let log = run_pfu_sim(v, [a.seat_a, a.seat_b], a.ticks, seed)?;
        if let Some(dir) = &a.events_dir {
            std::fs::create_dir_all(dir)?;
            let mut buf = Vec::new();
            write_jsonl(&log, &mut buf)?;
            let name = format!("valuation-{}.jsonl", v.id.unwrap_or(0));
            write_atomic(&dir.join(name), &buf)?;
        }
        outcomes.extend(replay_outcomes(&log, params)?);
    }
    let mut t = outcome_table(&outcomes);
    t.title = format!("Simulated feedback play, seat A {} vs seat B {}", a.seat_a, a.seat_b);
    Ok(t)
}

fn fit(a: &FitArgs, seed: u64, params: &PayoffParams) -> Result<Table> {
    let mut data: Vec<ObservationSet> = Vec::new();
    let mut excluded = 0;
    for path in &a.paths {
        if path.extension().is_some_and(|e| e == "jsonl") {
            let cluster = path.display().to_string();
            let (rows, skipped) = observations_from_log(&read_log(path)?, &cluster);
            data.extend(rows);
            excluded += skipped.len();
        } else {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let (rows, skipped) = read_observations_csv(file, params)?;
            data.extend(rows);
            excluded += skipped.len();
        }
    }
    if excluded > 0 {
        eprintln!("excluded {excluded} malformed or out-of-range observations");
    }
    let cfg = FitConfig {
        bootstrap_replicates: a.bootstrap,
        seed,
        ..FitConfig::default()
    };
    let fit = fit_mle(&data, params, &cfg)?;
    let rate = predicted_peak_rate(&data, &fit.estimate.params, params)?;
    let label = if a.paths.len() == 1 {
        a.paths[0].display().to_string()
    } else {
        format!("{} files", a.paths.len())
    };
    Ok(fit_table(&label, &fit, rate))
}

fn serve(a: &ServeArgs, cli: &Cli) -> Result<()> {
    if !(a.inter_period.is_finite() && a.inter_period >= 0.0) {
        bail!("inter-period pause must be a non-negative number of seconds");
    }
    let config = HubConfig {
        data_dir: Some(cli.data_dir.clone()),
        inter_period: Duration::from_secs_f64(a.inter_period),
        reporting_seconds: a.reporting_seconds,
        step_seconds: a.step_seconds,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(rationing_service::serve(Hub::new(config), cli.bind))?;
    Ok(())
}
