use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cncguard::eval::{evaluate, read_log};
use cncguard::replay::{load_replay, write_replay};
use cncguard::sim::{generate_run, replay_into, run_closed_loop, GroundTruth, Scenario};
use cncguard::snapshot::{load_snapshot, save_snapshot};
use cncguard::stats::Summary;
use cncguard::{Engine, EngineConfig, LogRecord, SensorKind, StateId, WireMessage};
use cncguard_gateway::GatewayCore;

#[derive(Parser)]
#[command(name = "cncguard", version, about = "Transition gating and alarm handling for CNC telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic telemetry stream and its ground truth.
    Simulate(SimulateArgs),
    /// Feed a recorded stream through the engine.
    Replay(ReplayArgs),
    /// Print per-operation sensor and duration summaries of a stream.
    Stats(StatsArgs),
    /// Score an alarm log against ground truth.
    Evaluate(EvaluateArgs),
    /// Replay a stream and save the resulting engine state.
    Snapshot(SnapshotArgs),
    /// Serve the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output stream, one wire message per line.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// Ground-truth sidecar; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Print the effective scenario as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EngineArgs {
    /// Engine configuration TOML.
    #[arg(long)]
    engine_config: Option<PathBuf>,
    /// Resume from a saved snapshot instead of a fresh engine.
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    /// Train on events before this timestamp.
    #[arg(long, conflicts_with = "train_seconds")]
    train_until: Option<i64>,
    /// Train on the first N seconds of the stream.
    #[arg(long)]
    train_seconds: Option<i64>,
}

#[derive(Args)]
struct ReplayArgs {
    file: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Answer alarms with the scripted operator, using this ground truth.
    #[arg(long)]
    operator_truth: Option<PathBuf>,
    /// Scenario TOML whose `[agent]` section configures the scripted operator.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the alarm log here.
    #[arg(long)]
    alarms: Option<PathBuf>,
    /// Save the final engine state here.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    file: PathBuf,
    #[arg(long)]
    engine_config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    alarms: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report destination; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    replay: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Append every alarm log record to this file.
    #[arg(long)]
    alarms: Option<PathBuf>,
    /// Save the engine state here on shutdown.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Replay(a) => replay(a),
        Command::Stats(a) => stats(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Snapshot(a) => snapshot(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("reading scenario {}", p.display())),
        None => Ok(Scenario::default()),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = load_scenario(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        scenario.sim.seed = seed;
    }
    if a.print_config {
        print!("{}", scenario.to_toml());
        return Ok(());
    }
    let out = a.out.expect("clap requires --out");
    let trace = generate_run(&scenario.sim, &scenario.faults, scenario.drift.as_ref(), scenario.sim.seed)?;
    write_replay(&out, &trace.messages).with_context(|| format!("writing {}", out.display()))?;
    let truth = a.truth.unwrap_or_else(|| sidecar(&out));
    trace.truth.save(&truth)?;
    let frames = trace
        .messages
        .iter()
        .filter(|m| matches!(m, WireMessage::Frame(_)))
        .count();
    println!(
        "wrote {} messages ({frames} frames) to {}; {} injected faults to {}",
        trace.messages.len(),
        out.display(),
        trace.truth.faults.len(),
        truth.display()
    );
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".truth.json");
    out.with_file_name(name)
}

fn engine_config(path: Option<&Path>) -> Result<EngineConfig> {
    let config: EngineConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => EngineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn build_engine(a: &EngineArgs, first_ts: Option<i64>) -> Result<Engine> {
    let training = match (a.train_until, a.train_seconds) {
        (Some(t), _) => Some(t),
        (None, Some(s)) => Some(first_ts.context("--train-seconds needs a non-empty stream")? + s),
        (None, None) => None,
    };
    if let Some(p) = &a.snapshot_in {
        if training.is_some() || a.engine_config.is_some() {
            bail!("a resumed snapshot keeps its own configuration");
        }
        return load_snapshot(p).with_context(|| format!("loading snapshot {}", p.display()));
    }
    let mut config = engine_config(a.engine_config.as_deref())?;
    if training.is_some() {
        config.training_until = training;
    }
    Ok(Engine::new(config)?)
}

fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in log {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()?;
    Ok(())
}

fn summarize_log(log: &[LogRecord]) -> String {
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut dispositions: BTreeMap<String, usize> = BTreeMap::new();
    let mut models = 0;
    for r in log {
        match r {
            LogRecord::Alarm(a) => *reasons.entry(a.reason().to_string()).or_default() += 1,
            LogRecord::Disposition { d, .. } => *dispositions.entry(d.to_string()).or_default() += 1,
            LogRecord::Model(_) => models += 1,
        }
    }
    let join = |m: &BTreeMap<String, usize>| {
        m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    };
    format!(
        "alarms: {} [{}]\ndispositions: {} [{}]\nmodel events: {models}",
        reasons.values().sum::<usize>(),
        join(&reasons),
        dispositions.values().sum::<usize>(),
        join(&dispositions)
    )
}

fn replay(a: ReplayArgs) -> Result<()> {
    let messages = load_replay(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let mut engine = build_engine(&a.engine, messages.first().map(WireMessage::ts))?;
    let (log, engine) = match &a.operator_truth {
        Some(t) => {
            let truth = GroundTruth::load(t).with_context(|| format!("reading {}", t.display()))?;
            let agent = load_scenario(a.scenario.as_deref())?.agent;
            let run = run_closed_loop(engine, &messages, &truth, &agent)?;
            (run.log, run.engine)
        }
        None => {
            let log = replay_into(&mut engine, &messages)?;
            (log, engine)
        }
    };
    println!("replayed {} messages", messages.len());
    println!("{}", summarize_log(&log));
    println!("active models: {}", engine.models().active_ids().join(", "));
    if let Some(p) = &a.alarms {
        write_log(p, &log)?;
    }
    if let Some(p) = &a.snapshot_out {
        save_snapshot(&engine, p)?;
    }
    Ok(())
}

fn fmt_summary(label: &str, s: &Summary) -> [String; 8] {
    [
        label.to_string(),
        s.count.to_string(),
        format!("{:.3}", s.mean),
        format!("{:.3}", s.median),
        format!("{:.3}", s.mode),
        format!("{:.3}", s.std),
        format!("{:.3}", s.min),
        format!("{:.3}", s.max),
    ]
}

fn stats(a: StatsArgs) -> Result<()> {
    let messages = load_replay(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let mut config = engine_config(a.engine_config.as_deref())?;
    config.training_until = Some(i64::MAX);
    let mut engine = Engine::new(config)?;
    replay_into(&mut engine, &messages)?;
    let model = engine.models().active().next().context("engine has no active model")?;
    let header = ["Sensor", "Count", "Mean", "Median", "Mode", "Std", "Min", "Max"];
    let mut out = String::new();
    for op in StateId::all() {
        let mut rows = Vec::new();
        for s in SensorKind::ALL {
            if let Ok(sum) = model.profile.summarize(op, s, engine.config().bin_width(s)) {
                rows.push(fmt_summary(&format!("{s} ({})", s.unit()), &sum));
            }
        }
        if let Ok(sum) = model.profile.summarize_duration(op, 1.0) {
            rows.push(fmt_summary("duration (s)", &sum));
        }
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("Operation {op}\n"));
        out.push_str(&table(&header, &rows));
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn table(header: &[&str; 8], rows: &[[String; 8]]) -> String {
    let mut width = header.map(str::len);
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let log = read_log(&a.alarms).with_context(|| format!("reading {}", a.alarms.display()))?;
    let truth = match &a.truth {
        Some(p) => GroundTruth::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => GroundTruth::default(),
    };
    let report = evaluate(&log, &truth)?.render();
    match &a.out {
        Some(p) => fs::write(p, &report).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{report}"),
    }
    Ok(())
}

fn snapshot(a: SnapshotArgs) -> Result<()> {
    let messages = load_replay(&a.replay).with_context(|| format!("reading {}", a.replay.display()))?;
    let mut engine = build_engine(&a.engine, messages.first().map(WireMessage::ts))?;
    replay_into(&mut engine, &messages)?;
    save_snapshot(&engine, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("saved engine state after {} messages to {}", messages.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let engine = build_engine(&a.engine, None)?;
    let mut core = GatewayCore::new(engine);
    if let Some(p) = &a.alarms {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .with_context(|| format!("opening {}", p.display()))?;
        core = core.with_log(f);
    }
    let rt = tokio::runtime::Runtime::new()?;
    let core = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .with_context(|| format!("binding {}", a.listen))?;
        eprintln!("listening on {}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        Ok::<_, anyhow::Error>(cncguard_gateway::serve(listener, core, shutdown).await?)
    })?;
    if let Some(p) = &a.snapshot_out {
        save_snapshot(core.engine(), p)?;
        eprintln!("saved engine state to {}", p.display());
    }
    Ok(())
}
