use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idlease::harness::{run, schedule_estimate, ScenarioConfig, ScenarioReport, SchemaError};
use idlease::ledger::Chain;
use idlease::simnet::SimDuration;

#[derive(Parser)]
#[command(name = "idlease", version, about = "Deterministic identity-lease protocol simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario and print its report.
    Run(RunArgs),
    /// Check the invariant suite over a report (or a fresh run).
    Verify(VerifyArgs),
    /// Re-execute a scenario and compare against a recorded event log.
    Replay(ReplayArgs),
    /// Closed-form phase durations.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    s: ScenarioArgs,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    log_out: Option<PathBuf>,
    #[arg(long)]
    chain_out: Option<PathBuf>,
    #[arg(long)]
    state_out: Option<PathBuf>,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON report written by `run --report-out`.
    #[arg(long, conflicts_with = "scenario")]
    report: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Event log to check digests and evidence ids against.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    s: ScenarioArgs,
    #[arg(long)]
    log: PathBuf,
    /// Chain dump to restore and compare as well.
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Take counts and means from a scenario's first campaign.
    #[arg(long, conflicts_with_all = ["count", "service", "payment"])]
    scenario: Option<PathBuf>,
    #[arg(long)]
    count: Option<u64>,
    #[arg(long, default_value_t = 1)]
    service: u64,
    #[arg(long, default_value_t = 1)]
    payment: u64,
    #[arg(long, default_value_t = 4.288)]
    action_mean: f64,
    #[arg(long, default_value_t = 4.935)]
    snark_mean: f64,
}

enum Fail {
    Schema(Vec<SchemaError>),
    Io(String),
    Invariant(Vec<String>),
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Fail> {
    let mut cfg = ScenarioConfig::load(path).map_err(Fail::Schema)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Option<PathBuf>, body: &str) -> Result<(), Fail> {
    if let Some(p) = path {
        fs::write(p, body).map_err(|e| Fail::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::Io(format!("{}: {e}", path.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), Fail> {
    let cfg = load(&a.s.scenario, a.s.seed)?;
    let out = run(&cfg);
    write(&a.report_out, &out.report.to_json())?;
    write(&a.log_out, &out.event_log)?;
    write(&a.chain_out, &out.chain_dump)?;
    write(&a.state_out, &serde_json::to_string_pretty(&out.state).expect("state serializes"))?;
    if a.json {
        println!("{}", out.report.to_json());
    } else {
        print!("{}", out.report.render_text());
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Fail> {
    let log = a.log.as_deref().map(read).transpose()?;
    let (report, log) = match (a.report, a.scenario) {
        (Some(p), _) => {
            let r = ScenarioReport::from_json(&read(&p)?).map_err(|e| Fail::Io(format!("{}: {e}", p.display())))?;
            (r, log)
        }
        (None, Some(s)) => {
            let out = run(&load(&s, a.seed)?);
            let log = log.or(Some(out.event_log));
            (out.report, log)
        }
        (None, None) => return Err(Fail::Io("need --report or --scenario".into())),
    };
    let v = report.check_invariants(log.as_deref());
    if v.is_empty() {
        println!("ok: all invariants hold for {}", report.name);
        Ok(())
    } else {
        Err(Fail::Invariant(v))
    }
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Fail> {
    let recorded = read(&a.log)?;
    let out = run(&load(&a.s.scenario, a.s.seed)?);
    write(&a.report_out, &out.report.to_json())?;
    write(&a.log_out, &out.event_log)?;
    let mut problems = Vec::new();
    if recorded != out.event_log {
        let (mut l, mut r) = (recorded.lines(), out.event_log.lines());
        let mut n = 1;
        loop {
            match (l.next(), r.next()) {
                (Some(x), Some(y)) if x == y => n += 1,
                (x, y) => {
                    problems.push(format!(
                        "event log diverges at line {n}: recorded {:?}, replayed {:?}",
                        x.unwrap_or("<end>"),
                        y.unwrap_or("<end>")
                    ));
                    break;
                }
            }
        }
    }
    if let Some(p) = &a.chain {
        match Chain::restore(&read(p)?) {
            Ok(c) if c.dump() == out.chain_dump => {}
            Ok(_) => problems.push("restored chain differs from replayed chain".into()),
            Err(e) => problems.push(format!("chain dump rejected: {e}")),
        }
    }
    if problems.is_empty() {
        println!("replay matches: {} events, log {}", out.report.event_count, out.report.event_log_digest);
        Ok(())
    } else {
        Err(Fail::Invariant(problems))
    }
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), Fail> {
    let (count, s, p, am, sm) = match &a.scenario {
        Some(path) => {
            let cfg = load(path, None)?;
            let count = cfg.campaigns.first().map_or(0, |c| c.count as u64);
            let t = &cfg.timing;
            let am: f64 = t.pipeline_means_secs.iter().sum();
            (count, cfg.topology.service_enclaves as u64, cfg.topology.payment_enclaves as u64, am, t.snark_mean_secs)
        }
        None => (a.count.unwrap_or(1000), a.service, a.payment, a.action_mean, a.snark_mean),
    };
    let e = schedule_estimate(count, s, p, SimDuration::from_secs_f64(am), SimDuration::from_secs_f64(sm))
        .map_err(|e| Fail::Io(e.to_string()))?;
    println!("count {count} over {s} service / {p} payment enclaves");
    println!("service phase {:.3} s", e.service.as_secs_f64());
    println!("payment phase {:.3} s", e.payment.as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Estimate(a) => cmd_estimate(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Schema(errs)) => {
            for e in errs {
                eprintln!("schema error: {e}");
            }
            ExitCode::from(1)
        }
        Err(Fail::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Fail::Invariant(v)) => {
            for e in v {
                eprintln!("violation: {e}");
            }
            ExitCode::from(2)
        }
    }
}
