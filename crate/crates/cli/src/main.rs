use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeronet::logger::{parse_log, Category, EventRecord, LogError};
use aeronet::scenario::{
    self, compute_metrics, render_metrics, MetricsReport, RunOutput, ScenarioSpec,
};
use clap::{Parser, Subcommand};

const EXIT_INPUT: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "aeronet",
    version,
    about = "Deterministic airborne network emulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.log and metrics.json.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of runs with consecutive seeds, executed in parallel.
        #[arg(long, default_value_t = 1)]
        runs: u32,
    },
    /// Check a scenario and list every violation.
    Validate { scenario: PathBuf },
    /// Recompute the metrics report from an event log.
    Metrics { log: PathBuf },
    /// Print an event log as a readable trace.
    Replay {
        log: PathBuf,
        #[arg(long)]
        filter: Option<String>,
    },
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Input(m) => {
                eprintln!("error: {m}");
                ExitCode::from(EXIT_INPUT)
            }
            Failure::Runtime(m) => {
                eprintln!("aborted: {m}");
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            runs,
        } => cmd_run(&scenario, seed, &out, runs),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Metrics { log } => cmd_metrics(&log),
        Command::Replay { log, filter } => cmd_replay(&log, filter.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn load(path: &Path) -> Result<ScenarioSpec, Failure> {
    scenario::load(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let spec = load(path)?;
    println!(
        "{}: valid ({} nodes, {} flows, {} s)",
        spec.name,
        spec.nodes.len(),
        spec.traffic.len(),
        spec.duration_s
    );
    Ok(())
}

fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("events.log"), out.log_bytes()).map_err(io)?;
    fs::write(dir.join("metrics.json"), render_metrics(&out.report)).map_err(io)?;
    Ok(())
}

fn cmd_run(path: &Path, seed: Option<u64>, out: &Path, runs: u32) -> Result<(), Failure> {
    let spec = load(path)?;
    if runs == 0 {
        return Err(Failure::Input("--runs must be at least 1".into()));
    }
    let base = seed.unwrap_or(spec.seed);
    if runs == 1 {
        let result =
            scenario::run(&spec, Some(base)).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_outputs(out, &result)?;
        print_summary(&result.report, out);
        return Ok(());
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base.wrapping_add(i)).collect();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&sd| {
                let spec = &spec;
                s.spawn(move || scenario::run(spec, Some(sd)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    for (sd, r) in seeds.iter().zip(results) {
        let r = r.map_err(|e| Failure::Runtime(format!("seed {sd}: {e}")))?;
        let dir = out.join(format!("seed-{sd}"));
        write_outputs(&dir, &r)?;
        print_summary(&r.report, &dir);
    }
    Ok(())
}

fn print_summary(r: &MetricsReport, dir: &Path) {
    println!(
        "scenario {}  seed {}  {:.2} s  -> {}",
        r.scenario,
        r.seed,
        r.duration_s,
        dir.display()
    );
    println!("  class  offered  delivered  loss    mean_delay  p95_delay  miss    throughput");
    for c in &r.classes {
        println!(
            "  {:<5}  {:<7}  {:<9}  {:<6.3}  {:<10.4}  {:<9.4}  {:<6.3}  {:.1} bit/s",
            c.priority,
            c.offered,
            c.delivered,
            c.loss_ratio,
            c.mean_delay_s,
            c.p95_delay_s,
            c.deadline_miss_ratio,
            c.throughput_bps
        );
    }
    for m in &r.missions {
        match (&m.completion_s, &m.aborted) {
            (Some(t), _) => println!(
                "  node {} mission complete at {t:.2} s ({} tasks)",
                m.node, m.tasks_completed
            ),
            (None, Some(why)) => println!("  node {} mission aborted: {why}", m.node),
            _ => {}
        }
    }
    for d in &r.distance_m {
        println!("  node {} flew {:.1} m", d.node, d.meters);
    }
    if r.custody.taken > 0 {
        println!(
            "  custody taken {} released {} held {} delivered {}",
            r.custody.taken, r.custody.released, r.custody.held, r.custody.delivered
        );
    }
    println!(
        "  radio tx {} rx ok {} crc fail {} collided {} mac drops {}",
        r.radio.frames_tx,
        r.radio.rx_delivered,
        r.radio.rx_crc_fail,
        r.radio.rx_collided,
        r.radio.mac_drops
    );
}

fn read_log(
    path: &Path,
) -> Result<(Option<aeronet::logger::LogHeader>, Vec<EventRecord>), Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_log(&text).map_err(|e| match e {
        LogError::Parse { line, message } => {
            Failure::Input(format!("{}: line {line}: {message}", path.display()))
        }
        other => Failure::Input(format!("{}: {other}", path.display())),
    })
}

fn cmd_metrics(path: &Path) -> Result<(), Failure> {
    let (header, records) = read_log(path)?;
    let report =
        compute_metrics(header.as_ref(), &records).map_err(|e| Failure::Input(e.to_string()))?;
    print!("{}", render_metrics(&report));
    Ok(())
}

fn cmd_replay(path: &Path, filter: Option<&str>) -> Result<(), Failure> {
    let filter = match filter {
        Some(f) => Some(
            Category::parse(f).ok_or_else(|| Failure::Input(format!("unknown category {f:?}")))?,
        ),
        None => None,
    };
    let (header, records) = read_log(path)?;
    if let Some(h) = header {
        println!(
            "# {} seed {} duration {} s",
            h.scenario, h.seed, h.duration_s
        );
    }
    for r in records.iter().filter(|r| filter.is_none_or(|c| r.cat == c)) {
        println!("{}", trace_line(r));
    }
    Ok(())
}

fn trace_line(r: &EventRecord) -> String {
    let v = serde_json::to_value(r).expect("records serialize");
    let mut line = format!("{:>9.2} {:>3} {:<8}", r.t, r.node.0, r.cat.name());
    if let serde_json::Value::Object(map) = v {
        if let Some(serde_json::Value::String(ev)) = map.get("ev") {
            line.push(' ');
            line.push_str(ev);
        }
        for (k, val) in map
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "t" | "node" | "cat" | "ev"))
        {
            line.push_str(&format!(" {k}={val}"));
        }
    }
    line
}
