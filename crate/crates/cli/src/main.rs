//! `rampc`: closed-loop runs, batch studies, window searches and report data.
//!
//! Exit codes: 0 success, 1 simulation failure, 2 invalid or missing input.

mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rampc::config::ControllerConfig;
use rampc::feasibility::{grasp_window_search, placement_window_search, WindowSearchConfig, WindowSearchResult};
use rampc::sim::output::{write_steps_csv, write_timing_csv, RunSummary, TimingStats};
use rampc::sim::study::{self, Study, DEVIATIONS};
use rampc::sim::{run_closed_loop, Controller, Scenario};

#[derive(Parser)]
#[command(name = "rampc", version, about = "Robust adaptive MPC for aerial pick-and-place")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario.
    Run(RunArgs),
    /// Compare the nominal and robust controllers over mass deviations.
    Batch(BatchArgs),
    /// Search the admissible grasp and drop-off windows.
    Windows(WindowsArgs),
    /// Turn run outputs into trajectory and estimation CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Controller config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "RAMPC_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Nominal,
    Ramp,
}

impl From<Variant> for Controller {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Nominal => Controller::Nominal,
            Variant::Ramp => Controller::RobustAdaptive,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the disturbance seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "ramp")]
    controller: Variant,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario files; a seeded random set is drawn when none are given.
    #[arg(long = "scenario")]
    scenarios: Vec<PathBuf>,
    /// Size of the random set.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Seed of the random set.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Args)]
struct WindowsArgs {
    #[command(flatten)]
    common: Common,
    /// Search settings (TOML); built-in defaults when omitted.
    #[arg(long)]
    search: Option<PathBuf>,
    /// Overrides the BO seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories holding `*.steps.csv` files written by `run`.
    #[arg(long = "runs", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, env = "RAMPC_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl ToString) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    pub fn sim(message: impl ToString) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

/// Input error naming the file once.
fn input_error(path: &Path, e: rampc::Error) -> Failure {
    let (msg, shown) = (e.to_string(), path.display().to_string());
    if msg.contains(&shown) {
        Failure::input(msg)
    } else {
        Failure::input(format!("{shown}: {msg}"))
    }
}

fn load_config(path: Option<&Path>) -> Result<ControllerConfig, Failure> {
    match path {
        Some(p) => ControllerConfig::load(p).map_err(|e| input_error(p, e)),
        None => Ok(ControllerConfig::default()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| input_error(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::sim)?;
    fs::write(path, text + "\n").map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mut scn = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scn.seed = seed;
    }
    out_dir(&args.common.out)?;
    let stem = args.scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let controller = Controller::from(args.controller);
    let name = format!("{stem}_{}", controller.name());

    let r = run_closed_loop(&scn, controller, &cfg).map_err(Failure::sim)?;
    let file = |ext: &str| args.common.out.join(format!("{name}.{ext}"));
    write_steps_csv(&r, create(&file("steps.csv"))?).map_err(Failure::sim)?;
    write_timing_csv(&r, create(&file("timing.csv"))?).map_err(Failure::sim)?;
    write_json(&file("summary.json"), &RunSummary::from(&r))?;

    let timing = TimingStats::from_samples(r.steps.iter().map(|s| s.solve_time).collect());
    let fmt = |t: Option<f64>| t.map_or("-".to_string(), |t| format!("{t:.2}"));
    println!(
        "{name}: {} T_g {} T_p {} cost {:.2} solve mean {:.2} ms p95 {:.2} ms",
        r.status.as_str(),
        fmt(r.t_grasp),
        fmt(r.t_place),
        r.cost,
        timing.mean * 1e3,
        timing.p95 * 1e3
    );
    if r.success() {
        Ok(())
    } else {
        Err(Failure::sim(format!("{name}: {}", r.status.as_str())))
    }
}

fn write_study(study: &Study, out: &Path) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(&out.join("comparison.csv"))?);
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    w.write_record(["deviation", "runs", "nominal_success_rate", "robust_success_rate", "common_successes", "nominal_cost", "robust_cost"])
        .map_err(Failure::sim)?;
    for c in &study.cells {
        w.write_record([
            format!("{}", c.deviation),
            c.runs.to_string(),
            format!("{}", c.nominal_rate()),
            format!("{}", c.robust_rate()),
            c.common_successes.to_string(),
            fmt(c.nominal_cost),
            fmt(c.robust_cost),
        ])
        .map_err(Failure::sim)?;
    }
    w.flush().map_err(Failure::sim)?;

    let mut w = csv::Writer::from_writer(create(&out.join("batch_runs.csv"))?);
    w.write_record(["deviation", "scenario", "controller", "status", "cost", "t_grasp", "t_place"])
        .map_err(Failure::sim)?;
    for r in &study.rows {
        w.write_record([
            format!("{}", r.deviation),
            r.scenario.to_string(),
            r.controller.name().to_string(),
            r.status.as_str().to_string(),
            format!("{}", r.cost),
            fmt(r.t_grasp),
            fmt(r.t_place),
        ])
        .map_err(Failure::sim)?;
    }
    w.flush().map_err(Failure::sim)
}

fn cmd_batch(args: BatchArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let set = if args.scenarios.is_empty() {
        study::study_scenarios(args.count, args.seed)
    } else {
        args.scenarios.iter().map(|p| load_scenario(p)).collect::<Result<_, _>>()?
    };
    if set.is_empty() {
        return Err(Failure::input("empty scenario set"));
    }
    out_dir(&args.common.out)?;
    let res = study::compare(&set, &cfg, &DEVIATIONS, args.jobs).map_err(Failure::sim)?;
    write_study(&res, &args.common.out)?;
    println!("deviation  nominal  robust  nominal_cost  robust_cost");
    for c in &res.cells {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "±{:>3}%     {:>6.1}%  {:>5.1}%  {:>12}  {:>11}",
            (c.deviation * 100.0).round(),
            100.0 * c.nominal_rate(),
            100.0 * c.robust_rate(),
            fmt(c.nominal_cost),
            fmt(c.robust_cost)
        );
    }
    Ok(())
}

fn cmd_windows(args: WindowsArgs) -> Result<(), Failure> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mut search: WindowSearchConfig = match &args.search {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?
        }
        None => WindowSearchConfig::default(),
    };
    search.bo.jobs = args.jobs.max(1);
    if let Some(seed) = args.seed {
        search.bo.seed = seed;
    }
    search.validate().map_err(Failure::input)?;
    out_dir(&args.common.out)?;

    let grasp = grasp_window_search(&cfg, &search).map_err(Failure::sim)?;
    let place = placement_window_search(&cfg, &search).map_err(Failure::sim)?;
    let cert = WindowSearchResult::merge(grasp, place);
    write_json(&args.common.out.join("windows.json"), &cert)?;
    let fmt = |t: Option<f64>| t.map_or("-".to_string(), |t| format!("{t:.2}"));
    println!(
        "grasp window [{}, {}] s, latest drop-off {} s, {} simulations",
        fmt(cert.grasp_lo_star),
        fmt(cert.grasp_hi_star),
        fmt(cert.place_hi_star),
        cert.evaluations
    );
    match (cert.feasible, &cert.advice) {
        (true, _) => Ok(()),
        (false, Some(a)) => Err(Failure::sim(format!("no admissible window: {a}"))),
        (false, None) => Err(Failure::sim("no admissible window")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Windows(a) => cmd_windows(a),
        Command::Report(a) => report::cmd_report(&a.runs, &a.out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rampc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
