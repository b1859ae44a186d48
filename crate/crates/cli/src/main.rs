use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use fluorsqueeze::control::{optimize, SearchSpec};
use fluorsqueeze::dynamics::{exceptional_conditions, steady_state};
use fluorsqueeze::spectrum::{mean_squeezing, sigma2, spectrum_sweep, uniform_grid};
use fluorsqueeze::trajectory::{
    simulate_ensemble, simulate_trajectory, EnsembleRequest, SimulationPlan,
};
use fluorsqueeze::{BlochVector, Channel, ControlConfig, Error};
use serde::{Deserialize, Serialize};

const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Parser)]
#[command(
    name = "fluorsqueeze",
    version,
    about = "Squeezing in the fluorescence of a driven two-level atom under homodyne feedback"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "FLUORSQUEEZE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Stationary Bloch vector and squeezing functionals.
    SteadyState(SteadyStateArgs),
    /// Analytic homodyne spectrum on a uniform grid.
    Spectrum(SpectrumArgs),
    /// Monte Carlo ensemble of conditioned trajectories.
    Simulate(SimulateArgs),
    /// Multistart search over control parameters.
    Optimize(OptimizeArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct SteadyStateArgs {
    config: PathBuf,
    /// Also write the result and a manifest to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct SpectrumArgs {
    config: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = parse_channel)]
    channel: u8,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    mu_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    mu_max: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// CSV with columns mu,S.
    #[arg(long)]
    out: PathBuf,
    /// Also write the curve as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    config: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 500.0)]
    t_final: f64,
    #[arg(long, default_value_t = 50.0)]
    transient_cut: f64,
    #[arg(long, default_value_t = 400)]
    trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate the photocurrent spectra of both channels.
    #[arg(long)]
    estimate_spectrum: bool,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    mu_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    mu_max: f64,
    #[arg(long, default_value_t = 21)]
    points: usize,
    /// Times at which to report the ensemble-mean state.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<f64>,
    /// Write full CSV records of the first N trajectories.
    #[arg(long, default_value_t = 0)]
    dump_trajectories: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct OptimizeArgs {
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs here instead of their recorded locations.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SteadyState(_) => "steady-state",
            Command::Spectrum(_) => "spectrum",
            Command::Simulate(_) => "simulate",
            Command::Optimize(_) => "optimize",
            Command::Replay(_) => "replay",
        }
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CmdResult<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Written next to every output; replaying it reproduces the output.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    /// Seconds since the Unix epoch.
    timestamp: u64,
    subcommand: String,
    invocation: Command,
    config: Option<ControlConfig>,
    spec: Option<SearchSpec>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

enum Failure {
    Io(String),
    Input(String),
    Exceptional(ControlConfig),
    Infeasible,
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidPlan(_)
            | Error::InvalidSpec(_)
            | Error::InvalidPoint(_)
            | Error::InvalidArgument(_)
            | Error::InvalidState(_) => Failure::Input(e.to_string()),
            Error::NoFeasiblePoint => Failure::Infeasible,
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CmdResult<T> = Result<T, Failure>;

fn parse_channel(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err(format!("channel must be 1 or 2, got {s}")),
    }
}

fn channel(k: u8) -> Channel {
    Channel::try_from(k).expect("validated by the argument parser")
}

fn read_config(path: &Path) -> CmdResult<ControlConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let cfg: ControlConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> CmdResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(MANIFEST_SUFFIX);
    output.with_file_name(name)
}

fn write_manifest(
    at: &Path,
    command: &Command,
    config: Option<ControlConfig>,
    spec: Option<SearchSpec>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
) -> CmdResult<()> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        subcommand: command.name().into(),
        invocation: command.clone(),
        config,
        spec,
        seed,
        outputs,
    };
    write_file(
        at,
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )
}

#[derive(Serialize)]
struct SteadyStateReport {
    x_eq: BlochVector,
    atomic_squeezing: f64,
    sigma2: f64,
    pi1: f64,
    pi2: f64,
    exceptional: bool,
}

fn cmd_steady_state(
    cfg: ControlConfig,
    args: &SteadyStateArgs,
    command: &Command,
) -> CmdResult<()> {
    let eq = match steady_state(&cfg) {
        Err(Error::ExceptionalCase) => return Err(Failure::Exceptional(cfg)),
        other => other?,
    };
    let report = SteadyStateReport {
        x_eq: eq,
        atomic_squeezing: eq.atomic_squeezing(),
        sigma2: sigma2(&cfg)?,
        pi1: mean_squeezing(&cfg, Channel::One)?,
        pi2: mean_squeezing(&cfg, Channel::Two)?,
        exceptional: false,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    emit(&text)?;
    if let Some(out) = &args.out {
        write_file(out, text.as_bytes())?;
        write_manifest(
            &manifest_path(out),
            command,
            Some(cfg),
            None,
            None,
            vec![out.clone()],
        )?;
    }
    Ok(())
}

fn cmd_spectrum(cfg: ControlConfig, args: &SpectrumArgs, command: &Command) -> CmdResult<()> {
    let curve = match spectrum_sweep(
        &cfg,
        channel(args.channel),
        args.mu_min,
        args.mu_max,
        args.points,
    ) {
        Err(Error::ExceptionalCase) => return Err(Failure::Exceptional(cfg)),
        other => other?,
    };
    write_file(&args.out, curve.to_csv().as_bytes())?;
    let mut outputs = vec![args.out.clone()];
    if let Some(json) = &args.json {
        write_file(json, curve.to_json().as_bytes())?;
        outputs.push(json.clone());
    }
    write_manifest(
        &manifest_path(&args.out),
        command,
        Some(cfg),
        None,
        None,
        outputs,
    )
}

fn cmd_simulate(cfg: ControlConfig, args: &SimulateArgs, command: &Command) -> CmdResult<()> {
    let plan = SimulationPlan {
        dt: args.dt,
        t_final: args.t_final,
        n_trajectories: args.trajectories,
        base_seed: args.seed,
        transient_cut: args.transient_cut,
        ..SimulationPlan::default()
    };
    let request = EnsembleRequest {
        mu_grid: if args.estimate_spectrum {
            uniform_grid(args.mu_min, args.mu_max, args.points)?
        } else {
            Vec::new()
        },
        channels: vec![Channel::One, Channel::Two],
        checkpoints: args.checkpoints.clone(),
    };
    let summary = match simulate_ensemble(&cfg, &plan, &request) {
        Err(Error::ExceptionalCase) => return Err(Failure::Exceptional(cfg)),
        other => other?,
    };
    fs::create_dir_all(&args.out_dir)?;
    let summary_path = args.out_dir.join("summary.json");
    write_file(&summary_path, summary.to_json().as_bytes())?;
    let mut outputs = vec![summary_path.clone()];
    for curve in &summary.spectra {
        let path = args
            .out_dir
            .join(format!("spectrum_ch{}.csv", curve.channel.index()));
        write_file(&path, curve.to_csv().as_bytes())?;
        outputs.push(path);
    }
    for index in 0..args.dump_trajectories.min(plan.n_trajectories) {
        let record = simulate_trajectory(&cfg, &plan, index)?;
        let path = args.out_dir.join(format!("trajectory_{index}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        record.write_csv(&mut w)?;
        w.flush()?;
        outputs.push(path);
    }
    write_manifest(
        &manifest_path(&summary_path),
        command,
        Some(cfg),
        None,
        Some(args.seed),
        outputs,
    )
}

fn cmd_optimize(spec: SearchSpec, args: &OptimizeArgs, command: &Command) -> CmdResult<()> {
    let result = optimize(&spec)?;
    write_file(&args.out, result.to_json().as_bytes())?;
    emit(&format!(
        "best value {} at {:?} for {:?}",
        result.best_value, result.best_point, result.parameters
    ))?;
    write_manifest(
        &manifest_path(&args.out),
        command,
        None,
        Some(spec.clone()),
        Some(spec.seed),
        vec![args.out.clone()],
    )
}

fn redirect(path: &Path, dir: &Option<PathBuf>) -> PathBuf {
    match dir {
        Some(d) => d.join(path.file_name().unwrap_or_default()),
        None => path.to_path_buf(),
    }
}

fn cmd_replay(args: &ReplayArgs) -> CmdResult<()> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| Failure::Io(format!("{}: {e}", args.manifest.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.manifest.display())))?;
    let missing = |what: &str| Failure::Input(format!("manifest has no {what}"));
    let mut command = manifest.invocation;
    match &mut command {
        Command::SteadyState(a) => {
            a.out = a.out.as_ref().map(|p| redirect(p, &args.out_dir));
            let cfg = manifest.config.ok_or_else(|| missing("config"))?;
            cmd_steady_state(cfg, &a.clone(), &command)
        }
        Command::Spectrum(a) => {
            a.out = redirect(&a.out, &args.out_dir);
            a.json = a.json.as_ref().map(|p| redirect(p, &args.out_dir));
            let cfg = manifest.config.ok_or_else(|| missing("config"))?;
            cmd_spectrum(cfg, &a.clone(), &command)
        }
        Command::Simulate(a) => {
            if let Some(d) = &args.out_dir {
                a.out_dir = d.clone();
            }
            let cfg = manifest.config.ok_or_else(|| missing("config"))?;
            cmd_simulate(cfg, &a.clone(), &command)
        }
        Command::Optimize(a) => {
            a.out = redirect(&a.out, &args.out_dir);
            let spec = manifest.spec.ok_or_else(|| missing("search spec"))?;
            cmd_optimize(spec, &a.clone(), &command)
        }
        Command::Replay(_) => Err(Failure::Input("a manifest cannot record a replay".into())),
    }
}

fn run(command: &Command) -> CmdResult<()> {
    match command {
        Command::SteadyState(a) => cmd_steady_state(read_config(&a.config)?, a, command),
        Command::Spectrum(a) => cmd_spectrum(read_config(&a.config)?, a, command),
        Command::Simulate(a) => cmd_simulate(read_config(&a.config)?, a, command),
        Command::Optimize(a) => {
            let text = fs::read_to_string(&a.spec)
                .map_err(|e| Failure::Io(format!("{}: {e}", a.spec.display())))?;
            cmd_optimize(SearchSpec::from_json(&text)?, a, command)
        }
        Command::Replay(a) => cmd_replay(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("invalid input: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Exceptional(cfg)) => {
            eprintln!("exceptional configuration: the drift matrix is singular; conditions:");
            for (name, satisfied) in exceptional_conditions(&cfg).describe() {
                eprintln!("  [{}] {name}", if satisfied { "x" } else { " " });
            }
            ExitCode::from(3)
        }
        Err(Failure::Infeasible) => {
            eprintln!("no feasible point: every start was invalid or exceptional");
            ExitCode::from(4)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(5)
        }
    }
}
