//! Command-line experiment runner: analytic bound evaluation, Monte Carlo
//! simulation, parameter sweeps with CSV output, and the invariant
//! validation suites.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gkmimo::error::Error;
use gkmimo::sweep::{
    parse_config, run_sweep_with, validate, BackendChoice, MethodSelection, SweepSpec,
};

const EXIT_PARSE: u8 = 2;
const EXIT_EVAL: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

const THREADS_ENV: &str = "GKMIMO_THREADS";

#[derive(Parser)]
#[command(
    name = "gkmimo",
    version,
    about = "Ergodic-capacity bounds and link simulation for uplink massive MU-MIMO over generalized-K fading"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the analytic capacity bounds at a single grid point
    Bound(RunArgs),
    /// Run the Monte Carlo link simulation at a single grid point
    Simulate(RunArgs),
    /// Evaluate a parameter grid and emit one CSV row per cell and method
    Sweep(RunArgs),
    /// Run the invariant suites (bound dominance, backend agreement, ordering)
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration file (TOML); the default scenario applies when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured Monte Carlo trial count
    #[arg(long)]
    trials: Option<u64>,
    /// Write output to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (also honored via GKMIMO_THREADS)
    #[arg(long)]
    threads: Option<usize>,
    /// Analytic backend to evaluate
    #[arg(long, default_value = "both", value_parser = parse_backend)]
    backend: BackendChoice,
}

fn parse_backend(s: &str) -> Result<BackendChoice, String> {
    match s {
        "quadrature" => Ok(BackendChoice::Quadrature),
        "series" => Ok(BackendChoice::Series),
        "both" => Ok(BackendChoice::Both),
        other => Err(format!(
            "unknown backend '{other}' (expected quadrature, series, or both)"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::Bound(a) => (a, Kind::Bound),
        Command::Simulate(a) => (a, Kind::Simulate),
        Command::Sweep(a) => (a, Kind::Sweep),
        Command::Validate(a) => (a, Kind::Validate),
    };

    let spec = match load_spec(args) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("gkmimo: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };

    let threads = args.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let run = || dispatch(kind, args, &spec);
    let result = match threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build();
            match pool {
                Ok(pool) => pool.install(run),
                Err(e) => {
                    eprintln!("gkmimo: could not build thread pool: {e}");
                    return ExitCode::from(EXIT_EVAL);
                }
            }
        }
        _ => run(),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gkmimo: {e}");
            match e {
                Error::Parse(_) | Error::Config(_) => ExitCode::from(EXIT_PARSE),
                _ => ExitCode::from(EXIT_EVAL),
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Bound,
    Simulate,
    Sweep,
    Validate,
}

fn load_spec(args: &RunArgs) -> Result<SweepSpec, Error> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut spec = parse_config(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(out) = &args.out {
        spec.output = Some(out.display().to_string());
    }
    Ok(spec)
}

fn open_output(spec: &SweepSpec) -> Result<Box<dyn Write>, Error> {
    match &spec.output {
        Some(path) => Ok(Box::new(BufWriter::new(fs::File::create(path)?))),
        None => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}

fn dispatch(kind: Kind, args: &RunArgs, spec: &SweepSpec) -> Result<ExitCode, Error> {
    match kind {
        Kind::Bound | Kind::Simulate => {
            if !spec.is_single_point() {
                return Err(Error::Config(
                    "this subcommand evaluates a single grid point; the spec lists several \
                     (M, P_dB, m) combinations — use `sweep` instead"
                        .into(),
                ));
            }
        }
        _ => {}
    }
    match kind {
        Kind::Bound => {
            let mut spec = spec.clone();
            spec.trials = 0;
            emit(&spec, args.backend, MethodSelection::AnalyticOnly)
        }
        Kind::Simulate => {
            if spec.trials == 0 {
                return Err(Error::Config("simulate needs trials > 0".into()));
            }
            emit(spec, args.backend, MethodSelection::SimulatedOnly)
        }
        Kind::Sweep => emit(spec, args.backend, MethodSelection::All),
        Kind::Validate => {
            let mut out = open_output(spec)?;
            let report = validate(spec, &mut out)?;
            out.flush()?;
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_INVARIANT)
            })
        }
    }
}

fn emit(
    spec: &SweepSpec,
    backend: BackendChoice,
    methods: MethodSelection,
) -> Result<ExitCode, Error> {
    let mut out = open_output(spec)?;
    let summary = run_sweep_with(spec, backend, methods, &mut out)?;
    out.flush()?;
    Ok(if summary.failures == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "gkmimo: {} of {} rows failed to evaluate",
            summary.failures, summary.rows
        );
        ExitCode::from(EXIT_EVAL)
    })
}
