use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use echoguide::acceptance::run_acceptance;
use echoguide::config::{load_config, ConfigError, Sweep};
use echoguide::runner::{
    run_absorption, run_chip, run_echo2p, run_echo3p, run_modes, write_artifacts, CommandOutput, Overrides, RunError,
};

const EXIT_PHYSICS: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "echoguide", version, about = "Waveguide modes, ion absorption and photon-echo simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, default_value = "paper.cfg")]
    config: PathBuf,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every random stream; overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Two-pulse delay sweep in microseconds, `start:stop:count`, linear.
    #[arg(long = "tau-us", global = true, value_parser = Sweep::parse)]
    tau_us: Option<Sweep>,

    /// Storage delay sweep in seconds, `start:stop:count`, log-spaced.
    #[arg(long = "T-s", global = true, value_parser = Sweep::parse)]
    t_s: Option<Sweep>,

    /// Multiplicative noise on sweep peaks (standard deviation as a fraction).
    #[arg(long, global = true)]
    noise: Option<f64>,

    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Guided TE modes of the layer stack.
    Modes,
    /// Waveguide absorption spectrum of the ion line.
    Absorption,
    /// Two-pulse echo trace, delay sweep and T2 fit.
    Echo2p,
    /// Stimulated echo trace, storage sweep and spin-lifetime fit.
    Echo3p,
    /// Stark-addressed multi-device chip.
    Chip,
    /// Full acceptance suite with a pass/fail table.
    Verify,
}

enum Failure {
    Config(String),
    Physics(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) => Failure::Config(e.to_string()),
            RunError::Physics(_) | RunError::Io(_) => Failure::Physics(e.to_string()),
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    if let Some(n) = cli.noise {
        if !(n.is_finite() && n >= 0.0) {
            return Err(Failure::Config(format!("--noise must be a finite fraction >= 0, got {n}")));
        }
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Physics(format!("cannot start worker pool: {e}")))?;
    }

    let loaded = load_config(&cli.config)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut cfg = loaded.config;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    let overrides = Overrides { tau_sweep_us: cli.tau_us, storage_sweep_s: cli.t_s, noise_fraction: cli.noise };

    let (output, passed) = match cli.command {
        Command::Modes => (run_modes(&cfg)?, true),
        Command::Absorption => (run_absorption(&cfg)?, true),
        Command::Echo2p => (run_echo2p(&cfg, &overrides)?, true),
        Command::Echo3p => (run_echo3p(&cfg, &overrides)?, true),
        Command::Chip => (run_chip(&cfg)?, true),
        Command::Verify => {
            let report = run_acceptance(&cfg);
            print!("{}", report.table());
            let passed = report.all_passed();
            let mut out = report.artifacts;
            out.summary.push(format!(
                "{}/{} criteria passed",
                report.results.iter().filter(|r| r.passed).count(),
                report.results.len()
            ));
            (out, passed)
        }
    };
    finish(&cfg.output.dir, &output)?;
    Ok(passed)
}

fn finish(dir: &std::path::Path, output: &CommandOutput) -> Result<(), Failure> {
    write_artifacts(dir, output)?;
    for line in &output.summary {
        println!("{line}");
    }
    for a in &output.artifacts {
        println!("wrote {}", dir.join(&a.file_name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PHYSICS),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Physics(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_PHYSICS)
        }
    }
}
