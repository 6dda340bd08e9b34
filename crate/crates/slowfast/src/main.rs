use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slowfast::config::{header_block, ConfigError, ExperimentConfig};
use slowfast::io;
use slowfast::parallel::{self, WORKERS_ENV};
use slowfast::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "slowfast", version = slowfast::VERSION, about = "Importance sampling for slow-fast diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config; a CSV written by this tool also works (its header is read).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sampling.n=2000`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file (default: `output.path`, else standard output).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(short, long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate I with the configured sampling mode.
    Run(Common),
    /// Repeat `run` over a list of ε values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly decreasing (default: `sweep.epsilons`).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Sample the control û⁰(s, x) on a lattice.
    Surface(Common),
    /// Strong error, duality and zero-variance checks.
    Validate(Common),
    /// Solve for φ₀ only and write the value-grid files `<output>.{meta,phi,dphi}.csv`.
    Solve(Common),
}

enum Failure {
    Config(ConfigError),
    Pipeline(PipelineError),
    Io(io::IoError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(e) if e.is_parse() => 2,
            Failure::Config(_) => 3,
            Failure::Pipeline(e) => e.exit_code() as u8,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Pipeline(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "{e}"),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        cfg.set(o).map_err(Failure::Config)?;
    }
    if let Some(out) = &common.output {
        cfg.output.path = out.display().to_string();
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), Failure> {
    if cfg.output.path.is_empty() {
        print!("{text}");
        Ok(())
    } else {
        io::write(Path::new(&cfg.output.path), text).map_err(Failure::Io)
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let pool = parallel::pool(c.workers);
            let reports = pipeline::run(&cfg, &pool).map_err(Failure::Pipeline)?;
            emit(&cfg, &io::reports_csv(&header_block(&cfg, "run"), &reports))
        }
        Command::Sweep { common, eps } => {
            let mut cfg = load(&common)?;
            if let Some(eps) = eps {
                cfg.sweep.epsilons = eps;
                cfg.validate()
                    .map_err(|e| Failure::Pipeline(PipelineError::Validation(e.to_string())))?;
            }
            let pool = parallel::pool(common.workers);
            let reports =
                pipeline::sweep(&cfg, &cfg.sweep.epsilons, &pool).map_err(Failure::Pipeline)?;
            emit(
                &cfg,
                &io::reports_csv(&header_block(&cfg, "sweep"), &reports),
            )
        }
        Command::Surface(c) => {
            let cfg = load(&c)?;
            let pool = parallel::pool(c.workers);
            let points = pipeline::surface(&cfg, &pool).map_err(Failure::Pipeline)?;
            emit(
                &cfg,
                &io::surface_csv(&header_block(&cfg, "surface"), &points),
            )
        }
        Command::Validate(c) => {
            let cfg = load(&c)?;
            let pool = parallel::pool(c.workers);
            let rows = pipeline::validate(&cfg, &pool).map_err(Failure::Pipeline)?;
            emit(
                &cfg,
                &io::convergence_csv(&header_block(&cfg, "validate"), &rows),
            )
        }
        Command::Solve(c) => {
            let cfg = load(&c)?;
            let pool = parallel::pool(c.workers);
            let solved = pipeline::solve(&cfg, &pool).map_err(Failure::Pipeline)?;
            let stem = if cfg.output.path.is_empty() {
                "phi0".to_owned()
            } else {
                cfg.output.path.clone()
            };
            let stem = stem.strip_suffix(".csv").unwrap_or(&stem).to_owned();
            let header = header_block(&cfg, "solve");
            let paths = io::write_value_grid(Path::new(&stem), &header, &solved.grid)
                .map_err(Failure::Io)?;
            let avg_path = PathBuf::from(format!("{stem}.averaged.csv"));
            io::write(&avg_path, &io::averaged_csv(&header, &solved.averaged))
                .map_err(Failure::Io)?;
            for p in paths.iter().chain([&avg_path]) {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
