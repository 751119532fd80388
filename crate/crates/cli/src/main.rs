//! `dos`: run density-of-states experiments from JSON configs or presets.
//!
//! Exit status: 0 when every enabled check passes, 1 on a tolerance
//! failure, 2 on usage errors and invalid configs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use doslab_core::dos::CountEstimator;
use doslab_core::experiment::{Bins, Output};
use doslab_core::heat::DiagonalMode;
use doslab_core::{preset, run, Boundary, ExperimentConfig, GridParams, Method, PotentialSpec, PRESETS};

#[derive(Parser)]
#[command(name = "dos", version, about = "Density of states of lattice Schrödinger operators")]
struct Cli {
    /// Directory for report.json and the CSV curves.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every stochastic path (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "DOS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run { config: PathBuf },

    /// Run a named preset, or print its config.
    Preset {
        name: String,
        #[arg(long)]
        emit_config: bool,
    },

    /// List preset names.
    Presets,

    /// Compare the three DOS routes on one grid and potential.
    Compare {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 16.0)]
        half_width: f64,
        #[arg(long, default_value_t = 0.25)]
        spacing: f64,
        /// PotentialSpec as inline JSON, or `@path` to a JSON file.
        #[arg(long, default_value = r#"{"kind":"zero"}"#)]
        potential: String,
        /// Comma-separated times.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        s: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Neglected off-diagonal kernel mass of the probing diagonal.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Use the raw Dirichlet count instead of the bracketed one.
        #[arg(long)]
        dirichlet: bool,
    },
}

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Errors that map to exit status 2.
struct Invalid(anyhow::Error);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<bool, Invalid> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Invalid(anyhow!("thread pool: {e}")))?;
    }
    let cfg = match cli.command {
        Command::Presets => {
            for name in PRESETS {
                say!("{name}");
            }
            return Ok(true);
        }
        Command::Run { config } => load_config(&config).map_err(Invalid)?,
        Command::Preset { name, emit_config } => {
            let cfg = preset(&name).map_err(|e| Invalid(e.into()))?;
            if emit_config {
                let cfg = match cli.seed {
                    Some(seed) => cfg.with_seed(seed),
                    None => cfg,
                };
                say!("{}", cfg.to_json().map_err(|e| Invalid(e.into()))?);
                return Ok(true);
            }
            cfg
        }
        Command::Compare {
            dim,
            half_width,
            spacing,
            potential,
            s,
            bin_width,
            tolerance,
            epsilon,
            dirichlet,
        } => {
            let potential = parse_potential(&potential).map_err(Invalid)?;
            ExperimentConfig {
                name: "compare".into(),
                method: Method::Compare,
                grid: GridParams {
                    dim,
                    half_width,
                    spacing,
                    boundary: Boundary::Dirichlet,
                },
                potential,
                s_grid: s,
                r_grid: None,
                radii: None,
                bins: Some(Bins {
                    width: Some(bin_width),
                    edges: None,
                }),
                check_points: Vec::new(),
                interval: None,
                estimator: if dirichlet {
                    CountEstimator::Dirichlet
                } else {
                    CountEstimator::Bracketed
                },
                diagonal: Some(DiagonalMode::Probing { epsilon }),
                heat_tol: doslab_core::heat::DEFAULT_TOL,
                ball_volume: Default::default(),
                dense_cap: None,
                tolerance,
                seed: None,
                stability: None,
                connes: None,
                cwikel: None,
                abelian: None,
                output: Output::default(),
            }
        }
    };
    let cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate().map_err(|e| Invalid(e.into()))?;
    let report = run(&cfg).map_err(|e| Invalid(e.into()))?;
    let dir = cli
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("dos-out").join(&cfg.name));
    let written = report
        .write_to(&dir)
        .with_context(|| format!("writing results to {}", dir.display()))
        .map_err(Invalid)?;
    for c in &report.comparisons {
        say!(
            "{} {}: value {:.6e}, deviation {:.4e}, tolerance {:.3e}",
            if c.pass { "ok  " } else { "FAIL" },
            c.label,
            c.value,
            c.deviation,
            c.tolerance
        );
    }
    say!(
        "{}: {} ({} files in {})",
        cfg.name,
        if report.pass { "pass" } else { "tolerance failure" },
        written.len(),
        dir.display()
    );
    Ok(report.pass)
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<ExperimentConfig>(&text) {
        Ok(cfg) => {
            cfg.validate()
                .with_context(|| format!("invalid config {}", path.display()))?;
            Ok(cfg)
        }
        Err(e) => Err(anyhow!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        )),
    }
}

fn parse_potential(arg: &str) -> anyhow::Result<PotentialSpec> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).context("parsing --potential")
}
