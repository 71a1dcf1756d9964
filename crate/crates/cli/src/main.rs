//! `magpen`: run experiments, fit field scans, serve live sessions and run
//! the acceptance checks.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use magpen_core::config::{json_schema, ExperimentConfig};
use magpen_core::em::fit_dipole;
use magpen_core::experiment::{self, Selection};
use magpen_core::scan::{read_scan, FitReport};
use magpen_core::sim::Strategy;
use magpen_service::server::{serve, ServerConfig};
use magpen_service::session::SessionSettings;

const BUNDLED_SCAN: &str = include_str!("../data/synthetic_scan.csv");

/// Success.
const EXIT_OK: u8 = 0;
/// A scenario, fit or acceptance check failed.
const EXIT_FAILED: u8 = 1;
/// Bad arguments, unreadable or invalid configuration.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "magpen", version, about = "Electromagnetic pen guidance engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Standard,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write traces, metrics and plot series.
    ///
    /// Without `--suite` or `--scenario` everything in the configuration runs.
    Run {
        /// Configuration file (JSON, comments allowed). Defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run the seeded standard suite.
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Named scenario, `curvature_sweep` or `dispersion`. Repeatable.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Seed to run instead of the configured ones. Repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Keep only scenarios of this strategy.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        /// Root of the run directories. Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit dipole field constants to a scan CSV (`distance_m,bz_t`).
    Fit {
        /// Scan file. The bundled synthetic scan is used without it.
        scan: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve `/session` over WebSocket and the UI bundle at `/`.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Listen on all interfaces instead of loopback.
        #[arg(long)]
        public: bool,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Persist each finished session under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks and print one verdict per line.
    Check {
        /// Run only these checks. Repeatable.
        #[arg(long = "only")]
        only: Vec<String>,
        /// List the checks without running them.
        #[arg(long)]
        list: bool,
    },
    /// Print the JSON schema of the configuration file.
    Schema,
    /// Print the default configuration.
    Defaults,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, String> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("MAGPEN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("MAGPEN_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => Ok(None),
    }
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn run_command(
    config: Option<PathBuf>,
    suite: Option<Suite>,
    scenarios: Vec<String>,
    seeds: Vec<u64>,
    strategy: Option<Strategy>,
    out: Option<PathBuf>,
) -> ExitCode {
    let config = match load_config(config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => return usage(e),
    };
    let selection = Selection {
        suite: suite.is_some(),
        scenarios,
        seeds: (!seeds.is_empty()).then_some(seeds),
        strategy,
    };
    let report = match experiment::run(&config, &selection, out.as_deref(), threads) {
        Ok(r) => r,
        Err(e @ (experiment::ExperimentError::Config(_) | experiment::ExperimentError::UnknownScenario(_))) => {
            return usage(e)
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    println!("{}", report.dir.display());
    eprintln!("{} completed, {} failed", report.completed.len(), report.failed.len());
    for (name, err) in &report.failed {
        eprintln!("failed {name}: {err}");
    }
    ExitCode::from(if report.success() { EXIT_OK } else { EXIT_FAILED })
}

fn fit_command(scan: Option<PathBuf>, out: Option<PathBuf>) -> ExitCode {
    let (label, parsed) = match &scan {
        Some(p) => match std::fs::File::open(p) {
            Ok(f) => (p.display().to_string(), read_scan(f)),
            Err(e) => return usage(format!("{}: {e}", p.display())),
        },
        None => ("bundled synthetic scan".to_string(), read_scan(BUNDLED_SCAN.as_bytes())),
    };
    let samples = match parsed {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {label}: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    let fit = match fit_dipole(&samples) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {label}: fit failed: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    let report = FitReport::new(&fit, samples.len());
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    eprintln!(
        "C1 = {:.4e} T m^3, C2 = {:.4e} m -> h = {:.2} cm, m_m = {:.3} A m^2",
        report.c1, report.c2, report.h_cm, report.m_m
    );
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Err(e) = std::fs::create_dir_all(parent) {
                eprintln!("error: {}: {e}", parent.display());
                return ExitCode::from(EXIT_FAILED);
            }
        }
        if let Err(e) = std::fs::write(&path, json + "\n") {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILED);
        }
    }
    ExitCode::from(EXIT_OK)
}

fn serve_command(
    config: Option<PathBuf>,
    port: u16,
    public: bool,
    static_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> ExitCode {
    let config = match load_config(config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let ctrl = match config.validate().and_then(|_| config.controller()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let server = ServerConfig {
        settings: SessionSettings {
            ctrl,
            v_ref: config.suite.v_ref,
            ..SessionSettings::default()
        },
        static_dir,
        trace_dir: out,
    };
    let ip = if public {
        IpAddr::V4(Ipv4Addr::UNSPECIFIED)
    } else {
        IpAddr::V4(Ipv4Addr::LOCALHOST)
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    let result = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(ip, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        serve(listener, server).await
    });
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

fn check_command(only: Vec<String>, list: bool) -> ExitCode {
    let all = magpen_acceptance::criteria();
    for id in &only {
        if magpen_acceptance::find(id).is_none() {
            let known: Vec<&str> = all.iter().map(|c| c.id).collect();
            return usage(format!("unknown check `{id}` (known: {})", known.join(", ")));
        }
    }
    let selected: Vec<_> = all
        .iter()
        .filter(|c| only.is_empty() || only.iter().any(|id| id == c.id))
        .collect();
    if list {
        for c in selected {
            println!("{:18} {} (budget {} s)", c.id, c.title, c.budget.as_secs());
        }
        return ExitCode::from(EXIT_OK);
    }
    let mut failed = 0;
    for c in &selected {
        let v = c.run();
        println!("{}", v.line());
        if !v.passed {
            failed += 1;
        }
    }
    println!("{} passed, {failed} failed", selected.len() - failed);
    ExitCode::from(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            suite,
            scenarios,
            seeds,
            strategy,
            out,
        } => run_command(config, suite, scenarios, seeds, strategy, out),
        Command::Fit { scan, out } => fit_command(scan, out),
        Command::Serve {
            config,
            port,
            public,
            static_dir,
            out,
        } => serve_command(config, port, public, static_dir, out),
        Command::Check { only, list } => check_command(only, list),
        Command::Schema => {
            print!("{}", json_schema());
            ExitCode::from(EXIT_OK)
        }
        Command::Defaults => {
            println!("{}", ExperimentConfig::default().to_json());
            ExitCode::from(EXIT_OK)
        }
    }
}
