use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use centralab::scenario::config::SampleCounts;
use centralab::scenario::report::write_points;
use centralab::scenario::{builtin, builtins, run_scenario, ScenarioConfig};

const EXIT_SCHEMA: u8 = 3;
const EXIT_PIPELINE: u8 = 4;
/// BSD `EX_USAGE`; clap's own code 2 would read as an audit failure.
const EXIT_USAGE: u8 = 64;
const OUT_DIR_ENV: &str = "CENTRALAB_OUT_DIR";

/// Recover and audit centralizers of separating flows and actions.
#[derive(Parser, Debug)]
#[command(name = "centralab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario from a JSON config or the built-in catalog.
    Run(RunArgs),
    /// List the built-in scenarios.
    List {
        /// Emit the catalog, including full configs, as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Path to a scenario config.
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    config: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long)]
    builtin: Option<String>,
    /// Output directory [default: $CENTRALAB_OUT_DIR, then "."].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Set every sample count to this value.
    #[arg(long)]
    samples: Option<usize>,
    /// Set both the separation and the quasi-triviality horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Omit wall time so reruns are byte-identical.
    #[arg(long)]
    normalize_report: bool,
}

#[derive(Serialize)]
struct CatalogEntry<'a> {
    name: &'a str,
    description: &'a str,
    config: &'a ScenarioConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match cli.command {
        Command::List { json } => list(json),
        Command::Run(args) => run(args),
    }
}

fn list(json: bool) -> ExitCode {
    let catalog = builtins();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let written = if json {
        let entries: Vec<CatalogEntry<'_>> = catalog
            .iter()
            .map(|c| CatalogEntry {
                name: &c.name,
                description: c.description.as_deref().unwrap_or(""),
                config: c,
            })
            .collect();
        serde_json::to_writer_pretty(&mut out, &entries)
            .map_err(io::Error::from)
            .and_then(|()| writeln!(out))
    } else {
        let width = catalog.iter().map(|c| c.name.len()).max().unwrap_or(0);
        catalog.iter().try_for_each(|c| {
            writeln!(
                out,
                "{:width$}  {}",
                c.name,
                c.description.as_deref().unwrap_or("")
            )
        })
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}

fn load(args: &RunArgs) -> Result<ScenarioConfig, String> {
    let mut config = match (&args.config, &args.builtin) {
        (_, Some(name)) => builtin(name).ok_or_else(|| {
            let names: Vec<String> = builtins().into_iter().map(|c| c.name).collect();
            format!(
                "unknown built-in scenario {name:?}; available: {}",
                names.join(", ")
            )
        })?,
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ScenarioConfig::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, None) => unreachable!("clap requires a config or --builtin"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.samples {
        config.samples = SampleCounts::uniform(n);
    }
    if let Some(h) = args.horizon {
        config.horizons.separation = h;
        config.horizons.quasitrivial = h;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn out_dir(args: &RunArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_outputs(
    dir: &Path,
    name: &str,
    json: &str,
    outcome: &centralab::scenario::RunOutcome,
) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let report_path = dir.join(format!("{name}.report.json"));
    let points_path = dir.join(format!("{name}.points.csv"));
    fs::write(&report_path, json)?;
    let file = BufWriter::new(fs::File::create(&points_path)?);
    write_points(file, &outcome.value_names, &outcome.points).map_err(io::Error::other)?;
    Ok((report_path, points_path))
}

fn run(args: RunArgs) -> ExitCode {
    let config = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    let mut outcome = run_scenario(&config);
    if args.normalize_report {
        outcome.report.normalize();
    }
    let json = outcome.report.to_json();
    let (report_path, points_path) =
        match write_outputs(&out_dir(&args), &config.name, &json, &outcome) {
            Ok(paths) => paths,
            Err(e) => {
                eprintln!("error: writing outputs: {e}");
                return ExitCode::from(EXIT_PIPELINE);
            }
        };
    let report = &outcome.report;
    let passed = report.audits.iter().filter(|a| a.passed).count();
    println!(
        "{}: {:?}, {passed}/{} audits passed, recovery {}",
        report.scenario,
        report.status,
        report.audits.len(),
        report.recovery
    );
    for a in report.audits.iter().filter(|a| !a.passed) {
        println!("  FAIL {}: {:e} vs {:e}", a.name, a.value, a.threshold);
    }
    for e in &report.errors {
        println!("  ERROR [{}] {}", e.stage, e.message);
    }
    println!("  report: {}", report_path.display());
    println!("  points: {}", points_path.display());
    ExitCode::from(outcome.exit_code())
}
