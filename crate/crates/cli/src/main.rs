use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use qbsde::experiments::{bundled_source, run_experiment, validate_config, ExperimentConfig, ExperimentReport, BUNDLED};

#[derive(Parser, Debug)]
#[command(name = "qbsde", version, about = "Run quadratic BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment from a config file or the bundled catalogue.
    Run {
        /// Path to a TOML config, or the name of a bundled experiment.
        config: String,
        /// Directory for report.json, checks.json and solution.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the full report JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Parse and schema-check a config without running it.
    Validate { config: String },
    /// List the bundled experiments.
    List,
}

fn load(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else if let Some(src) = bundled_source(arg) {
        src.to_string()
    } else {
        bail!("`{arg}` is neither a config file nor a bundled experiment (try `qbsde list`)");
    };
    Ok(validate_config(&text)?)
}

fn summary(report: &ExperimentReport) -> String {
    let mut s = format!(
        "{}  Y0 = {:.6} ± {:.6}  ({} paths, {} steps, {})\n",
        report.name, report.y0.mean, report.y0.se, report.n_paths, report.steps, report.method
    );
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        let vacuous = if c.vacuous { " (vacuous)" } else { "" };
        s.push_str(&format!(
            "  {verdict}  {:<32} margin {:>12.4e}  tol {:>12.4e}{vacuous}\n",
            c.name, c.margin, c.tol
        ));
    }
    s.push_str(&format!(
        "{} in {:.2}s\n",
        if report.pass { "all checks passed" } else { "some checks failed" },
        report.wall_clock_seconds
    ));
    s
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::List => {
            for (name, src) in BUNDLED {
                let cfg = validate_config(src)?;
                println!("{name:<20} {}", cfg.description);
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}: ok ({} checks)", cfg.name, cfg.checks.len());
            Ok(true)
        }
        Command::Run {
            config,
            out,
            paths,
            seed,
            json,
        } => {
            let cfg = load(&config)?.with_overrides(paths, seed);
            let out = out.or_else(|| cfg.output.dir.as_ref().map(PathBuf::from));
            let report = run_experiment(&cfg, out.as_deref())?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", summary(&report));
            }
            if let Some(dir) = &out {
                eprintln!("wrote {}", dir.display());
            }
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
