//! `pmd`: run policy mirror descent experiments from a TOML config.
//!
//! Exit status: 0 when every enabled check passes, 1 when a check fails,
//! 2 for usage, configuration or runtime errors.

mod config;
mod experiment;
mod suites;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use pmd_core::generate::{generate, GeneratorSpec, MdpFile};
use rayon::prelude::*;
use serde::Serialize;

use config::ExperimentConfig;
use experiment::{run_experiment, write_outcome, Outcome};
use suites::{run_suite, Suite};

/// Environment variable naming the default output directory.
const OUTPUT_ENV: &str = "PMD_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "pmd-out";

#[derive(Parser)]
#[command(name = "pmd", version, about = "Policy mirror descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write CSV and JSON artifacts.
    Solve {
        config: PathBuf,
        /// Output directory; overrides the config and PMD_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an invariant suite and print one line per invariant.
    Check {
        #[arg(value_enum)]
        suite: Suite,
        /// Seeds to run; defaults to 0.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a seeded random MDP in the JSON file format.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 0.0)]
        cost_low: f64,
        #[arg(long, default_value_t = 1.0)]
        cost_high: f64,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a config once per value of one key, concurrently.
    Sweep {
        config: PathBuf,
        /// Dotted key to vary, e.g. `solver.eta`.
        #[arg(long)]
        key: String,
        /// Values in TOML syntax.
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure that maps to exit status 2.
struct Usage(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve { config, out } => solve(&config, out),
        Command::Check { suite, seeds, json } => check(suite, seeds, json),
        Command::Generate {
            seed,
            states,
            actions,
            gamma,
            sparsity,
            cost_low,
            cost_high,
            output,
        } => {
            let spec = GeneratorSpec::new(seed, states, actions, gamma)
                .with_sparsity(sparsity)
                .with_costs(cost_low, cost_high);
            generate_file(&spec, output.as_deref()).map(|_| true)
        }
        Command::Sweep {
            config,
            key,
            values,
            out,
        } => sweep(&config, &key, &values, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn output_dir(flag: Option<PathBuf>, configured: Option<&Path>) -> PathBuf {
    flag.or_else(|| configured.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

fn read_config(path: &Path) -> Result<(String, PathBuf)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((text, base))
}

fn run_config(text: &str, base: &Path, source: &Path) -> Result<(Outcome, Option<PathBuf>, String)> {
    let cfg = ExperimentConfig::parse(text).with_context(|| format!("{}", source.display()))?;
    let e = cfg.validate(text, base).with_context(|| format!("{}", source.display()))?;
    let outcome = run_experiment(&e)?;
    let prefix = e.output.prefix.clone().unwrap_or_else(|| "run".into());
    Ok((outcome, e.output.dir.clone(), prefix))
}

fn print_checks(o: &Outcome) {
    for c in &o.summary.checks {
        println!(
            "{} {} | worst slack {:.3e} (tolerance {:.1e}) | {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.worst_slack,
            c.tolerance,
            c.inequality
        );
    }
}

fn solve(path: &Path, out: Option<PathBuf>) -> Result<bool, Usage> {
    let (text, base) = read_config(path)?;
    let (outcome, dir, prefix) = run_config(&text, &base, path)?;
    let dir = output_dir(out, dir.as_deref());
    write_outcome(&outcome, &dir, &prefix)?;
    print_checks(&outcome);
    println!(
        "{}: final gap {:.6e}, {} samples, artifacts in {}",
        outcome.summary.variant,
        outcome.summary.final_gap,
        outcome.summary.total_samples,
        dir.display()
    );
    Ok(outcome.summary.pass)
}

#[derive(Serialize)]
struct SuiteReport {
    suite: String,
    seed: u64,
    lines: Vec<suites::Line>,
}

fn check(suite: Suite, seeds: Vec<u64>, json: Option<PathBuf>) -> Result<bool, Usage> {
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let name = format!("{suite:?}").to_lowercase();
    let mut reports = Vec::new();
    for seed in seeds {
        let lines = run_suite(suite, seed);
        for l in &lines {
            println!(
                "{} {name} seed {seed} | {} = {:.3e} ({} {:.1e})",
                if l.pass { "PASS" } else { "FAIL" },
                l.invariant,
                l.measured,
                if l.lower { ">=" } else { "<=" },
                l.threshold
            );
        }
        reports.push(SuiteReport {
            suite: name.clone(),
            seed,
            lines,
        });
    }
    if let Some(p) = json {
        std::fs::write(&p, serde_json::to_string_pretty(&reports)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(reports.iter().all(|r| r.lines.iter().all(|l| l.pass)))
}

fn generate_file(spec: &GeneratorSpec, output: Option<&Path>) -> Result<(), Usage> {
    if spec.n_states == 0 || spec.n_actions == 0 {
        return Err(Usage(anyhow!("need at least one state and one action")));
    }
    let mdp = generate(spec)?;
    let text = MdpFile::from_mdp(&mdp).to_json() + "\n";
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Sets `key` (dotted path) in a TOML document to `value` (TOML syntax, or a bare string).
fn patch(text: &str, key: &str, value: &str) -> Result<String> {
    let mut doc: toml::Table = toml::from_str(text)?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| anyhow!("empty key"))?;
    let mut table = &mut doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("{key}: '{p}' is not a table"))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(toml::to_string(&doc)?)
}

#[derive(Serialize)]
struct SweepPoint {
    value: String,
    directory: String,
    pass: bool,
    final_gap: f64,
    total_samples: u64,
}

fn sweep(path: &Path, key: &str, values: &[String], out: Option<PathBuf>) -> Result<bool, Usage> {
    let (text, base) = read_config(path)?;
    let texts: Vec<String> = values.iter().map(|v| patch(&text, key, v)).collect::<Result<_>>()?;
    let configured = ExperimentConfig::parse(&text)?.output.dir;
    let root = output_dir(out, configured.as_deref());
    let outcomes: Vec<(Outcome, String)> = texts
        .par_iter()
        .map(|t| run_config(t, &base, path).map(|(o, _, prefix)| (o, prefix)))
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    for ((o, prefix), v) in outcomes.iter().zip(values) {
        let sub = format!("{key}={v}");
        write_outcome(o, &root.join(&sub), prefix)?;
        println!("[{sub}]");
        print_checks(o);
        points.push(SweepPoint {
            value: v.clone(),
            directory: sub,
            pass: o.summary.pass,
            final_gap: o.summary.final_gap,
            total_samples: o.summary.total_samples,
        });
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("sweep_summary.json"), serde_json::to_string_pretty(&points)? + "\n")?;
    Ok(points.iter().all(|p| p.pass))
}
