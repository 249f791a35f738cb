//! `riverdp`: run, sweep and verify the river-management solvers from a
//! TOML configuration, and dump sparse grids.

mod config;
mod output;
mod solve;
mod sweep;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use riverdp_core::sparse_grid::{Hierarchy, SparseGrid};
use serde_json::json;

use crate::config::Loaded;
use crate::output::write_json;
use crate::solve::Report;

/// Outcome of a command, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    NotConverged,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NotConverged => "not_converged",
            Status::Failed => "error",
        }
    }

    fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
            Status::NotConverged => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "riverdp", version, about = "Dynamic-programming solvers for river management")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration entry, e.g. `--set fishery.w3=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (replaces `output.dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    /// Random seed (replaces `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write its value and policy.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Solve once per value of a scalar parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted parameter key, e.g. `algae.weight`.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
    },
    /// Monte Carlo check of a solved value/policy pair.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Directory of an earlier `run`; solved in-line when absent.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Write the points of a sparse grid to CSV.
    GridDump {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 11)]
        level: u32,
        #[arg(long, value_enum, default_value_t = HierarchyArg::ClenshawCurtis)]
        hierarchy: HierarchyArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HierarchyArg {
    ClenshawCurtis,
    BoundaryFree,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut items = self.overrides.clone();
        if let Some(seed) = self.seed {
            items.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.out_dir {
            // TOML basic string; escape the characters it reserves.
            let escaped = dir.display().to_string().replace('\\', "\\\\").replace('"', "\\\"");
            items.push(format!("output.dir=\"{escaped}\""));
        }
        items
    }

    fn read_table(&self) -> Result<toml::Table> {
        let text = fs::read_to_string(&self.config).with_context(|| format!("reading config {}", self.config.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", self.config.display()))
    }

    fn base_dir(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn load(&self) -> Result<Loaded> {
        config::load(&self.config, &self.overrides())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            anyhow::ensure!(n >= 1, "--workers must be >= 1");
            b = b.num_threads(n);
        }
        Ok(b.build()?)
    }
}

/// Writes every table and `summary.json` into `dir`.
pub fn write_report(dir: &Path, loaded: &Loaded, report: &Report) -> Result<()> {
    for t in &report.tables {
        t.write(dir)?;
    }
    let summary = json!({
        "problem": loaded.config.problem.name(),
        "status": if report.converged { "converged" } else { "not_converged" },
        "converged": report.converged,
        "seed": loaded.config.seed,
        "files": report.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
        "result": report.summary,
    });
    write_json(dir, "summary.json", &summary)
}

fn run(common: &Common) -> Result<Status> {
    let loaded = common.load()?;
    let (report, _) = common.pool()?.install(|| solve::run(&loaded))?;
    let dir = &loaded.config.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_report(dir, &loaded, &report)?;
    if report.converged {
        println!("{}: converged; outputs in {}", loaded.config.problem.name(), dir.display());
        Ok(Status::Ok)
    } else {
        eprintln!(
            "warning: {} did not converge; partial outputs in {} are flagged in summary.json",
            loaded.config.problem.name(),
            dir.display()
        );
        Ok(Status::NotConverged)
    }
}

fn dispatch(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Run { common } => run(&common),
        Command::Sweep { common, key, values } => {
            let table = common.read_table()?;
            let loaded = common.load()?;
            let out_dir = loaded.config.output.dir.clone();
            let status = common.pool()?.install(|| {
                sweep::sweep(&table, &common.overrides(), &common.base_dir(), &key, &values, &out_dir)
            })?;
            println!("sweep over {key}: {}; outputs in {}", status.name(), out_dir.display());
            Ok(status)
        }
        Command::Verify { common, solution } => {
            let loaded = common.load()?;
            let result = common.pool()?.install(|| verify::verify(&loaded, solution.as_deref()))?;
            let value = serde_json::to_value(&result)?;
            let dir = &loaded.config.output.dir;
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_json(dir, "verify.json", &value)?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            if !result.pass {
                let worst = result.checks.iter().map(|c| c.gap.abs()).fold(0.0, f64::max);
                eprintln!("verification failed: largest |estimate - value| = {worst}");
            }
            Ok(if result.pass { Status::Ok } else { Status::NotConverged })
        }
        Command::GridDump { dim, level, hierarchy, out_dir } => {
            let h = match hierarchy {
                HierarchyArg::ClenshawCurtis => Hierarchy::ClenshawCurtis,
                HierarchyArg::BoundaryFree => Hierarchy::BoundaryFree,
            };
            let grid = SparseGrid::build_with(dim, level, h)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let path = out_dir.join("sparse_grid.csv");
            fs::write(&path, grid.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            println!("{} points, minimum spacing {}; wrote {}", grid.len(), grid.min_spacing(), path.display());
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors share the exit code of configuration errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Status::Failed.code() } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Failed.code())
        }
    }
}
