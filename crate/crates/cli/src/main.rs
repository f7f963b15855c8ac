//! `quantgf` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use quantgf::experiments::{
    self, DatasetBundle, DatasetConfig, ExperimentConfig, Scenario, ScenarioOutput, Sweep,
    SweepAxis,
};
use quantgf::graphs;

#[derive(Parser)]
#[command(
    name = "quantgf",
    version,
    about = "Quantized distributed graph filtering experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every experiment subcommand.
#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; defaults to the config's output_dir or out/<scenario>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario named in the config.
    #[arg(long)]
    scenario: Option<Scenario>,
}

#[derive(Subcommand)]
enum Command {
    /// Design filter coefficients for a lowpass or denoise config.
    Design(Common),
    /// Run a scenario and write its tables, summary.json and manifest.json.
    Run(Common),
    /// Audit analytical bounds against Monte Carlo; exits nonzero on any violation.
    Bounds(Common),
    /// Run a scenario over an explicit sweep grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep axis: K, p, chi or missing-fraction.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Check a coordinates/signals/mask CSV bundle and its kNN graph.
    Validate {
        /// Config with a [dataset] table; alternative to the file flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        coords: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        signals: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Neighbours per node.
        #[arg(long, default_value_t = experiments::DEFAULT_KNN)]
        k: usize,
    },
}

/// Audit run used by `bounds` without a config.
const DEFAULT_AUDIT: &str = "scenario = 'bounds-audit'\ntrials = 10000\n\
    [graph]\ntype = 'random-geometric'\nnodes = 20\nradius = 0.45\n\
    [sweep]\naxis = 'K'\nvalues = [4]\n";

fn load(common: &Common, fallback: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(path), _) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        (None, Some(text)) => ExperimentConfig::from_toml_str(text)?,
        (None, None) => bail!("--config is required"),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(s) = common.scenario {
        cfg.scenario = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| cfg.default_output_dir())
}

fn report(out: &ScenarioOutput, dir: &Path) {
    let s = &out.summary;
    println!(
        "{}: N = {}, {} trials, {} files written to {}",
        s.scenario,
        s.nodes,
        s.trials,
        out.files.len() + 2,
        dir.display()
    );
    for (name, rows) in &s.tables {
        let cells: Vec<String> = rows
            .iter()
            .map(|r| format!("{}={:.3e}", r.axis, r.nse_mean))
            .collect();
        println!("  {name}: {}", cells.join(" "));
    }
    for c in &s.checks {
        let tag = match (c.passed, c.gating) {
            (true, _) => "ok",
            (false, true) => "VIOLATION",
            (false, false) => "note",
        };
        println!("  [{tag}] {}: {}", c.name, c.detail);
    }
    if s.saturation_events > 0 {
        println!("  {} quantizer saturation events", s.saturation_events);
    }
}

fn write(out: &ScenarioOutput, cfg: &ExperimentConfig, common: &Common) -> Result<()> {
    let dir = out_dir(common, cfg);
    experiments::write_outputs(out, cfg, &dir)
        .with_context(|| format!("writing outputs to {}", dir.display()))?;
    report(out, &dir);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Design(common) => {
            let cfg = load(&common, None)?;
            let out = experiments::run_design(&cfg)?;
            write(&out, &cfg, &common)?;
        }
        Command::Run(common) => {
            let cfg = load(&common, None)?;
            write(&experiments::execute(&cfg)?, &cfg, &common)?;
        }
        Command::Bounds(common) => {
            let mut common = common;
            common.scenario.get_or_insert(Scenario::BoundsAudit);
            let cfg = load(&common, Some(DEFAULT_AUDIT))?;
            if cfg.scenario != Scenario::BoundsAudit {
                bail!(
                    "bounds runs the bounds-audit scenario, not {}",
                    cfg.scenario
                );
            }
            let out = experiments::execute(&cfg)?;
            write(&out, &cfg, &common)?;
            if out.summary.violations > 0 {
                eprintln!("{} bound violations", out.summary.violations);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let mut cfg = load(&common, None)?;
            let axis = match axis {
                Some(a) => a.parse::<SweepAxis>().map_err(|e| anyhow::anyhow!("{e}"))?,
                None => cfg.sweep.axis,
            };
            let values = values.unwrap_or_else(|| cfg.sweep.values.clone());
            cfg.sweep = Sweep { axis, values };
            cfg.validate()?;
            write(&experiments::execute(&cfg)?, &cfg, &common)?;
        }
        Command::Dataset {
            command:
                DatasetCommand::Validate {
                    config,
                    coords,
                    signals,
                    mask,
                    k,
                },
        } => {
            let d = match config {
                Some(path) => ExperimentConfig::load(&path)?
                    .dataset
                    .context("config has no [dataset] table")?,
                None => DatasetConfig {
                    coords: coords.expect("required by clap"),
                    signals: signals.expect("required by clap"),
                    mask,
                    k,
                },
            };
            let b = DatasetBundle::load(&d)?;
            let g = graphs::knn_graph(&b.coords, d.k)?;
            let observed: usize = b.mask.iter().flatten().filter(|m| **m).count();
            let total = b.node_count() * b.snapshots();
            println!(
                "dataset ok: {} nodes, {} snapshots, {:.1}% observed, kNN graph (k = {}) with {} edges",
                b.node_count(),
                b.snapshots(),
                100.0 * observed as f64 / total as f64,
                d.k,
                g.edge_count()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
