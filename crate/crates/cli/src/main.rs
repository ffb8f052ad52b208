//! `akrel` command-line front end.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use akrel::driver::{self, RunConfig, StopCause};
use akrel::enrich::FantasyKind;
use akrel::learning::StrategyKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "akrel", version, about = "Adaptive Kriging reliability analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One adaptive run; writes history.csv, timing.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Replicated runs of several strategies; writes comparison.csv and comparison.json.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies; the configured one when absent.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        #[arg(long, default_value_t = 1)]
        replications: usize,
    },
    /// One run, then the final surrogate on a regular grid; writes grid.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Points per axis.
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        /// `lo,hi` for both axes or `lo1,hi1,lo2,hi2`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-5,5")]
        bounds: Vec<f64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// Fantasy policy for batch enrichment: mmse, mape or mmae.
    #[arg(long)]
    policy: Option<FantasyKind>,
    #[arg(long)]
    n_para: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(p) = self.policy {
            cfg.policy.kind = p;
        }
        if let Some(n) = self.n_para {
            cfg.n_para = n;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iterations = Some(m);
        }
        cfg.validate().map_err(|e| e.to_string())?;
        std::fs::create_dir_all(&self.out).map_err(|e| format!("{}: {e}", self.out.display()))?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let outcome = driver::run(&cfg).map_err(|e| e.to_string())?;
            output::write_history(&common.out.join("history.csv"), &outcome.report)?;
            output::write_timing(&common.out.join("timing.csv"), &outcome.report)?;
            output::write_summary(&common.out.join("summary.json"), &cfg, &outcome.report)?;
            let rep = &outcome.report;
            eprintln!(
                "{}: P_f = {:.6e}, N_call = {}, iterations = {}, stop = {:?}",
                rep.strategy, rep.final_pf, rep.n_call, rep.iterations, rep.stop_cause
            );
            if rep.pool_warning {
                eprintln!("warning: pool too small for this P_f (COV {:.3})", rep.cov_mcs);
            }
            Ok(exit_for(rep.stop_cause))
        }
        Command::Compare { common, strategies, replications } => {
            let cfg = common.load()?;
            let strategies = if strategies.is_empty() { vec![cfg.strategy] } else { strategies };
            let configs: Vec<(String, RunConfig)> = strategies
                .iter()
                .map(|&s| (s.name().to_string(), RunConfig { strategy: s, ..cfg.clone() }))
                .collect();
            let cmp = driver::compare(&configs, replications).map_err(|e| e.to_string())?;
            for row in &cmp.rows {
                for f in &row.failures {
                    eprintln!("warning: {}: {f}", row.label);
                }
            }
            output::write_comparison(&common.out.join("comparison.csv"), &cmp)?;
            output::write_json(&common.out.join("comparison.json"), &cmp.rows)?;
            if cmp.rows.iter().any(|r| r.runs == 0) {
                return Err("every replication of at least one strategy failed".into());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid { common, resolution, bounds } => {
            let cfg = common.load()?;
            let bounds = match bounds.as_slice() {
                &[lo, hi] => [(lo, hi), (lo, hi)],
                &[lo1, hi1, lo2, hi2] => [(lo1, hi1), (lo2, hi2)],
                _ => return Err("--bounds takes 2 or 4 values".into()),
            };
            if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err("--bounds needs lo < hi".into());
            }
            if cfg.limit_state.dim() != 2 {
                return Err(format!("grid output needs a 2-dimensional problem, got dimension {}", cfg.limit_state.dim()));
            }
            let outcome = driver::run(&cfg).map_err(|e| e.to_string())?;
            let grid = driver::grid_dump(&outcome.model, bounds, resolution).map_err(|e| e.to_string())?;
            output::write_grid(&common.out.join("grid.csv"), &grid)?;
            output::write_doe(&common.out.join("doe.csv"), &outcome.model)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for(cause: StopCause) -> ExitCode {
    match cause {
        StopCause::MaxIterations => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    }
}
