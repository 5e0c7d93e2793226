use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use exact_abc::harness::{log_progress, run_from_config, sweep, write_records, RunConfig};
use exact_abc::ising::{bond_count, posterior_oracle, IsingModel};
use exact_abc::AbcError;

#[derive(Parser)]
#[command(
    name = "eabc",
    version,
    about = "Exact ABC by importance sampling with debiased likelihoods"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with flat keys mirroring RunConfig.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write results here instead of standard output.
    #[arg(long)]
    out: Option<String>,
    /// `records` (JSON lines) or `table` (tab-separated).
    #[arg(long)]
    format: Option<String>,
    /// Allow lattices beyond desk scale.
    #[arg(long)]
    long_running: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration.
    Run(Common),
    /// Run the configuration once per M.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated M values; overrides `m_list` in the config.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
    },
    /// Exact posterior mean and marginal for a small Ising lattice.
    Oracle {
        /// Take the lattice and observed data from an ising config.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        /// Observed statistic; defaults to the one simulated from the config.
        #[arg(long)]
        s_obs: Option<i64>,
        #[arg(long, default_value_t = 512)]
        quad_points: usize,
        #[arg(long)]
        out: Option<String>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, AbcError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    if let Some(f) = &common.format {
        cfg.format = f.parse()?;
    }
    if common.long_running {
        cfg.long_running = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_output(path: Option<&str>) -> Result<Box<dyn Write>, AbcError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| AbcError::config("output", format!("cannot write {p}: {e}")))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            let out = open_output(cfg.output.as_deref())?;
            log_progress(&format!("model = {}, M = {}, seed = {}", cfg.model, cfg.m, cfg.seed));
            let record = run_from_config(&cfg)?;
            log_progress(&format!("done in {:.2}s", record.wall_time_secs));
            write_records(&[record], cfg.format, out)?;
            Ok(())
        }
        Command::Sweep { common, m } => {
            let cfg = load_config(&common)?;
            let list = if m.is_empty() { cfg.m_list.clone() } else { m };
            let out = open_output(cfg.output.as_deref())?;
            let records = sweep(&cfg, &list)?;
            write_records(&records, cfg.format, out)?;
            Ok(())
        }
        Command::Oracle {
            config,
            rows,
            cols,
            s_obs,
            quad_points,
            out,
        } => {
            let (rows, cols, s_obs, lattice) = match config {
                Some(path) => {
                    let cfg = RunConfig::load(&path)?;
                    if cfg.model != "ising" {
                        return Err(AbcError::config("model", "the oracle needs an ising config").into());
                    }
                    let m =
                        IsingModel::simulated(cfg.rows, cfg.cols, cfg.sweeps, cfg.observed_theta, cfg.observed_seed)?;
                    let s = s_obs.unwrap_or_else(|| m.observed_stat());
                    (cfg.rows, cfg.cols, s, Some(m.observed_lattice().to_string()))
                }
                None => {
                    let s = s_obs.unwrap_or_else(|| bond_count(rows, cols) / 2);
                    (rows, cols, s, None)
                }
            };
            let oracle = posterior_oracle(rows, cols, s_obs, quad_points)?;
            let mut w = open_output(out.as_deref())?;
            let line = json!({
                "rows": rows,
                "cols": cols,
                "s_obs": s_obs,
                "quad_points": quad_points,
                "posterior_mean": oracle.posterior_mean,
                "marginal": oracle.marginal,
                "observed_lattice": lattice,
            });
            writeln!(w, "{line}")?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eabc: {e:#}");
            let code = e.downcast_ref::<AbcError>().map_or(1, AbcError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
