//! Batch runs driven by a flat key-value configuration.
//!
//! A [`RunConfig`] names the model, the schedule, `M`, `n_rep` (fixed or
//! calibrated), the seed and the outputs; [`run_from_config`] turns it into a
//! [`RunRecord`]. Records depend only on the configuration, never on the
//! worker count: every sample draws from its own counter-derived stream and
//! reductions run in index order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::debias::{
    calibrate_nrep, Calibration, CalibrationOptions, TruncationSchedule, DEFAULT_MAX_LEVEL, DEFAULT_MAX_POOL,
};
use crate::error::{AbcError, Result};
use crate::is2::{
    run_is2, GaussianImportance, ImportanceDensity, Is2Settings, PhiEstimate, TestFunction, UniformImportance,
};
use crate::ising::{IsingModel, DEFAULT_SWEEPS};
use crate::model::{GaussianModel, SimulatorModel};
use crate::rng::{derive_seed, fnv1a};

/// Lattices above this many sites need `long_running = true`.
pub const DESK_SCALE_SITES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NRep {
    #[default]
    Auto,
    Fixed(u32),
}

impl fmt::Display for NRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NRep::Auto => f.write_str("auto"),
            NRep::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for NRep {
    type Err = AbcError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(NRep::Auto);
        }
        s.parse()
            .map(NRep::Fixed)
            .map_err(|_| AbcError::config("n_rep", format!("expected a positive integer or \"auto\", got {s:?}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NRepRepr {
    Fixed(u32),
    Text(String),
}

impl Serialize for NRep {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NRep::Auto => NRepRepr::Text("auto".into()),
            NRep::Fixed(n) => NRepRepr::Fixed(*n),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NRep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NRepRepr::deserialize(d)? {
            NRepRepr::Fixed(n) => Ok(NRep::Fixed(n)),
            NRepRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// One JSON object per line.
    #[default]
    Records,
    /// Tab-separated, one row per record and test function.
    Table,
}

impl FromStr for OutputFormat {
    type Err = AbcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "records" => Ok(OutputFormat::Records),
            "table" => Ok(OutputFormat::Table),
            other => Err(AbcError::config(
                "format",
                format!("expected records or table, got {other:?}"),
            )),
        }
    }
}

/// Everything that determines a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `gaussian` or `ising`.
    pub model: String,
    /// Observed value for the Gaussian model.
    pub y_obs: f64,
    pub rows: usize,
    pub cols: usize,
    pub sweeps: u32,
    /// Seed and parameter used to simulate the observed Ising lattice.
    pub observed_seed: u64,
    pub observed_theta: f64,
    pub rho: f64,
    pub tau: f64,
    pub m: usize,
    pub n_rep: NRep,
    /// Calibration point; the model default when absent.
    pub pilot_theta: Option<f64>,
    pub target_log_var: f64,
    pub pilot_size: usize,
    /// Normal importance density for the Gaussian model.
    pub is_mean: f64,
    pub is_var: f64,
    pub max_level: u32,
    pub max_pool: u64,
    pub seed: u64,
    pub workers: usize,
    pub test_functions: Vec<String>,
    /// `M` grid for `sweep`.
    pub m_list: Vec<usize>,
    pub long_running: bool,
    pub output: Option<String>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "gaussian".into(),
            y_obs: 0.0,
            rows: 4,
            cols: 4,
            sweeps: DEFAULT_SWEEPS,
            observed_seed: 2024,
            observed_theta: 0.5,
            rho: 0.5,
            tau: 0.99,
            m: 1000,
            n_rep: NRep::Auto,
            pilot_theta: None,
            target_log_var: 1.0,
            pilot_size: 200,
            is_mean: 0.0,
            is_var: 2.0,
            max_level: DEFAULT_MAX_LEVEL,
            max_pool: DEFAULT_MAX_POOL,
            seed: 0,
            workers: 1,
            test_functions: vec!["theta".into(), "theta2".into()],
            m_list: Vec::new(),
            long_running: false,
            output: None,
            format: OutputFormat::Records,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<config>".into());
            AbcError::config(key, message)
        })
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AbcError::config("--config", format!("cannot read {path}: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(AbcError::config(key, msg));
        match self.model.as_str() {
            "gaussian" => {
                if !(self.is_var > 0.0) || !self.is_var.is_finite() {
                    return bad("is_var", format!("must be positive, got {}", self.is_var));
                }
            }
            "ising" => {
                if self.rows == 0 || self.cols == 0 {
                    return bad(
                        "rows",
                        format!("lattice must be nonempty, got {}x{}", self.rows, self.cols),
                    );
                }
                if self.sweeps == 0 {
                    return bad("sweeps", "must be at least 1".into());
                }
                if self.rows * self.cols > DESK_SCALE_SITES && !self.long_running {
                    return bad(
                        "long_running",
                        format!(
                            "a {}x{} lattice is beyond desk scale; set long_running = true (or pass --long-running)",
                            self.rows, self.cols
                        ),
                    );
                }
            }
            other => return bad("model", format!("unknown model {other:?}; expected gaussian or ising")),
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho", format!("must lie in (0, 1), got {}", self.rho));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", format!("must lie in (0, 1), got {}", self.tau));
        }
        if self.m < 2 {
            return bad("m", format!("must be at least 2, got {}", self.m));
        }
        if self.m_list.iter().any(|&m| m < 2) {
            return bad("m_list", "every M must be at least 2".into());
        }
        if self.workers < 1 {
            return bad("workers", "must be at least 1".into());
        }
        if self.n_rep == NRep::Fixed(0) {
            return bad("n_rep", "must be at least 1".into());
        }
        if !(self.target_log_var > 0.0) {
            return bad("target_log_var", "must be positive".into());
        }
        if self.pilot_size < 2 {
            return bad("pilot_size", "must be at least 2".into());
        }
        if self.test_functions.is_empty() {
            return bad("test_functions", "register at least one test function".into());
        }
        if let Some(name) = self.test_functions.iter().find(|n| TestFunction::by_name(n).is_none()) {
            return bad(
                "test_functions",
                format!("unknown test function {name:?}; expected theta, theta2 or one"),
            );
        }
        Ok(())
    }

    /// Stable hash of every knob that can change the numbers.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 1;
        canonical.output = None;
        canonical.format = OutputFormat::Records;
        canonical.m_list.clear();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    pub fn schedule(&self, dim: usize) -> Result<TruncationSchedule> {
        Ok(TruncationSchedule::new(self.rho, self.tau, dim)?.with_caps(self.max_level, self.max_pool))
    }
}

/// Model and importance density named by a config.
pub struct Experiment {
    pub model: Box<dyn SimulatorModel>,
    pub importance: Box<dyn ImportanceDensity>,
    /// Gap between attainable summary values for discrete statistics.
    pub summary_spacing: Option<f64>,
}

pub fn build_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    match cfg.model.as_str() {
        "gaussian" => Ok(Experiment {
            model: Box::new(GaussianModel::new(cfg.y_obs)),
            importance: Box::new(GaussianImportance::new(cfg.is_mean, cfg.is_var)?),
            summary_spacing: None,
        }),
        "ising" => {
            let model = IsingModel::simulated(cfg.rows, cfg.cols, cfg.sweeps, cfg.observed_theta, cfg.observed_seed)?;
            let spacing = model.summary_spacing();
            Ok(Experiment {
                model: Box::new(model),
                importance: Box::new(UniformImportance::new(0.0, 1.0)?),
                summary_spacing: Some(spacing),
            })
        }
        other => Err(AbcError::config("model", format!("unknown model {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub m: usize,
    pub n_rep: u32,
    pub calibration: Option<Calibration>,
    pub observed_summary: Vec<f64>,
    pub estimates: Vec<PhiEstimate>,
    pub marginal_likelihood: f64,
    pub marginal_std_error: f64,
    /// For discrete statistics: multiply the marginal likelihood by this to
    /// get the prior predictive probability of the observed statistic.
    pub summary_spacing: Option<f64>,
    pub negative_weight_fraction: f64,
    pub total_simulations: u64,
    pub max_truncation: u32,
    pub backend: String,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn estimate(&self, name: &str) -> Option<&PhiEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// The record with the wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        r.config.workers = 1;
        r.backend.clear();
        r
    }
}

/// Execute one configured run.
pub fn run_from_config(cfg: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let exp = build_experiment(cfg)?;
    let model = exp.model.as_ref();
    let sched = cfg.schedule(model.summary_dim())?;
    let phis: Vec<TestFunction> = cfg
        .test_functions
        .iter()
        .map(|n| TestFunction::by_name(n).expect("validated"))
        .collect();

    let (n_rep, calibration) = match cfg.n_rep {
        NRep::Fixed(n) => (n, None),
        NRep::Auto => {
            let pilot = cfg.pilot_theta.map(|t| vec![t]).unwrap_or_else(|| model.pilot_theta());
            let opts = CalibrationOptions {
                pilot_size: cfg.pilot_size,
                workers: cfg.workers,
                ..Default::default()
            };
            let cal = calibrate_nrep(
                model,
                &pilot,
                &sched,
                cfg.target_log_var,
                &opts,
                derive_seed(cfg.seed, "calibrate", 0),
            )?;
            (cal.n_rep, Some(cal))
        }
    };

    let settings = Is2Settings {
        m: cfg.m,
        n_rep,
        seed: cfg.seed,
        workers: cfg.workers,
    };
    let result = run_is2(model, exp.importance.as_ref(), &phis, &sched, &settings)?;
    Ok(RunRecord {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        m: cfg.m,
        n_rep,
        calibration,
        observed_summary: model.observed().values().to_vec(),
        estimates: result.phis,
        marginal_likelihood: result.marginal_likelihood,
        marginal_std_error: result.marginal_std_error,
        summary_spacing: exp.summary_spacing,
        negative_weight_fraction: result.negative_weight_fraction,
        total_simulations: result.total_simulations,
        max_truncation: result.max_truncation,
        backend: if crate::par::is_parallel() {
            "rayon"
        } else {
            "sequential"
        }
        .into(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// The config of entry `index` of a sweep over `m`.
pub fn sweep_entry(template: &RunConfig, index: usize, m: usize) -> RunConfig {
    let mut cfg = template.clone();
    cfg.m = m;
    cfg.m_list.clear();
    cfg.seed = derive_seed(template.seed, "sweep", index as u64);
    cfg
}

/// One run per `M`, seeded from the master seed and the position in the list.
pub fn sweep(template: &RunConfig, m_list: &[usize]) -> Result<Vec<RunRecord>> {
    if m_list.is_empty() {
        return Err(AbcError::config("m_list", "sweep needs at least one M"));
    }
    m_list
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let cfg = sweep_entry(template, i, m);
            log_progress(&format!("sweep {}/{}: M = {m}", i + 1, m_list.len()));
            run_from_config(&cfg)
        })
        .collect()
}

pub fn log_progress(msg: &str) {
    eprintln!("[eabc] {msg}");
}

pub const TABLE_HEADER: &str =
    "model\tM\tseed\tn_rep\tphi\testimate\tstd_error\tmarginal\tmarginal_se\tneg_weight_frac\tsimulations\tconfig_hash";

/// Write records in the requested format.
pub fn write_records<W: Write>(records: &[RunRecord], format: OutputFormat, mut out: W) -> Result<()> {
    match format {
        OutputFormat::Records => {
            for r in records {
                let line = serde_json::to_string(r).map_err(|e| AbcError::Numerical(e.to_string()))?;
                writeln!(out, "{line}")?;
            }
        }
        OutputFormat::Table => {
            writeln!(out, "{TABLE_HEADER}")?;
            for r in records {
                for e in &r.estimates {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        r.config.model,
                        r.m,
                        r.seed,
                        r.n_rep,
                        e.name,
                        e.estimate,
                        e.std_error,
                        r.marginal_likelihood,
                        r.marginal_std_error,
                        r.negative_weight_fraction,
                        r.total_simulations,
                        r.config_hash
                    )?;
                }
            }
        }
    }
    Ok(())
}
