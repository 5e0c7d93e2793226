//! Importance sampling with an unbiased likelihood estimate in the weights.
//!
//! For `theta_i ~ g` the weight is `w_i = p_hat(s_obs | theta_i) p(theta_i) / g(theta_i)`
//! and `E_pi(phi)` is estimated by the self-normalized ratio
//! `sum phi(theta_i) w_i / sum w_i`. Weights can be negative because the
//! likelihood estimate can be; all test functions share one set of weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::debias::{averaged_likelihood, TruncationSchedule};
use crate::error::{AbcError, Result};
use crate::model::{ParamPoint, SimulatorModel};
use crate::par::try_map_indexed;
use crate::rng::{stream, StreamRng};
use crate::sum::{compensated_sum, mean_and_variance};

/// Proposal distribution over the parameter space.
pub trait ImportanceDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64>;
    fn log_density(&self, theta: &[f64]) -> f64;
}

/// Univariate `N(mean, var)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianImportance {
    mean: f64,
    var: f64,
    dist: Normal<f64>,
}

impl GaussianImportance {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
            return Err(AbcError::Input(format!("invalid normal proposal N({mean}, {var})")));
        }
        let dist = Normal::new(mean, var.sqrt()).map_err(|e| AbcError::Input(e.to_string()))?;
        Ok(Self { mean, var, dist })
    }
}

impl ImportanceDensity for GaussianImportance {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![self.dist.sample(rng)]
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let z = theta[0] - self.mean;
        -0.5 * (2.0 * PI * self.var).ln() - z * z / (2.0 * self.var)
    }
}

/// Univariate `U(lo, hi)`.
#[derive(Debug, Clone, Copy)]
pub struct UniformImportance {
    lo: f64,
    hi: f64,
    dist: Uniform<f64>,
}

impl UniformImportance {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let dist = Uniform::new(lo, hi).map_err(|e| AbcError::Input(format!("U({lo}, {hi}): {e}")))?;
        Ok(Self { lo, hi, dist })
    }
}

impl ImportanceDensity for UniformImportance {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![self.dist.sample(rng)]
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if theta[0] >= self.lo && theta[0] <= self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A named scalar function of the parameter.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    f: ScalarFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| c)
    }

    /// Built-ins: `theta`, `theta2` (second moment), `one`.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "theta" => Some(Self::new("theta", |t| t[0])),
            "theta2" => Some(Self::new("theta2", |t| t[0] * t[0])),
            "one" => Some(Self::new("one", |_| 1.0)),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub theta: ParamPoint,
    pub log_importance: f64,
    /// The (averaged) debiased likelihood estimate.
    pub likelihood: f64,
    /// Signed weight in natural scale.
    pub weight: f64,
    /// `ln |weight|`; `-inf` for a zero weight.
    pub log_abs_weight: f64,
    pub negative: bool,
    pub phi_values: Vec<f64>,
    pub simulations: u64,
    pub truncation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Is2Settings {
    /// Number of importance samples `M`.
    pub m: usize,
    pub n_rep: u32,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub name: String,
    pub estimate: f64,
    /// `sigma_hat^2_phi`; the standard error is `sqrt(asymptotic_variance / M)`.
    pub asymptotic_variance: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Is2Result {
    pub phis: Vec<PhiEstimate>,
    pub marginal_likelihood: f64,
    pub marginal_std_error: f64,
    pub m: usize,
    pub negative_weight_fraction: f64,
    pub total_simulations: u64,
    pub max_truncation: u32,
}

fn draw_one<M, G>(
    model: &M,
    g: &G,
    phis: &[TestFunction],
    sched: &TruncationSchedule,
    n_rep: u32,
    rng: &mut StreamRng,
) -> Result<WeightedSample>
where
    M: SimulatorModel + ?Sized,
    G: ImportanceDensity + ?Sized,
{
    let theta = g.sample(rng);
    let log_prior = model.log_prior(&theta);
    let log_importance = g.log_density(&theta);
    let phi_values = phis.iter().map(|p| p.eval(&theta)).collect();
    let point = ParamPoint::new(theta, log_prior);

    if log_prior == f64::NEG_INFINITY {
        return Ok(WeightedSample {
            theta: point,
            log_importance,
            likelihood: 0.0,
            weight: 0.0,
            log_abs_weight: f64::NEG_INFINITY,
            negative: false,
            phi_values,
            simulations: 0,
            truncation: 0,
        });
    }
    if !log_importance.is_finite() {
        return Err(AbcError::Numerical(format!(
            "importance density vanishes at theta = {:?} inside the prior support",
            point.theta
        )));
    }

    let est = averaged_likelihood(model, &point.theta, sched, n_rep, rng)?;
    let log_ratio = log_prior - log_importance;
    let weight = est.value * log_ratio.exp();
    let log_abs_weight = if est.value == 0.0 {
        f64::NEG_INFINITY
    } else {
        est.value.abs().ln() + log_ratio
    };
    Ok(WeightedSample {
        theta: point,
        log_importance,
        likelihood: est.value,
        weight,
        log_abs_weight,
        negative: weight < 0.0,
        phi_values,
        simulations: est.total_simulations,
        truncation: est.truncation,
    })
}

/// Draw `M` weighted samples on per-index streams `(seed, "is2/sample", i)`.
pub fn draw_samples<M, G>(
    model: &M,
    g: &G,
    phis: &[TestFunction],
    sched: &TruncationSchedule,
    settings: &Is2Settings,
) -> Result<Vec<WeightedSample>>
where
    M: SimulatorModel + ?Sized,
    G: ImportanceDensity + ?Sized,
{
    if g.dim() != model.param_dim() {
        return Err(AbcError::Dimension {
            expected: model.param_dim(),
            got: g.dim(),
        });
    }
    try_map_indexed(settings.m, settings.workers, |i| {
        let mut rng = stream(settings.seed, "is2/sample", i as u64);
        draw_one(model, g, phis, sched, settings.n_rep, &mut rng)
    })
}

/// `(p_hat(s_obs), standard error)`: mean weight and its standard error.
pub fn marginal_likelihood(samples: &[WeightedSample]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(AbcError::Input(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let (mean, var) = mean_and_variance(&w);
    Ok((mean, (var.unwrap_or(0.0) / w.len() as f64).sqrt()))
}

/// `sigma_hat^2_phi = sum (phi_i - E_hat)^2 w_i^2 / (M p_hat^2)`.
pub fn asymptotic_variance(samples: &[WeightedSample], phi_index: usize, estimate: f64, marginal: f64) -> Result<f64> {
    if !(marginal > 0.0) {
        return Err(AbcError::Numerical(format!(
            "asymptotic variance needs a positive marginal likelihood, got {marginal}"
        )));
    }
    let m = samples.len() as f64;
    let ss = compensated_sum(samples.iter().map(|s| {
        let r = (s.phi_values[phi_index] - estimate) * s.weight;
        r * r
    }));
    Ok(ss / (m * marginal * marginal))
}

/// Self-normalized estimates for every registered test function.
pub fn summarize(samples: &[WeightedSample], names: &[String]) -> Result<Is2Result> {
    let m = samples.len();
    let (marginal, marginal_se) = marginal_likelihood(samples)?;
    let sum_w = compensated_sum(samples.iter().map(|s| s.weight));
    if !(sum_w > 0.0) {
        return Err(AbcError::NonPositiveMarginal { sum_weights: sum_w, m });
    }
    let mut phis = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let num = compensated_sum(samples.iter().map(|s| s.phi_values[j] * s.weight));
        let estimate = num / sum_w;
        let asymptotic_variance = asymptotic_variance(samples, j, estimate, marginal)?;
        phis.push(PhiEstimate {
            name: name.clone(),
            estimate,
            asymptotic_variance,
            std_error: (asymptotic_variance / m as f64).sqrt(),
        });
    }
    Ok(Is2Result {
        phis,
        marginal_likelihood: marginal,
        marginal_std_error: marginal_se,
        m,
        negative_weight_fraction: samples.iter().filter(|s| s.negative).count() as f64 / m as f64,
        total_simulations: samples.iter().map(|s| s.simulations).sum(),
        max_truncation: samples.iter().map(|s| s.truncation).max().unwrap_or(0),
    })
}

/// Run the full importance sampler: draw, weight, self-normalize.
pub fn run_is2<M, G>(
    model: &M,
    g: &G,
    phis: &[TestFunction],
    sched: &TruncationSchedule,
    settings: &Is2Settings,
) -> Result<Is2Result>
where
    M: SimulatorModel + ?Sized,
    G: ImportanceDensity + ?Sized,
{
    if settings.m < 2 {
        return Err(AbcError::Input(format!("M must be at least 2, got {}", settings.m)));
    }
    if phis.is_empty() {
        return Err(AbcError::Input("register at least one test function".into()));
    }
    let samples = draw_samples(model, g, phis, sched, settings)?;
    let names: Vec<String> = phis.iter().map(|p| p.name().to_string()).collect();
    summarize(&samples, &names)
}
