//! Simulator models: the prior, the data-generating process reduced to its
//! summary statistic, and the observed summary.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AbcError, Result};
use crate::rng::StreamRng;

/// A parameter value together with its (possibly unnormalized) log prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub theta: Vec<f64>,
    pub log_prior: f64,
}

impl ParamPoint {
    pub fn new(theta: Vec<f64>, log_prior: f64) -> Self {
        Self { theta, log_prior }
    }

    /// Evaluate the prior of `model` at `theta`.
    pub fn at<M: SimulatorModel + ?Sized>(model: &M, theta: Vec<f64>) -> Self {
        let log_prior = model.log_prior(&theta);
        Self { theta, log_prior }
    }
}

/// A d-dimensional summary statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SummaryVec(pub Vec<f64>);

impl SummaryVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SummaryVec {
    fn from(v: Vec<f64>) -> Self {
        SummaryVec(v)
    }
}

/// A model we can simulate from but (in general) not evaluate.
///
/// Implementations must be immutable once built; all randomness comes from
/// the stream passed in, so concurrent calls on distinct streams are safe.
pub trait SimulatorModel: Send + Sync {
    fn name(&self) -> &str;

    fn param_dim(&self) -> usize;

    fn summary_dim(&self) -> usize;

    fn observed(&self) -> &SummaryVec;

    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Draw from the prior. Improper priors return an input error.
    fn sample_prior(&self, rng: &mut StreamRng) -> Result<ParamPoint>;

    /// Default pilot point for calibration.
    fn pilot_theta(&self) -> Vec<f64>;

    /// Write one summary `s ~ p(.|theta)` into `out` (length `summary_dim`).
    fn simulate_into(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) -> Result<()>;

    fn simulate_summary(&self, theta: &[f64], rng: &mut StreamRng) -> Result<SummaryVec> {
        let mut out = vec![0.0; self.summary_dim()];
        self.simulate_into(theta, rng, &mut out)?;
        Ok(SummaryVec(out))
    }

    /// Test-only oracle for `log p(s_obs | theta)`. Intractable models return `None`.
    fn exact_log_likelihood(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// `N(x; mean, var)`.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `y ~ N(theta, 1)` with the summary equal to the data, a flat improper
/// prior (`log_prior == 0`) and an observed value of 0 by default.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    observed: SummaryVec,
}

impl GaussianModel {
    pub fn new(y_obs: f64) -> Self {
        Self {
            observed: SummaryVec(vec![y_obs]),
        }
    }
}

impl Default for GaussianModel {
    fn default() -> Self {
        Self::new(0.0)
    }
}

/// The Gaussian example with `y_obs = 0`.
pub fn gaussian_model() -> GaussianModel {
    GaussianModel::default()
}

/// Second moment `1 + eps^2` of the ABC posterior `N(0, 1 + eps^2)` of the
/// Gaussian example under a Gaussian kernel at bandwidth `eps`.
pub fn gaussian_abc_posterior_moment2(eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(AbcError::Input(format!("tolerance must be nonnegative, got {eps}")));
    }
    Ok(1.0 + eps * eps)
}

impl SimulatorModel for GaussianModel {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn summary_dim(&self) -> usize {
        1
    }

    fn observed(&self) -> &SummaryVec {
        &self.observed
    }

    fn log_prior(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    fn sample_prior(&self, _rng: &mut StreamRng) -> Result<ParamPoint> {
        Err(AbcError::Input(
            "the flat prior of the Gaussian model is improper".into(),
        ))
    }

    fn pilot_theta(&self) -> Vec<f64> {
        vec![0.5]
    }

    #[inline]
    fn simulate_into(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        let z: f64 = StandardNormal.sample(rng);
        out[0] = theta[0] + z;
        Ok(())
    }

    fn exact_log_likelihood(&self, theta: &[f64]) -> Option<f64> {
        Some(normal_pdf(self.observed.0[0], theta[0], 1.0).ln())
    }
}
