//! Smoothing kernels for the ABC likelihood.
//!
//! `K` is a d-variate density with zero mean; `K_eps(u) = K(u / eps) / eps^d`
//! is its rescaled version at bandwidth `eps`. Densities are evaluated in log
//! space and exponentiated at the boundary so that tiny bandwidths with large
//! offsets do not underflow before the normalizer is applied.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{AbcError, Result};

/// Kernel families. Only the product Gaussian is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    ProductGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    dim: usize,
    family: KernelFamily,
}

impl KernelSpec {
    pub fn new(dim: usize, family: KernelFamily) -> Result<Self> {
        if dim == 0 {
            return Err(AbcError::Input("kernel dimension must be positive".into()));
        }
        Ok(Self { dim, family })
    }

    /// Standard d-variate normal density.
    pub fn product_gaussian(dim: usize) -> Result<Self> {
        Self::new(dim, KernelFamily::ProductGaussian)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Second moment `∫ x'x K(x) dx`.
    pub fn sigma2(&self) -> f64 {
        match self.family {
            KernelFamily::ProductGaussian => self.dim as f64,
        }
    }

    /// Roughness `∫ K(x)^2 dx`.
    pub fn roughness(&self) -> f64 {
        match self.family {
            KernelFamily::ProductGaussian => (4.0 * PI).powf(-(self.dim as f64) / 2.0),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(AbcError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn log_norm(&self) -> f64 {
        match self.family {
            KernelFamily::ProductGaussian => -0.5 * self.dim as f64 * (2.0 * PI).ln(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(self.log_norm() - 0.5 * sq)
    }

    /// `K(x)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }

    pub fn log_scaled(&self, u: &[f64], eps: f64) -> Result<f64> {
        self.at_bandwidth(eps)?.log_eval_checked(u)
    }

    /// `K_eps(u) = K(u / eps) / eps^d`.
    pub fn scaled(&self, u: &[f64], eps: f64) -> Result<f64> {
        self.log_scaled(u, eps).map(f64::exp)
    }

    /// Freeze the bandwidth for repeated evaluation in hot loops.
    pub fn at_bandwidth(&self, eps: f64) -> Result<ScaledKernel> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(AbcError::Input(format!(
                "bandwidth must be positive and finite, got {eps}"
            )));
        }
        Ok(ScaledKernel {
            dim: self.dim,
            log_norm: self.log_norm() - self.dim as f64 * eps.ln(),
            half_inv_eps2: 0.5 / (eps * eps),
        })
    }
}

/// A kernel with a fixed bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct ScaledKernel {
    dim: usize,
    log_norm: f64,
    half_inv_eps2: f64,
}

impl ScaledKernel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn log_eval_checked(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(AbcError::Dimension {
                expected: self.dim,
                got: u.len(),
            });
        }
        Ok(self.log_eval_sq(u.iter().map(|v| v * v).sum()))
    }

    /// Log kernel value given the squared norm `|u|^2` of the offset.
    #[inline]
    pub fn log_eval_sq(&self, sq_norm: f64) -> f64 {
        self.log_norm - sq_norm * self.half_inv_eps2
    }

    /// Kernel value given the squared norm `|u|^2` of the offset.
    #[inline]
    pub fn eval_sq(&self, sq_norm: f64) -> f64 {
        self.log_eval_sq(sq_norm).exp()
    }
}

/// `K(x)` for the given spec.
pub fn kernel_density(spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    spec.density(x)
}

/// `K_eps(u)` for the given spec.
pub fn scaled_kernel(spec: &KernelSpec, u: &[f64], eps: f64) -> Result<f64> {
    spec.scaled(u, eps)
}
