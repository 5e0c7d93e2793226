//! Unbiased likelihood estimation by randomized truncation.
//!
//! A sequence of kernel ABC likelihood estimates `zeta_k` with shrinking
//! bandwidth `eps_k` and growing simulation count `n_k` is truncated at a
//! geometric level `T` and telescoped with inverse-survival weights:
//!
//! ```text
//! p_hat = zeta_0 + sum_{k=1..T} omega_k (zeta_k - zeta_{k-1}),   omega_k = 1 / P(T >= k)
//! ```
//!
//! Summaries simulated for level `k` are reused for every later level, so a
//! single estimate costs `n_T` simulator calls. The estimate is unbiased for
//! `p(s_obs | theta)` and may be negative.
//!
//! Note that `P(T >= k) n_k` grows geometrically in `k`: the expected cost of
//! one estimate is unbounded, so the caps below are not optional decoration.

use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{AbcError, Result};
use crate::kernels::{KernelSpec, ScaledKernel};
use crate::model::{ParamPoint, SimulatorModel};
use crate::par::try_map_indexed;
use crate::rng::{stream, StreamRng};
use crate::sum::{mean_and_variance, CompensatedSum};

pub const DEFAULT_MAX_LEVEL: u32 = 50;
/// Largest `n_T` a single estimate may request.
pub const DEFAULT_MAX_POOL: u64 = 1 << 30;

/// Level schedule `eps_k = a^((k+1)/4)`, `n_k = ceil(a^(-(k+1)(1+d/4)))`,
/// `omega_k = (1-rho)^(-k)` with `a = tau (1 - rho)`, plus the hard caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSchedule {
    rho: f64,
    tau: f64,
    dim: usize,
    max_level: u32,
    max_pool: u64,
}

/// One rung of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub k: u32,
    pub eps: f64,
    /// Saturates at `u64::MAX`.
    pub n: u64,
    pub omega: f64,
}

impl TruncationSchedule {
    pub fn new(rho: f64, tau: f64, dim: usize) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(AbcError::Input(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(AbcError::Input(format!("tau must lie in (0, 1), got {tau}")));
        }
        if dim == 0 {
            return Err(AbcError::Input("summary dimension must be positive".into()));
        }
        Ok(Self {
            rho,
            tau,
            dim,
            max_level: DEFAULT_MAX_LEVEL,
            max_pool: DEFAULT_MAX_POOL,
        })
    }

    pub fn with_caps(mut self, max_level: u32, max_pool: u64) -> Self {
        self.max_level = max_level;
        self.max_pool = max_pool;
        self
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn max_pool(&self) -> u64 {
        self.max_pool
    }

    /// `tau (1 - rho)`, the per-level contraction factor.
    pub fn base(&self) -> f64 {
        self.tau * (1.0 - self.rho)
    }

    pub fn eps(&self, k: u32) -> f64 {
        self.base().powf((k as f64 + 1.0) / 4.0)
    }

    fn n_exponent(&self, k: u32) -> f64 {
        (k as f64 + 1.0) * (1.0 + self.dim as f64 / 4.0)
    }

    /// `n_k` as a float; infinite once it exceeds the f64 range.
    pub fn n_f64(&self, k: u32) -> f64 {
        self.base().powf(-self.n_exponent(k)).ceil()
    }

    /// `ln n_k`, finite even when `n_k` overflows.
    pub fn ln_n(&self, k: u32) -> f64 {
        let n = self.n_f64(k);
        if n.is_finite() {
            n.ln()
        } else {
            -self.n_exponent(k) * self.base().ln()
        }
    }

    pub fn n(&self, k: u32) -> u64 {
        let n = self.n_f64(k);
        if n >= u64::MAX as f64 {
            u64::MAX
        } else {
            n as u64
        }
    }

    pub fn omega(&self, k: u32) -> f64 {
        (1.0 - self.rho).powi(-(k as i32))
    }

    pub fn level(&self, k: u32) -> Level {
        Level {
            k,
            eps: self.eps(k),
            n: self.n(k),
            omega: self.omega(k),
        }
    }

    fn check_level(&self, k: u32) -> Result<Level> {
        if k > self.max_level {
            return Err(AbcError::Resource {
                cap: "max_level",
                requested: k.to_string(),
                limit: self.max_level.to_string(),
            });
        }
        let level = self.level(k);
        if level.n > self.max_pool {
            return Err(AbcError::Resource {
                cap: "max_pool",
                requested: format!("{:e}", self.n_f64(k)),
                limit: self.max_pool.to_string(),
            });
        }
        Ok(level)
    }
}

/// `(eps_k, n_k, omega_k)`.
pub fn schedule_level(sched: &TruncationSchedule, k: u32) -> (f64, u64, f64) {
    let l = sched.level(k);
    (l.eps, l.n, l.omega)
}

/// Draw `T` with `P(T = k) = rho (1 - rho)^k`.
pub fn sample_truncation(rho: f64, rng: &mut StreamRng) -> Result<u32> {
    let geom = Geometric::new(rho).map_err(|e| AbcError::Input(format!("invalid truncation parameter {rho}: {e}")))?;
    Ok(geom.sample(rng).min(u32::MAX as u64) as u32)
}

/// `zeta_k` together with the bandwidth and sample count behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub level: u32,
    pub zeta: f64,
    pub n_used: u64,
    pub eps_used: f64,
}

/// A (possibly averaged) debiased likelihood estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    /// May be negative.
    pub value: f64,
    /// Truncation level; the largest one drawn when averaged.
    pub truncation: u32,
    pub total_simulations: u64,
    pub replications: u32,
    /// Sample variance of the individual replications, for `replications >= 2`.
    pub sample_variance: Option<f64>,
    /// Per-level estimates, only kept for single replications.
    pub levels: Vec<LevelEstimate>,
}

impl DebiasedEstimate {
    /// Estimated variance of `value` itself (`sample_variance / replications`).
    pub fn variance_of_mean(&self) -> Option<f64> {
        self.sample_variance.map(|v| v / self.replications as f64)
    }
}

/// Summaries simulated so far for one `theta` and one replication.
#[derive(Debug, Clone, Default)]
pub struct SummaryPool {
    dim: usize,
    data: Vec<f64>,
}

impl SummaryPool {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Simulate until the pool holds `n` summaries; returns how many were added.
    pub fn extend_to<M: SimulatorModel + ?Sized>(
        &mut self,
        model: &M,
        theta: &[f64],
        n: usize,
        rng: &mut StreamRng,
    ) -> Result<usize> {
        let have = self.len();
        if n <= have {
            return Ok(0);
        }
        self.data.resize(n * self.dim, 0.0);
        for i in have..n {
            let slot = &mut self.data[i * self.dim..(i + 1) * self.dim];
            model.simulate_into(theta, rng, slot)?;
        }
        Ok(n - have)
    }
}

fn kernel_for<M: SimulatorModel + ?Sized>(model: &M, sched: &TruncationSchedule) -> Result<KernelSpec> {
    if model.summary_dim() != sched.dim() {
        return Err(AbcError::Dimension {
            expected: model.summary_dim(),
            got: sched.dim(),
        });
    }
    KernelSpec::product_gaussian(sched.dim())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `zeta_k = (1/n_k) sum_{i < n_k} K_{eps_k}(s_i - s_obs)` over the first
/// `n_k` pool entries, simulating only the entries the pool is missing.
pub fn zeta_at_level<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &ParamPoint,
    sched: &TruncationSchedule,
    k: u32,
    pool: &mut SummaryPool,
    rng: &mut StreamRng,
) -> Result<LevelEstimate> {
    let spec = kernel_for(model, sched)?;
    if pool.dim != sched.dim() {
        if pool.is_empty() {
            pool.dim = sched.dim();
        } else {
            return Err(AbcError::Dimension {
                expected: sched.dim(),
                got: pool.dim,
            });
        }
    }
    let level = sched.check_level(k)?;
    let kernel = spec.at_bandwidth(level.eps)?;
    let n = level.n as usize;
    pool.extend_to(model, &theta.theta, n, rng)?;
    let obs = model.observed().values();
    let mut acc = CompensatedSum::new();
    for i in 0..n {
        acc.add(kernel.eval_sq(sq_dist(pool.get(i), obs)));
    }
    Ok(LevelEstimate {
        level: k,
        zeta: acc.value() / n as f64,
        n_used: level.n,
        eps_used: level.eps,
    })
}

/// `zeta_0 + sum_{k=1..T} omega_k (zeta_k - zeta_{k-1})`.
pub fn telescope(levels: &[LevelEstimate], sched: &TruncationSchedule) -> f64 {
    let mut acc = CompensatedSum::new();
    if let Some(first) = levels.first() {
        acc.add(first.zeta);
    }
    for w in levels.windows(2) {
        acc.add(sched.omega(w[1].level) * (w[1].zeta - w[0].zeta));
    }
    acc.value()
}

/// One debiased estimate of `p(s_obs | theta)`.
///
/// Draws `T` first, checks it against the caps, then streams `n_T`
/// simulations, adding each summary's kernel value to every level whose
/// prefix contains it. The accumulation order per level matches
/// [`zeta_at_level`] on a shared pool.
pub fn debiased_likelihood<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &[f64],
    sched: &TruncationSchedule,
    rng: &mut StreamRng,
) -> Result<DebiasedEstimate> {
    let spec = kernel_for(model, sched)?;
    let t = sample_truncation(sched.rho(), rng)?;
    let levels = (0..=t).map(|k| sched.check_level(k)).collect::<Result<Vec<_>>>()?;
    let kernels = levels
        .iter()
        .map(|l| spec.at_bandwidth(l.eps))
        .collect::<Result<Vec<ScaledKernel>>>()?;

    let obs = model.observed().values();
    let mut buf = vec![0.0; sched.dim()];
    let mut sums = vec![CompensatedSum::new(); levels.len()];
    let mut start = 0usize;
    let mut i = 0u64;
    for (j, level) in levels.iter().enumerate() {
        // Block of summaries first used at level j.
        debug_assert!(start <= j);
        start = j;
        while i < level.n {
            model.simulate_into(theta, rng, &mut buf)?;
            let sq = sq_dist(&buf, obs);
            for (acc, kern) in sums[start..].iter_mut().zip(&kernels[start..]) {
                acc.add(kern.eval_sq(sq));
            }
            i += 1;
        }
    }

    let level_estimates: Vec<LevelEstimate> = levels
        .iter()
        .zip(&sums)
        .map(|(l, s)| LevelEstimate {
            level: l.k,
            zeta: s.value() / l.n as f64,
            n_used: l.n,
            eps_used: l.eps,
        })
        .collect();
    Ok(DebiasedEstimate {
        value: telescope(&level_estimates, sched),
        truncation: t,
        total_simulations: i,
        replications: 1,
        sample_variance: None,
        levels: level_estimates,
    })
}

/// Mean of `n_rep` independent debiased estimates (fresh pools, one stream).
pub fn averaged_likelihood<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &[f64],
    sched: &TruncationSchedule,
    n_rep: u32,
    rng: &mut StreamRng,
) -> Result<DebiasedEstimate> {
    if n_rep < 1 {
        return Err(AbcError::Input("n_rep must be at least 1".into()));
    }
    if n_rep == 1 {
        return debiased_likelihood(model, theta, sched, rng);
    }
    let mut values = Vec::with_capacity(n_rep as usize);
    let mut truncation = 0;
    let mut total = 0u64;
    for _ in 0..n_rep {
        let est = debiased_likelihood(model, theta, sched, rng)?;
        truncation = truncation.max(est.truncation);
        total += est.total_simulations;
        values.push(est.value);
    }
    let (mean, var) = mean_and_variance(&values);
    Ok(DebiasedEstimate {
        value: mean,
        truncation,
        total_simulations: total,
        replications: n_rep,
        sample_variance: var,
        levels: Vec::new(),
    })
}

/// Knobs for [`calibrate_nrep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Averaged estimates per pilot.
    pub pilot_size: usize,
    /// Give up beyond this replication count.
    pub max_nrep: u32,
    pub workers: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            pilot_size: 200,
            max_nrep: 1 << 16,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub n_rep: u32,
    pub pilot_variance: f64,
    /// `(n_rep, pilot variance of log|p_hat|)` for every candidate tried.
    pub history: Vec<(u32, f64)>,
}

/// Sample variance of `log|p_hat|` over `pilot_size` averaged estimates at
/// `theta` with `n_rep` replications each. Exact zeros are skipped.
pub fn pilot_log_variance<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &[f64],
    sched: &TruncationSchedule,
    n_rep: u32,
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<f64> {
    let tag = format!("calibrate/{n_rep}");
    let values = try_map_indexed(opts.pilot_size, opts.workers, |i| {
        let mut rng = stream(seed, &tag, i as u64);
        averaged_likelihood(model, theta, sched, n_rep, &mut rng).map(|e| e.value)
    })?;
    let logs: Vec<f64> = values.iter().filter(|v| **v != 0.0).map(|v| v.abs().ln()).collect();
    if logs.len() < 2 {
        return Err(AbcError::Calibration(format!(
            "only {} of {} pilot estimates are nonzero at theta = {:?}; the simulator looks degenerate",
            logs.len(),
            values.len(),
            theta
        )));
    }
    Ok(mean_and_variance(&logs).1.unwrap_or(0.0))
}

/// Smallest `n_rep` in the doubling sequence 1, 2, 4, ... whose pilot
/// variance of `log|p_hat|` at `theta_bar` is at most `target_var`.
pub fn calibrate_nrep<M: SimulatorModel + ?Sized>(
    model: &M,
    theta_bar: &[f64],
    sched: &TruncationSchedule,
    target_var: f64,
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<Calibration> {
    if !(target_var > 0.0) {
        return Err(AbcError::Input(format!(
            "target variance must be positive, got {target_var}"
        )));
    }
    let mut history = Vec::new();
    let mut n_rep = 1u32;
    loop {
        let v = pilot_log_variance(model, theta_bar, sched, n_rep, opts, seed)?;
        history.push((n_rep, v));
        if v <= target_var {
            return Ok(Calibration {
                n_rep,
                pilot_variance: v,
                history,
            });
        }
        if n_rep >= opts.max_nrep {
            return Err(AbcError::Calibration(format!(
                "pilot variance {v:.3} still above {target_var} at n_rep = {n_rep}"
            )));
        }
        n_rep = (n_rep * 2).min(opts.max_nrep);
    }
}

/// Partial sum `sum_{k=1..K} omega_k (eps_{k-1}^4 + 1 / (n_{k-1} eps_{k-1}^d))`
/// of the summability condition. Bounded by `2 tau / (1 - tau)`.
pub fn condition_bound(sched: &TruncationSchedule, k_terms: u32) -> Result<f64> {
    if k_terms < 1 {
        return Err(AbcError::Input("need at least one term".into()));
    }
    let d = sched.dim() as f64;
    let mut acc = CompensatedSum::new();
    for k in 1..=k_terms {
        let eps = sched.eps(k - 1);
        let ln_omega = -(k as f64) * (1.0 - sched.rho()).ln();
        let bias = (ln_omega + 4.0 * eps.ln()).exp();
        let var = (ln_omega - sched.ln_n(k - 1) - d * eps.ln()).exp();
        acc.add(bias + var);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_model, normal_pdf, SummaryVec};
    use approx::assert_relative_eq;

    /// Always returns the observed summary.
    struct Degenerate(SummaryVec);

    impl SimulatorModel for Degenerate {
        fn name(&self) -> &str {
            "degenerate"
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn summary_dim(&self) -> usize {
            self.0.dim()
        }
        fn observed(&self) -> &SummaryVec {
            &self.0
        }
        fn log_prior(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn sample_prior(&self, _: &mut StreamRng) -> Result<ParamPoint> {
            Ok(ParamPoint::new(vec![0.0], 0.0))
        }
        fn pilot_theta(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn simulate_into(&self, _: &[f64], _: &mut StreamRng, out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(&self.0 .0);
            Ok(())
        }
    }

    /// Fails after a fixed number of calls.
    struct Failing;

    impl SimulatorModel for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn summary_dim(&self) -> usize {
            1
        }
        fn observed(&self) -> &SummaryVec {
            static OBS: std::sync::OnceLock<SummaryVec> = std::sync::OnceLock::new();
            OBS.get_or_init(|| SummaryVec(vec![0.0]))
        }
        fn log_prior(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn sample_prior(&self, _: &mut StreamRng) -> Result<ParamPoint> {
            Ok(ParamPoint::new(vec![0.0], 0.0))
        }
        fn pilot_theta(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn simulate_into(&self, _: &[f64], _: &mut StreamRng, _: &mut [f64]) -> Result<()> {
            Err(AbcError::Simulator("solver diverged".into()))
        }
    }

    fn steep_schedule() -> TruncationSchedule {
        TruncationSchedule::new(0.4, 0.2, 1).unwrap()
    }

    #[test]
    fn schedule_reference_levels() {
        let s = steep_schedule();
        let (e0, n0, w0) = schedule_level(&s, 0);
        assert_relative_eq!(e0, 0.588566, epsilon = 1e-6);
        assert_eq!(n0, 15);
        assert_eq!(w0, 1.0);
        let (e1, n1, w1) = schedule_level(&s, 1);
        assert_relative_eq!(e1, 0.346410, epsilon = 1e-6);
        assert_eq!(n1, 201);
        assert_relative_eq!(w1, 1.0 / 0.6, epsilon = 1e-12);
        for (rho, tau, d) in [(0.1, 0.9, 3), (0.8, 0.1, 2)] {
            assert_eq!(TruncationSchedule::new(rho, tau, d).unwrap().omega(0), 1.0);
        }
    }

    #[test]
    fn schedule_is_monotone() {
        let s = TruncationSchedule::new(0.3, 0.7, 2).unwrap();
        for k in 0..30 {
            assert!(s.eps(k + 1) < s.eps(k));
            assert!(s.n(k + 1) >= s.n(k));
            assert!(s.omega(k) >= 1.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(TruncationSchedule::new(0.0, 0.5, 1).is_err());
        assert!(TruncationSchedule::new(1.0, 0.5, 1).is_err());
        assert!(TruncationSchedule::new(0.5, 0.0, 1).is_err());
        assert!(TruncationSchedule::new(0.5, 1.0, 1).is_err());
        assert!(TruncationSchedule::new(0.5, 0.5, 0).is_err());
        assert!(TruncationSchedule::new(f64::NAN, 0.5, 1).is_err());
    }

    #[test]
    fn huge_levels_saturate() {
        let s = steep_schedule();
        assert_eq!(s.n(400), u64::MAX);
        assert!(s.ln_n(400).is_finite());
    }

    #[test]
    fn truncation_moments() {
        let mut rng = stream(11, "trunc", 0);
        let n = 1_000_000;
        let draws: Vec<u32> = (0..n).map(|_| sample_truncation(0.4, &mut rng).unwrap()).collect();
        let mean = draws.iter().map(|&t| t as f64).sum::<f64>() / n as f64;
        let p0 = draws.iter().filter(|&&t| t == 0).count() as f64 / n as f64;
        assert!((mean - 1.5).abs() < 0.01, "{mean}");
        assert!((p0 - 0.4).abs() < 0.005, "{p0}");

        let nonzero = (0..10_000)
            .filter(|_| sample_truncation(0.999, &mut rng).unwrap() > 0)
            .count();
        assert!(nonzero < 50);
        assert!(sample_truncation(1.5, &mut rng).is_err());
    }

    #[test]
    fn degenerate_simulator_levels() {
        let m = Degenerate(SummaryVec(vec![1.5]));
        let s = steep_schedule();
        let spec = KernelSpec::product_gaussian(1).unwrap();
        let mut pool = SummaryPool::new(1);
        let mut rng = stream(0, "deg", 0);
        let p = ParamPoint::new(vec![0.0], 0.0);
        for k in 0..3 {
            let z = zeta_at_level(&m, &p, &s, k, &mut pool, &mut rng).unwrap();
            assert_relative_eq!(z.zeta, spec.scaled(&[0.0], s.eps(k)).unwrap(), max_relative = 1e-12);
        }

        // Telescoped value with T = 1 by hand.
        let z0 = spec.scaled(&[0.0], s.eps(0)).unwrap();
        let z1 = spec.scaled(&[0.0], s.eps(1)).unwrap();
        let expected = z0 + s.omega(1) * (z1 - z0);
        let mut found = false;
        let capped = s.with_caps(50, 1 << 16);
        for seed in 0..200 {
            let e = match debiased_likelihood(&m, &[0.0], &capped, &mut stream(seed, "deg", 1)) {
                Err(AbcError::Resource { .. }) => continue,
                r => r.unwrap(),
            };
            if e.truncation == 0 {
                assert_eq!(e.value, e.levels[0].zeta);
            }
            if e.truncation == 1 {
                assert_relative_eq!(e.value, expected, max_relative = 1e-12);
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn pool_reuse_accounting() {
        let m = gaussian_model();
        let s = steep_schedule();
        let p = ParamPoint::new(vec![0.5], 0.0);
        let mut pool = SummaryPool::new(1);
        let mut rng = stream(3, "pool", 0);
        zeta_at_level(&m, &p, &s, 0, &mut pool, &mut rng).unwrap();
        assert_eq!(pool.len(), 15);
        let before = pool.len();
        zeta_at_level(&m, &p, &s, 1, &mut pool, &mut rng).unwrap();
        assert_eq!(pool.len() - before, 201 - 15);
        // Going back down simulates nothing.
        zeta_at_level(&m, &p, &s, 0, &mut pool, &mut rng).unwrap();
        assert_eq!(pool.len(), 201);
    }

    #[test]
    fn streaming_matches_pool_bitwise() {
        let m = gaussian_model();
        let s = steep_schedule();
        let p = ParamPoint::new(vec![0.7], 0.0);
        for seed in 0..40 {
            let e = debiased_likelihood(&m, &p.theta, &s, &mut stream(seed, "reuse", 0)).unwrap();
            if e.truncation > 3 {
                continue;
            }
            let mut rng = stream(seed, "reuse", 0);
            let t = sample_truncation(s.rho(), &mut rng).unwrap();
            assert_eq!(t, e.truncation);
            let mut pool = SummaryPool::new(1);
            let levels: Vec<LevelEstimate> = (0..=t)
                .map(|k| zeta_at_level(&m, &p, &s, k, &mut pool, &mut rng).unwrap())
                .collect();
            assert_eq!(levels, e.levels);
            assert_eq!(telescope(&levels, &s).to_bits(), e.value.to_bits());
            assert_eq!(pool.len() as u64, e.total_simulations);
            assert_eq!(e.total_simulations, s.n(t));
        }
    }

    #[test]
    fn level_cap_is_a_resource_error() {
        let m = gaussian_model();
        // rho tiny: T is almost surely larger than the cap of 2.
        let s = TruncationSchedule::new(0.01, 0.99, 1).unwrap().with_caps(2, u64::MAX);
        let err = debiased_likelihood(&m, &[0.0], &s, &mut stream(0, "cap", 0)).unwrap_err();
        assert!(matches!(err, AbcError::Resource { cap: "max_level", .. }), "{err}");
        assert_eq!(err.exit_code(), 4);

        let s = TruncationSchedule::new(0.01, 0.5, 1).unwrap().with_caps(50, 10);
        let err = debiased_likelihood(&m, &[0.0], &s, &mut stream(0, "cap", 0)).unwrap_err();
        assert!(matches!(err, AbcError::Resource { cap: "max_pool", .. }), "{err}");
    }

    #[test]
    fn simulator_failure_propagates() {
        let s = steep_schedule();
        let err = debiased_likelihood(&Failing, &[0.0], &s, &mut stream(0, "f", 0)).unwrap_err();
        assert!(matches!(err, AbcError::Simulator(_)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = TruncationSchedule::new(0.4, 0.2, 2).unwrap();
        assert!(debiased_likelihood(&gaussian_model(), &[0.0], &s, &mut stream(0, "d", 0)).is_err());
    }

    #[test]
    fn averaging() {
        let m = gaussian_model();
        let s = steep_schedule();
        let single = debiased_likelihood(&m, &[0.5], &s, &mut stream(9, "avg", 0)).unwrap();
        let avg1 = averaged_likelihood(&m, &[0.5], &s, 1, &mut stream(9, "avg", 0)).unwrap();
        assert_eq!(single, avg1);
        assert!(avg1.sample_variance.is_none());
        assert!(averaged_likelihood(&m, &[0.5], &s, 0, &mut stream(9, "avg", 0)).is_err());

        let deg = Degenerate(SummaryVec(vec![0.0]));
        // rho close to 1: every replication truncates at 0 in practice.
        let s = TruncationSchedule::new(0.999_999, 0.2, 1).unwrap();
        let e = averaged_likelihood(&deg, &[0.0], &s, 8, &mut stream(1, "avg", 1)).unwrap();
        assert_eq!(e.sample_variance, Some(0.0));
        assert_eq!(e.replications, 8);
    }

    #[test]
    fn condition_bound_values() {
        let s = steep_schedule();
        let one = condition_bound(&s, 1).unwrap();
        assert_relative_eq!(one, (0.12 + 1.0 / (15.0 * 0.588566)) / 0.6, epsilon = 1e-5);
        assert!((one - 0.38877).abs() < 5e-5);
        assert!(condition_bound(&s, 50).unwrap() < 0.5);
        let mut prev = 0.0;
        for k in 1..60 {
            let v = condition_bound(&s, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(condition_bound(&s, 0).is_err());
    }

    #[test]
    fn calibration_trivial_target() {
        let m = gaussian_model();
        let s = TruncationSchedule::new(0.9, 0.9, 1).unwrap();
        let opts = CalibrationOptions {
            pilot_size: 50,
            ..Default::default()
        };
        let c = calibrate_nrep(&m, &[0.5], &s, 1e6, &opts, 1).unwrap();
        assert_eq!(c.n_rep, 1);
        assert!(calibrate_nrep(&m, &[0.5], &s, 0.0, &opts, 1).is_err());
    }

    #[test]
    fn calibration_fails_on_all_zero_pilot() {
        // Observed summary so far away that every kernel value underflows.
        let m = crate::model::GaussianModel::new(1e6);
        let s = TruncationSchedule::new(0.9, 0.9, 1).unwrap();
        let opts = CalibrationOptions {
            pilot_size: 20,
            ..Default::default()
        };
        let err = calibrate_nrep(&m, &[0.0], &s, 1.0, &opts, 1).unwrap_err();
        assert!(matches!(err, AbcError::Calibration(_)), "{err}");
    }

    #[test]
    fn level_zero_bias_matches_gaussian_convolution() {
        let m = gaussian_model();
        let s = steep_schedule();
        let p = ParamPoint::new(vec![0.5], 0.0);
        let reps = 10_000;
        let zs: Vec<f64> = (0..reps)
            .map(|r| {
                let mut pool = SummaryPool::new(1);
                zeta_at_level(&m, &p, &s, 0, &mut pool, &mut stream(21, "z0", r))
                    .unwrap()
                    .zeta
            })
            .collect();
        assert!(zs.iter().all(|z| *z >= 0.0));
        let (mean, var) = mean_and_variance(&zs);
        let se = (var.unwrap() / reps as f64).sqrt();
        // N(0; 0.5, 1 + eps_0^2) with eps_0^2 = 0.12^0.5.
        let target = normal_pdf(0.0, 0.5, 1.0 + s.eps(0).powi(2));
        assert_relative_eq!(target, 0.313330, epsilon = 1e-6);
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target} (se {se})");
    }
}
