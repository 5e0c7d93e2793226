//! Ising model on a free-boundary rectangular lattice.
//!
//! `p(y | theta) = exp(theta S(y)) / C(theta)` where `S` sums the products of
//! horizontally and vertically adjacent spins. Pseudo-data come from
//! single-site Gibbs sweeps; small lattices (at most 20 sites) can be
//! enumerated exactly, which gives `C(theta)`, the law of `S` and the exact
//! posterior under the uniform prior on `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{AbcError, Result};
use crate::model::{ParamPoint, SimulatorModel, SummaryVec};
use crate::rng::{stream, StreamRng};

/// Largest lattice (in sites) accepted by the enumeration oracles.
pub const MAX_ENUMERATION_SITES: usize = 20;

/// Gibbs sweeps per simulated lattice unless configured otherwise.
pub const DEFAULT_SWEEPS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Lattice {
    rows: usize,
    cols: usize,
    spins: Vec<i8>,
}

impl Lattice {
    pub fn new(rows: usize, cols: usize, spins: Vec<i8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AbcError::Input(format!("lattice must be nonempty, got {rows}x{cols}")));
        }
        if spins.len() != rows * cols {
            return Err(AbcError::Dimension {
                expected: rows * cols,
                got: spins.len(),
            });
        }
        if let Some(bad) = spins.iter().find(|s| **s != 1 && **s != -1) {
            return Err(AbcError::Input(format!("spins must be +1 or -1, found {bad}")));
        }
        Ok(Self { rows, cols, spins })
    }

    pub fn filled(rows: usize, cols: usize, spin: i8) -> Result<Self> {
        Self::new(rows, cols, vec![spin; rows * cols])
    }

    /// Independent fair spins.
    pub fn random<R: RngCore>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let spins = (0..rows * cols)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self::new(rows, cols, spins)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.spins[i * self.cols + j]
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    /// Global spin flip `y -> -y`.
    pub fn flipped(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    fn neighbor_sum(&self, i: usize, j: usize) -> i32 {
        let w = self.cols;
        let idx = i * w + j;
        let mut m = 0i32;
        if i > 0 {
            m += self.spins[idx - w] as i32;
        }
        if i + 1 < self.rows {
            m += self.spins[idx + w] as i32;
        }
        if j > 0 {
            m += self.spins[idx - 1] as i32;
        }
        if j + 1 < w {
            m += self.spins[idx + 1] as i32;
        }
        m
    }
}

/// One row per line, `+` for +1 and `-` for -1.
impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.spins.chunks(self.cols) {
            let line: String = row.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl FromStr for Lattice {
    type Err = AbcError;

    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        let mut spins = Vec::with_capacity(rows * cols);
        for line in &lines {
            if line.chars().count() != cols {
                return Err(AbcError::Input("ragged lattice dump".into()));
            }
            for c in line.chars() {
                spins.push(match c {
                    '+' => 1,
                    '-' => -1,
                    other => return Err(AbcError::Input(format!("unexpected spin character {other:?}"))),
                });
            }
        }
        Lattice::new(rows, cols, spins)
    }
}

/// Number of nearest-neighbour bonds, `2LW - L - W`; also the bound on `|S|`.
pub fn bond_count(rows: usize, cols: usize) -> i64 {
    2 * (rows * cols) as i64 - rows as i64 - cols as i64
}

/// `S(y)`: sum of products of vertically and horizontally adjacent spins.
pub fn suff_stat(lat: &Lattice) -> i64 {
    let (l, w) = (lat.rows, lat.cols);
    let mut s = 0i64;
    for i in 0..l {
        for j in 0..w {
            let y = lat.get(i, j) as i64;
            if i + 1 < l {
                s += y * lat.get(i + 1, j) as i64;
            }
            if j + 1 < w {
                s += y * lat.get(i, j + 1) as i64;
            }
        }
    }
    s
}

/// `(P(+1 | m), P(-1 | m))` for a site whose neighbours sum to `m`.
pub fn conditional_probs(theta: f64, m: i32) -> (f64, f64) {
    let plus = 1.0 / (1.0 + (-2.0 * theta * m as f64).exp());
    let minus = 1.0 / (1.0 + (2.0 * theta * m as f64).exp());
    (plus, minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub theta: f64,
    /// Full raster-scan sweeps per simulated lattice.
    pub sweeps: u32,
}

/// `P(+1 | m)` as a 32-bit threshold for `m` in `-4..=4`.
fn plus_thresholds(theta: f64) -> [u64; 9] {
    let mut t = [0u64; 9];
    for (slot, m) in t.iter_mut().zip(-4i32..=4) {
        *slot = (conditional_probs(theta, m).0 * 4_294_967_296.0).round() as u64;
    }
    t
}

/// Run `sweeps` raster-scan Gibbs sweeps on `lat` in place.
pub fn gibbs_sweeps(lat: &mut Lattice, theta: f64, sweeps: u32, rng: &mut StreamRng) {
    let thresholds = plus_thresholds(theta);
    for _ in 0..sweeps {
        for i in 0..lat.rows {
            for j in 0..lat.cols {
                let m = lat.neighbor_sum(i, j);
                let up = (rng.next_u32() as u64) < thresholds[(m + 4) as usize];
                lat.spins[i * lat.cols + j] = if up { 1 } else { -1 };
            }
        }
    }
}

/// Approximate draw from `p(. | theta)`: uniform random start, then
/// `params.sweeps` Gibbs sweeps.
pub fn gibbs_simulate(params: &IsingParams, rows: usize, cols: usize, rng: &mut StreamRng) -> Result<Lattice> {
    if params.sweeps < 1 {
        return Err(AbcError::Input("at least one Gibbs sweep is required".into()));
    }
    let mut lat = Lattice::random(rows, cols, rng)?;
    gibbs_sweeps(&mut lat, params.theta, params.sweeps, rng);
    Ok(lat)
}

/// Number of configurations attaining each value of `S`.
pub fn stat_counts(rows: usize, cols: usize) -> Result<BTreeMap<i64, u64>> {
    let n = rows * cols;
    if rows == 0 || cols == 0 {
        return Err(AbcError::Input("lattice must be nonempty".into()));
    }
    if n > MAX_ENUMERATION_SITES {
        return Err(AbcError::Resource {
            cap: "enumeration_sites",
            requested: n.to_string(),
            limit: MAX_ENUMERATION_SITES.to_string(),
        });
    }
    // Bit r*W + c holds site (r, c); a set bit in x ^ (x >> shift) under the
    // mask marks a disagreeing bond.
    let mut hmask = 0u32;
    let mut vmask = 0u32;
    for r in 0..rows {
        for c in 0..cols {
            let bit = 1u32 << (r * cols + c);
            if c + 1 < cols {
                hmask |= bit;
            }
            if r + 1 < rows {
                vmask |= bit;
            }
        }
    }
    let bonds = bond_count(rows, cols);
    let mut tally = vec![0u64; bonds as usize + 1];
    for x in 0u32..(1u32 << n) {
        let disagree = ((x ^ (x >> 1)) & hmask).count_ones() + ((x ^ (x >> cols)) & vmask).count_ones();
        tally[disagree as usize] += 1;
    }
    Ok(tally
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(d, c)| (bonds - 2 * d as i64, c))
        .collect())
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn log_partition(counts: &BTreeMap<i64, u64>, theta: f64) -> f64 {
    log_sum_exp(counts.iter().map(|(&s, &g)| (g as f64).ln() + theta * s as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    /// `log C(theta)`.
    pub log_c: f64,
    /// `P(S = s | theta)`.
    pub stat_pmf: BTreeMap<i64, f64>,
}

/// Brute-force `C(theta)` and the law of `S` over all `2^(LW)` configurations.
pub fn exact_enumeration(rows: usize, cols: usize, theta: f64) -> Result<Enumeration> {
    let counts = stat_counts(rows, cols)?;
    let log_c = log_partition(&counts, theta);
    let stat_pmf = counts
        .iter()
        .map(|(&s, &g)| (s, ((g as f64).ln() + theta * s as f64 - log_c).exp()))
        .collect();
    Ok(Enumeration { log_c, stat_pmf })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorOracle {
    pub posterior_mean: f64,
    /// `int_0^1 P(S = s_obs | theta) d theta`.
    pub marginal: f64,
}

/// Exact posterior mean of `theta` and marginal probability of `s_obs` under
/// the `U(0, 1)` prior, by composite Simpson quadrature on `quad_points`
/// intervals (rounded up to even).
pub fn posterior_oracle(rows: usize, cols: usize, s_obs: i64, quad_points: usize) -> Result<PosteriorOracle> {
    if quad_points < 64 {
        return Err(AbcError::Input(format!(
            "need at least 64 quadrature points, got {quad_points}"
        )));
    }
    let counts = stat_counts(rows, cols)?;
    let g_obs = match counts.get(&s_obs) {
        Some(&g) => g as f64,
        None => {
            return Err(AbcError::Input(format!(
                "S = {s_obs} is not attainable on a {rows}x{cols} lattice"
            )))
        }
    };
    let n = quad_points + quad_points % 2;
    let h = 1.0 / n as f64;
    let mut mass = 0.0;
    let mut first = 0.0;
    for i in 0..=n {
        let theta = i as f64 * h;
        let p = (g_obs.ln() + theta * s_obs as f64 - log_partition(&counts, theta)).exp();
        let coeff = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        mass += coeff * p;
        first += coeff * theta * p;
    }
    mass *= h / 3.0;
    first *= h / 3.0;
    Ok(PosteriorOracle {
        posterior_mean: first / mass,
        marginal: mass,
    })
}

/// The Ising example as a simulator model.
///
/// `S` only takes values of one parity, spaced 2 apart. Each simulated
/// statistic is spread uniformly over its cell `(S - 1, S + 1)`, which makes
/// the summary continuous with density `P(S = s | theta) / 2` around every
/// attainable value (in particular at `s_obs`). Without the spreading the
/// kernel likelihood at bandwidth `eps` grows like `1 / eps` and the debiased
/// series has no finite limit. The posterior is unchanged; the marginal
/// likelihood reported by the sampler is `P(S = s_obs) / 2` integrated over
/// the prior (see [`IsingModel::summary_spacing`]).
#[derive(Debug, Clone)]
pub struct IsingModel {
    rows: usize,
    cols: usize,
    sweeps: u32,
    observed_lattice: Lattice,
    observed: SummaryVec,
}

impl IsingModel {
    /// Use `y_obs` as the observed data.
    pub fn from_lattice(y_obs: Lattice, sweeps: u32) -> Result<Self> {
        if sweeps < 1 {
            return Err(AbcError::Input("at least one Gibbs sweep is required".into()));
        }
        let s = suff_stat(&y_obs) as f64;
        Ok(Self {
            rows: y_obs.rows,
            cols: y_obs.cols,
            sweeps,
            observed: SummaryVec(vec![s]),
            observed_lattice: y_obs,
        })
    }

    /// Generate `y_obs` by Gibbs sampling at `theta_obs` on the stream
    /// `(observed_seed, "ising/observed", 0)`.
    pub fn simulated(rows: usize, cols: usize, sweeps: u32, theta_obs: f64, observed_seed: u64) -> Result<Self> {
        let mut rng = stream(observed_seed, "ising/observed", 0);
        let params = IsingParams {
            theta: theta_obs,
            sweeps,
        };
        let y = gibbs_simulate(&params, rows, cols, &mut rng)?;
        Self::from_lattice(y, sweeps)
    }

    pub fn observed_lattice(&self) -> &Lattice {
        &self.observed_lattice
    }

    pub fn observed_stat(&self) -> i64 {
        suff_stat(&self.observed_lattice)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sweeps(&self) -> u32 {
        self.sweeps
    }

    /// Gap between attainable values of `S`. Multiply the sampler's marginal
    /// likelihood by this to get the probability `int P(S = s_obs | theta) p(theta)`.
    pub fn summary_spacing(&self) -> f64 {
        2.0
    }
}

impl SimulatorModel for IsingModel {
    fn name(&self) -> &str {
        "ising"
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

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if (0.0..=1.0).contains(&theta[0]) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<ParamPoint> {
        Ok(ParamPoint::new(vec![rng.random::<f64>()], 0.0))
    }

    fn pilot_theta(&self) -> Vec<f64> {
        vec![0.5]
    }

    fn simulate_into(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        let params = IsingParams {
            theta: theta[0],
            sweeps: self.sweeps,
        };
        let lat = gibbs_simulate(&params, self.rows, self.cols, rng)?;
        let u: f64 = rng.random();
        out[0] = suff_stat(&lat) as f64 + self.summary_spacing() * (u - 0.5);
        Ok(())
    }
}
