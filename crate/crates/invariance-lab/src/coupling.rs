//! Couplings and distance oracles.
//!
//! Three groups of tools live here:
//!
//! * exact Prokhorov distance between small finite distributions (brute
//!   force over subsets via the coupling characterization), and the
//!   smoothing upper bound `(T/π)^{d/2}·‖p̂−q̂‖_{L²} + P(‖x‖_∞ > T)`;
//! * a sampler for the smoothing variable V whose characteristic function
//!   is C^∞ with exact support [−ε₀, ε₀] (normalized autoconvolution of a
//!   half-support bump, so the density |ĥ|² is nonnegative by
//!   construction and V has finite moments of all orders);
//! * the per-island path coupling: the realized island sum is pushed
//!   through a randomized probability integral transform onto a normal
//!   W″ of matching variance, and the island's standard normals are drawn
//!   conditioned on `Σ_{i≤i*} W_i + f·ξ = W″` with i* = min{|I|, ⌊σ²⌋}
//!   and f² = |σ² − i*|, so per-index normals stay standard while the
//!   island total tracks the sampled path.
//!
//! The direction of the coupling keeps the sampled path fixed and couples
//! the Gaussian side to it; both marginals are exact and the measured
//! sup-discrepancy is the same statistic.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::chains::{ChainModel, FiniteChain};
use crate::partition::BlockPartition;
use crate::rng::{domain, stream_rng, uniform_open01};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("combined support of {got} points exceeds the brute-force limit {limit}; use a sampling-based estimate")]
    SupportTooLarge { got: usize, limit: usize },
    #[error("finite distribution invalid: {0}")]
    BadDistribution(String),
    #[error("quantile query y = {y} is not covered by the CDF table (max F = {max_f})")]
    QuantileOutOfRange { y: f64, max_f: f64 },
    #[error("CDF table must be nondecreasing and end at 1")]
    BadCdfTable,
    #[error("smoothing grid of {got} points is too coarse; need at least {need}")]
    GridTooCoarse { got: usize, need: usize },
    #[error("numerical inversion produced density {value} below -1e-9; grid too coarse")]
    NegativeDensity { value: f64 },
    #[error("quadrature truncation error {error} exceeds 1% of the value {value}")]
    TruncationTooCoarse { error: f64, value: f64 },
    #[error("sigma must be positive, got {sigma}")]
    BadSigma { sigma: f64 },
    #[error("partition does not cover N = {n}")]
    PartitionMismatch { n: u64 },
}

// ---------------------------------------------------------------------------
// Finite distributions and the exact Prokhorov distance
// ---------------------------------------------------------------------------

/// Discrete distribution on at most a few points of R^d, d ≤ 3.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteDist {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl FiniteDist {
    pub fn new(points: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self, CouplingError> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(CouplingError::BadDistribution(
                "need matching non-empty points and probs".into(),
            ));
        }
        let dim = points[0].len();
        if dim == 0 || dim > 3 || points.iter().any(|p| p.len() != dim) {
            return Err(CouplingError::BadDistribution(format!(
                "points must share a dimension in 1..=3, got {dim}"
            )));
        }
        if probs.iter().any(|&w| w < 0.0) {
            return Err(CouplingError::BadDistribution("negative weight".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CouplingError::BadDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(CouplingError::BadDistribution(
                        "support points must be distinct".into(),
                    ));
                }
            }
        }
        Ok(Self { dim, points, probs })
    }

    pub fn on_line(points: Vec<f64>, probs: Vec<f64>) -> Result<Self, CouplingError> {
        Self::new(points.into_iter().map(|x| vec![x]).collect(), probs)
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            dim: 1,
            points: vec![vec![x]],
            probs: vec![1.0],
        }
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One-sided Prokhorov value: the smallest ε with P(B) ≤ Q(B^ε) + ε for
/// every subset B of P's support.
fn prokhorov_directed(p: &FiniteDist, q: &FiniteDist) -> f64 {
    let np = p.points.len();
    let nq = q.points.len();
    // pairwise sup-metric distances
    let mut dist = vec![vec![0.0; nq]; np];
    for i in 0..np {
        for j in 0..nq {
            dist[i][j] = sup_dist(&p.points[i], &q.points[j]);
        }
    }

    let mut worst: f64 = 0.0;
    for mask in 1u32..(1 << np) {
        let p_mass: f64 = (0..np)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| p.probs[i])
            .sum();
        // distance of each q-point to the set B
        let mut reach: Vec<(f64, f64)> = (0..nq)
            .map(|j| {
                let d = (0..np)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| dist[i][j])
                    .fold(f64::INFINITY, f64::min);
                (d, q.probs[j])
            })
            .collect();
        reach.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // scan the step function eps -> Q(B^eps)
        let mut best = f64::INFINITY;
        let mut cum = 0.0;
        let mut idx = 0;
        let mut lo = 0.0;
        loop {
            // absorb all q-points at distance == lo
            while idx < nq && reach[idx].0 <= lo {
                cum += reach[idx].1;
                idx += 1;
            }
            let hi = if idx < nq { reach[idx].0 } else { f64::INFINITY };
            let candidate = lo.max(p_mass - cum);
            if candidate < hi || (idx >= nq && candidate.is_finite()) {
                best = best.min(candidate);
            }
            if idx >= nq {
                break;
            }
            lo = hi;
        }
        worst = worst.max(best);
    }
    worst.max(0.0)
}

/// Exact Prokhorov distance under the sup metric, brute force over the
/// supports (combined size ≤ 12).
pub fn prokhorov_finite(p: &FiniteDist, q: &FiniteDist) -> Result<f64, CouplingError> {
    let got = p.points.len() + q.points.len();
    if got > 12 {
        return Err(CouplingError::SupportTooLarge { got, limit: 12 });
    }
    if p.dim != q.dim {
        return Err(CouplingError::BadDistribution(
            "distributions live in different dimensions".into(),
        ));
    }
    // the directed value is symmetric by Strassen duality; evaluating both
    // directions guards the floating-point arithmetic
    Ok(prokhorov_directed(p, q).max(prokhorov_directed(q, p)))
}

/// Total variation distance: one-sided sum max(0, P − Q) over the union
/// of supports.
pub fn total_variation(p: &FiniteDist, q: &FiniteDist) -> f64 {
    let q_mass = |pt: &Vec<f64>| -> f64 {
        q.points
            .iter()
            .position(|x| x == pt)
            .map_or(0.0, |j| q.probs[j])
    };
    p.points
        .iter()
        .zip(&p.probs)
        .map(|(pt, &w)| (w - q_mass(pt)).max(0.0))
        .sum()
}

/// Generalized inverse F⁻¹(y) = inf{x : F(x) > y} of a tabulated CDF.
pub fn generalized_inverse(table: &[(f64, f64)], y: f64) -> Result<f64, CouplingError> {
    if table.is_empty()
        || table.windows(2).any(|w| w[0].1 > w[1].1 || w[0].0 > w[1].0)
        || (table.last().unwrap().1 - 1.0).abs() > 1e-12
    {
        return Err(CouplingError::BadCdfTable);
    }
    match table.iter().find(|(_, f)| *f > y) {
        Some(&(x, _)) => Ok(x),
        None => Err(CouplingError::QuantileOutOfRange {
            y,
            max_f: table.last().unwrap().1,
        }),
    }
}

// ---------------------------------------------------------------------------
// Smoothing variable with compact-support characteristic function
// ---------------------------------------------------------------------------

/// Sampler for the smoothing variable V.
///
/// CF: φ_V = (h∗h)/(h∗h)(0) with h(t) = exp(1 − 1/(1 − (2t/ε₀)²)) on
/// |t| < ε₀/2, so supp φ_V = [−ε₀, ε₀] exactly. Density: |ĥ(x)|²
/// normalized, tabulated on a symmetric grid and sampled by inverse-CDF
/// lookup with linear interpolation.
#[derive(Debug, Clone)]
pub struct SmoothingSampler {
    pub epsilon0: f64,
    grid: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

fn half_bump(t: f64, epsilon0: f64) -> f64 {
    let u = 2.0 * t / epsilon0;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

impl SmoothingSampler {
    pub fn build(epsilon0: f64, grid_size: usize) -> Result<Self, CouplingError> {
        if grid_size < 1 << 10 {
            return Err(CouplingError::GridTooCoarse {
                got: grid_size,
                need: 1 << 10,
            });
        }
        if !(epsilon0 > 0.0 && epsilon0 <= 1.0) {
            return Err(CouplingError::BadDistribution(format!(
                "epsilon0 = {epsilon0} outside (0, 1]"
            )));
        }
        // h lives on [-eps0/2, eps0/2]; quadrature nodes for h_hat
        let t_nodes = 2048;
        let dt = epsilon0 / t_nodes as f64;
        let ts: Vec<f64> = (0..=t_nodes)
            .map(|i| -0.5 * epsilon0 + i as f64 * dt)
            .collect();
        let hs: Vec<f64> = ts.iter().map(|&t| half_bump(t, epsilon0)).collect();

        // density support scales like 1/eps0
        let x_max = 240.0 / epsilon0;
        let m = if grid_size.is_multiple_of(2) { grid_size + 1 } else { grid_size };
        let half = (m / 2) as i64;
        let grid: Vec<f64> = (-half..=half)
            .map(|i| x_max * i as f64 / half as f64)
            .collect();

        let mut density: Vec<f64> = grid
            .par_iter()
            .map(|&x| {
                // trapezoid on a smooth compactly supported integrand
                let mut acc = 0.0;
                for i in 0..ts.len() {
                    let w = if i == 0 || i + 1 == ts.len() { 0.5 } else { 1.0 };
                    acc += w * hs[i] * (x * ts[i]).cos();
                }
                let h_hat = acc * dt;
                h_hat * h_hat
            })
            .collect();

        let min_density = density.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_density < -1e-9 {
            return Err(CouplingError::NegativeDensity { value: min_density });
        }
        density.iter_mut().for_each(|v| *v = v.max(0.0));

        // normalize and accumulate the CDF by trapezoid
        let dx = grid[1] - grid[0];
        let mut cdf = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (density[i - 1] + density[i]) * dx;
        }
        let mass = cdf[grid.len() - 1];
        cdf.iter_mut().for_each(|v| *v /= mass);
        density.iter_mut().for_each(|v| *v /= mass);

        Ok(Self {
            epsilon0,
            grid,
            density,
            cdf,
        })
    }

    /// Inverse-CDF draw with linear interpolation between table nodes.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u = uniform_open01(rng);
        let idx = self.cdf.partition_point(|&c| c <= u);
        if idx == 0 {
            return self.grid[0];
        }
        if idx >= self.cdf.len() {
            return *self.grid.last().unwrap();
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let (x0, x1) = (self.grid[idx - 1], self.grid[idx]);
        if c1 > c0 {
            x0 + (x1 - x0) * (u - c0) / (c1 - c0)
        } else {
            x0
        }
    }

    /// k-th absolute moment of the tabulated density (quadrature).
    pub fn table_moment(&self, k: i32) -> f64 {
        let dx = self.grid[1] - self.grid[0];
        self.grid
            .iter()
            .zip(&self.density)
            .map(|(&x, &d)| x.abs().powi(k) * d * dx)
            .sum()
    }

    /// Variance of the tabulated law.
    pub fn variance(&self) -> f64 {
        self.table_moment(2)
    }

    /// True characteristic function (autoconvolution of the bump),
    /// exactly zero outside [−ε₀, ε₀].
    pub fn cf_true(&self, t: f64) -> f64 {
        if t.abs() >= self.epsilon0 {
            return 0.0;
        }
        let nodes = 4096;
        let dt = self.epsilon0 / nodes as f64;
        let conv_at = |tau: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..=nodes {
                let s = -0.5 * self.epsilon0 + i as f64 * dt;
                let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
                acc += w * half_bump(s, self.epsilon0) * half_bump(tau - s, self.epsilon0);
            }
            acc * dt
        };
        conv_at(t) / conv_at(0.0)
    }
}

// ---------------------------------------------------------------------------
// Smoothing-lemma upper bound for Gaussian mixtures
// ---------------------------------------------------------------------------

/// One-dimensional Gaussian mixture with closed-form CF and CDF.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMixture {
    /// (weight, mean, standard deviation) triples.
    pub comps: Vec<(f64, f64, f64)>,
}

impl GaussianMixture {
    pub fn new(comps: Vec<(f64, f64, f64)>) -> Result<Self, CouplingError> {
        let total: f64 = comps.iter().map(|c| c.0).sum();
        if comps.is_empty() || (total - 1.0).abs() > 1e-12 || comps.iter().any(|c| c.2 <= 0.0) {
            return Err(CouplingError::BadDistribution(
                "mixture weights must sum to 1 with positive sds".into(),
            ));
        }
        Ok(Self { comps })
    }

    pub fn cf_sq_diff(&self, other: &Self, t: f64) -> f64 {
        let eval = |m: &Self| {
            let mut re = 0.0;
            let mut im = 0.0;
            for &(w, mu, sd) in &m.comps {
                let amp = w * (-0.5 * sd * sd * t * t).exp();
                re += amp * (mu * t).cos();
                im += amp * (mu * t).sin();
            }
            (re, im)
        };
        let (pr, pi) = eval(self);
        let (qr, qi) = eval(other);
        (pr - qr).powi(2) + (pi - qi).powi(2)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let std = Normal::new(0.0, 1.0).unwrap();
        self.comps
            .iter()
            .map(|&(w, mu, sd)| w * std.cdf((x - mu) / sd))
            .sum()
    }

    pub fn tail_outside(&self, t: f64) -> f64 {
        (1.0 - (self.cdf(t) - self.cdf(-t))).max(0.0)
    }

    fn min_sd(&self) -> f64 {
        self.comps.iter().map(|c| c.2).fold(f64::INFINITY, f64::min)
    }

    /// Quantile-midpoint discretization onto n points (oracle helper).
    pub fn discretize(&self, n: usize) -> FiniteDist {
        let lo = self
            .comps
            .iter()
            .map(|&(_, mu, sd)| mu - 10.0 * sd)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .comps
            .iter()
            .map(|&(_, mu, sd)| mu + 10.0 * sd)
            .fold(f64::NEG_INFINITY, f64::max);
        let quantile = |p: f64| -> f64 {
            let mut a = lo;
            let mut b = hi;
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if self.cdf(mid) < p {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let points: Vec<f64> = (0..n)
            .map(|i| quantile((i as f64 + 0.5) / n as f64))
            .collect();
        FiniteDist::on_line(points, vec![1.0 / n as f64; n]).expect("valid discretization")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothingRhs {
    pub value: f64,
    pub cf_term: f64,
    pub tail_term: f64,
    pub truncation_bound: f64,
}

/// Right-hand side (T/π)^{1/2}·(∫|p̂−q̂|² dt)^{1/2} + P(|x| > T) for 1-D
/// mixtures; quadrature over |t| ≤ 8/min sd with the analytic tail bound
/// reported, erroring when the truncation exceeds 1% of the value.
pub fn smoothing_lemma_rhs(
    p: &GaussianMixture,
    q: &GaussianMixture,
    t_cap: f64,
) -> Result<SmoothingRhs, CouplingError> {
    let sd_min = p.min_sd().min(q.min_sd());
    let t_lim = 8.0 / sd_min;
    let n = 16384usize;
    let dt = 2.0 * t_lim / n as f64;
    let mut integral = 0.0;
    for i in 0..=n {
        let t = -t_lim + i as f64 * dt;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        integral += w * p.cf_sq_diff(q, t);
    }
    integral *= dt;

    // |p̂−q̂|² ≤ 4·exp(−sd_min²t²); two-sided gaussian tail
    let std = Normal::new(0.0, 1.0).unwrap();
    let tail_mass = 2.0 * (1.0 - std.cdf(std::f64::consts::SQRT_2 * sd_min * t_lim));
    let integral_tail = 4.0 * (std::f64::consts::PI.sqrt() / sd_min) * tail_mass;

    let cf_term = (t_cap / std::f64::consts::PI).sqrt() * integral.sqrt();
    let tail_term = p.tail_outside(t_cap);
    let value = cf_term + tail_term;
    // first-order effect of the missing integral mass on the cf term
    let truncation_bound = if integral > 0.0 {
        (t_cap / std::f64::consts::PI).sqrt()
            * ((integral + integral_tail).sqrt() - integral.sqrt())
    } else {
        (t_cap / std::f64::consts::PI).sqrt() * integral_tail.sqrt()
    };
    if truncation_bound > 0.01 * value && value > 0.0 {
        return Err(CouplingError::TruncationTooCoarse {
            error: truncation_bound,
            value,
        });
    }
    Ok(SmoothingRhs {
        value,
        cf_term,
        tail_term,
        truncation_bound,
    })
}

// ---------------------------------------------------------------------------
// Path coupling
// ---------------------------------------------------------------------------

/// An island's position range inside the sampled path (1-based, half-open).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IslandSpec {
    pub k: u32,
    pub j: u32,
    pub start: u64,
    pub end: u64,
}

impl IslandSpec {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Shared per-(model, partition, N) coupling inputs: island layout,
/// sorted auxiliary island sums for the empirical CDFs, and island-sum
/// variances in normalized units (exact for finite chains).
pub struct CouplingPlan {
    pub n: u64,
    pub mu: f64,
    pub sigma: f64,
    pub islands: Vec<IslandSpec>,
    pub aux_sums: Vec<Vec<f64>>,
    pub sigma2_norm: Vec<f64>,
    pub variance_exact: bool,
    pub epsilon: f64,
    pub beta: f64,
    pub k0: u32,
    pub smoothing: Option<SmoothingSampler>,
}

/// Per-island record of one realized coupling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IslandRecord {
    pub k: u32,
    pub j: u32,
    pub len: usize,
    /// Raw island sum Σ f(X_i).
    pub sum: f64,
    /// Randomized probability integral transform of the normalized sum.
    pub u: f64,
    /// Coupled normal with variance sigma2_kj.
    pub w_pp: f64,
    pub sigma2_kj: f64,
    pub i_star: usize,
    pub f_kj: f64,
    /// |Σ_{i≤i*} W_i + f·ξ − W″| — zero up to roundoff by construction.
    pub residual: f64,
    pub degenerate: bool,
}

/// One realized pair of paths with per-island coupling metadata.
pub struct CouplingTrace {
    pub x_path: Vec<f64>,
    pub w_path: Vec<f64>,
    pub islands: Vec<IslandRecord>,
    pub mu: f64,
    pub sigma: f64,
    pub n: u64,
    pub seed: u64,
    pub rep: u64,
}

/// Exact Var(Σ_{i∈I} f(X_i)) for each island, from the chain started at
/// its own x0 (distribution propagated across positions).
pub fn island_variances_exact(chain: &FiniteChain, islands: &[IslandSpec]) -> Vec<f64> {
    let n = chain.n_states();
    let f = &chain.f;
    let mut dist = vec![0.0; n];
    dist[chain.x0] = 1.0;
    let mut pos = 0u64; // dist = law of X_pos
    let mut next = vec![0.0; n];
    let step = |dist: &mut Vec<f64>, next: &mut Vec<f64>, p: &Vec<Vec<f64>>| {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (t, &pst) in p[s].iter().enumerate() {
                next[t] += mass * pst;
            }
        }
        std::mem::swap(dist, next);
    };

    let mut results = vec![0.0; islands.len()];
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..islands.len()).collect();
        idx.sort_by_key(|&i| islands[i].start);
        idx
    };
    for &isl_idx in &order {
        let isl = &islands[isl_idx];
        while pos < isl.start {
            step(&mut dist, &mut next, &chain.p);
            pos += 1;
        }
        let len = isl.len();
        // within-island marginals d_l and observable propagations h_m = P^m f
        let mut h = Vec::with_capacity(len);
        h.push(f.clone());
        for m in 1..len {
            let prev: &Vec<f64> = &h[m - 1];
            let mut hv = vec![0.0; n];
            for s in 0..n {
                for t in 0..n {
                    hv[s] += chain.p[s][t] * prev[t];
                }
            }
            h.push(hv);
        }
        let mut d = dist.clone();
        let mut dn = vec![0.0; n];
        let mut mean = 0.0;
        let mut second = 0.0;
        for l in 0..len {
            let e_fl: f64 = (0..n).map(|s| d[s] * f[s]).sum();
            mean += e_fl;
            // diagonal term E f(X_l)^2
            second += (0..n).map(|s| d[s] * f[s] * f[s]).sum::<f64>();
            // cross terms 2 E f(X_l) f(X_{l+m})
            for m in 1..(len - l) {
                second += 2.0 * (0..n).map(|s| d[s] * f[s] * h[m][s]).sum::<f64>();
            }
            step(&mut d, &mut dn, &chain.p);
        }
        results[isl_idx] = (second - mean * mean).max(0.0);
    }
    results
}

/// Build the shared coupling inputs: auxiliary trajectories for the
/// island CDFs and island variances.
#[allow(clippy::too_many_arguments)]
pub fn coupling_plan(
    model: &ChainModel,
    mu: f64,
    sigma: f64,
    partition: &BlockPartition,
    n: u64,
    reps_for_cdf: usize,
    seed: u64,
    smoothing: Option<SmoothingSampler>,
) -> Result<CouplingPlan, CouplingError> {
    if sigma <= 0.0 {
        return Err(CouplingError::BadSigma { sigma });
    }
    if partition.target != n {
        return Err(CouplingError::PartitionMismatch { n });
    }
    let islands = partition.islands_within(n);
    let specs: Vec<IslandSpec> = islands
        .iter()
        .map(|s| IslandSpec {
            k: s.k,
            j: s.j,
            start: s.start,
            end: s.end,
        })
        .collect();

    // auxiliary island sums, normalized; one stream per auxiliary path
    let per_path: Vec<Vec<f64>> = (0..reps_for_cdf)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, &[domain::AUX_CDF, n, r as u64]);
            let mut values = Vec::new();
            model.sample_into(n as usize, &mut rng, &mut values);
            specs
                .iter()
                .enumerate()
                .map(|(idx, isl)| {
                    let raw: f64 = values[(isl.start - 1) as usize..(isl.end - 1) as usize]
                        .iter()
                        .sum();
                    let mut s = (raw - isl.len() as f64 * mu) / sigma;
                    if let Some(sm) = &smoothing {
                        let mut vr = stream_rng(
                            seed,
                            &[domain::SMOOTHING, domain::AUX_CDF, n, r as u64, idx as u64],
                        );
                        s += sm.sample(&mut vr);
                    }
                    s
                })
                .collect()
        })
        .collect();

    let mut aux_sums: Vec<Vec<f64>> = vec![Vec::with_capacity(reps_for_cdf); specs.len()];
    for row in &per_path {
        for (idx, &s) in row.iter().enumerate() {
            aux_sums[idx].push(s);
        }
    }
    for sums in &mut aux_sums {
        sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    let (sigma2_norm, variance_exact) = match model {
        ChainModel::Finite(chain) => {
            let raw = island_variances_exact(chain, &specs);
            let extra = smoothing.as_ref().map_or(0.0, |s| s.variance());
            (
                raw.iter()
                    .map(|v| v / (sigma * sigma) + extra)
                    .collect::<Vec<f64>>(),
                true,
            )
        }
        _ => {
            let est: Vec<f64> = aux_sums
                .iter()
                .map(|sums| {
                    let m = sums.iter().sum::<f64>() / sums.len() as f64;
                    sums.iter().map(|s| (s - m).powi(2)).sum::<f64>()
                        / (sums.len() as f64 - 1.0)
                })
                .collect();
            (est, false)
        }
    };

    Ok(CouplingPlan {
        n,
        mu,
        sigma,
        islands: specs,
        aux_sums,
        sigma2_norm,
        variance_exact,
        epsilon: partition.epsilon,
        beta: partition.beta,
        k0: partition.k0,
        smoothing,
    })
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Realize one coupled pair of paths under a shared plan.
pub fn build_path_coupling_with(plan: &CouplingPlan, model: &ChainModel, seed: u64, rep: u64) -> CouplingTrace {
    let n = plan.n as usize;
    let std = Normal::new(0.0, 1.0).unwrap();

    let mut rng = stream_rng(seed, &[domain::PATH, plan.n, rep]);
    let mut x_path = Vec::new();
    model.sample_into(n, &mut rng, &mut x_path);

    let mut w_path = vec![f64::NAN; n];
    let mut records = Vec::with_capacity(plan.islands.len());
    let r_len = plan.aux_sums.first().map_or(0, |s| s.len());

    for (idx, isl) in plan.islands.iter().enumerate() {
        let mut irng = stream_rng(seed, &[domain::ISLAND, plan.n, rep, idx as u64]);
        let raw: f64 = x_path[(isl.start - 1) as usize..(isl.end - 1) as usize]
            .iter()
            .sum();
        let mut s_norm = (raw - isl.len() as f64 * plan.mu) / plan.sigma;
        if let Some(sm) = &plan.smoothing {
            let mut vr = stream_rng(seed, &[domain::SMOOTHING, domain::PATH, plan.n, rep, idx as u64]);
            s_norm += sm.sample(&mut vr);
        }

        // randomized PIT including the realized value in the rank pool
        let sums = &plan.aux_sums[idx];
        let count_less = sums.partition_point(|&v| v < s_norm);
        let count_leq = sums.partition_point(|&v| v <= s_norm);
        let tie = uniform_open01(&mut irng);
        let u = (count_less as f64 + tie * (1.0 + (count_leq - count_less) as f64))
            / (r_len as f64 + 1.0);

        let sigma2 = plan.sigma2_norm[idx];
        let len = isl.len();
        let slice_start = (isl.start - 1) as usize;
        if sigma2 < 1e-12 {
            // degenerate: no variance to couple
            for off in 0..len {
                w_path[slice_start + off] = standard_normal(&mut irng);
            }
            records.push(IslandRecord {
                k: isl.k,
                j: isl.j,
                len,
                sum: raw,
                u,
                w_pp: 0.0,
                sigma2_kj: sigma2,
                i_star: 0,
                f_kj: 0.0,
                residual: 0.0,
                degenerate: true,
            });
            continue;
        }

        let w_pp = sigma2.sqrt() * std.inverse_cdf(u);
        let i_star = len.min(sigma2.floor() as usize);
        let f_kj = (sigma2 - i_star as f64).abs().sqrt();

        // exact Gaussian conditioning on Σ_{i≤i*} Z_i + f·ξ = W″
        let z: Vec<f64> = (0..i_star).map(|_| standard_normal(&mut irng)).collect();
        let xi0 = standard_normal(&mut irng);
        let t_val: f64 = z.iter().sum::<f64>() + f_kj * xi0;
        let v = i_star as f64 + f_kj * f_kj;
        let shift = (w_pp - t_val) / v;
        let mut island_sum = 0.0;
        for (off, &zi) in z.iter().enumerate() {
            let w = zi + shift;
            w_path[slice_start + off] = w;
            island_sum += w;
        }
        let xi = xi0 + f_kj * shift;
        let residual = (island_sum + f_kj * xi - w_pp).abs();
        for off in i_star..len {
            w_path[slice_start + off] = standard_normal(&mut irng);
        }

        records.push(IslandRecord {
            k: isl.k,
            j: isl.j,
            len,
            sum: raw,
            u,
            w_pp,
            sigma2_kj: sigma2,
            i_star,
            f_kj,
            residual,
            degenerate: false,
        });
    }

    // gaps, the pre-block prefix and any truncated tail: fresh normals
    let mut grng = stream_rng(seed, &[domain::GAP, plan.n, rep]);
    for w in w_path.iter_mut() {
        if w.is_nan() {
            *w = standard_normal(&mut grng);
        }
    }

    CouplingTrace {
        x_path,
        w_path,
        islands: records,
        mu: plan.mu,
        sigma: plan.sigma,
        n: plan.n,
        seed,
        rep,
    }
}

/// Convenience entry: build the plan and realize replication 0.
#[allow(clippy::too_many_arguments)]
pub fn build_path_coupling(
    model: &ChainModel,
    mu: f64,
    sigma: f64,
    partition: &BlockPartition,
    n: u64,
    reps_for_cdf: usize,
    seed: u64,
    smoothing: Option<SmoothingSampler>,
) -> Result<CouplingTrace, CouplingError> {
    let plan = coupling_plan(model, mu, sigma, partition, n, reps_for_cdf, seed, smoothing)?;
    Ok(build_path_coupling_with(&plan, model, seed, 0))
}

/// N^{−1/2}·max_{k≤N} |Σ_{i≤k}(x_i − μ − σ·W_i)|.
pub fn coupling_error(trace: &CouplingTrace) -> f64 {
    let mut cum = 0.0;
    let mut worst = 0.0f64;
    for (x, w) in trace.x_path.iter().zip(&trace.w_path) {
        cum += x - trace.mu - trace.sigma * w;
        worst = worst.max(cum.abs());
    }
    worst / (trace.n as f64).sqrt()
}
