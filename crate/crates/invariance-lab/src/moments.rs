//! Means, variances and dependence-decay diagnostics.
//!
//! For a primitive finite chain the asymptotic constants are computed
//! exactly: μ = ν(f) and, with the centered observable f̃ = f − μe,
//!
//! ```text
//! σ² = ν(f̃²) + 2·ν(f̃ ⊙ (I − Q)⁻¹ Q f̃)
//! ```
//!
//! which equals the covariance series ν(f̃²) + 2Σ_{k≥1} ν(f̃ ⊙ Q^k f̃).
//! The AR and stochastic-recursion examples carry closed forms instead:
//! σ² = 1/(1−α²) and σ² = E b²/(1 − E a²). The remaining operations are
//! Monte-Carlo checks of variance homogeneity (the sup_k deviation of
//! window variances from nσ²), exact covariance decay against its
//! geometric envelope, and the L^p boundedness of running maxima.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{ChainModel, FiniteChain};
use crate::operator::{self, OperatorError};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Error)]
pub enum MomentsError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("resolvent solve failed: I - Q is numerically singular")]
    SingularResolvent,
    #[error("no closed-form variance for this model; use the exact finite-chain route")]
    NoClosedForm,
    #[error("recursion coefficient mean E b = {eb} is non-zero; center b first")]
    NotCentered { eb: f64 },
    #[error("recursion second moment E a^2 = {ea2} is not below 1")]
    UnstableSecondMoment { ea2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Resolvent,
    Series,
    ClosedForm,
    MonteCarlo,
}

/// One row of the variance-homogeneity profile: the worst deviation
/// |Var(S_{k+1..k+n})/n − σ²| over the probed offsets k, with a bootstrap
/// standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct C3Point {
    pub n: usize,
    pub deviation: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CovariancePoint {
    pub l: usize,
    pub k: usize,
    pub cov: f64,
    pub bound: f64,
}

/// Initial condition for exact covariance computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovStart {
    State(usize),
    Stationary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mu: f64,
    pub sigma2: f64,
    pub method: VarianceMethod,
    pub series_truncation: Option<usize>,
    pub c3_profile: Vec<C3Point>,
    pub c2_value: f64,
    pub delta: f64,
}

/// Exact (μ, σ²) of a primitive finite chain through the resolvent route.
pub fn exact_mean_variance(chain: &FiniteChain) -> Result<(f64, f64), MomentsError> {
    let (nu, q) = operator::projector_split(chain)?;
    let n = chain.n_states();
    let f = DVector::from_fn(n, |i, _| chain.f[i]);
    let mu = nu.dot(&f);
    let ftilde = f.add_scalar(-mu);
    let rhs = &q * &ftilde;
    let lhs = DMatrix::<f64>::identity(n, n) - &q;
    let resolvent_term = lhs
        .lu()
        .solve(&rhs)
        .ok_or(MomentsError::SingularResolvent)?;
    let sigma2 = (0..n)
        .map(|i| nu[i] * ftilde[i] * (ftilde[i] + 2.0 * resolvent_term[i]))
        .sum::<f64>()
        .max(0.0);
    Ok((mu, sigma2))
}

/// Covariance-series route: ν(f̃²) + 2 Σ_{k=1..k_max} ν(f̃ ⊙ Q^k f̃).
/// Independent oracle for [`exact_mean_variance`].
pub fn covariance_series_variance(chain: &FiniteChain, k_max: usize) -> Result<(f64, f64), MomentsError> {
    let (nu, q) = operator::projector_split(chain)?;
    let n = chain.n_states();
    let f = DVector::from_fn(n, |i, _| chain.f[i]);
    let mu = nu.dot(&f);
    let ftilde = f.add_scalar(-mu);
    let weighted = DVector::from_fn(n, |i, _| nu[i] * ftilde[i]);
    let mut sigma2 = (0..n).map(|i| nu[i] * ftilde[i] * ftilde[i]).sum::<f64>();
    let mut qk_f = ftilde.clone();
    for _ in 1..=k_max {
        qk_f = &q * &qk_f;
        sigma2 += 2.0 * weighted.dot(&qk_f);
    }
    Ok((mu, sigma2))
}

/// Truncation depth K with C_Q κ^K < 1e-12 (capped at 10_000).
pub fn series_truncation(chain: &FiniteChain) -> Result<usize, MomentsError> {
    let spec = operator::spectral_decompose(chain, 40, &[0.0])?;
    if spec.kappa == 0.0 {
        return Ok(1);
    }
    let k = ((1e-12 / spec.c_q).ln() / spec.kappa.ln()).ceil() as usize;
    Ok(k.clamp(1, 10_000))
}

/// Closed-form (μ, σ²) for the AR and stochastic-recursion examples:
/// σ² = 1/(1−α²) and σ² = E b²/(1 − E a²).
///
/// These are the variances of the stationary law (the a.s. limit
/// Z = Σ a_1…a_{i−1} b_i), which is what the ergodic marginal-variance
/// estimator [`mc_marginal_variance`] converges to. The partial-sum
/// variance Var(S_n)/n converges to the larger covariance-series value
/// instead (for the AR walk, 1/(1−α)²); use [`exact_mean_variance`] for
/// the series route on finite chains.
pub fn closed_form_variance(model: &ChainModel) -> Result<(f64, f64), MomentsError> {
    match model {
        ChainModel::Finite(_) => Err(MomentsError::NoClosedForm),
        ChainModel::Ar(ar) => Ok((0.0, 1.0 / (1.0 - ar.alpha * ar.alpha))),
        ChainModel::Recursion(rec) => {
            let eb = rec.mean_b();
            if eb.abs() > 1e-12 {
                return Err(MomentsError::NotCentered { eb });
            }
            let ea2 = rec.mean_a2();
            if ea2 >= 1.0 {
                return Err(MomentsError::UnstableSecondMoment { ea2 });
            }
            Ok((0.0, rec.mean_b2() / (1.0 - ea2)))
        }
    }
}

/// Sample variance (unbiased) of a slice.
fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Variance-homogeneity profile: for each window length n, the max over
/// offsets k of |Var(S_{k+1..k+n})/n − σ²|, with bootstrap stderr.
pub fn c3_profile(
    model: &ChainModel,
    sigma2: f64,
    n_list: &[usize],
    k_list: &[usize],
    reps: usize,
    seed: u64,
) -> Vec<C3Point> {
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    let max_k = k_list.iter().copied().max().unwrap_or(0);
    let len = max_k + max_n;

    // window sums per replication, indexed [rep][k_idx * n_list.len() + n_idx]
    let sums: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, &[domain::PATH, rep as u64]);
            let mut values = Vec::new();
            model.sample_into(len, &mut rng, &mut values);
            let mut prefix = vec![0.0; len + 1];
            for (i, v) in values.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            let mut out = Vec::with_capacity(k_list.len() * n_list.len());
            for &k in k_list {
                for &n in n_list {
                    out.push(prefix[k + n] - prefix[k]);
                }
            }
            out
        })
        .collect();

    let deviation_of = |rep_idx: &[usize]| -> Vec<f64> {
        // per n: max over k of |Var/n - sigma2|
        n_list
            .iter()
            .enumerate()
            .map(|(ni, &n)| {
                let mut worst: f64 = 0.0;
                for ki in 0..k_list.len() {
                    let col: Vec<f64> = rep_idx
                        .iter()
                        .map(|&r| sums[r][ki * n_list.len() + ni])
                        .collect();
                    let dev = (sample_variance(&col) / n as f64 - sigma2).abs();
                    worst = worst.max(dev);
                }
                worst
            })
            .collect()
    };

    let all: Vec<usize> = (0..reps).collect();
    let point = deviation_of(&all);

    let boots = 200;
    let mut boot_devs = vec![Vec::with_capacity(boots); n_list.len()];
    let mut brng = stream_rng(seed, &[domain::BOOTSTRAP, 0xC3]);
    for _ in 0..boots {
        let idx: Vec<usize> = (0..reps)
            .map(|_| (rand::Rng::random::<u64>(&mut brng) % reps as u64) as usize)
            .collect();
        for (ni, d) in deviation_of(&idx).into_iter().enumerate() {
            boot_devs[ni].push(d);
        }
    }

    n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| C3Point {
            n,
            deviation: point[ni],
            stderr: sample_variance(&boot_devs[ni]).sqrt(),
        })
        .collect()
}

/// Exact Var(Σ_{i=start+1}^{start+len} f(X_i)) for a finite chain: the
/// marginal law is propagated to the window and the second moment
/// accumulated over all index pairs.
pub fn exact_window_variance(
    chain: &FiniteChain,
    start: usize,
    len: usize,
) -> Result<f64, MomentsError> {
    operator::projector_split(chain)?; // primitivity guard
    let n = chain.n_states();
    let f = &chain.f;
    let mut dist = vec![0.0; n];
    dist[chain.x0] = 1.0;
    let mut next = vec![0.0; n];
    let step = |dist: &mut Vec<f64>, next: &mut Vec<f64>| {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (t, &pst) in chain.p[s].iter().enumerate() {
                next[t] += mass * pst;
            }
        }
        std::mem::swap(dist, next);
    };
    // law of X_{start+1}, the first window term
    for _ in 0..=start {
        step(&mut dist, &mut next);
    }
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(len);
    h.push(f.clone());
    for m in 1..len {
        let prev: &Vec<f64> = &h[m - 1];
        let mut hv = vec![0.0; n];
        for (s, slot) in hv.iter_mut().enumerate() {
            for (t, &pst) in chain.p[s].iter().enumerate() {
                *slot += pst * prev[t];
            }
        }
        h.push(hv);
    }
    let mut mean = 0.0;
    let mut second = 0.0;
    for l in 0..len {
        mean += (0..n).map(|s| dist[s] * f[s]).sum::<f64>();
        second += (0..n).map(|s| dist[s] * f[s] * f[s]).sum::<f64>();
        for m in 1..(len - l) {
            second += 2.0 * (0..n).map(|s| dist[s] * f[s] * h[m][s]).sum::<f64>();
        }
        step(&mut dist, &mut next);
    }
    Ok((second - mean * mean).max(0.0))
}

/// sup_k (E_x |f(X_k)|^{2+2δ})^{1/(2+2δ)} for a finite chain, exact over
/// k ≤ horizon plus the stationary value.
pub fn mu_delta_exact(chain: &FiniteChain, delta: f64, horizon: usize) -> Result<f64, MomentsError> {
    let (nu, _) = operator::projector_split(chain)?;
    let n = chain.n_states();
    let power = 2.0 + 2.0 * delta;
    let fabs: Vec<f64> = chain.f.iter().map(|v| v.abs().powf(power)).collect();
    let mut dist = vec![0.0; n];
    dist[chain.x0] = 1.0;
    let mut best: f64 = 0.0;
    let mut next = vec![0.0; n];
    for _ in 1..=horizon {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in dist.iter().enumerate() {
            for (t, &pst) in chain.p[s].iter().enumerate() {
                next[t] += mass * pst;
            }
        }
        std::mem::swap(&mut dist, &mut next);
        let moment: f64 = dist.iter().zip(&fabs).map(|(d, m)| d * m).sum();
        best = best.max(moment);
    }
    let stationary_moment: f64 = (0..n).map(|i| nu[i] * fabs[i]).sum();
    Ok(best.max(stationary_moment).powf(1.0 / power))
}

/// Monte-Carlo estimate of sup_k ||X_k||_{2+2δ} for models without exact
/// marginals (positions 1..=horizon pooled over replications).
pub fn mu_delta_monte_carlo(
    model: &ChainModel,
    delta: f64,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> f64 {
    let power = 2.0 + 2.0 * delta;
    let per_pos: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, &[domain::PATH, rep as u64]);
            let mut values = Vec::new();
            model.sample_into(horizon, &mut rng, &mut values);
            values.iter().map(|v| v.abs().powf(power)).collect()
        })
        .collect();
    (0..horizon)
        .map(|i| {
            let m = per_pos.iter().map(|row| row[i]).sum::<f64>() / reps as f64;
            m.powf(1.0 / power)
        })
        .fold(0.0, f64::max)
}

/// Exact covariances Cov(f(X_l), f(X_{l+k})) and their geometric envelope
/// A(x)·κ^{kγ/4} with γ = min{1, 2δ}.
///
/// The envelope constant follows the instantiated sup-norm bound: the
/// prefactor is c·(1 + C_Q·C_P²·(‖ν‖+‖δ_x‖)·‖e‖ + μ_δ(x)^{2+γ}) with
/// c = 2·max{1, ‖f‖²_∞}, which dominates the exact algebraic bound
/// 2‖f‖²_∞·C_Q·κ^k for every k ≥ 0.
pub fn covariance_decay(
    chain: &FiniteChain,
    start: CovStart,
    l_list: &[usize],
    k_list: &[usize],
    delta: f64,
) -> Result<Vec<CovariancePoint>, MomentsError> {
    let spec = operator::spectral_decompose(chain, 40, &operator::symmetric_grid(1.0, 9))?;
    let n = chain.n_states();
    let p = operator::to_dmatrix(&chain.p);
    let f = DVector::from_fn(n, |i, _| chain.f[i]);

    let gamma = 1.0f64.min(2.0 * delta);
    let mu_d = mu_delta_exact(chain, delta, 400)?;
    let f_sup = chain.f.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let c_abs = 2.0 * 1.0f64.max(f_sup * f_sup);
    let prefactor = c_abs
        * (1.0
            + spec.c_q * spec.c_p * spec.c_p * (spec.norm_nu + spec.norm_delta_x) * spec.norm_e
            + mu_d.powf(2.0 + gamma));

    // P^k f for all needed k
    let max_k = k_list.iter().copied().max().unwrap_or(0);
    let mut pk_f = Vec::with_capacity(max_k + 1);
    pk_f.push(f.clone());
    for k in 1..=max_k {
        let prev: &DVector<f64> = &pk_f[k - 1];
        pk_f.push(&p * prev);
    }

    let start_dist: DVector<f64> = match start {
        CovStart::State(x) => DVector::from_fn(n, |i, _| if i == x { 1.0 } else { 0.0 }),
        CovStart::Stationary => DVector::from_fn(n, |i, _| spec.nu[i]),
    };

    let max_l = l_list.iter().copied().max().unwrap_or(0);
    let mut dist_at = Vec::with_capacity(max_l + 1);
    dist_at.push(start_dist);
    for l in 1..=max_l {
        let prev: &DVector<f64> = &dist_at[l - 1];
        dist_at.push(p.tr_mul(prev));
    }

    let mut out = Vec::with_capacity(l_list.len() * k_list.len());
    for &l in l_list {
        let dl = &dist_at[l];
        let e_fl: f64 = dl.dot(&f);
        for &k in k_list {
            let joint: f64 = (0..n).map(|i| dl[i] * f[i] * pk_f[k][i]).sum();
            let e_flk: f64 = (0..n).map(|i| dl[i] * pk_f[k][i]).sum();
            let cov = joint - e_fl * e_flk;
            let bound = prefactor * spec.kappa.powf(k as f64 * gamma / 4.0);
            out.push(CovariancePoint { l, k, cov, bound });
        }
    }
    Ok(out)
}

/// Empirical ‖max_{k≤n} |S_k|‖_p / √n per n. Raw (uncentered) sums: a
/// non-centered input grows like √n by design and serves as the negative
/// control.
pub fn lp_maximal_check(
    model: &ChainModel,
    p: f64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Vec<(usize, f64)> {
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    let maxima: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, &[domain::PATH, rep as u64]);
            let mut values = Vec::new();
            model.sample_into(max_n, &mut rng, &mut values);
            let mut cum = 0.0;
            let mut running_max = 0.0f64;
            let mut per_n = Vec::with_capacity(n_list.len());
            let mut targets = n_list.to_vec();
            targets.sort_unstable();
            let mut ti = 0;
            for (i, v) in values.iter().enumerate() {
                cum += v;
                running_max = running_max.max(cum.abs());
                while ti < targets.len() && i + 1 == targets[ti] {
                    per_n.push(running_max);
                    ti += 1;
                }
            }
            per_n
        })
        .collect();

    let mut sorted: Vec<usize> = n_list.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let lp = (maxima.iter().map(|row| row[idx].powf(p)).sum::<f64>() / reps as f64)
                .powf(1.0 / p);
            (n, lp / (n as f64).sqrt())
        })
        .collect()
}

/// Ergodic estimate of the stationary marginal variance Var_ν(f): the
/// per-path sample variance of the observable after burn-in, averaged
/// over replications, with the spread across replications as the
/// standard error.
pub fn mc_marginal_variance(
    model: &ChainModel,
    n: usize,
    reps: usize,
    seed: u64,
) -> (f64, f64) {
    let burn = (n / 10).min(1000);
    let per_path: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, &[domain::PATH, rep as u64]);
            let mut values = Vec::new();
            model.sample_into(n, &mut rng, &mut values);
            sample_variance(&values[burn..])
        })
        .collect();
    let est = per_path.iter().sum::<f64>() / reps as f64;
    let se = (sample_variance(&per_path) / reps as f64).sqrt();
    (est, se)
}

/// Monte-Carlo Var(S_n)/n with a bootstrap standard error.
pub fn mc_block_variance_rate(
    model: &ChainModel,
    n: usize,
    reps: usize,
    seed: u64,
) -> (f64, f64) {
    let sums: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, &[domain::PATH, rep as u64]);
            let mut values = Vec::new();
            model.sample_into(n, &mut rng, &mut values);
            values.iter().sum()
        })
        .collect();
    let estimate = sample_variance(&sums) / n as f64;
    let boots = 500;
    let mut brng = stream_rng(seed, &[domain::BOOTSTRAP, 0x5A]);
    let mut stats = Vec::with_capacity(boots);
    for _ in 0..boots {
        let resample: Vec<f64> = (0..reps)
            .map(|_| sums[(rand::Rng::random::<u64>(&mut brng) % reps as u64) as usize])
            .collect();
        stats.push(sample_variance(&resample) / n as f64);
    }
    (estimate, sample_variance(&stats).sqrt())
}

/// Assemble the full moment report for a model.
pub fn variance_report(
    model: &ChainModel,
    delta: f64,
    n_list: &[usize],
    k_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<MomentReport, MomentsError> {
    let (mu, sigma2, method, truncation) = match model {
        ChainModel::Finite(chain) => {
            let (mu, s2) = exact_mean_variance(chain)?;
            let k = series_truncation(chain)?;
            (mu, s2, VarianceMethod::Resolvent, Some(k))
        }
        _ => {
            let (mu, s2) = closed_form_variance(model)?;
            (mu, s2, VarianceMethod::ClosedForm, None)
        }
    };
    let c2_value = match model {
        ChainModel::Finite(chain) => mu_delta_exact(chain, delta, 400)?,
        _ => mu_delta_monte_carlo(model, delta, 256, reps.max(200), seed),
    };
    let profile = c3_profile(model, sigma2, n_list, k_list, reps, seed);
    Ok(MomentReport {
        mu,
        sigma2,
        method,
        series_truncation: truncation,
        c3_profile: profile,
        c2_value,
        delta,
    })
}
