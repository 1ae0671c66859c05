//! Perturbed transition operators and spectral-gap constants.
//!
//! For a finite chain the transition operator splits as `P = Π + Q` with
//! `Π g = ν(g)·e` the rank-one projector onto constants and `ΠQ = QΠ = 0`.
//! The perturbed operators `P_t g = P(e^{itf} g)` encode characteristic
//! functions of partial sums of the observable. Everything is concretized
//! on B = (ℂ^n, sup norm), so ‖e‖ = ‖δ_x‖ = ‖ν‖ = 1 and the dependence
//! constants become
//!
//! ```text
//! λ₀(x) = 2·C_Q·(‖ν‖ + ‖δ_x‖)·‖e‖,   λ₁ = |ln κ|,   λ₂ = max{1, log₂ C_P}
//! ```
//!
//! with κ the spectral radius of Q, C_Q the smallest constant certifying
//! ‖Q^m‖ ≤ C_Q κ^m over m ≤ m_max, and C_P the sup of ‖P_t^m‖ over the
//! probed t-grid and power range.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::FiniteChain;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("chain is reducible or periodic: no strictly positive power P^m for m <= {m_checked}")]
    NotPrimitive { m_checked: usize },
    #[error("stationary solve failed: transition matrix is singular up to numerical precision")]
    SingularStationary,
    #[error("power iteration failed to resolve the spectral radius of Q (residual {residual})")]
    PowerIterationStalled { residual: f64 },
    #[error("kappa = {kappa} is not inside (0,1); mixing constants are undefined")]
    KappaOutOfRange { kappa: f64 },
}

/// Spectral decomposition data of a finite chain, with the constants
/// certified over finite ranges (m ≤ m_max, the probed t-grid).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    pub nu: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// Spectral radius of Q; 0.0 is a sentinel for Q = 0 (one-step mixing).
    pub kappa: f64,
    pub c_q: f64,
    pub c_p: f64,
    pub norm_e: f64,
    pub norm_nu: f64,
    pub norm_delta_x: f64,
    /// Power range over which C_Q and C_P were certified.
    pub m_max: usize,
    /// t-grid over which C_P was certified.
    pub t_grid: Vec<f64>,
}

/// Constants entering the characteristic-function dependence envelope.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixingConstants {
    pub lambda0_x: f64,
    /// |ln κ|; +∞ when κ = 0 (serialized as null).
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon0: f64,
}

/// Max absolute row sum (operator norm on sup-norm functions).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Max row sum of moduli for complex matrices.
pub fn inf_norm_c(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn primitivity_check(p: &DMatrix<f64>) -> Result<(), OperatorError> {
    let n = p.nrows();
    let m_limit = n * n;
    let mut reach = DMatrix::from_fn(n, n, |i, j| if p[(i, j)] > 0.0 { 1.0 } else { 0.0 });
    let step = reach.clone();
    for _ in 1..=m_limit {
        if reach.iter().all(|&v| v > 0.0) {
            return Ok(());
        }
        reach *= &step;
        reach.iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
    }
    if reach.iter().all(|&v| v > 0.0) {
        Ok(())
    } else {
        Err(OperatorError::NotPrimitive { m_checked: m_limit })
    }
}

/// Stationary row vector: ν P = ν, Σν = 1, solved by LU with the
/// normalization replacing the last equation.
pub fn stationary(p: &DMatrix<f64>) -> Result<DVector<f64>, OperatorError> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let nu = a.lu().solve(&b).ok_or(OperatorError::SingularStationary)?;
    let sum: f64 = nu.iter().sum();
    Ok(nu / sum)
}

/// Spectral radius of a small dense matrix by power iteration.
///
/// Three consecutive iterates v, Qv, Q²v are fitted to the two-step
/// recurrence w₂ = s·w₁ − p·w₀, whose characteristic roots cover both a
/// real dominant eigenvalue and a dominant complex pair (the modulus is
/// taken at complex pairs). Falls back to the Schur eigenvalues if the
/// recurrence residual does not vanish.
pub fn spectral_radius(q: &DMatrix<f64>) -> Result<f64, OperatorError> {
    let n = q.nrows();
    let norm0 = inf_norm(q);
    // below solver roundoff Q is the zero operator (one-step mixing)
    if norm0 < 1e-13 {
        return Ok(0.0);
    }
    // Deterministic start with all Fourier-ish components populated.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sin());
    v /= v.norm();
    let mut last_fit = f64::NAN;
    for iter in 0..256 {
        let w1 = q * &v;
        let w2 = q * &w1;
        // Least squares for w2 = s*w1 - p*v.
        let a11 = w1.dot(&w1);
        let a12 = -w1.dot(&v);
        let a22 = v.dot(&v);
        let b1 = w1.dot(&w2);
        let b2 = -v.dot(&w2);
        let det = a11 * a22 - a12 * a12;
        if det.abs() > 1e-280 {
            let s = (b1 * a22 - b2 * a12) / det;
            let pp = (a11 * b2 - a12 * b1) / det;
            let resid = (&w2 - &w1 * s + &v * pp).norm() / w2.norm().max(1e-300);
            let disc = s * s - 4.0 * pp;
            let rho = if disc >= 0.0 {
                let r1 = 0.5 * (s + disc.sqrt());
                let r2 = 0.5 * (s - disc.sqrt());
                r1.abs().max(r2.abs())
            } else {
                pp.abs().sqrt()
            };
            if resid < 1e-11 && rho.is_finite() {
                return Ok(rho);
            }
            last_fit = resid;
        }
        let w1n = w1.norm();
        if w1n < 1e-300 {
            // Nilpotent directions collapsed; restart mixed with the basis.
            v = DVector::from_fn(n, |i, _| 1.0 / (i as f64 + 1.0 + iter as f64));
            v /= v.norm();
            continue;
        }
        v = w1 / w1n;
    }
    // Schur fallback for stalled iterations (e.g. defective Q).
    let eigs = q.clone().complex_eigenvalues();
    let rho = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if rho.is_finite() {
        Ok(rho)
    } else {
        Err(OperatorError::PowerIterationStalled { residual: last_fit })
    }
}

/// Stationary law and the complementary part Q = P − Π of a primitive
/// chain, without certifying norm constants.
pub fn projector_split(
    chain: &FiniteChain,
) -> Result<(DVector<f64>, DMatrix<f64>), OperatorError> {
    let p = to_dmatrix(&chain.p);
    primitivity_check(&p)?;
    let nu = stationary(&p)?;
    let n = chain.n_states();
    let q = &p - DMatrix::from_fn(n, n, |_, j| nu[j]);
    Ok((nu, q))
}

/// Perturbed operator P_t with entries P(x,y)·e^{i t f(y)}; equals P at t=0.
pub fn perturbed(chain: &FiniteChain, t: f64) -> DMatrix<Complex64> {
    let n = chain.n_states();
    DMatrix::from_fn(n, n, |i, j| {
        Complex64::from_polar(chain.p[i][j], t * chain.f[j])
    })
}

/// Decompose P = Π + Q and certify κ, C_Q, C_P over the given ranges.
///
/// Preconditions: the chain is irreducible and aperiodic (checked through
/// strict positivity of some power P^m, m ≤ n²).
pub fn spectral_decompose(
    chain: &FiniteChain,
    m_max: usize,
    t_grid: &[f64],
) -> Result<SpectralData, OperatorError> {
    let p = to_dmatrix(&chain.p);
    primitivity_check(&p)?;
    let n = chain.n_states();

    let nu = stationary(&p)?;
    let pi = DMatrix::from_fn(n, n, |_, j| nu[j]);
    let q = &p - &pi;

    let kappa = spectral_radius(&q)?;
    if kappa >= 1.0 {
        return Err(OperatorError::KappaOutOfRange { kappa });
    }

    let c_q = if kappa == 0.0 {
        1.0
    } else {
        let mut best: f64 = 1.0;
        let mut qm = q.clone();
        for m in 1..=m_max {
            best = best.max(inf_norm(&qm) / kappa.powi(m as i32));
            qm *= &q;
        }
        best
    };

    let mut c_p: f64 = 0.0;
    for &t in t_grid {
        let pt = perturbed(chain, t);
        let mut ptm = pt.clone();
        for _ in 1..=m_max {
            c_p = c_p.max(inf_norm_c(&ptm));
            ptm *= &pt;
        }
    }

    Ok(SpectralData {
        nu: nu.iter().copied().collect(),
        pi: (0..n).map(|i| (0..n).map(|j| pi[(i, j)]).collect()).collect(),
        q: (0..n).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect(),
        kappa,
        c_q,
        c_p,
        norm_e: 1.0,
        norm_nu: 1.0,
        norm_delta_x: 1.0,
        m_max,
        t_grid: t_grid.to_vec(),
    })
}

/// λ₀(x), λ₁, λ₂ from certified spectral data. κ = 0 yields λ₁ = +∞.
pub fn mixing_constants(spec: &SpectralData, epsilon0: f64) -> MixingConstants {
    let lambda0_x = 2.0 * spec.c_q * (spec.norm_nu + spec.norm_delta_x) * spec.norm_e;
    let lambda1 = if spec.kappa == 0.0 {
        f64::INFINITY
    } else {
        spec.kappa.ln().abs()
    };
    let lambda2 = 1.0f64.max(spec.c_p.log2());
    MixingConstants {
        lambda0_x,
        lambda1,
        lambda2,
        epsilon0,
    }
}

/// Symmetric grid of `points` values spanning [-epsilon0, epsilon0],
/// always containing 0 (odd counts are enforced by construction).
pub fn symmetric_grid(epsilon0: f64, points: usize) -> Vec<f64> {
    let m = if points.is_multiple_of(2) { points + 1 } else { points };
    let half = (m / 2) as i64;
    (-half..=half)
        .map(|i| epsilon0 * i as f64 / half as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state() -> FiniteChain {
        FiniteChain::new(
            vec![vec![0.75, 0.25], vec![0.25, 0.75]],
            vec![-0.5, 0.5],
            0,
        )
        .unwrap()
    }

    #[test]
    fn two_state_constants() {
        let chain = two_state();
        let spec = spectral_decompose(&chain, 40, &symmetric_grid(1.0, 9)).unwrap();
        assert_abs_diff_eq!(spec.nu[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.nu[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.kappa, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.c_q, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(spec.c_p, 1.0, epsilon = 1e-12);

        let consts = mixing_constants(&spec, 1.0);
        assert_abs_diff_eq!(consts.lambda0_x, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(consts.lambda1, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(consts.lambda2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_matches_eigen_oracle() {
        // random-ish 4-state primitive chains; oracle = Schur eigenvalues of Q
        let chains = [
            vec![
                vec![0.5, 0.2, 0.2, 0.1],
                vec![0.1, 0.6, 0.1, 0.2],
                vec![0.3, 0.3, 0.2, 0.2],
                vec![0.25, 0.25, 0.25, 0.25],
            ],
            vec![
                vec![0.05, 0.9, 0.03, 0.02],
                vec![0.02, 0.05, 0.9, 0.03],
                vec![0.03, 0.02, 0.05, 0.9],
                vec![0.9, 0.03, 0.02, 0.05],
            ],
        ];
        for rows in chains {
            let chain = FiniteChain::new(rows, vec![0.0, 1.0, 2.0, 3.0], 0).unwrap();
            let spec = spectral_decompose(&chain, 30, &[0.0]).unwrap();
            let p = to_dmatrix(&chain.p);
            let nu = stationary(&p).unwrap();
            let n = chain.n_states();
            let q = &p - DMatrix::from_fn(n, n, |_, j| nu[j]);
            let oracle = q
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert_abs_diff_eq!(spec.kappa, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn one_step_mixing_reports_kappa_zero_sentinel() {
        // rows equal to the stationary law: Pi absorbs everything
        let chain = FiniteChain::new(
            vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            vec![1.0, -1.0],
            0,
        )
        .unwrap();
        let spec = spectral_decompose(&chain, 20, &[0.0]).unwrap();
        assert_eq!(spec.kappa, 0.0);
        assert_eq!(spec.c_q, 1.0);
        let consts = mixing_constants(&spec, 1.0);
        assert!(consts.lambda1.is_infinite());
    }

    #[test]
    fn identity_chain_is_rejected() {
        let chain = FiniteChain::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 1.0],
            0,
        )
        .unwrap();
        let err = spectral_decompose(&chain, 10, &[0.0]).unwrap_err();
        assert!(matches!(err, OperatorError::NotPrimitive { .. }));
        // periodic two-cycle fails as well
        let cycle = FiniteChain::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![0.0, 1.0],
            0,
        )
        .unwrap();
        assert!(spectral_decompose(&cycle, 10, &[0.0]).is_err());
    }

    #[test]
    fn perturbed_examples() {
        let chain = two_state();
        let at_zero = perturbed(&chain, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(at_zero[(i, j)].re, chain.p[i][j], epsilon = 1e-15);
                assert_abs_diff_eq!(at_zero[(i, j)].im, 0.0, epsilon = 1e-15);
            }
        }
        let zero_f = FiniteChain::new(chain.p.clone(), vec![0.0, 0.0], 0).unwrap();
        let anyt = perturbed(&zero_f, 1.7);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(anyt[(i, j)].re, chain.p[i][j], epsilon = 1e-15);
            }
        }
        let at_pi = perturbed(&chain, std::f64::consts::PI);
        let expect00 = Complex64::from_polar(0.75, -std::f64::consts::FRAC_PI_2);
        let expect01 = Complex64::from_polar(0.25, std::f64::consts::FRAC_PI_2);
        assert!((at_pi[(0, 0)] - expect00).norm() < 1e-14);
        assert!((at_pi[(0, 1)] - expect01).norm() < 1e-14);
    }

    #[test]
    fn decomposition_identities() {
        let chain = two_state();
        let spec = spectral_decompose(&chain, 40, &symmetric_grid(1.0, 9)).unwrap();
        let p = to_dmatrix(&chain.p);
        let pi = to_dmatrix(&spec.pi);
        let q = to_dmatrix(&spec.q);
        assert!(inf_norm(&(&pi + &q - &p)) < 1e-12, "P = Pi + Q");
        assert!(inf_norm(&(&pi * &q)) < 1e-10, "Pi Q = 0");
        assert!(inf_norm(&(&q * &pi)) < 1e-10, "Q Pi = 0");
        assert!(inf_norm(&(&pi * &pi - &pi)) < 1e-10, "Pi is a projector");
    }

    #[test]
    fn q_power_norms_certified() {
        let chain = two_state();
        let spec = spectral_decompose(&chain, 40, &[0.0]).unwrap();
        let q = to_dmatrix(&spec.q);
        let mut qm = q.clone();
        for m in 1..=spec.m_max {
            assert!(
                inf_norm(&qm) <= spec.c_q * spec.kappa.powi(m as i32) + 1e-12,
                "norm bound violated at m = {m}"
            );
            qm *= &q;
        }
    }

    #[test]
    fn perturbed_operators_are_sup_norm_contractions() {
        let chain = two_state();
        for &t in &symmetric_grid(1.0, 9) {
            let pt = perturbed(&chain, t);
            let mut ptm = pt.clone();
            for _ in 0..64 {
                assert!(inf_norm_c(&ptm) <= 1.0 + 1e-12);
                ptm *= &pt;
            }
        }
    }

    #[test]
    fn lambda2_examples() {
        let mut spec = spectral_decompose(&two_state(), 10, &[0.0]).unwrap();
        spec.c_p = 8.0;
        assert_abs_diff_eq!(mixing_constants(&spec, 1.0).lambda2, 3.0, epsilon = 1e-12);
        spec.c_p = 1.0;
        assert_abs_diff_eq!(mixing_constants(&spec, 1.0).lambda2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_matches_long_run_frequencies() {
        let chain = FiniteChain::new(
            vec![
                vec![0.2, 0.5, 0.3],
                vec![0.4, 0.1, 0.5],
                vec![0.3, 0.3, 0.4],
            ],
            vec![1.0, 2.0, 3.0],
            0,
        )
        .unwrap();
        let spec = spectral_decompose(&chain, 30, &[0.0]).unwrap();
        let model = crate::chains::ChainModel::Finite(chain.clone());
        let traj = crate::chains::sample_path(&model, 300_000, 17);
        for (state, &target) in spec.nu.iter().enumerate() {
            let f_val = chain.f[state];
            let freq = traj.values.iter().filter(|&&v| v == f_val).count() as f64
                / traj.values.len() as f64;
            assert!(
                (freq - target).abs() < 0.005,
                "state {state}: frequency {freq} vs stationary {target}"
            );
        }
    }
}
