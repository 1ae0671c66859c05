//! The three example processes and their observable sequences.
//!
//! A [`ChainModel`] is a samplable stochastic process together with a real
//! observable; a [`Trajectory`] holds the observable values f(X_1..X_N) of
//! one realization. Sampling is a pure function of `(model, n, seed, rep)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{domain, stream_rng};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("transition matrix must be square and non-empty, got {rows} rows")]
    BadShape { rows: usize },
    #[error("row {row} of the transition matrix sums to {sum}, expected 1 within 1e-12")]
    RowSum { row: usize, sum: f64 },
    #[error("transition probability P[{row}][{col}] = {value} outside [0, 1]")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("observable length {flen} does not match state count {n}")]
    ObservableLength { flen: usize, n: usize },
    #[error("initial state {x0} outside [0, {n})")]
    BadInitialState { x0: usize, n: usize },
    #[error("autoregressive coefficient must satisfy |alpha| < 1, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("recursion atoms must be non-empty with a > 0 and weights summing to 1 (sum = {wsum})")]
    BadAtoms { wsum: f64 },
    #[error("block sum range [{start}, {end}] out of bounds for trajectory of length {n}")]
    IndexRange { start: usize, end: usize, n: usize },
    #[error("model JSON: {0}")]
    Json(String),
}

/// Finite-state Markov chain with a real observable on the states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteChain {
    /// Row-stochastic transition matrix.
    pub p: Vec<Vec<f64>>,
    /// Observable value per state.
    pub f: Vec<f64>,
    /// Initial state index.
    pub x0: usize,
}

impl FiniteChain {
    pub fn new(p: Vec<Vec<f64>>, f: Vec<f64>, x0: usize) -> Result<Self, ChainError> {
        let chain = Self { p, f, x0 };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let n = self.p.len();
        if n == 0 || self.p.iter().any(|row| row.len() != n) {
            return Err(ChainError::BadShape { rows: n });
        }
        for (i, row) in self.p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ChainError::BadEntry { row: i, col: j, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ChainError::RowSum { row: i, sum });
            }
        }
        if self.f.len() != n {
            return Err(ChainError::ObservableLength { flen: self.f.len(), n });
        }
        if self.x0 >= n {
            return Err(ChainError::BadInitialState { x0: self.x0, n });
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    /// Row vector `delta_{x0} P^k`; sums to 1 within 1e-12.
    pub fn exact_marginal(&self, k: usize) -> Vec<f64> {
        let n = self.n_states();
        let mut dist = vec![0.0; n];
        dist[self.x0] = 1.0;
        let mut next = vec![0.0; n];
        for _ in 0..k {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (s, &mass) in dist.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (t, &pst) in self.p[s].iter().enumerate() {
                    next[t] += mass * pst;
                }
            }
            std::mem::swap(&mut dist, &mut next);
        }
        dist
    }

    fn cumulative_rows(&self) -> Vec<Vec<f64>> {
        self.p
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect()
    }
}

/// Autoregressive walk `x_{k+1} = alpha x_k + b_k` with b_k = ±1 equally
/// likely; the observable is the state itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArBernoulli {
    pub alpha: f64,
    pub x0: f64,
}

impl ArBernoulli {
    pub fn new(alpha: f64, x0: f64) -> Result<Self, ChainError> {
        if !(alpha.abs() < 1.0) {
            return Err(ChainError::BadAlpha { alpha });
        }
        Ok(Self { alpha, x0 })
    }
}

/// One atom `(a, b)` of the coefficient law of a stochastic recursion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecursionAtom {
    pub a: f64,
    pub b: f64,
    pub w: f64,
}

/// Stochastic recursion `x_{k+1} = a_{k+1} x_k + b_{k+1}` with coefficients
/// drawn from a finite atom list; the observable is the state itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StochasticRecursion {
    pub atoms: Vec<RecursionAtom>,
    pub x0: f64,
}

/// Decidable-by-enumeration checks on the coefficient law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecursionHypotheses {
    /// Moment contraction: Σ w·a^p < 1 and Σ w·|b|^p < ∞ at the reported p.
    pub h1: bool,
    /// No common fixed point carrying full mass.
    pub h2: bool,
    /// {ln a} generates a dense subgroup of the reals.
    pub h3: bool,
    /// Exponent used for the H1 check.
    pub p: f64,
}

impl StochasticRecursion {
    pub fn new(atoms: Vec<RecursionAtom>, x0: f64) -> Result<Self, ChainError> {
        let wsum: f64 = atoms.iter().map(|a| a.w).sum();
        if atoms.is_empty()
            || atoms.iter().any(|a| a.a <= 0.0 || a.w < 0.0)
            || (wsum - 1.0).abs() > 1e-12
        {
            return Err(ChainError::BadAtoms { wsum });
        }
        Ok(Self { atoms, x0 })
    }

    pub fn mean_a(&self) -> f64 {
        self.atoms.iter().map(|at| at.w * at.a).sum()
    }

    pub fn mean_b(&self) -> f64 {
        self.atoms.iter().map(|at| at.w * at.b).sum()
    }

    pub fn mean_a2(&self) -> f64 {
        self.atoms.iter().map(|at| at.w * at.a * at.a).sum()
    }

    pub fn mean_b2(&self) -> f64 {
        self.atoms.iter().map(|at| at.w * at.b * at.b).sum()
    }

    /// Check H1–H3 at moment exponent `p` by enumerating the atoms.
    ///
    /// H3 is decided numerically: the group generated by {ln a} is dense
    /// unless all ratios ln a_i / ln a_j are rational with small
    /// denominator (detected by continued fractions at 1e-9 tolerance).
    pub fn hypotheses(&self, p: f64) -> RecursionHypotheses {
        let h1 = self.atoms.iter().map(|at| at.w * at.a.powf(p)).sum::<f64>() < 1.0
            && self
                .atoms
                .iter()
                .map(|at| at.w * at.b.abs().powf(p))
                .sum::<f64>()
                .is_finite();

        // H2 fails only if every atom fixes one common point x0 = b/(1-a).
        let h2 = {
            let mut candidates: Vec<f64> = Vec::new();
            for at in &self.atoms {
                if (at.a - 1.0).abs() < 1e-14 {
                    // a=1, b=0 fixes every point; a=1, b!=0 fixes none.
                    if at.b.abs() > 1e-14 {
                        candidates.clear();
                        break;
                    }
                } else {
                    candidates.push(at.b / (1.0 - at.a));
                }
            }
            let mut ok = true;
            for &x in &candidates {
                let mass: f64 = self
                    .atoms
                    .iter()
                    .filter(|at| (at.a * x + at.b - x).abs() <= 1e-12 * (1.0 + x.abs()))
                    .map(|at| at.w)
                    .sum();
                if mass >= 1.0 - 1e-12 {
                    ok = false;
                }
            }
            ok
        };

        let logs: Vec<f64> = self
            .atoms
            .iter()
            .map(|at| at.a.ln())
            .filter(|l| l.abs() > 1e-14)
            .collect();
        let h3 = if logs.is_empty() {
            false
        } else {
            // commensurable logs (small-denominator rational ratios) span a
            // discrete subgroup; any incommensurable pair makes it dense
            let base = logs[0];
            logs.iter().any(|&l| !is_rational_ratio(l / base, 4096, 1e-10))
        };

        RecursionHypotheses { h1, h2, h3, p }
    }
}

/// Continued-fraction test: does `x` equal p/q with q <= max_den within tol?
fn is_rational_ratio(x: f64, max_den: u64, tol: f64) -> bool {
    let (mut p0, mut q0, mut p1, mut q1) = (1i64, 0u64, x.floor() as i64, 1u64);
    let mut frac = x - x.floor();
    for _ in 0..64 {
        if (x - p1 as f64 / q1 as f64).abs() < tol {
            return true;
        }
        if frac.abs() < 1e-15 || q1 > max_den {
            break;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        frac = inv - a;
        let p2 = a as i64 * p1 + p0;
        let q2 = a as u64 * q1 + q0;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    (x - p1 as f64 / q1 as f64).abs() < tol && q1 <= max_den
}

/// A samplable process with observable, loadable from a JSON document
/// `{"kind": "finite" | "ar" | "recursion", ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChainModel {
    Finite(FiniteChain),
    Ar(ArBernoulli),
    Recursion(StochasticRecursion),
}

impl ChainModel {
    pub fn validate(&self) -> Result<(), ChainError> {
        match self {
            ChainModel::Finite(c) => c.validate(),
            ChainModel::Ar(a) => {
                ArBernoulli::new(a.alpha, a.x0)?;
                Ok(())
            }
            ChainModel::Recursion(r) => {
                StochasticRecursion::new(r.atoms.clone(), r.x0)?;
                Ok(())
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ChainError> {
        let model: ChainModel =
            serde_json::from_str(text).map_err(|e| ChainError::Json(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn descriptor(&self) -> String {
        match self {
            ChainModel::Finite(c) => format!("finite({} states, x0={})", c.n_states(), c.x0),
            ChainModel::Ar(a) => format!("ar(alpha={}, x0={})", a.alpha, a.x0),
            ChainModel::Recursion(r) => {
                format!("recursion({} atoms, x0={})", r.atoms.len(), r.x0)
            }
        }
    }

    /// Observable values f(X_1..X_n) of one trajectory, written into `out`.
    pub fn sample_into(&self, n: usize, rng: &mut impl rand::Rng, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(n);
        match self {
            ChainModel::Finite(chain) => {
                let cum = chain.cumulative_rows();
                let mut state = chain.x0;
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let row = &cum[state];
                    state = row.partition_point(|&c| c <= u).min(row.len() - 1);
                    out.push(chain.f[state]);
                }
            }
            ChainModel::Ar(ar) => {
                let mut x = ar.x0;
                for _ in 0..n {
                    let b = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    x = ar.alpha * x + b;
                    out.push(x);
                }
            }
            ChainModel::Recursion(rec) => {
                let cum: Vec<f64> = {
                    let mut acc = 0.0;
                    rec.atoms
                        .iter()
                        .map(|a| {
                            acc += a.w;
                            acc
                        })
                        .collect()
                };
                let mut x = rec.x0;
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let idx = cum.partition_point(|&c| c <= u).min(rec.atoms.len() - 1);
                    let at = rec.atoms[idx];
                    x = at.a * x + at.b;
                    out.push(x);
                }
            }
        }
    }
}

/// One realized observable path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub model: String,
    pub seed: u64,
    pub rep: u64,
}

/// Sample replication `rep` of the observable path; deterministic in
/// `(model, n, seed, rep)` and independent of thread count.
pub fn sample_path_rep(model: &ChainModel, n: usize, seed: u64, rep: u64) -> Trajectory {
    assert!(n >= 1, "trajectory length must be at least 1");
    let mut rng = stream_rng(seed, &[domain::PATH, rep]);
    let mut values = Vec::new();
    model.sample_into(n, &mut rng, &mut values);
    Trajectory {
        values,
        model: model.descriptor(),
        seed,
        rep,
    }
}

/// Replication 0 of [`sample_path_rep`].
pub fn sample_path(model: &ChainModel, n: usize, seed: u64) -> Trajectory {
    sample_path_rep(model, n, seed, 0)
}

/// Sum of trajectory values over the 1-based inclusive range [start, end].
pub fn block_sum(traj: &Trajectory, start: usize, end: usize) -> Result<f64, ChainError> {
    let n = traj.values.len();
    if start < 1 || start > end || end > n {
        return Err(ChainError::IndexRange { start, end, n });
    }
    Ok(traj.values[start - 1..end].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteChain {
        FiniteChain::new(
            vec![vec![0.75, 0.25], vec![0.25, 0.75]],
            vec![-0.5, 0.5],
            0,
        )
        .unwrap()
    }

    #[test]
    fn absorbing_state_stays_put() {
        let chain = FiniteChain::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 1.0],
            1,
        )
        .unwrap();
        let traj = sample_path(&ChainModel::Finite(chain), 3, 42);
        assert_eq!(traj.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ar_with_zero_alpha_is_centered_noise() {
        let model = ChainModel::Ar(ArBernoulli::new(0.0, 0.0).unwrap());
        let traj = sample_path(&model, 100_000, 9);
        let mean: f64 = traj.values.iter().sum::<f64>() / traj.values.len() as f64;
        // iid ±1: stderr = 1/sqrt(n)
        assert!(mean.abs() < 3.0 / (traj.values.len() as f64).sqrt());
    }

    #[test]
    fn two_state_lag1_autocorrelation_matches_eigenvalue() {
        let model = ChainModel::Finite(two_state());
        let traj = sample_path(&model, 400_000, 11);
        let v = &traj.values;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let cov: f64 = v
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (v.len() - 1) as f64;
        // lag-1 autocorrelation of the stationary two-state walk is the
        // second eigenvalue 1/2; MC error at this length is ~0.002.
        assert!(
            (cov / var - 0.5).abs() < 0.01,
            "autocorrelation {} too far from 0.5",
            cov / var
        );
    }

    #[test]
    fn exact_marginal_examples() {
        let chain = two_state();
        assert_eq!(chain.exact_marginal(0), vec![1.0, 0.0]);
        let one = chain.exact_marginal(1);
        assert!((one[0] - 0.75).abs() < 1e-15 && (one[1] - 0.25).abs() < 1e-15);
        let thirty = chain.exact_marginal(30);
        assert!((thirty[0] - 0.5).abs() < 1e-8 && (thirty[1] - 0.5).abs() < 1e-8);
        assert!((thirty.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_frequencies_match_monte_carlo() {
        let chain = two_state();
        let model = ChainModel::Finite(chain.clone());
        let k = 3;
        let reps = 10_000u64;
        let mut count0 = 0u64;
        for rep in 0..reps {
            let traj = sample_path_rep(&model, k, 5, rep);
            if traj.values[k - 1] < 0.0 {
                count0 += 1;
            }
        }
        let exact = chain.exact_marginal(k)[0];
        let freq = count0 as f64 / reps as f64;
        let sigma = (exact * (1.0 - exact) / reps as f64).sqrt();
        assert!(
            (freq - exact).abs() <= 4.0 * sigma,
            "freq {freq} vs exact {exact} (4 sigma = {})",
            4.0 * sigma
        );
    }

    #[test]
    fn ar_paths_stay_in_the_invariant_interval() {
        let ar = ArBernoulli::new(0.8, 1.5).unwrap();
        let bound = ar.x0.abs() + 1.0 / (1.0 - ar.alpha.abs());
        let traj = sample_path(&ChainModel::Ar(ar), 50_000, 3);
        assert!(traj.values.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = ChainModel::Finite(two_state());
        let a = sample_path_rep(&model, 1000, 123, 7);
        let b = sample_path_rep(&model, 1000, 123, 7);
        assert_eq!(a.values, b.values);
        let c = sample_path_rep(&model, 1000, 123, 8);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn block_sum_examples() {
        let traj = Trajectory {
            values: vec![1.0; 8],
            model: "const".into(),
            seed: 0,
            rep: 0,
        };
        assert_eq!(block_sum(&traj, 2, 5).unwrap(), 4.0);
        assert_eq!(block_sum(&traj, 3, 3).unwrap(), 1.0);
        let alt = Trajectory {
            values: (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            model: "alt".into(),
            seed: 0,
            rep: 0,
        };
        assert_eq!(block_sum(&alt, 1, 8).unwrap(), 0.0);
        assert!(block_sum(&alt, 0, 3).is_err());
        assert!(block_sum(&alt, 3, 9).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let text = r#"{"kind":"recursion","atoms":[{"a":0.3,"b":-1.0,"w":0.25},
            {"a":0.3,"b":1.0,"w":0.25},{"a":0.5,"b":-1.0,"w":0.25},{"a":0.5,"b":1.0,"w":0.25}],
            "x0":0.0}"#;
        let model = ChainModel::from_json(text).unwrap();
        let back = serde_json::to_string(&model).unwrap();
        let again = ChainModel::from_json(&back).unwrap();
        assert_eq!(model.descriptor(), again.descriptor());
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(FiniteChain::new(vec![vec![0.6, 0.3]], vec![0.0], 0).is_err());
        assert!(FiniteChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 1.0], 2).is_err());
        assert!(ArBernoulli::new(1.0, 0.0).is_err());
        assert!(StochasticRecursion::new(vec![RecursionAtom { a: 0.5, b: 0.0, w: 0.5 }], 0.0).is_err());
    }

    #[test]
    fn recursion_hypotheses_enumeration() {
        let rec = StochasticRecursion::new(
            vec![
                RecursionAtom { a: 0.3, b: -1.0, w: 0.25 },
                RecursionAtom { a: 0.3, b: 1.0, w: 0.25 },
                RecursionAtom { a: 0.5, b: -1.0, w: 0.25 },
                RecursionAtom { a: 0.5, b: 1.0, w: 0.25 },
            ],
            0.0,
        )
        .unwrap();
        let h = rec.hypotheses(3.0);
        assert!(h.h1, "moment contraction holds for a in {{0.3, 0.5}}");
        assert!(h.h2, "atoms have distinct fixed points");
        assert!(h.h3, "ln 0.3 / ln 0.5 is irrational");

        // degenerate law: single atom => cyclic subgroup, common fixed point
        let degenerate = StochasticRecursion::new(
            vec![RecursionAtom { a: 0.5, b: 1.0, w: 1.0 }],
            0.0,
        )
        .unwrap();
        let hd = degenerate.hypotheses(3.0);
        assert!(!hd.h2, "a single atom fixes x = b/(1-a) with mass 1");
        assert!(!hd.h3, "a single generator spawns a discrete subgroup");
    }
}
