//! Joint characteristic functions of past/future sum blocks and their
//! factorization defect.
//!
//! For a finite chain started at x, the joint characteristic function of
//! the block sums over consecutive windows J_1..J_{M1} (past) and the
//! windows shifted by a gap (future) is an operator product
//!
//! ```text
//! φ(t, s) = (P^{j0} P_{t1}^{|J1|} … P_{tM1}^{|J_M1|} P^{gap}
//!            P_{s1}^{|J_{M1+1}|} … P_{sM2}^{|J_M|} e)(x)
//! ```
//!
//! evaluated here exactly on a t-grid. The factorization defect
//! |φ(t,s) − φ₁(t)φ₂(s)| is compared against the dependence envelope
//! λ₀(x)·e^{−λ₁·gap}·(1 + max card J_m)^{λ₂(M1+M2)}.
//!
//! Window convention: window [j_{m−1}, j_m) covers the chain steps
//! j_{m−1}+1 .. j_m (the sum starts after j_{m−1} transitions from x).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::FiniteChain;
use crate::operator::MixingConstants;

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("j-bounds must be strictly increasing, got {bounds:?}")]
    BoundsNotIncreasing { bounds: Vec<u64> },
    #[error("pattern wants {expected} intervals but j-bounds define {got}")]
    IntervalCount { expected: usize, got: usize },
    #[error("t-vector lengths ({got1}, {got2}) do not match (M1, M2) = ({m1}, {m2})")]
    DimensionMismatch { got1: usize, got2: usize, m1: usize, m2: usize },
    #[error("factorization defect {defect} exceeds the dependence envelope {bound}")]
    BoundViolated { defect: f64, bound: f64 },
    #[error("all defects sit at the numerical floor; decay rate not measurable")]
    DefectBelowFloor,
    #[error("need at least {need} usable points for a decay fit, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

/// Past/future window layout: M1 past and M2 future windows with common
/// bounds j_0 < … < j_{M1+M2} and a gap inserted before the future part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalPattern {
    pub j_bounds: Vec<u64>,
    pub m1: usize,
    pub m2: usize,
    pub k_gap: u64,
}

impl IntervalPattern {
    pub fn new(j_bounds: Vec<u64>, m1: usize, m2: usize, k_gap: u64) -> Result<Self, MixingError> {
        if !j_bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(MixingError::BoundsNotIncreasing { bounds: j_bounds });
        }
        if j_bounds.len() != m1 + m2 + 1 || m1 == 0 || m2 == 0 {
            return Err(MixingError::IntervalCount {
                expected: m1 + m2,
                got: j_bounds.len().saturating_sub(1),
            });
        }
        Ok(Self { j_bounds, m1, m2, k_gap })
    }

    /// Contiguous windows of the given cardinalities starting at j0.
    pub fn contiguous(j0: u64, cards: &[u64], m1: usize, k_gap: u64) -> Result<Self, MixingError> {
        let mut bounds = Vec::with_capacity(cards.len() + 1);
        bounds.push(j0);
        let mut acc = j0;
        for &c in cards {
            acc += c;
            bounds.push(acc);
        }
        Self::new(bounds, m1, cards.len() - m1, k_gap)
    }

    pub fn blocks(&self) -> usize {
        self.m1 + self.m2
    }

    pub fn card(&self, m: usize) -> u64 {
        self.j_bounds[m + 1] - self.j_bounds[m]
    }

    pub fn max_card(&self) -> u64 {
        (0..self.blocks()).map(|m| self.card(m)).max().unwrap()
    }
}

/// Row-major small complex matrix with allocation-free products.
#[derive(Clone)]
struct CMat {
    n: usize,
    a: Vec<Complex64>,
}

impl CMat {
    fn identity(n: usize) -> Self {
        let mut a = vec![Complex64::ZERO; n * n];
        for i in 0..n {
            a[i * n + i] = Complex64::ONE;
        }
        Self { n, a }
    }

    fn from_chain(chain: &FiniteChain, t: f64) -> Self {
        let n = chain.n_states();
        let mut a = vec![Complex64::ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = Complex64::from_polar(chain.p[i][j], t * chain.f[j]);
            }
        }
        Self { n, a }
    }

    fn mul(&self, rhs: &CMat) -> CMat {
        let n = self.n;
        let mut out = vec![Complex64::ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let lik = self.a[i * n + k];
                if lik == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += lik * rhs.a[k * n + j];
                }
            }
        }
        CMat { n, a: out }
    }

    /// Repeated squaring.
    fn pow(&self, mut e: u64) -> CMat {
        let mut base = self.clone();
        let mut acc = CMat::identity(self.n);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    fn mul_vec(&self, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = Complex64::ZERO;
            for j in 0..n {
                acc += self.a[i * n + j] * v[j];
            }
            out[i] = acc;
        }
    }
}

struct OperatorFamily {
    /// block_mats[m][g] = P_{t_g}^{card(m)}
    block_mats: Vec<Vec<CMat>>,
    /// P^{k_gap}
    gap: CMat,
    /// P^{j0}
    prefix: CMat,
    n: usize,
}

impl OperatorFamily {
    fn build(chain: &FiniteChain, pattern: &IntervalPattern, grid: &[f64]) -> Self {
        let p0 = CMat::from_chain(chain, 0.0);
        let block_mats = (0..pattern.blocks())
            .map(|m| {
                grid.iter()
                    .map(|&t| CMat::from_chain(chain, t).pow(pattern.card(m)))
                    .collect()
            })
            .collect();
        OperatorFamily {
            block_mats,
            gap: p0.pow(pattern.k_gap),
            prefix: p0.pow(pattern.j_bounds[0]),
            n: chain.n_states(),
        }
    }

    /// Full tensor φ over the grid, row-major with block 0 as the most
    /// significant digit (block m carries weight grid_len^{M−1−m}).
    fn sweep(&self, pattern: &IntervalPattern, grid_len: usize, x0: usize) -> Vec<Complex64> {
        let blocks = pattern.blocks();
        let total = grid_len.pow(blocks as u32);
        let mut tensor = vec![Complex64::ZERO; total];
        let e = vec![Complex64::ONE; self.n];
        // digit weight of each block in the flat tensor index
        let weights: Vec<usize> = (0..blocks)
            .map(|m| grid_len.pow((blocks - 1 - m) as u32))
            .collect();
        // one buffer per recursion level plus one for the prefix product
        let mut scratch = vec![vec![Complex64::ZERO; self.n]; blocks + 1];
        self.descend(
            pattern,
            grid_len,
            x0,
            blocks - 1,
            &e,
            0,
            &weights,
            &mut tensor,
            &mut scratch,
        );
        tensor
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        pattern: &IntervalPattern,
        grid_len: usize,
        x0: usize,
        b: usize,
        suffix: &[Complex64],
        idx: usize,
        weights: &[usize],
        tensor: &mut [Complex64],
        scratch: &mut [Vec<Complex64>],
    ) {
        debug_assert_eq!(scratch.len(), b + 2);
        // The gap sits between past block m1-1 and future block m1
        // (0-indexed); moving right-to-left it is applied before block m1-1.
        let gapped: Option<Vec<Complex64>> = if b + 1 == pattern.m1 {
            let mut g = vec![Complex64::ZERO; self.n];
            self.gap.mul_vec(suffix, &mut g);
            Some(g)
        } else {
            None
        };
        let input: &[Complex64] = gapped.as_deref().unwrap_or(suffix);

        let (rest, last) = scratch.split_at_mut(b + 1);
        let buf = &mut last[0];
        for g in 0..grid_len {
            self.block_mats[b][g].mul_vec(input, buf);
            let next_idx = idx + g * weights[b];
            if b == 0 {
                let out = &mut rest[0];
                self.prefix.mul_vec(buf, out);
                tensor[next_idx] = out[x0];
            } else {
                self.descend(
                    pattern, grid_len, x0, b - 1, buf, next_idx, weights, tensor, rest,
                );
            }
        }
    }
}

/// Joint characteristic function at one (t1, t2).
pub fn cf_joint(
    chain: &FiniteChain,
    x0: usize,
    pattern: &IntervalPattern,
    t1: &[f64],
    t2: &[f64],
) -> Result<Complex64, MixingError> {
    if t1.len() != pattern.m1 || t2.len() != pattern.m2 {
        return Err(MixingError::DimensionMismatch {
            got1: t1.len(),
            got2: t2.len(),
            m1: pattern.m1,
            m2: pattern.m2,
        });
    }
    let p0 = CMat::from_chain(chain, 0.0);
    let n = chain.n_states();
    let mut v = vec![Complex64::ONE; n];
    let mut buf = vec![Complex64::ZERO; n];
    let ts: Vec<f64> = t1.iter().chain(t2.iter()).copied().collect();
    for m in (0..pattern.blocks()).rev() {
        let mat = CMat::from_chain(chain, ts[m]).pow(pattern.card(m));
        mat.mul_vec(&v, &mut buf);
        std::mem::swap(&mut v, &mut buf);
        if m == pattern.m1 {
            p0.pow(pattern.k_gap).mul_vec(&v, &mut buf);
            std::mem::swap(&mut v, &mut buf);
        }
    }
    p0.pow(pattern.j_bounds[0]).mul_vec(&v, &mut buf);
    Ok(buf[x0])
}

/// Past marginal φ₁(t1) = φ(t1, 0).
pub fn cf_past(
    chain: &FiniteChain,
    x0: usize,
    pattern: &IntervalPattern,
    t1: &[f64],
) -> Result<Complex64, MixingError> {
    let zeros = vec![0.0; pattern.m2];
    cf_joint(chain, x0, pattern, t1, &zeros)
}

/// Future marginal φ₂(t2) = φ(0, t2).
pub fn cf_future(
    chain: &FiniteChain,
    x0: usize,
    pattern: &IntervalPattern,
    t2: &[f64],
) -> Result<Complex64, MixingError> {
    let zeros = vec![0.0; pattern.m1];
    cf_joint(chain, x0, pattern, &zeros, t2)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct C1Point {
    pub k_gap: u64,
    pub defect: f64,
    pub bound: f64,
}

/// Dependence envelope λ₀·e^{−λ₁·gap}·(1+max card)^{λ₂·M}.
pub fn c1_bound(pattern: &IntervalPattern, consts: &MixingConstants) -> f64 {
    let decay = if pattern.k_gap == 0 {
        1.0
    } else {
        (-consts.lambda1 * pattern.k_gap as f64).exp()
    };
    consts.lambda0_x
        * decay
        * (1.0 + pattern.max_card() as f64).powf(consts.lambda2 * pattern.blocks() as f64)
}

/// Max factorization defect over the full grid tensor, checked against
/// the envelope. The grid max is a lower bound on the true sup, which is
/// the conservative direction for the defect ≤ bound assertion.
pub fn c1_defect(
    chain: &FiniteChain,
    x0: usize,
    pattern: &IntervalPattern,
    consts: &MixingConstants,
    grid: &[f64],
) -> Result<C1Point, MixingError> {
    let family = OperatorFamily::build(chain, pattern, grid);
    let tensor = family.sweep(pattern, grid.len(), x0);

    let g = grid.len();
    let zero_idx = grid
        .iter()
        .position(|&t| t == 0.0)
        .expect("grid must contain t = 0");
    let past_size = g.pow(pattern.m1 as u32);
    let future_size = g.pow(pattern.m2 as u32);
    // flat index of the all-zero t selection for each half
    let zero_flat = |len: usize| -> usize { (0..len).fold(0, |acc, _| acc * g + zero_idx) };
    let z1 = zero_flat(pattern.m1);
    let z2 = zero_flat(pattern.m2);

    let mut defect = 0.0f64;
    for i1 in 0..past_size {
        let phi1 = tensor[i1 * future_size + z2];
        for i2 in 0..future_size {
            let phi = tensor[i1 * future_size + i2];
            let phi2 = tensor[z1 * future_size + i2];
            defect = defect.max((phi - phi1 * phi2).norm());
        }
    }

    let bound = c1_bound(pattern, consts);
    if defect > bound * (1.0 + 1e-9) + 1e-13 {
        return Err(MixingError::BoundViolated { defect, bound });
    }
    Ok(C1Point {
        k_gap: pattern.k_gap,
        defect,
        bound,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<C1Point>,
}

/// Least-squares slope of ln(defect) against the gap size; the expected
/// slope is ln κ.
pub fn decay_fit(
    chain: &FiniteChain,
    x0: usize,
    base: &IntervalPattern,
    k_gaps: &[u64],
    consts: &MixingConstants,
    grid: &[f64],
) -> Result<DecayFit, MixingError> {
    let mut points = Vec::with_capacity(k_gaps.len());
    for &k_gap in k_gaps {
        let pattern = IntervalPattern {
            k_gap,
            ..base.clone()
        };
        points.push(c1_defect(chain, x0, &pattern, consts, grid)?);
    }
    let usable: Vec<&C1Point> = points.iter().filter(|p| p.defect > 1e-14).collect();
    if usable.is_empty() {
        return Err(MixingError::DefectBelowFloor);
    }
    if usable.len() < 5 {
        return Err(MixingError::TooFewPoints {
            need: 5,
            got: usable.len(),
        });
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.k_gap as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.defect.ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    Ok(DecayFit {
        slope,
        intercept,
        r2,
        points,
    })
}

/// Simple linear regression returning (slope, intercept, r²).
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
