//! Dyadic block partition into islands and gaps.
//!
//! The integers are split into blocks [2^k, 2^{k+1}). Inside block k a
//! large gap of length 2^{[εk]+[βk]} is left at the left end, and the rest
//! is divided by a Cantor-like scheme: at resolution level l a gap of
//! length 2^{[εk]+[βk]−l−1} is inserted in the middle of each current
//! interval, for l = 0..[βk]−1. The result is 2^{[βk]} islands and the
//! same number of gaps, alternating J,I,J,I,... from the left.
//!
//! At small k the exact integer construction can be infeasible: the gap
//! budget (2+[βk])·2^{[εk]+[βk]−1} may exceed the block, or leave less
//! than one unit per island. [`build_block`] reports those cases as
//! errors instead of producing degenerate layouts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("epsilon + beta must be < 1 with both in (0,1): epsilon={epsilon}, beta={beta}")]
    BadParameters { epsilon: f64, beta: f64 },
    #[error("block k={k} cannot host its gaps: {detail}")]
    BlockTooSmall { k: u32, detail: String },
    #[error("N={n} is below the first block 2^{k0}")]
    BelowFirstBlock { n: u64, k0: u32 },
    #[error("alpha must be positive, got {alpha}")]
    BadAlpha { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Gap,
    Island,
}

/// Half-open integer interval [start, end) inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub k: u32,
    /// Within-block index, 1-based, counted left to right per kind.
    pub j: u32,
    pub start: u64,
    pub end: u64,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: u64) -> bool {
        self.start <= i && i < self.end
    }
}

/// All segments of one block, sorted by position, alternating gap/island.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub k: u32,
    pub segments: Vec<Segment>,
}

impl Block {
    pub fn islands(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Island)
    }

    pub fn gaps(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Gap)
    }
}

/// The partition of [2^{k0}, 2^{n+1}) covering a given N, with the locator
/// (n, m) such that N lies in J_{n,m} ∪ I_{n,m}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPartition {
    pub k0: u32,
    pub epsilon: f64,
    pub beta: f64,
    pub n: u32,
    pub blocks: Vec<Block>,
    pub locator: (u32, u32),
    pub target: u64,
}

/// `[x·k]` with a 1e-9 nudge: decimal parameters like 0.6 are not exact
/// binaries and the raw product can land just below an integer (0.6·15).
pub fn floor_index(x: f64, k: u32) -> u32 {
    (x * k as f64 + 1e-9).floor() as u32
}

fn whole_block(k: u32) -> (u64, u64) {
    (1u64 << k, 1u64 << (k + 1))
}

fn validate_params(epsilon: f64, beta: f64) -> Result<(), PartitionError> {
    if !(epsilon > 0.0 && epsilon < 1.0 && beta > 0.0 && beta < 1.0 && epsilon + beta < 1.0) {
        return Err(PartitionError::BadParameters { epsilon, beta });
    }
    Ok(())
}

/// Build the segment list of block k. Errors if the left gap or any
/// middle-gap level cannot fit while keeping every sub-interval non-empty.
pub fn build_block(k: u32, epsilon: f64, beta: f64) -> Result<Vec<Segment>, PartitionError> {
    validate_params(epsilon, beta)?;
    let ek = floor_index(epsilon, k);
    let bk = floor_index(beta, k);
    let (block_start, block_end) = whole_block(k);
    let left_gap = 1u64 << (ek + bk);
    if left_gap >= block_end - block_start {
        return Err(PartitionError::BlockTooSmall {
            k,
            detail: format!(
                "left gap 2^({ek}+{bk}) = {left_gap} does not fit in length {}",
                block_end - block_start
            ),
        });
    }

    let mut gaps: Vec<(u64, u64)> = vec![(block_start, block_start + left_gap)];
    let mut intervals: Vec<(u64, u64)> = vec![(block_start + left_gap, block_end)];
    for level in 0..bk {
        let gap_len = 1u64 << (ek + bk - level - 1);
        let mut next = Vec::with_capacity(intervals.len() * 2);
        for &(a, b) in &intervals {
            let len = b - a;
            if len < gap_len + 2 {
                return Err(PartitionError::BlockTooSmall {
                    k,
                    detail: format!(
                        "level {level}: interval of length {len} cannot host a middle gap of \
                         {gap_len} with non-empty halves"
                    ),
                });
            }
            // Odd remainders: floor on the left, ceiling on the right.
            let left_len = (len - gap_len) / 2;
            let gap_start = a + left_len;
            next.push((a, gap_start));
            gaps.push((gap_start, gap_start + gap_len));
            next.push((gap_start + gap_len, b));
        }
        intervals = next;
    }

    let mut segments: Vec<Segment> = gaps
        .iter()
        .map(|&(s, e)| Segment { kind: SegmentKind::Gap, k, j: 0, start: s, end: e })
        .chain(intervals.iter().map(|&(s, e)| Segment {
            kind: SegmentKind::Island,
            k,
            j: 0,
            start: s,
            end: e,
        }))
        .collect();
    segments.sort_by_key(|s| s.start);

    let mut gap_idx = 0;
    let mut isl_idx = 0;
    for seg in &mut segments {
        match seg.kind {
            SegmentKind::Gap => {
                gap_idx += 1;
                seg.j = gap_idx;
            }
            SegmentKind::Island => {
                isl_idx += 1;
                seg.j = isl_idx;
            }
        }
    }
    debug_assert!(segments
        .iter()
        .enumerate()
        .all(|(i, s)| (i % 2 == 0) == (s.kind == SegmentKind::Gap)));
    Ok(segments)
}

/// Build the partition covering N: blocks k0 .. floor(log2 N), plus the
/// locator of N.
pub fn build(n_value: u64, epsilon: f64, beta: f64, k0: u32) -> Result<BlockPartition, PartitionError> {
    validate_params(epsilon, beta)?;
    if n_value < (1u64 << k0) {
        return Err(PartitionError::BelowFirstBlock { n: n_value, k0 });
    }
    let n = 63 - n_value.leading_zeros();
    let mut blocks = Vec::with_capacity((n - k0 + 1) as usize);
    for k in k0..=n {
        blocks.push(Block {
            k,
            segments: build_block(k, epsilon, beta)?,
        });
    }
    let top = blocks.last().expect("at least one block");
    let seg = top
        .segments
        .iter()
        .find(|s| s.contains(n_value))
        .expect("blocks cover [2^n, 2^{n+1})");
    let locator = (n, seg.j);
    Ok(BlockPartition {
        k0,
        epsilon,
        beta,
        n,
        blocks,
        locator,
        target: n_value,
    })
}

impl BlockPartition {
    /// Lexicographically ordered key set K_N = {(k,j) ⪯ locator}.
    pub fn key_set(&self) -> Vec<(u32, u32)> {
        let (ln, lm) = self.locator;
        let mut keys = Vec::new();
        for block in &self.blocks {
            for island in block.islands() {
                let key = (block.k, island.j);
                if key <= (ln, lm) {
                    keys.push(key);
                }
            }
        }
        keys
    }

    /// Islands whose full range lies inside [1, limit].
    pub fn islands_within(&self, limit: u64) -> Vec<Segment> {
        self.blocks
            .iter()
            .flat_map(|b| b.islands().copied().collect::<Vec<_>>())
            .filter(|s| s.end <= limit + 1)
            .collect()
    }

    pub fn all_segments(&self) -> impl Iterator<Item = &Segment> {
        self.blocks.iter().flat_map(|b| b.segments.iter())
    }
}

/// Rate-optimal island density: β*(α) = (1+α)/(1+2α) ∈ (1/2, 1).
pub fn optimal_beta(alpha: f64) -> f64 {
    assert!(alpha > 0.0, "alpha must be positive");
    (1.0 + alpha) / (1.0 + 2.0 * alpha)
}

/// Rate exponent ρ*(α) = α(1+α)/((3+2α)(1+2α)); increasing, limit 1/4.
pub fn theoretical_rate(alpha: f64) -> f64 {
    assert!(alpha > 0.0, "alpha must be positive");
    alpha * (1.0 + alpha) / ((3.0 + 2.0 * alpha) * (1.0 + 2.0 * alpha))
}

/// Exact feasibility test for one block, without building it.
pub fn block_feasible(k: u32, epsilon: f64, beta: f64) -> bool {
    build_block(k, epsilon, beta).is_ok()
}
