//! `i x j` block partition of the rating matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{check_bounds, Sample};
use crate::{Error, Result};

/// Row band and column group of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub row: usize,
    pub col: usize,
}

impl BlockId {
    pub fn new(row: usize, col: usize) -> Self {
        BlockId { row, col }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Two blocks may be updated concurrently iff they share neither a row band
/// nor a column group.
pub fn independent(a: BlockId, b: BlockId) -> bool {
    a.row != b.row && a.col != b.col
}

/// Equal-width cut points over `0..len`; the remainder goes to the last part.
fn cuts(len: usize, parts: usize) -> Vec<usize> {
    let width = len / parts;
    (0..parts).map(|a| a * width).chain(std::iter::once(len)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub m: usize,
    pub n: usize,
    row_cuts: Vec<usize>,
    col_cuts: Vec<usize>,
    /// `offsets[b]..offsets[b + 1]` is block `b` in the block-sorted samples,
    /// with `b = row * j + col`.
    offsets: Vec<usize>,
}

impl BlockGrid {
    /// Grid geometry with no samples attached.
    pub fn shape(m: usize, n: usize, i: usize, j: usize) -> Result<Self> {
        if i == 0 || j == 0 {
            return Err(Error::usage("grid dimensions must be positive"));
        }
        if i > m || j > n {
            return Err(Error::usage(format!("{i}x{j} grid does not fit a {m}x{n} matrix")));
        }
        Ok(BlockGrid {
            m,
            n,
            row_cuts: cuts(m, i),
            col_cuts: cuts(n, j),
            offsets: vec![0; i * j + 1],
        })
    }

    pub fn i(&self) -> usize {
        self.row_cuts.len() - 1
    }

    pub fn j(&self) -> usize {
        self.col_cuts.len() - 1
    }

    pub fn num_blocks(&self) -> usize {
        self.i() * self.j()
    }

    pub fn row_cuts(&self) -> &[usize] {
        &self.row_cuts
    }

    pub fn col_cuts(&self) -> &[usize] {
        &self.col_cuts
    }

    #[inline]
    pub fn band_of(&self, u: usize) -> usize {
        (u / (self.m / self.i())).min(self.i() - 1)
    }

    #[inline]
    pub fn group_of(&self, v: usize) -> usize {
        (v / (self.n / self.j())).min(self.j() - 1)
    }

    #[inline]
    pub fn block_of(&self, s: &Sample) -> BlockId {
        BlockId::new(self.band_of(s.u as usize), self.group_of(s.v as usize))
    }

    #[inline]
    pub fn index(&self, b: BlockId) -> usize {
        b.row * self.j() + b.col
    }

    pub fn block(&self, index: usize) -> BlockId {
        BlockId::new(index / self.j(), index % self.j())
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.num_blocks()).map(|b| self.block(b))
    }

    /// Row range of P covered by band `a`.
    pub fn rows_of(&self, band: usize) -> std::ops::Range<usize> {
        self.row_cuts[band]..self.row_cuts[band + 1]
    }

    /// Row range of Q covered by group `b`.
    pub fn cols_of(&self, group: usize) -> std::ops::Range<usize> {
        self.col_cuts[group]..self.col_cuts[group + 1]
    }

    /// Range of block `b` inside the block-sorted sample array.
    pub fn range(&self, b: BlockId) -> std::ops::Range<usize> {
        let idx = self.index(b);
        self.offsets[idx]..self.offsets[idx + 1]
    }

    pub fn block_len(&self, b: BlockId) -> usize {
        self.range(b).len()
    }

    /// Contiguous range holding all blocks of row band `band`.
    pub fn band_range(&self, band: usize) -> std::ops::Range<usize> {
        let j = self.j();
        self.offsets[band * j]..self.offsets[(band + 1) * j]
    }

    pub fn total_samples(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

/// Bucket `samples` into an `i x j` grid over an `m x n` matrix. The returned
/// copy is counting-sorted by block id; within a block the input order is
/// preserved.
pub fn build_block_grid(
    samples: &[Sample],
    m: usize,
    n: usize,
    i: usize,
    j: usize,
) -> Result<(BlockGrid, Vec<Sample>)> {
    let mut grid = BlockGrid::shape(m, n, i, j)?;
    check_bounds(samples, m, n)?;
    let ids: Vec<usize> = samples.iter().map(|s| grid.index(grid.block_of(s))).collect();
    let mut counts = vec![0usize; grid.num_blocks() + 1];
    for &b in &ids {
        counts[b + 1] += 1;
    }
    for b in 0..grid.num_blocks() {
        counts[b + 1] += counts[b];
    }
    grid.offsets = counts.clone();
    let mut sorted = vec![Sample::default(); samples.len()];
    let mut next = counts;
    for (s, &b) in samples.iter().zip(&ids) {
        sorted[next[b]] = *s;
        next[b] += 1;
    }
    Ok((grid, sorted))
}

/// Outcome of the Hogwild! convergence condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Feasibility {
    Pass,
    /// `workers` is not below `bound = min(m/i, n/j) / safety_factor`.
    Fail {
        workers: usize,
        bound: f64,
    },
}

impl Feasibility {
    pub fn passed(&self) -> bool {
        matches!(self, Feasibility::Pass)
    }
}

impl fmt::Display for Feasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feasibility::Pass => f.write_str("pass"),
            Feasibility::Fail { workers, bound } => {
                write!(f, "{workers} workers is not below min(m/i, n/j)/safety = {bound:.2}")
            }
        }
    }
}

pub const DEFAULT_SAFETY_FACTOR: f64 = 20.0;

/// `s < min(floor(m/i), floor(n/j)) / safety_factor`.
pub fn feasibility_check(s: usize, m: usize, n: usize, i: usize, j: usize, safety_factor: f64) -> Feasibility {
    let per_block = (m / i.max(1)).min(n / j.max(1));
    let bound = per_block as f64 / safety_factor;
    if (s as f64) < bound {
        Feasibility::Pass
    } else {
        Feasibility::Fail { workers: s, bound }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_holds_everything() {
        let s = vec![Sample::new(0, 0, 1.0), Sample::new(3, 2, 1.0), Sample::new(1, 1, 1.0)];
        let (g, sorted) = build_block_grid(&s, 4, 3, 1, 1).unwrap();
        assert_eq!(g.range(BlockId::new(0, 0)), 0..3);
        assert_eq!(sorted, s);
    }

    #[test]
    fn corners_land_in_distinct_blocks() {
        let s = vec![
            Sample::new(3, 3, 4.0),
            Sample::new(0, 0, 1.0),
            Sample::new(3, 0, 3.0),
            Sample::new(0, 3, 2.0),
        ];
        let (g, sorted) = build_block_grid(&s, 4, 4, 2, 2).unwrap();
        for b in g.blocks() {
            assert_eq!(g.block_len(b), 1);
        }
        let rs: Vec<f32> = sorted.iter().map(|s| s.r).collect();
        assert_eq!(rs, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn remainder_goes_to_last_band() {
        let g = BlockGrid::shape(10, 7, 3, 2).unwrap();
        assert_eq!(g.row_cuts(), &[0, 3, 6, 10]);
        assert_eq!(g.col_cuts(), &[0, 3, 7]);
        assert_eq!(g.band_of(9), 2);
        assert_eq!(g.group_of(6), 1);
    }

    #[test]
    fn four_by_four_block_touches_one_segment_each() {
        // blocks numbered 1..16 row-major; R2 is (0, 1)
        let g = BlockGrid::shape(400, 400, 4, 4).unwrap();
        let r2 = g.block(1);
        assert_eq!(r2, BlockId::new(0, 1));
        assert_eq!(g.rows_of(r2.row), 0..100);
        assert_eq!(g.cols_of(r2.col), 100..200);
    }

    #[test]
    fn grid_too_large_is_rejected() {
        assert!(matches!(BlockGrid::shape(3, 3, 4, 1), Err(Error::Usage(_))));
        assert!(matches!(BlockGrid::shape(3, 3, 0, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn independence_examples() {
        assert!(independent(BlockId::new(0, 1), BlockId::new(1, 0)));
        assert!(!independent(BlockId::new(0, 1), BlockId::new(2, 1)));
        assert!(!independent(BlockId::new(2, 2), BlockId::new(2, 2)));
    }

    #[test]
    fn feasibility_examples() {
        let huge_m = 50_082_604;
        assert!(feasibility_check(768, huge_m, 40_000, 1, 2, DEFAULT_SAFETY_FACTOR).passed());
        assert_eq!(
            feasibility_check(768, huge_m, 40_000, 1, 4, DEFAULT_SAFETY_FACTOR),
            Feasibility::Fail {
                workers: 768,
                bound: 500.0
            }
        );
        assert!(feasibility_check(1, 21, 21, 1, 1, DEFAULT_SAFETY_FACTOR).passed());
        assert!(!feasibility_check(1, 20, 21, 1, 1, DEFAULT_SAFETY_FACTOR).passed());
    }
}
