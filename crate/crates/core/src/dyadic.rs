//! Dyadic cells of `[0,1]^d`.
//!
//! A cell at level `j` with multi-index `k` is the product of the binary
//! intervals `[k_i/2^j, (k_i+1)/2^j)`, where the right-most interval on each
//! axis is closed at 1. Children are ordered lexicographically on their index
//! tuples, so the first axis carries the most significant bit of a child's
//! position.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rational::{dyadic, inv_pow2, Rational};

/// Deepest level whose indices fit comfortably in a `u64`.
pub const MAX_LEVEL: u32 = 62;

/// `num / 2^exp` with an integer numerator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dyadic {
    pub num: u64,
    pub exp: u32,
}

impl Dyadic {
    pub fn to_rational(self) -> Rational {
        dyadic(self.num, self.exp as u64)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / 2f64.powi(self.exp as i32)
    }
}

/// One axis of a cell: `[lo, hi)` or, on the right edge of the cube, `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicInterval {
    pub lo: Dyadic,
    pub hi: Dyadic,
    pub closed: bool,
}

impl DyadicInterval {
    pub fn contains(&self, x: &Rational) -> bool {
        let lo = self.lo.to_rational();
        let hi = self.hi.to_rational();
        *x >= lo && (*x < hi || (self.closed && *x == hi))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    level: u32,
    index: Vec<u64>,
}

impl CellIndex {
    pub fn new(level: u32, index: Vec<u64>) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::InvalidCell("dimension must be at least 1".into()));
        }
        if level > MAX_LEVEL {
            return Err(Error::InvalidCell(format!("level {level} exceeds {MAX_LEVEL}")));
        }
        let side = 1u64 << level;
        if let Some(k) = index.iter().find(|&&k| k >= side) {
            return Err(Error::InvalidCell(format!("index {k} out of range at level {level}")));
        }
        Ok(Self { level, index })
    }

    pub fn root(dim: usize) -> Self {
        Self { level: 0, index: vec![0; dim] }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn index(&self) -> &[u64] {
        &self.index
    }

    /// Number of children, `2^d`.
    pub fn arity(&self) -> usize {
        1 << self.dim()
    }

    pub fn interval(&self) -> Vec<DyadicInterval> {
        let last = (1u64 << self.level) - 1;
        self.index
            .iter()
            .map(|&k| DyadicInterval {
                lo: Dyadic { num: k, exp: self.level },
                hi: Dyadic { num: k + 1, exp: self.level },
                closed: k == last,
            })
            .collect()
    }

    /// Exact membership test for a rational point.
    pub fn contains(&self, x: &[Rational]) -> bool {
        x.len() == self.dim() && self.interval().iter().zip(x).all(|(iv, xi)| iv.contains(xi))
    }

    /// Lebesgue measure `2^(-d·level)`.
    pub fn measure(&self) -> Rational {
        inv_pow2(self.dim() as u64 * self.level as u64)
    }

    pub fn center(&self) -> Vec<Rational> {
        self.index.iter().map(|&k| dyadic(2 * k + 1, self.level as u64 + 1)).collect()
    }

    /// The unique level-`level` cell containing `x`.
    pub fn locate(x: &[f64], level: u32) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidCell("dimension must be at least 1".into()));
        }
        if level > MAX_LEVEL {
            return Err(Error::InvalidCell(format!("level {level} exceeds {MAX_LEVEL}")));
        }
        let last = (1u64 << level) - 1;
        let scale = 2f64.powi(level as i32);
        let mut index = Vec::with_capacity(x.len());
        for &xi in x {
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::Domain(xi));
            }
            // x·2^j is exact in binary floating point.
            index.push(((xi * scale).floor() as u64).min(last));
        }
        Ok(Self { level, index })
    }

    /// Child at lexicographic position `pos` in `0..2^d`.
    pub fn child(&self, pos: usize) -> Self {
        let d = self.dim();
        let index = self
            .index
            .iter()
            .enumerate()
            .map(|(i, &k)| 2 * k + ((pos >> (d - 1 - i)) & 1) as u64)
            .collect();
        Self { level: self.level + 1, index }
    }

    pub fn children(&self) -> Vec<Self> {
        (0..self.arity()).map(|pos| self.child(pos)).collect()
    }

    /// Position of this cell among its parent's children.
    pub fn child_position(&self) -> usize {
        let d = self.dim();
        self.index
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &k)| acc | (((k & 1) as usize) << (d - 1 - i)))
    }

    pub fn parent(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::NoParent);
        }
        Ok(Self { level: self.level - 1, index: self.index.iter().map(|k| k >> 1).collect() })
    }

    /// Ancestor at `level <= self.level`.
    pub fn ancestor(&self, level: u32) -> Self {
        assert!(level <= self.level, "ancestor level above cell level");
        let shift = self.level - level;
        Self { level, index: self.index.iter().map(|k| k >> shift).collect() }
    }

    pub fn is_ancestor_of(&self, other: &Self) -> bool {
        self.level <= other.level && other.ancestor(self.level) == *self
    }

    /// Row-major position among the `2^(d·level)` cells of this level.
    pub fn linear_index(&self) -> usize {
        self.index.iter().fold(0usize, |acc, &k| (acc << self.level) | k as usize)
    }

    pub fn from_linear(dim: usize, level: u32, linear: usize) -> Self {
        let mask = (1usize << level) - 1;
        let index = (0..dim)
            .map(|i| ((linear >> (level as usize * (dim - 1 - i))) & mask) as u64)
            .collect();
        Self { level, index }
    }

    /// All cells of a level in row-major order.
    pub fn cells_at(dim: usize, level: u32) -> impl Iterator<Item = CellIndex> {
        let count = 1usize << (dim * level as usize);
        (0..count).map(move |i| CellIndex::from_linear(dim, level, i))
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.level)?;
        for (i, k) in self.index.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for CellIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidCell(format!("cannot parse {s:?}"));
        let (level, rest) = s.split_once(':').ok_or_else(bad)?;
        let level: u32 = level.trim().parse().map_err(|_| bad())?;
        let index = rest
            .split(',')
            .map(|k| k.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        CellIndex::new(level, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;
    use num_traits::Zero;

    fn cell(level: u32, index: &[u64]) -> CellIndex {
        CellIndex::new(level, index.to_vec()).unwrap()
    }

    #[test]
    fn intervals_are_half_open_except_right_edge() {
        let iv = cell(2, &[1]).interval()[0];
        assert_eq!((iv.lo.to_f64(), iv.hi.to_f64(), iv.closed), (0.25, 0.5, false));
        let iv = cell(2, &[3]).interval()[0];
        assert_eq!((iv.lo.to_f64(), iv.hi.to_f64(), iv.closed), (0.75, 1.0, true));
        let ivs = cell(1, &[0, 1]).interval();
        assert_eq!((ivs[0].lo.to_f64(), ivs[0].hi.to_f64(), ivs[0].closed), (0.0, 0.5, false));
        assert_eq!((ivs[1].lo.to_f64(), ivs[1].hi.to_f64(), ivs[1].closed), (0.5, 1.0, true));
        assert!(cell(2, &[3]).contains(&[ratio(1, 1)]));
        assert!(!cell(2, &[1]).contains(&[ratio(1, 2)]));
    }

    #[test]
    fn locate_examples() {
        assert_eq!(CellIndex::locate(&[0.3], 2).unwrap(), cell(2, &[1]));
        assert_eq!(CellIndex::locate(&[1.0], 3).unwrap(), cell(3, &[7]));
        assert_eq!(CellIndex::locate(&[0.3, 0.8], 1).unwrap(), cell(1, &[0, 1]));
        assert!(matches!(CellIndex::locate(&[1.5], 2), Err(Error::Domain(_))));
        assert!(matches!(CellIndex::locate(&[-0.0001], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn children_and_parent() {
        assert_eq!(cell(0, &[0]).children(), vec![cell(1, &[0]), cell(1, &[1])]);
        assert_eq!(cell(1, &[1]).children(), vec![cell(2, &[2]), cell(2, &[3])]);
        assert_eq!(
            cell(0, &[0, 0]).children(),
            vec![cell(1, &[0, 0]), cell(1, &[0, 1]), cell(1, &[1, 0]), cell(1, &[1, 1])]
        );
        assert_eq!(cell(2, &[3]).parent().unwrap(), cell(1, &[1]));
        assert_eq!(cell(1, &[0, 1]).parent().unwrap(), cell(0, &[0, 0]));
        assert!(matches!(cell(0, &[0]).parent(), Err(Error::NoParent)));
    }

    #[test]
    fn rejects_out_of_range_index() {
        assert!(CellIndex::new(2, vec![4]).is_err());
        assert!(CellIndex::new(1, vec![]).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let c = cell(3, &[1, 7, 2]);
        assert_eq!(c.to_string(), "3:1,7,2");
        assert_eq!("3:1,7,2".parse::<CellIndex>().unwrap(), c);
        assert!("3:8".parse::<CellIndex>().is_err());
        assert!("x".parse::<CellIndex>().is_err());
    }

    #[test]
    fn measures_sum_to_one() {
        for d in 1..=3 {
            for j in 0..=3 {
                let total = CellIndex::cells_at(d, j).fold(Rational::zero(), |acc, c| acc + c.measure());
                assert_eq!(total, ratio(1, 1));
            }
        }
    }

    #[test]
    fn linear_index_round_trips() {
        for c in CellIndex::cells_at(2, 3) {
            assert_eq!(CellIndex::from_linear(2, 3, c.linear_index()), c);
        }
        // row-major order agrees with lexicographic child order at level 1
        let kids = CellIndex::root(2).children();
        for (pos, k) in kids.iter().enumerate() {
            assert_eq!(k.linear_index(), pos);
            assert_eq!(k.child_position(), pos);
        }
    }
}
