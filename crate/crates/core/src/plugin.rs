//! The per-cell majority-vote classifier at a fixed dyadic level, its
//! level choices and the population-level approximation it tracks.

use std::io::Write;

use num_traits::Signed;
use rayon::prelude::*;

use crate::dyadic::CellIndex;
use crate::error::{Error, Result};
use crate::rational::{format_rational, Rational};
use crate::rule_tree::{check_table_size, RuleTree, Sign};
use crate::sparse_class::WeightFunction;
use crate::synthetic_dist::{LabeledDataset, PiecewiseDistribution};

/// Samples per rayon task in [`fit_parallel`].
const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FittedRule {
    dim: usize,
    level: u32,
    /// `(n_plus, n_minus)` per level-`J` cell, row-major.
    counts: Vec<(u64, u64)>,
    coefficients: Vec<Sign>,
}

impl FittedRule {
    fn from_counts(dim: usize, level: u32, counts: Vec<(u64, u64)>) -> Self {
        // ties and empty cells fall to -1
        let coefficients = counts.iter().map(|&(p, m)| Sign::from_bool(p >= 1 && p > m)).collect();
        Self { dim, level, counts, coefficients }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn counts(&self) -> &[(u64, u64)] {
        &self.counts
    }

    pub fn coefficients(&self) -> &[Sign] {
        &self.coefficients
    }

    pub fn coefficient(&self, cell: &CellIndex) -> Sign {
        self.coefficients[cell.linear_index()]
    }

    pub fn to_rule_tree(&self) -> RuleTree {
        RuleTree::from_sign_table(self.dim, self.level, &self.coefficients).expect("table size checked at fit")
    }

    /// CSV with header `j,k1,...,kd,n_plus,n_minus`, one row per cell.
    pub fn write_counts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["j".to_string()];
        header.extend((1..=self.dim).map(|i| format!("k{i}")));
        header.extend(["n_plus".to_string(), "n_minus".to_string()]);
        writer.write_record(&header)?;
        for (cell, &(p, m)) in CellIndex::cells_at(self.dim, self.level).zip(&self.counts) {
            let mut row = vec![self.level.to_string()];
            row.extend(cell.index().iter().map(u64::to_string));
            row.extend([p.to_string(), m.to_string()]);
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn check_fit(data: &LabeledDataset, level: u32, dim: usize) -> Result<usize> {
    if data.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: data.dim() });
    }
    check_table_size(dim, level)?;
    Ok(1 << (dim * level as usize))
}

fn tally(data: &LabeledDataset, range: std::ops::Range<usize>, level: u32, cells: usize) -> Result<Vec<(u64, u64)>> {
    let mut counts = vec![(0u64, 0u64); cells];
    for i in range {
        let slot = &mut counts[CellIndex::locate(data.point(i), level)?.linear_index()];
        match data.label(i) {
            Sign::Plus => slot.0 += 1,
            Sign::Minus => slot.1 += 1,
        }
    }
    Ok(counts)
}

/// Majority vote on every level-`level` cell; a cell predicts `+1` only
/// when it holds at least one positive sample and strictly more positive
/// than negative samples.
pub fn fit(data: &LabeledDataset, level: u32) -> Result<FittedRule> {
    let cells = check_fit(data, level, data.dim())?;
    let counts = tally(data, 0..data.len(), level, cells)?;
    Ok(FittedRule::from_counts(data.dim(), level, counts))
}

/// [`fit`] with the tally split over sample ranges on the current rayon pool.
pub fn fit_parallel(data: &LabeledDataset, level: u32) -> Result<FittedRule> {
    let cells = check_fit(data, level, data.dim())?;
    let chunks: Vec<std::ops::Range<usize>> =
        (0..data.len()).step_by(CHUNK).map(|s| s..(s + CHUNK).min(data.len())).collect();
    let partial: Vec<Vec<(u64, u64)>> =
        chunks.into_par_iter().map(|r| tally(data, r, level, cells)).collect::<Result<_>>()?;
    let mut counts = vec![(0u64, 0u64); cells];
    for part in partial {
        for (acc, (p, m)) in counts.iter_mut().zip(part) {
            acc.0 += p;
            acc.1 += m;
        }
    }
    Ok(FittedRule::from_counts(data.dim(), level, counts))
}

/// `J_n = ceil(ln(a·n / (2^d·ln n)) / (d·ln 2))`, at least 0.
pub fn select_j(n: u64, a: f64, dim: usize) -> Result<u32> {
    if n < 3 {
        return Err(Error::Parameter(format!("n = {n} is too small; need n >= 3")));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Parameter(format!("a = {a} outside (0, 1]")));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    let n = n as f64;
    let arg = a * n / (2f64.powi(dim as i32) * n.ln());
    let j = (arg.ln() / (dim as f64 * std::f64::consts::LN_2)).ceil();
    Ok(if j > 0.0 { j as u32 } else { 0 })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Approximation {
    pub level: u32,
    pub rule: RuleTree,
}

/// `f_ε`: at `J_ε = j_epsilon(w, eps, A)`, the sign of `P(Y = 1 | X ∈ cell) - 1/2`
/// on every level-`J_ε` cell (`-1` on ties).
pub fn approximate(dist: &PiecewiseDistribution, w: &WeightFunction, eps: &Rational) -> Result<Approximation> {
    if !eps.is_positive() {
        return Err(Error::Parameter(format!("eps = {} must be positive", format_rational(eps))));
    }
    if !w.is_l1_ball() {
        return Err(Error::Precondition("weight function does not define an L1-ball".into()));
    }
    if w.dim() != dist.dim() {
        return Err(Error::DimensionMismatch { expected: dist.dim(), found: w.dim() });
    }
    let level = w.j_epsilon(eps, dist.big_a())?;
    Ok(Approximation { level, rule: dist.majority_rule(level) })
}

/// `(1 + A)·eps + exp(-n·a·(1 - exp(-h²/2))·2^(-d·J))`.
pub fn theoretical_bound(eps: f64, n: u64, a: f64, big_a: f64, h: f64, dim: usize, level: u32) -> Result<f64> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps = {eps} must be finite and non-negative")));
    }
    if !(a > 0.0 && a <= 1.0 && big_a >= 1.0 && big_a.is_finite()) {
        return Err(Error::Parameter(format!("a = {a}, A = {big_a} violate 0 < a <= 1 <= A")));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Parameter(format!("h = {h} outside (0, 1]")));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    let rate = a * (1.0 - (-h * h / 2.0).exp()) * 2f64.powi(-((dim as u32 * level) as i32));
    Ok((1.0 + big_a) * eps + (-(n as f64) * rate).exp())
}
