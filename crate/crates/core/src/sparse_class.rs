//! Weight functions `w` and the L¹-balls `F_w` of rules whose number of
//! nonzero coefficients at level `j` is at most `floor(w(j))`.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dyadic::{CellIndex, MAX_LEVEL};
use crate::error::{Error, Result};
use crate::rational::{
    format_rational, int, inv_pow2, parse_rational, pow2_ubig, ubig_to_rational, Rational,
};
use crate::rule_tree::{Node, RuleTree, Sign};

/// Largest denominator accepted for a rational exponent `alpha`.
const MAX_ALPHA_DENOM: u64 = 1000;

/// Bits of the geometric remainder left uncertified when a tail is only
/// known up to an enclosure.
const REMAINDER_BITS: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TailRule {
    /// `w(j) = w(L-1) · ratio^(j-L+1)` beyond a table of length `L`.
    Geometric { ratio: Rational },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Minimal,
    Truncated { k: u32 },
    Exponential { alpha: Rational },
    Custom { table: Vec<u64>, tail: Option<TailRule> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightFunction {
    dim: usize,
    kind: WeightKind,
}

/// Enclosure of a tail sum. Both ends coincide whenever the sum is known
/// in closed form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TailSum {
    pub lower: Rational,
    pub upper: Rational,
}

impl TailSum {
    fn exact(v: Rational) -> Self {
        Self { lower: v.clone(), upper: v }
    }

    pub fn is_exact(&self) -> bool {
        self.lower == self.upper
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > 16 {
        return Err(Error::Parameter(format!("unsupported dimension {dim}")));
    }
    Ok(())
}

impl WeightFunction {
    pub fn minimal(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { dim, kind: WeightKind::Minimal })
    }

    pub fn truncated(dim: usize, k: u32) -> Result<Self> {
        check_dim(dim)?;
        if k == 0 || k > MAX_LEVEL {
            return Err(Error::Parameter(format!("truncation level {k} must lie in 1..={MAX_LEVEL}")));
        }
        Ok(Self { dim, kind: WeightKind::Truncated { k } })
    }

    pub fn exponential(dim: usize, alpha: Rational) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha.is_positive() && alpha < Rational::one()) {
            return Err(Error::Parameter(format!("alpha = {} must lie in (0, 1)", format_rational(&alpha))));
        }
        if alpha.denom() > &BigInt::from(MAX_ALPHA_DENOM) {
            return Err(Error::Unsupported(format!(
                "alpha = {} has a denominator above {MAX_ALPHA_DENOM}",
                format_rational(&alpha)
            )));
        }
        Ok(Self { dim, kind: WeightKind::Exponential { alpha } })
    }

    pub fn custom(dim: usize, table: Vec<u64>, tail: Option<TailRule>) -> Result<Self> {
        check_dim(dim)?;
        if table.is_empty() {
            return Err(Error::Parameter("custom weight table is empty".into()));
        }
        for (j, &b) in table.iter().enumerate() {
            if BigUint::from(b) > pow2_ubig((dim * j) as u64) {
                return Err(Error::Parameter(format!("w({j}) = {b} exceeds the 2^{} cells of level {j}", dim * j)));
            }
        }
        if let Some(TailRule::Geometric { ratio }) = &tail {
            if ratio.is_negative() {
                return Err(Error::Parameter("negative tail ratio".into()));
            }
            if *table.last().unwrap() > 0 && *ratio > ubig_to_rational(&pow2_ubig(dim as u64)) {
                return Err(Error::Parameter(format!(
                    "tail ratio {} exceeds 2^{dim}, so budgets would outgrow the cell count",
                    format_rational(ratio)
                )));
            }
        }
        Ok(Self { dim, kind: WeightKind::Custom { table, tail } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    /// `floor(w(j))`.
    pub fn budget(&self, j: u32) -> Result<BigUint> {
        let d = self.dim as u64;
        let j64 = j as u64;
        Ok(match &self.kind {
            WeightKind::Minimal => {
                if j == 0 {
                    BigUint::one()
                } else {
                    pow2_ubig(d) - 1u32
                }
            }
            WeightKind::Truncated { k } => pow2_ubig(d * j64.min(*k as u64)),
            WeightKind::Exponential { alpha } => {
                if j <= n_alpha_exact(self.dim, alpha) {
                    pow2_ubig(d * j64)
                } else {
                    floor_pow2_frac(d * j64, alpha)
                }
            }
            WeightKind::Custom { table, tail } => {
                if (j as usize) < table.len() {
                    BigUint::from(table[j as usize])
                } else {
                    match tail {
                        Some(TailRule::Geometric { ratio }) => {
                            let steps = j as usize + 1 - table.len();
                            let last = Rational::from_integer((*table.last().unwrap()).into());
                            crate::rational::floor_nonneg(&(last * pow_rational(ratio, steps)))
                        }
                        None => {
                            return Err(Error::Unsupported(format!(
                                "custom table has no entry for level {j} and no tail rule"
                            )))
                        }
                    }
                }
            }
        })
    }

    /// Whether `Σ_j 2^(-dj) floor(w(j))` is finite.
    pub fn is_l1_ball(&self) -> bool {
        match &self.kind {
            WeightKind::Minimal | WeightKind::Truncated { .. } | WeightKind::Exponential { .. } => true,
            WeightKind::Custom { tail: None, .. } => false,
            WeightKind::Custom { table, tail: Some(TailRule::Geometric { ratio }) } => {
                *table.last().unwrap() == 0 || *ratio < ubig_to_rational(&pow2_ubig(self.dim as u64))
            }
        }
    }

    /// `Σ_{j > J} 2^(-dj) floor(w(j))`.
    pub fn tail_sum(&self, big_j: u32) -> Result<TailSum> {
        let d = self.dim as u64;
        let jj = big_j as u64;
        let cells = pow2_ubig(d);
        let cells_minus_one = ubig_to_rational(&(cells.clone() - 1u32));
        match &self.kind {
            WeightKind::Minimal => Ok(TailSum::exact(inv_pow2(d * jj))),
            WeightKind::Truncated { k } => {
                let k = *k as u64;
                if jj >= k {
                    Ok(TailSum::exact(inv_pow2(d * (jj - k)) / cells_minus_one))
                } else {
                    Ok(TailSum::exact(int((k - jj) as i64) + Rational::one() / cells_minus_one))
                }
            }
            WeightKind::Exponential { alpha } => Ok(self.exponential_tail(big_j, alpha)),
            WeightKind::Custom { tail: None, .. } => {
                Err(Error::Unsupported("custom weight without a tail rule has no tail sum".into()))
            }
            WeightKind::Custom { table, tail: Some(TailRule::Geometric { ratio }) } => {
                if !self.is_l1_ball() {
                    return Err(Error::Unsupported(format!(
                        "tail ratio {} makes the tail sum diverge",
                        format_rational(ratio)
                    )));
                }
                Ok(self.custom_tail(big_j, table, ratio))
            }
        }
    }

    fn exact_terms(&self, from: u32, to: u32) -> Rational {
        let d = self.dim as u64;
        (from..=to)
            .map(|j| ubig_to_rational(&self.budget(j).expect("budget defined")) * inv_pow2(d * j as u64))
            .sum()
    }

    fn exponential_tail(&self, big_j: u32, alpha: &Rational) -> TailSum {
        let d = self.dim as u64;
        let p = alpha.numer().to_u64().unwrap();
        let q = alpha.denom().to_u64().unwrap();
        let n = n_alpha_exact(self.dim, alpha);
        // beyond level n the terms decay like rho^j, rho = 2^(-d(1-alpha))
        let decay_bits = d as f64 * (q - p) as f64 / q as f64;
        let cutoff = big_j.max(n) + (REMAINDER_BITS / decay_bits).ceil() as u32 + 1;
        let exact = self.exact_terms(big_j + 1, cutoff);

        // rational brackets of rho from a fixed-point q-th root
        let e = d * (q - p);
        let s = 64 + d;
        let floor_scaled = pow2_ubig(s * q - e).nth_root(q as u32);
        let scale = ubig_to_rational(&pow2_ubig(s));
        let rho_low = ubig_to_rational(&floor_scaled) / scale.clone();
        let rho_up = ubig_to_rational(&(floor_scaled + 1u32)) / scale;
        let geometric_from = |rho: &Rational| {
            pow_rational(rho, cutoff as usize + 1) / (Rational::one() - rho)
        };
        let upper_rem = geometric_from(&rho_up);
        let floors_lost = inv_pow2(d * cutoff as u64) / ubig_to_rational(&(pow2_ubig(d) - 1u32));
        let mut lower_rem = geometric_from(&rho_low) - floors_lost;
        if lower_rem.is_negative() {
            lower_rem = Rational::zero();
        }
        TailSum { lower: exact.clone() + lower_rem, upper: exact + upper_rem }
    }

    fn custom_tail(&self, big_j: u32, table: &[u64], ratio: &Rational) -> TailSum {
        let d = self.dim as u64;
        let len = table.len() as u32;
        let last = *table.last().unwrap();
        let last_level = len - 1;
        // levels covered by the table, then the geometric part
        let table_part = if big_j < last_level { self.exact_terms(big_j + 1, last_level) } else { Rational::zero() };
        let start = (big_j + 1).max(len);
        if last == 0 || ratio.is_zero() {
            return TailSum::exact(table_part);
        }
        let last_r = Rational::from_integer(last.into());
        let cells = ubig_to_rational(&pow2_ubig(d));
        if ratio.is_integer() {
            // Σ_{j >= start} 2^(-dj) last · r^(j - L + 1), exact
            let r = ratio.clone();
            let first = last_r * pow_rational(&r, (start - last_level) as usize) * inv_pow2(d * start as u64);
            let tail = first / (Rational::one() - r / cells);
            return TailSum::exact(table_part + tail);
        }
        if *ratio < Rational::one() {
            // floors vanish once last · r^i < 1
            let mut sum = Rational::zero();
            let mut j = start;
            loop {
                let term = self.budget(j).expect("tail rule present");
                if term.is_zero() && j >= len {
                    break;
                }
                sum += ubig_to_rational(&term) * inv_pow2(d * j as u64);
                j += 1;
            }
            return TailSum::exact(table_part + sum);
        }
        // 1 < r < 2^d, not an integer
        let rho = ratio.clone() / cells.clone();
        let rho_f = crate::rational::to_f64(&rho);
        let cutoff = start + (REMAINDER_BITS / -rho_f.log2()).ceil() as u32 + 1;
        let exact = self.exact_terms(start, cutoff);
        // Σ_{j > cutoff} 2^(-dj) last r^(j-L+1) = last · r^(1-L) Σ rho^j
        let coeff = last_r * pow_rational(ratio, (cutoff + 1 - last_level) as usize) * inv_pow2(d * (cutoff as u64 + 1));
        let upper_rem = coeff / (Rational::one() - rho);
        let floors_lost = inv_pow2(d * cutoff as u64) / (cells - Rational::one());
        let mut lower_rem = upper_rem.clone() - floors_lost;
        if lower_rem.is_negative() {
            lower_rem = Rational::zero();
        }
        TailSum { lower: table_part.clone() + exact.clone() + lower_rem, upper: table_part + exact + upper_rem }
    }

    /// Whether the class contains a rule other than the constants, i.e.
    /// `Σ_{j >= 1} 2^(-dj) floor(w(j)) >= 1`.
    pub fn is_nontrivial(&self) -> Result<bool> {
        if self.budget(0)?.is_zero() {
            return Err(Error::Precondition("w(0) < 1".into()));
        }
        let tail = self.tail_sum(0)?;
        let one = Rational::one();
        if tail.lower >= one {
            Ok(true)
        } else if tail.upper < one {
            Ok(false)
        } else {
            Err(Error::Unsupported("tail enclosure straddles 1".into()))
        }
    }

    /// Smallest `J` with `tail_sum(J) < eps / A`, judged on the upper end of
    /// the tail enclosure.
    pub fn j_epsilon(&self, eps: &Rational, big_a: &Rational) -> Result<u32> {
        if !eps.is_positive() {
            return Err(Error::Parameter(format!("eps = {} must be positive", format_rational(eps))));
        }
        if *big_a < Rational::one() {
            return Err(Error::Parameter(format!("A = {} must be at least 1", format_rational(big_a))));
        }
        if !self.is_l1_ball() {
            return Err(Error::Precondition("weight function does not define an L1-ball".into()));
        }
        let target = eps / big_a;
        for j in 0..=MAX_LEVEL {
            if self.tail_sum(j)?.upper < target {
                return Ok(j);
            }
        }
        Err(Error::Infeasible(format!("no level up to {MAX_LEVEL} reaches eps/A")))
    }

    /// Whether every level's nonzero-coefficient count fits the budget.
    pub fn member(&self, f: &RuleTree) -> Result<bool> {
        if f.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: f.dim() });
        }
        for (j, &count) in f.coefficient_counts().iter().enumerate() {
            if BigUint::from(count) > self.budget(j as u32)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Random canonical member of depth at most `max_depth`.
    ///
    /// Levels are filled top down. At each level a number of leaves is drawn
    /// from the range that still lets every open node close within the
    /// remaining budgets, keeping at least one node open while that is
    /// possible. Sibling sets made only of leaves get mixed signs, so the
    /// result is already canonical.
    pub fn sample_rule(&self, max_depth: u32, seed: u64) -> Result<RuleTree> {
        if max_depth == 0 || max_depth > MAX_LEVEL {
            return Err(Error::Parameter(format!("max_depth {max_depth} must lie in 1..={MAX_LEVEL}")));
        }
        let arity = 1u64 << self.dim;
        let cap = 1u64 << 40;
        let budgets: Vec<u64> = (0..=max_depth)
            .map(|j| self.budget(j).map(|b| b.to_u64().unwrap_or(u64::MAX).min(cap)))
            .collect::<Result<_>>()?;
        // maxopen[j]: most open nodes at level j that can still be closed
        let mut maxopen = vec![0u64; max_depth as usize + 1];
        maxopen[max_depth as usize] = budgets[max_depth as usize];
        for j in (0..max_depth as usize).rev() {
            maxopen[j] = budgets[j].saturating_add(maxopen[j + 1] / arity).min(cap);
        }
        if maxopen[0] < 1 {
            return Err(Error::Infeasible(format!("budgets cannot close a tree within depth {max_depth}")));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arena: Vec<Slot> = vec![Slot::Open];
        let mut open: Vec<usize> = vec![0];
        for j in 0..=max_depth as usize {
            let count = open.len() as u64;
            let leaves = if j == max_depth as usize {
                count
            } else {
                let lo = count.saturating_sub(maxopen[j + 1] / arity);
                let hi = count.min(budgets[j]);
                if lo > hi {
                    return Err(Error::Infeasible(format!("level {j} cannot close {count} open nodes")));
                }
                let keep_one = (count - 1).min(budgets[j]).max(lo);
                rng.random_range(lo..=keep_one)
            };
            let chosen = sample_indices(&mut rng, open.len(), leaves as usize);
            let mut is_leaf = vec![false; open.len()];
            for i in chosen.iter() {
                is_leaf[i] = true;
            }
            let mut next = Vec::new();
            for (i, &slot) in open.iter().enumerate() {
                if is_leaf[i] {
                    arena[slot] = Slot::Leaf(Sign::from_bool(rng.random_bool(0.5)));
                } else {
                    let first = arena.len();
                    arena.extend((0..arity).map(|_| Slot::Open));
                    arena[slot] = Slot::Internal(first);
                    next.extend(first..first + arity as usize);
                }
            }
            // all-leaf sibling sets must not share one sign
            if j > 0 {
                for group in open.chunks(arity as usize) {
                    let signs: Vec<Sign> = group
                        .iter()
                        .filter_map(|&s| match arena[s] {
                            Slot::Leaf(sign) => Some(sign),
                            _ => None,
                        })
                        .collect();
                    if signs.len() == arity as usize && signs.iter().all(|&s| s == signs[0]) {
                        let pick = group[rng.random_range(0..group.len())];
                        arena[pick] = Slot::Leaf(signs[0].flip());
                    }
                }
            }
            open = next;
            if open.is_empty() {
                break;
            }
        }
        fn build(arena: &[Slot], slot: usize, arity: usize) -> Node {
            match arena[slot] {
                Slot::Leaf(s) => Node::Leaf(s),
                Slot::Internal(first) => {
                    Node::Internal((first..first + arity).map(|c| build(arena, c, arity)).collect())
                }
                Slot::Open => unreachable!("every open slot is closed by max_depth"),
            }
        }
        RuleTree::new(self.dim, build(&arena, 0, arity as usize))
    }

    pub fn to_spec(&self) -> Value {
        match &self.kind {
            WeightKind::Minimal => serde_json::json!({"kind": "minimal"}),
            WeightKind::Truncated { k } => serde_json::json!({"kind": "truncated", "K": k}),
            WeightKind::Exponential { alpha } => {
                serde_json::json!({"kind": "exponential", "alpha": format_rational(alpha)})
            }
            WeightKind::Custom { table, tail } => match tail {
                Some(TailRule::Geometric { ratio }) => serde_json::json!({
                    "kind": "custom", "table": table, "tail": "geometric", "ratio": format_rational(ratio)
                }),
                None => serde_json::json!({"kind": "custom", "table": table}),
            },
        }
    }

    /// Reads a weight spec such as `{"kind":"truncated","K":2}`.
    pub fn from_spec(spec: &Value, dim: usize) -> Result<Self> {
        let doc: SpecDoc = serde_json::from_value(spec.clone()).map_err(|e| Error::Document(e.to_string()))?;
        match doc.kind.as_str() {
            "minimal" => Self::minimal(dim),
            "truncated" => {
                let k = doc.k.ok_or_else(|| Error::Document("truncated class needs K".into()))?;
                Self::truncated(dim, k)
            }
            "exponential" => {
                let alpha = doc.alpha.ok_or_else(|| Error::Document("exponential class needs alpha".into()))?;
                Self::exponential(dim, value_to_rational(&alpha)?)
            }
            "custom" => {
                let table = doc.table.ok_or_else(|| Error::Document("custom class needs a table".into()))?;
                let tail = match doc.tail.as_deref() {
                    None => None,
                    Some("geometric") => {
                        let ratio = doc.ratio.ok_or_else(|| Error::Document("geometric tail needs a ratio".into()))?;
                        Some(TailRule::Geometric { ratio: value_to_rational(&ratio)? })
                    }
                    Some(other) => return Err(Error::Document(format!("unknown tail rule {other:?}"))),
                };
                Self::custom(dim, table, tail)
            }
            other => Err(Error::Document(format!("unknown weight kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Open,
    Leaf(Sign),
    Internal(usize),
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    kind: String,
    #[serde(rename = "K", default)]
    k: Option<u32>,
    #[serde(default)]
    alpha: Option<Value>,
    #[serde(default)]
    table: Option<Vec<u64>>,
    #[serde(default)]
    tail: Option<String>,
    #[serde(default)]
    ratio: Option<Value>,
}

/// JSON number or string to an exact rational; numbers go through their
/// shortest decimal text.
pub fn value_to_rational(v: &Value) -> Result<Rational> {
    match v {
        Value::Number(n) => parse_rational(&n.to_string()),
        Value::String(s) => parse_rational(s),
        other => Err(Error::Document(format!("expected a number, found {other}"))),
    }
}

fn pow_rational(r: &Rational, n: usize) -> Rational {
    num_traits::pow(r.clone(), n)
}

/// `floor(2^(t·alpha))` for a rational `alpha = p/q`.
fn floor_pow2_frac(t: u64, alpha: &Rational) -> BigUint {
    let p = alpha.numer().to_u64().unwrap();
    let q = alpha.denom().to_u64().unwrap();
    pow2_ubig(t * p).nth_root(q as u32)
}

/// Smallest `N >= 0` with `2^(d·alpha·N) >= 2^d - 1`, compared exactly.
fn n_alpha_exact(dim: usize, alpha: &Rational) -> u32 {
    let p = alpha.numer().to_u64().unwrap();
    let q = alpha.denom().to_u64().unwrap();
    let target = num_traits::pow(pow2_ubig(dim as u64) - 1u32, q as usize);
    let mut n = 0u32;
    while pow2_ubig(dim as u64 * p * n as u64) < target {
        n += 1;
    }
    n
}

/// `N^(d)(alpha) = ceil(log(2^d - 1) / (d·alpha·log 2))`.
pub fn n_alpha(dim: usize, alpha: &Rational) -> Result<u32> {
    check_dim(dim)?;
    if !(alpha.is_positive() && *alpha < Rational::one()) {
        return Err(Error::Parameter(format!("alpha = {} must lie in (0, 1)", format_rational(alpha))));
    }
    if alpha.denom() > &BigInt::from(MAX_ALPHA_DENOM) {
        return Err(Error::Unsupported("alpha denominator too large".into()));
    }
    Ok(n_alpha_exact(dim, alpha))
}

/// Points of the shattered family and the outcome of the exhaustive check.
#[derive(Clone, Debug)]
pub struct ShatterWitness {
    pub points: Vec<Vec<f64>>,
    pub labelings: usize,
    pub realized: usize,
    /// Every witness rule respects the minimal-class budgets on all levels
    /// it shares with the infinite rule it truncates.
    pub within_budget: bool,
}

impl ShatterWitness {
    pub fn all_realized(&self) -> bool {
        self.realized == self.labelings && self.within_budget
    }
}

/// `x_j = ((2^j+1)/2^(j+1), 1/2^(j+1), ..., 1/2^(j+1))` for `j = 1..=m`.
pub fn shatter_points(m: usize, dim: usize) -> Vec<Vec<f64>> {
    (1..=m as i32)
        .map(|j| {
            let step = 2f64.powi(-(j + 1));
            let mut x = vec![step; dim];
            x[0] = 0.5 + step;
            x
        })
        .collect()
}

fn chain_cell(level: u32, dim: usize) -> CellIndex {
    let mut index = vec![0u64; dim];
    index[0] = 1u64 << (level - 1);
    CellIndex::new(level, index).expect("chain cell in range")
}

/// A rule of the minimal class taking value `labels[j-1]` at `x_j`.
///
/// Below the chain of cells `C_l = (2^(l-1), 0, ..., 0)` at level `l`, the
/// cell of `x_l` among the children of `C_l` carries `labels[l-1]` and the
/// other children except `C_(l+1)` carry `+1`. The chain is cut at level
/// `m + 1`, where `C_(m+1)` holds no point of the family and becomes a leaf
/// of sign `-labels[m-1]`; the infinite rule keeps the chain going.
pub fn shatter_rule(labels: &[Sign], dim: usize) -> Result<RuleTree> {
    let m = labels.len();
    if m == 0 {
        return Err(Error::Parameter("need at least one label".into()));
    }
    let arity = 1usize << dim;
    // built from the bottom of the chain upwards
    let mut below = Node::Leaf(labels[m - 1].flip());
    for l in (1..=m as u32).rev() {
        let parent = chain_cell(l, dim);
        let next = chain_cell(l + 1, dim);
        let mut point_index = vec![1u64; dim];
        point_index[0] = (1u64 << l) + 1;
        let point_cell = CellIndex::new(l + 1, point_index)?;
        let mut children = Vec::with_capacity(arity);
        let mut below_slot = Some(below);
        for child in parent.children() {
            if child == next {
                children.push(below_slot.take().expect("chain child visited once"));
            } else if child == point_cell {
                children.push(Node::Leaf(labels[l as usize - 1]));
            } else {
                children.push(Node::Leaf(Sign::Plus));
            }
        }
        below = Node::Internal(children);
    }
    // level 1: C_1 carries the chain, the rest is +1
    let c1 = chain_cell(1, dim);
    let root_children = CellIndex::root(dim)
        .children()
        .into_iter()
        .map(|c| if c == c1 { below.clone() } else { Node::Leaf(Sign::Plus) })
        .collect();
    RuleTree::new(dim, Node::Internal(root_children))
}

/// Exhaustive check that `F_0^(d)` realizes every labeling of `m` points.
pub fn shatter_witness(m: usize, dim: usize) -> Result<ShatterWitness> {
    if m == 0 || m > 12 {
        return Err(Error::Parameter(format!("m = {m} must lie in 1..=12 for an exhaustive check")));
    }
    check_dim(dim)?;
    let w0 = WeightFunction::minimal(dim)?;
    let points = shatter_points(m, dim);
    let accumulation = chain_cell(m as u32 + 1, dim);
    let labelings = 1usize << m;
    let mut realized = 0;
    let mut within_budget = points.iter().all(|x| CellIndex::locate(x, m as u32 + 1).map(|c| c != accumulation).unwrap_or(false));
    for pattern in 0..labelings {
        let labels: Vec<Sign> = (0..m).map(|i| Sign::from_bool(pattern >> i & 1 == 1)).collect();
        let rule = shatter_rule(&labels, dim)?;
        let ok = points
            .iter()
            .zip(&labels)
            .all(|(x, &s)| rule.evaluate(x).map(|v| v == s).unwrap_or(false));
        if ok {
            realized += 1;
        }
        let counts = rule.coefficient_counts();
        for (j, &c) in counts.iter().enumerate() {
            // the cut-off chain cell stands in for an infinite subtree
            let charged = if j == m + 1 { c - 1 } else { c };
            if BigUint::from(charged) > w0.budget(j as u32)? {
                within_budget = false;
            }
        }
        if !rule.is_canonical() {
            within_budget = false;
        }
    }
    Ok(ShatterWitness { points, labelings, realized, within_budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;
    use crate::rule_tree::{internal, leaf};
    use proptest::prelude::*;

    fn tail(w: &WeightFunction, j: u32) -> Rational {
        let t = w.tail_sum(j).unwrap();
        assert!(t.is_exact());
        t.upper
    }

    /// Direct partial sums as an oracle for geometric tails.
    fn partial_tail(w: &WeightFunction, j: u32, upto: u32) -> Rational {
        (j + 1..=upto)
            .map(|l| ubig_to_rational(&w.budget(l).unwrap()) * inv_pow2(w.dim() as u64 * l as u64))
            .sum()
    }

    #[test]
    fn tail_sum_examples() {
        assert_eq!(tail(&WeightFunction::truncated(1, 2).unwrap(), 4), ratio(1, 4));
        assert_eq!(tail(&WeightFunction::minimal(1).unwrap(), 0), int(1));
        assert_eq!(tail(&WeightFunction::truncated(2, 1).unwrap(), 1), ratio(1, 3));
        assert_eq!(tail(&WeightFunction::truncated(1, 3).unwrap(), 1), int(2) + int(1));
        let no_tail = WeightFunction::custom(1, vec![1, 2], None).unwrap();
        assert!(matches!(no_tail.tail_sum(0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn closed_forms_match_partial_sums() {
        let weights = [
            WeightFunction::minimal(1).unwrap(),
            WeightFunction::minimal(3).unwrap(),
            WeightFunction::truncated(1, 2).unwrap(),
            WeightFunction::truncated(2, 3).unwrap(),
            WeightFunction::custom(1, vec![1, 2, 3], Some(TailRule::Geometric { ratio: int(1) })).unwrap(),
            WeightFunction::custom(2, vec![1, 4, 9], Some(TailRule::Geometric { ratio: int(3) })).unwrap(),
        ];
        for w in &weights {
            for j in 0..6 {
                let exact = tail(w, j);
                let partial = partial_tail(w, j, 400);
                let gap = exact.clone() - partial;
                assert!(!gap.is_negative());
                assert!(gap < inv_pow2(100), "{w:?} at {j}");
            }
        }
    }

    #[test]
    fn tail_differences_are_single_terms() {
        let weights = [
            WeightFunction::minimal(2).unwrap(),
            WeightFunction::truncated(1, 3).unwrap(),
            WeightFunction::custom(1, vec![1, 1, 3, 5], Some(TailRule::Geometric { ratio: ratio(1, 2) })).unwrap(),
            WeightFunction::custom(1, vec![1, 2, 1], Some(TailRule::Geometric { ratio: int(1) })).unwrap(),
        ];
        for w in &weights {
            for j in 0..10 {
                let diff = tail(w, j) - tail(w, j + 1);
                let term = ubig_to_rational(&w.budget(j + 1).unwrap()) * inv_pow2(w.dim() as u64 * (j as u64 + 1));
                assert_eq!(diff, term);
            }
        }
    }

    #[test]
    fn exponential_tail_encloses_partial_sums() {
        for (d, alpha) in [(1, ratio(1, 2)), (2, ratio(1, 2)), (1, ratio(1, 3)), (3, ratio(3, 4))] {
            let w = WeightFunction::exponential(d, alpha).unwrap();
            for j in 0..8 {
                let t = w.tail_sum(j).unwrap();
                let partial = partial_tail(&w, j, 600);
                assert!(t.lower <= partial.clone() + inv_pow2(60), "d={d} j={j}");
                assert!(partial <= t.upper);
                assert!(t.upper.clone() - t.lower.clone() < inv_pow2(60));
            }
        }
    }

    #[test]
    fn non_integer_ratio_tail_is_enclosed() {
        let w = WeightFunction::custom(1, vec![1, 2, 3], Some(TailRule::Geometric { ratio: ratio(3, 2) })).unwrap();
        assert!(w.is_l1_ball());
        for j in 0..5 {
            let t = w.tail_sum(j).unwrap();
            let partial = partial_tail(&w, j, 1000);
            assert!(t.lower <= partial && partial <= t.upper);
            assert!(t.upper - t.lower < inv_pow2(60));
        }
    }

    #[test]
    fn is_l1_ball_examples() {
        assert!(WeightFunction::truncated(1, 2).unwrap().is_l1_ball());
        assert!(WeightFunction::exponential(2, ratio(1, 2)).unwrap().is_l1_ball());
        let full = WeightFunction::custom(1, vec![1, 2, 4, 8], Some(TailRule::Geometric { ratio: int(2) })).unwrap();
        assert!(!full.is_l1_ball());
        assert!(full.tail_sum(2).is_err());
        assert!(!WeightFunction::custom(1, vec![1, 2], None).unwrap().is_l1_ball());
        assert!(WeightFunction::custom(1, vec![1, 2, 4], Some(TailRule::Geometric { ratio: int(3) })).is_err());
    }

    #[test]
    fn is_nontrivial_examples() {
        assert!(WeightFunction::minimal(1).unwrap().is_nontrivial().unwrap());
        let gap = WeightFunction::custom(1, vec![1, 0, 1], Some(TailRule::Geometric { ratio: int(1) })).unwrap();
        assert!(!gap.is_nontrivial().unwrap());
        assert!(WeightFunction::truncated(1, 1).unwrap().is_nontrivial().unwrap());
        let empty_root = WeightFunction::custom(1, vec![0, 2], Some(TailRule::Geometric { ratio: int(1) })).unwrap();
        assert!(matches!(empty_root.is_nontrivial(), Err(Error::Precondition(_))));
    }

    #[test]
    fn j_epsilon_examples() {
        let one = int(1);
        let t2 = WeightFunction::truncated(1, 2).unwrap();
        assert_eq!(t2.j_epsilon(&ratio(3, 10), &one).unwrap(), 4);
        assert_eq!(WeightFunction::truncated(1, 1).unwrap().j_epsilon(&int(3), &one).unwrap(), 0);
        assert_eq!(WeightFunction::minimal(1).unwrap().j_epsilon(&ratio(1, 10), &one).unwrap(), 4);
        assert!(t2.j_epsilon(&int(0), &one).is_err());
        assert!(t2.j_epsilon(&ratio(1, 10), &ratio(1, 2)).is_err());
    }

    #[test]
    fn j_epsilon_is_minimal() {
        let weights = [
            WeightFunction::minimal(1).unwrap(),
            WeightFunction::truncated(2, 2).unwrap(),
            WeightFunction::exponential(1, ratio(1, 2)).unwrap(),
        ];
        for w in &weights {
            for eps in [ratio(1, 2), ratio(1, 10), ratio(1, 100), ratio(7, 1000)] {
                for a in [int(1), ratio(3, 2), int(4)] {
                    let j = w.j_epsilon(&eps, &a).unwrap();
                    let target = eps.clone() / a.clone();
                    assert!(w.tail_sum(j).unwrap().upper < target);
                    if j >= 1 {
                        assert!(w.tail_sum(j - 1).unwrap().upper >= target);
                    }
                }
            }
        }
    }

    #[test]
    fn member_examples() {
        let split = RuleTree::new(1, internal(vec![leaf(1), leaf(-1)])).unwrap();
        assert!(WeightFunction::minimal(1).unwrap().member(&RuleTree::new(1, leaf(1)).unwrap()).unwrap());
        assert!(!WeightFunction::minimal(1).unwrap().member(&split).unwrap());
        assert!(WeightFunction::truncated(1, 1).unwrap().member(&split).unwrap());
        assert!(WeightFunction::minimal(2).unwrap().member(&split).is_err());
    }

    #[test]
    fn n_alpha_examples() {
        assert_eq!(n_alpha(2, &ratio(1, 2)).unwrap(), 2);
        assert_eq!(n_alpha(1, &ratio(1, 2)).unwrap(), 0);
        assert_eq!(n_alpha(3, &ratio(1, 4)).unwrap(), 4);
        assert!(n_alpha(1, &int(1)).is_err());
        assert!(n_alpha(1, &int(0)).is_err());
        // agrees with the floating-point formula away from integer boundaries
        for d in 1..=4usize {
            for k in 1..20 {
                let alpha = ratio(k, 20);
                let float = ((2f64.powi(d as i32) - 1.0).ln() / (d as f64 * k as f64 / 20.0 * 2f64.ln())).ceil();
                assert_eq!(n_alpha(d, &alpha).unwrap() as f64, float, "d={d} alpha={k}/20");
            }
        }
    }

    #[test]
    fn exponential_budgets() {
        let w = WeightFunction::exponential(2, ratio(1, 2)).unwrap();
        let expected = [1u64, 4, 16, 8, 16, 32];
        for (j, &b) in expected.iter().enumerate() {
            assert_eq!(w.budget(j as u32).unwrap(), BigUint::from(b));
        }
        let w = WeightFunction::exponential(1, ratio(1, 2)).unwrap();
        // floor(2^(j/2)) for j = 0..5
        let expected = [1u64, 1, 2, 2, 4, 5];
        for (j, &b) in expected.iter().enumerate() {
            assert_eq!(w.budget(j as u32).unwrap(), BigUint::from(b));
        }
    }

    #[test]
    fn minimal_samples_are_constant() {
        let w = WeightFunction::minimal(1).unwrap();
        for seed in 0..100 {
            let f = w.sample_rule(1, seed).unwrap();
            assert!(w.member(&f).unwrap());
            assert!(matches!(f.root(), Node::Leaf(_)));
        }
    }

    #[test]
    fn sampled_rules_are_canonical_members() {
        let weights = [
            WeightFunction::minimal(1).unwrap(),
            WeightFunction::minimal(2).unwrap(),
            WeightFunction::truncated(1, 1).unwrap(),
            WeightFunction::truncated(2, 2).unwrap(),
            WeightFunction::truncated(1, 3).unwrap(),
            WeightFunction::exponential(1, ratio(1, 2)).unwrap(),
            WeightFunction::exponential(2, ratio(1, 2)).unwrap(),
        ];
        for seed in 0..500u64 {
            let w = &weights[seed as usize % weights.len()];
            let depth = 1 + (seed % 6) as u32;
            let f = w.sample_rule(depth, seed).unwrap();
            assert!(f.is_canonical());
            assert!(w.member(&f).unwrap());
            assert!(f.depth() <= depth);
            assert_eq!(w.sample_rule(depth, seed).unwrap(), f);
        }
    }

    #[test]
    fn sample_rule_rejects_infeasible_budgets() {
        let w = WeightFunction::custom(1, vec![0, 1, 1], Some(TailRule::Geometric { ratio: int(0) })).unwrap();
        assert!(matches!(w.sample_rule(2, 1), Err(Error::Infeasible(_))));
        assert!(WeightFunction::minimal(1).unwrap().sample_rule(0, 1).is_err());
    }

    #[test]
    fn truncated_samples_reach_full_depth() {
        let w = WeightFunction::truncated(1, 1).unwrap();
        for seed in 0..20 {
            assert_eq!(w.sample_rule(8, seed).unwrap().depth(), 8);
        }
    }

    #[test]
    fn shatter_examples() {
        let one = shatter_witness(1, 1).unwrap();
        assert_eq!(one.points, vec![vec![0.75]]);
        assert!(one.all_realized());
        let three = shatter_witness(3, 2).unwrap();
        assert_eq!(three.labelings, 8);
        assert!(three.all_realized());
        assert!(shatter_witness(13, 1).is_err());
        assert!(shatter_witness(0, 1).is_err());
    }

    #[test]
    fn specs_round_trip() {
        let specs = [
            serde_json::json!({"kind": "truncated", "K": 2}),
            serde_json::json!({"kind": "exponential", "alpha": 0.5}),
            serde_json::json!({"kind": "minimal"}),
            serde_json::json!({"kind": "custom", "table": [1, 2, 1], "tail": "geometric", "ratio": "1/2"}),
        ];
        for spec in &specs {
            let w = WeightFunction::from_spec(spec, 1).unwrap();
            assert_eq!(WeightFunction::from_spec(&w.to_spec(), 1).unwrap(), w);
        }
        assert_eq!(
            *WeightFunction::from_spec(&specs[1], 1).unwrap().kind(),
            WeightKind::Exponential { alpha: ratio(1, 2) }
        );
        assert!(WeightFunction::from_spec(&serde_json::json!({"kind": "nope"}), 1).is_err());
        assert!(WeightFunction::from_spec(&serde_json::json!({"kind": "truncated"}), 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn membership_is_monotone(seed in any::<u64>(), depth in 1u32..6, k in 1u32..3) {
            let small = WeightFunction::truncated(1, k).unwrap();
            let large = WeightFunction::truncated(1, k + 1).unwrap();
            let f = small.sample_rule(depth, seed).unwrap();
            prop_assert!(small.member(&f).unwrap());
            prop_assert!(large.member(&f).unwrap());
            let g = WeightFunction::minimal(1).unwrap().sample_rule(depth, seed).unwrap();
            prop_assert!(small.member(&g).unwrap());
        }

        #[test]
        fn tail_is_decreasing(k in 1u32..5, d in 1usize..4, j in 0u32..20) {
            let w = WeightFunction::truncated(d, k).unwrap();
            prop_assert!(tail(&w, j + 1) < tail(&w, j));
        }
    }
}
