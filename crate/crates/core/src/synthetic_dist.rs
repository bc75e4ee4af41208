//! Distributions of `(X, Y)` on `[0,1]^d × {-1,1}` whose marginal density and
//! regression function `η(x) = P(Y = 1 | X = x)` are constant on dyadic cells.
//!
//! A distribution is held as a dyadic tree: each leaf covers one cell on
//! which density and `η` are constant. Every node caches the masses needed
//! to score a rule without refining it, which keeps exact risks cheap even
//! for deep Bayes rules.

use std::io::{Read, Write};

use num_traits::{One, Signed, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::CellIndex;
use crate::error::{Error, Result};
use crate::rational::{format_rational, int, inv_pow2, parse_rational, ratio, to_f64, Rational};
use crate::rule_tree::{check_table_size, Node, RuleTree, Sign};

#[derive(Clone, Debug, PartialEq, Eq)]
struct Aggregates {
    /// `P(X ∈ cell)`
    mass: Rational,
    /// `P(X ∈ cell, Y = 1)`
    mass_pos: Rational,
    /// `E[|2η-1| 1{X ∈ cell, f*(X) = -1}]`, the excess paid by predicting +1
    excess_if_plus: Rational,
    /// `E[|2η-1| 1{X ∈ cell, f*(X) = +1}]`
    excess_if_minus: Rational,
}

impl Aggregates {
    fn leaf(density: &Rational, eta: &Rational, measure: &Rational) -> Self {
        let mass = density * measure;
        let mass_pos = &mass * eta;
        let signed = &mass * (eta * int(2) - int(1));
        let (excess_if_plus, excess_if_minus) = if signed.is_negative() {
            (-signed, Rational::zero())
        } else {
            (Rational::zero(), signed)
        };
        Self { mass, mass_pos, excess_if_plus, excess_if_minus }
    }

    fn sum<'a>(parts: impl Iterator<Item = &'a Aggregates>) -> Self {
        let mut total = Self {
            mass: Rational::zero(),
            mass_pos: Rational::zero(),
            excess_if_plus: Rational::zero(),
            excess_if_minus: Rational::zero(),
        };
        for p in parts {
            total.mass += &p.mass;
            total.mass_pos += &p.mass_pos;
            total.excess_if_plus += &p.excess_if_plus;
            total.excess_if_minus += &p.excess_if_minus;
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Body {
    Leaf { density: Rational, eta: Rational },
    Split(Vec<DistNode>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct DistNode {
    agg: Aggregates,
    body: Body,
}

/// Piecewise shape of a density before it is attached to a distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Shape {
    Leaf { density: Rational, eta: Rational },
    Split(Vec<Shape>),
}

impl Shape {
    /// Merges sibling leaves that carry identical values.
    fn compress(self) -> Shape {
        match self {
            Shape::Split(children) => {
                let children: Vec<Shape> = children.into_iter().map(Shape::compress).collect();
                match &children[0] {
                    first @ Shape::Leaf { .. } if children.iter().all(|c| c == first) => children[0].clone(),
                    _ => Shape::Split(children),
                }
            }
            leaf => leaf,
        }
    }

    fn depth(&self) -> u32 {
        match self {
            Shape::Leaf { .. } => 0,
            Shape::Split(children) => 1 + children.iter().map(Shape::depth).max().unwrap_or(0),
        }
    }

    fn attach(self, measure: &Rational, arity: usize) -> DistNode {
        match self {
            Shape::Leaf { density, eta } => {
                DistNode { agg: Aggregates::leaf(&density, &eta, measure), body: Body::Leaf { density, eta } }
            }
            Shape::Split(children) => {
                let child_measure = measure / Rational::from_integer(arity.into());
                let children: Vec<DistNode> =
                    children.into_iter().map(|c| c.attach(&child_measure, arity)).collect();
                DistNode { agg: Aggregates::sum(children.iter().map(|c| &c.agg)), body: Body::Split(children) }
            }
        }
    }
}

/// Marginal density shapes used by generators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DensityProfile {
    Uniform,
    /// `2 - low` on `x_1 < 1/2` and `low` on `x_1 >= 1/2`.
    Halves { low: Rational },
    /// Row-major values on the cells of one level.
    Table { level: u32, values: Vec<Rational> },
}

impl DensityProfile {
    fn shape_at(&self, cell: &CellIndex) -> Option<Rational> {
        match self {
            DensityProfile::Uniform => Some(Rational::one()),
            DensityProfile::Halves { low } => {
                if cell.level() == 0 {
                    None
                } else if cell.ancestor(1).index()[0] == 0 {
                    Some(int(2) - low)
                } else {
                    Some(low.clone())
                }
            }
            DensityProfile::Table { level, values } => {
                (cell.level() >= *level).then(|| values[cell.ancestor(*level).linear_index()].clone())
            }
        }
    }

    /// Smallest and largest density value.
    pub fn range(&self) -> (Rational, Rational) {
        match self {
            DensityProfile::Uniform => (int(1), int(1)),
            DensityProfile::Halves { low } => {
                let high = int(2) - low;
                if *low <= high {
                    (low.clone(), high)
                } else {
                    (high, low.clone())
                }
            }
            DensityProfile::Table { values, .. } => (
                values.iter().min().cloned().unwrap_or_else(int0),
                values.iter().max().cloned().unwrap_or_else(int0),
            ),
        }
    }

    /// `{"kind":"uniform"}`, `{"kind":"halves","low":..}` or
    /// `{"kind":"table","level":..,"values":[..]}`; a bare `"uniform"` is accepted.
    pub fn from_spec(spec: &serde_json::Value) -> Result<Self> {
        use crate::sparse_class::value_to_rational;
        if spec.as_str() == Some("uniform") {
            return Ok(DensityProfile::Uniform);
        }
        let kind = spec.get("kind").and_then(|k| k.as_str()).ok_or_else(|| Error::Document("density spec needs a kind".into()))?;
        match kind {
            "uniform" => Ok(DensityProfile::Uniform),
            "halves" => {
                let low = spec.get("low").ok_or_else(|| Error::Document("halves density needs low".into()))?;
                Ok(DensityProfile::Halves { low: value_to_rational(low)? })
            }
            "table" => {
                let level = spec
                    .get("level")
                    .and_then(|l| l.as_u64())
                    .ok_or_else(|| Error::Document("table density needs an integer level".into()))?;
                let values = spec
                    .get("values")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| Error::Document("table density needs values".into()))?
                    .iter()
                    .map(value_to_rational)
                    .collect::<Result<Vec<_>>>()?;
                Ok(DensityProfile::Table { level: level as u32, values })
            }
            other => Err(Error::Document(format!("unknown density kind {other:?}"))),
        }
    }

    pub fn to_spec(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            DensityProfile::Uniform => json!({"kind": "uniform"}),
            DensityProfile::Halves { low } => json!({"kind": "halves", "low": format_rational(low)}),
            DensityProfile::Table { level, values } => json!({
                "kind": "table",
                "level": level,
                "values": values.iter().map(format_rational).collect::<Vec<_>>(),
            }),
        }
    }

    /// Checks the profile shape and that it integrates to 1.
    pub fn check(&self, dim: usize) -> Result<()> {
        self.validate(dim)?;
        if let DensityProfile::Table { values, .. } = self {
            let total: Rational = values.iter().sum::<Rational>() / Rational::from_integer(values.len().into());
            if total != int(1) {
                return Err(Error::Distribution(format!("density table integrates to {}", format_rational(&total))));
            }
            if values.iter().any(|v| v.is_negative()) {
                return Err(Error::Distribution("negative density value".into()));
            }
        }
        Ok(())
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DensityProfile::Uniform => Ok(()),
            DensityProfile::Halves { low } => {
                if low.is_positive() && *low < int(2) {
                    Ok(())
                } else {
                    Err(Error::Distribution(format!("half density {} outside (0, 2)", format_rational(low))))
                }
            }
            DensityProfile::Table { level, values } => {
                check_table_size(dim, *level)?;
                if values.len() != 1 << (dim * *level as usize) {
                    return Err(Error::Distribution(format!(
                        "density table has {} entries, expected {}",
                        values.len(),
                        1usize << (dim * *level as usize)
                    )));
                }
                Ok(())
            }
        }
    }
}

fn int0() -> Rational {
    Rational::zero()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PiecewiseDistribution {
    dim: usize,
    root: DistNode,
    resolution: u32,
    h: Rational,
    a: Rational,
    big_a: Rational,
}

/// `(lower, d_pi, upper)` of the inequality
/// `a·h·||f - f*||₁/2 <= d_pi(f, f*) <= A·||f - f*||₁/2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sandwich {
    pub lower: Rational,
    pub dpi: Rational,
    pub upper: Rational,
}

impl Sandwich {
    pub fn holds(&self) -> bool {
        self.lower <= self.dpi && self.dpi <= self.upper
    }
}

fn check_constants(h: &Rational, a: &Rational, big_a: &Rational) -> Result<()> {
    if !(h.is_positive() && *h <= int(1)) {
        return Err(Error::Parameter(format!("margin h = {} outside (0, 1]", format_rational(h))));
    }
    if !(a.is_positive() && *a <= int(1) && *big_a >= int(1)) {
        return Err(Error::Parameter(format!(
            "density bounds a = {}, A = {} violate 0 < a <= 1 <= A",
            format_rational(a),
            format_rational(big_a)
        )));
    }
    Ok(())
}

impl PiecewiseDistribution {
    fn from_shape(dim: usize, shape: Shape, h: Rational, a: Rational, big_a: Rational) -> Result<Self> {
        if dim == 0 || dim > 16 {
            return Err(Error::Parameter(format!("unsupported dimension {dim}")));
        }
        check_constants(&h, &a, &big_a)?;
        let shape = shape.compress();
        let resolution = shape.depth();
        fn check(shape: &Shape, h: &Rational, a: &Rational, big_a: &Rational) -> Result<()> {
            match shape {
                Shape::Leaf { density, eta } => {
                    if density < a || density > big_a {
                        return Err(Error::Distribution(format!(
                            "density {} outside [{}, {}]",
                            format_rational(density),
                            format_rational(a),
                            format_rational(big_a)
                        )));
                    }
                    if eta.is_negative() || *eta > int(1) {
                        return Err(Error::Distribution(format!("eta {} outside [0, 1]", format_rational(eta))));
                    }
                    if (eta * int(2) - int(1)).abs() < *h {
                        return Err(Error::Distribution(format!(
                            "|2 eta - 1| below h at eta = {}",
                            format_rational(eta)
                        )));
                    }
                    Ok(())
                }
                Shape::Split(children) => children.iter().try_for_each(|c| check(c, h, a, big_a)),
            }
        }
        check(&shape, &h, &a, &big_a)?;
        let root = shape.attach(&int(1), 1 << dim);
        if root.agg.mass != int(1) {
            return Err(Error::Distribution(format!(
                "density integrates to {}, not 1",
                format_rational(&root.agg.mass)
            )));
        }
        Ok(Self { dim, root, resolution, h, a, big_a })
    }

    /// Builds a distribution from row-major density and `η` tables at one level.
    pub fn from_tables(
        dim: usize,
        level: u32,
        density: Vec<Rational>,
        eta: Vec<Rational>,
        h: Rational,
        a: Rational,
        big_a: Rational,
    ) -> Result<Self> {
        check_table_size(dim, level)?;
        let cells = 1usize << (dim * level as usize);
        if density.len() != cells || eta.len() != cells {
            return Err(Error::Distribution(format!(
                "tables of {} and {} entries, expected {cells}",
                density.len(),
                eta.len()
            )));
        }
        fn build(cell: CellIndex, level: u32, density: &[Rational], eta: &[Rational]) -> Shape {
            if cell.level() == level {
                let i = cell.linear_index();
                return Shape::Leaf { density: density[i].clone(), eta: eta[i].clone() };
            }
            Shape::Split(cell.children().into_iter().map(|c| build(c, level, density, eta)).collect())
        }
        let shape = build(CellIndex::root(dim), level, &density, &eta);
        Self::from_shape(dim, shape, h, a, big_a)
    }

    /// `η = (1 + f*(c)·profile(c))/2` on each cell `c` of `level`, with the
    /// given per-cell density. `f*` must not be deeper than `level`.
    #[allow(clippy::too_many_arguments)]
    pub fn make_distribution(
        fstar: &RuleTree,
        level: u32,
        margin_profile: &[Rational],
        density: Vec<Rational>,
        h: Rational,
        a: Rational,
        big_a: Rational,
    ) -> Result<Self> {
        let signs = fstar.sign_table(level)?;
        if margin_profile.len() != signs.len() {
            return Err(Error::Distribution(format!(
                "margin profile has {} entries, expected {}",
                margin_profile.len(),
                signs.len()
            )));
        }
        let mut eta = Vec::with_capacity(signs.len());
        for (s, m) in signs.iter().zip(margin_profile) {
            if *m < h || *m > int(1) {
                return Err(Error::Distribution(format!(
                    "margin {} outside [h, 1]",
                    format_rational(m)
                )));
            }
            let signed = if s.is_plus() { m.clone() } else { -m.clone() };
            eta.push((int(1) + signed) / int(2));
        }
        Self::from_tables(fstar.dim(), level, density, eta, h, a, big_a)
    }

    /// Tree-native construction with constant margin `h`: the Bayes rule is
    /// `fstar` and the marginal follows `density`.
    pub fn from_rule(
        fstar: &RuleTree,
        h: Rational,
        density: &DensityProfile,
        a: Rational,
        big_a: Rational,
    ) -> Result<Self> {
        density.validate(fstar.dim())?;
        let eta_of = |s: Sign| {
            if s.is_plus() {
                (int(1) + &h) / int(2)
            } else {
                (int(1) - &h) / int(2)
            }
        };
        fn build(
            node: &Node,
            cell: CellIndex,
            density: &DensityProfile,
            eta_of: &dyn Fn(Sign) -> Rational,
        ) -> Shape {
            match (node, density.shape_at(&cell)) {
                (Node::Leaf(s), Some(dv)) => Shape::Leaf { density: dv, eta: eta_of(*s) },
                (Node::Leaf(_), None) => {
                    Shape::Split(cell.children().into_iter().map(|c| build(node, c, density, eta_of)).collect())
                }
                (Node::Internal(children), _) => Shape::Split(
                    children
                        .iter()
                        .zip(cell.children())
                        .map(|(n, c)| build(n, c, density, eta_of))
                        .collect(),
                ),
            }
        }
        let shape = build(fstar.root(), CellIndex::root(fstar.dim()), density, &eta_of);
        Self::from_shape(fstar.dim(), shape, h, a, big_a)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Depth of the deepest cell on which the distribution is constant.
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn h(&self) -> &Rational {
        &self.h
    }

    pub fn a(&self) -> &Rational {
        &self.a
    }

    pub fn big_a(&self) -> &Rational {
        &self.big_a
    }

    /// `sign(2η - 1)` cell by cell, canonicalized.
    pub fn bayes_rule(&self) -> RuleTree {
        fn walk(node: &DistNode) -> Node {
            match &node.body {
                Body::Leaf { eta, .. } => Node::Leaf(Sign::from_bool(eta * int(2) > int(1))),
                Body::Split(children) => Node::Internal(children.iter().map(walk).collect()),
            }
        }
        RuleTree::canonical(self.dim, walk(&self.root)).expect("distribution trees are well formed")
    }

    fn check_rule(&self, f: &RuleTree) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: f.dim() });
        }
        Ok(())
    }

    /// `d_π(f, f*) = E[|2η(X) - 1| 1{f(X) ≠ f*(X)}]`, exactly.
    pub fn excess_risk(&self, f: &RuleTree) -> Result<Rational> {
        self.check_rule(f)?;
        fn walk(rule: &Node, dist: &DistNode, measure: &Rational, arity: usize) -> Rational {
            match (rule, &dist.body) {
                (Node::Leaf(Sign::Plus), _) => dist.agg.excess_if_plus.clone(),
                (Node::Leaf(Sign::Minus), _) => dist.agg.excess_if_minus.clone(),
                (Node::Internal(_), Body::Leaf { density, eta }) => {
                    let signed = eta * int(2) - int(1);
                    if signed.is_zero() {
                        return Rational::zero();
                    }
                    let bayes = Sign::from_bool(signed.is_positive());
                    density * measure * signed.abs() * rule.sign_fraction(bayes.flip())
                }
                (Node::Internal(rc), Body::Split(dc)) => {
                    let child = measure / Rational::from_integer(arity.into());
                    rc.iter().zip(dc).map(|(r, d)| walk(r, d, &child, arity)).sum()
                }
            }
        }
        Ok(walk(f.root(), &self.root, &int(1), 1 << self.dim))
    }

    /// `R(f) = P(f(X) ≠ Y)`, exactly.
    pub fn risk(&self, f: &RuleTree) -> Result<Rational> {
        self.check_rule(f)?;
        fn walk(rule: &Node, dist: &DistNode, measure: &Rational, arity: usize) -> Rational {
            match (rule, &dist.body) {
                (Node::Leaf(Sign::Plus), _) => &dist.agg.mass - &dist.agg.mass_pos,
                (Node::Leaf(Sign::Minus), _) => dist.agg.mass_pos.clone(),
                (Node::Internal(_), Body::Leaf { density, eta }) => {
                    let plus = rule.sign_fraction(Sign::Plus);
                    let minus = int(1) - &plus;
                    density * measure * (plus * (int(1) - eta) + minus * eta)
                }
                (Node::Internal(rc), Body::Split(dc)) => {
                    let child = measure / Rational::from_integer(arity.into());
                    rc.iter().zip(dc).map(|(r, d)| walk(r, d, &child, arity)).sum()
                }
            }
        }
        Ok(walk(f.root(), &self.root, &int(1), 1 << self.dim))
    }

    pub fn sandwich_check(&self, f: &RuleTree) -> Result<Sandwich> {
        let dpi = self.excess_risk(f)?;
        let half_l1 = f.l1_distance(&self.bayes_rule())? / int(2);
        Ok(Sandwich { lower: &self.a * &self.h * &half_l1, dpi, upper: &self.big_a * half_l1 })
    }

    /// `(P(X ∈ c), P(X ∈ c, Y = 1))` for any dyadic cell `c`.
    pub fn cell_masses(&self, cell: &CellIndex) -> Result<(Rational, Rational)> {
        if cell.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: cell.dim() });
        }
        let mut node = &self.root;
        for level in 1..=cell.level() {
            match &node.body {
                Body::Leaf { density, eta } => {
                    let mass = density * cell.measure();
                    let pos = &mass * eta;
                    return Ok((mass, pos));
                }
                Body::Split(children) => node = &children[cell.ancestor(level).child_position()],
            }
        }
        Ok((node.agg.mass.clone(), node.agg.mass_pos.clone()))
    }

    /// Rule equal to `+1` on the cells of `level` where
    /// `P(Y = 1 | X ∈ cell) > 1/2` and `-1` elsewhere, canonicalized.
    pub fn majority_rule(&self, level: u32) -> RuleTree {
        fn walk(node: &DistNode, depth: u32, level: u32) -> Node {
            match &node.body {
                Body::Leaf { eta, .. } => Node::Leaf(Sign::from_bool(eta * int(2) > int(1))),
                Body::Split(_) if depth == level => {
                    Node::Leaf(Sign::from_bool(&node.agg.mass_pos * int(2) > node.agg.mass))
                }
                Body::Split(children) => {
                    Node::Internal(children.iter().map(|c| walk(c, depth + 1, level)).collect())
                }
            }
        }
        RuleTree::canonical(self.dim, walk(&self.root, 0, level)).expect("well formed")
    }

    /// Density and `η` on every cell of `level`, row-major.
    pub fn tables(&self, level: u32) -> Result<(Vec<Rational>, Vec<Rational>)> {
        check_table_size(self.dim, level)?;
        if level < self.resolution {
            return Err(Error::Precondition(format!(
                "distribution varies below level {level}; use at least {}",
                self.resolution
            )));
        }
        let mut density = Vec::with_capacity(1 << (self.dim * level as usize));
        let mut eta = Vec::with_capacity(density.capacity());
        for cell in CellIndex::cells_at(self.dim, level) {
            let (dv, ev) = self.leaf_values(&cell);
            density.push(dv);
            eta.push(ev);
        }
        Ok((density, eta))
    }

    fn leaf_values(&self, cell: &CellIndex) -> (Rational, Rational) {
        let mut node = &self.root;
        let mut level = 0;
        loop {
            match &node.body {
                Body::Leaf { density, eta } => return (density.clone(), eta.clone()),
                Body::Split(children) => {
                    level += 1;
                    node = &children[cell.ancestor(level).child_position()];
                }
            }
        }
    }

    /// Leaf cells with their probability and `η`.
    fn leaves(&self) -> Vec<(CellIndex, Rational, Rational)> {
        fn walk(node: &DistNode, cell: CellIndex, out: &mut Vec<(CellIndex, Rational, Rational)>) {
            match &node.body {
                Body::Leaf { eta, .. } => out.push((cell, node.agg.mass.clone(), eta.clone())),
                Body::Split(children) => {
                    for (pos, c) in children.iter().enumerate() {
                        walk(c, cell.child(pos), out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, CellIndex::root(self.dim), &mut out);
        out
    }

    /// `n` independent draws: a leaf cell with probability equal to its mass,
    /// a uniform point inside it, then `Y = +1` with probability `η`.
    pub fn sample(&self, n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves: Vec<(CellIndex, Rational, Rational)> =
            self.leaves().into_iter().filter(|(_, mass, _)| mass.is_positive()).collect();
        let weights: Vec<f64> = leaves.iter().map(|(_, m, _)| to_f64(m)).collect();
        let etas: Vec<f64> = leaves.iter().map(|(_, _, e)| to_f64(e).clamp(0.0, 1.0)).collect();
        let chooser = WeightedIndex::new(&weights).expect("positive total mass");
        let mut points = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let i = chooser.sample(&mut rng);
            let cell = &leaves[i].0;
            for &k in cell.index() {
                points.push(uniform_in(&mut rng, k, cell.level()));
            }
            labels.push(Sign::from_bool(rng.random_bool(etas[i])));
        }
        LabeledDataset { dim: self.dim, points, labels, seed: Some(seed) }
    }

    pub fn to_json(&self) -> Result<String> {
        let (density, eta) = self.tables(self.resolution)?;
        let doc = DistDoc {
            d: self.dim,
            resolution: self.resolution,
            density: density.iter().map(format_rational).collect(),
            eta: eta.iter().map(format_rational).collect(),
            h: format_rational(&self.h),
            a: format_rational(&self.a),
            big_a: format_rational(&self.big_a),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistDoc = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let parse_all = |v: &[String]| v.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>();
        Self::from_tables(
            doc.d,
            doc.resolution,
            parse_all(&doc.density)?,
            parse_all(&doc.eta)?,
            parse_rational(&doc.h)?,
            parse_rational(&doc.a)?,
            parse_rational(&doc.big_a)?,
        )
    }
}

/// Uniform draw from `[k/2^level, (k+1)/2^level)` on a 53-bit grid, so the
/// point never rounds into the neighbouring cell.
fn uniform_in(rng: &mut ChaCha8Rng, k: u64, level: u32) -> f64 {
    if level >= 53 {
        return k as f64 / 2f64.powi(level as i32);
    }
    let free = 53 - level;
    let r: u64 = rng.random_range(0..1u64 << free);
    ((k << free) + r) as f64 / 2f64.powi(53)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistDoc {
    d: usize,
    resolution: u32,
    density: Vec<String>,
    eta: Vec<String>,
    h: String,
    a: String,
    #[serde(rename = "A")]
    big_a: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    /// Row-major `n × d` coordinates.
    points: Vec<f64>,
    labels: Vec<Sign>,
    seed: Option<u64>,
}

impl LabeledDataset {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, labels: Vec<Sign>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::Parameter(format!("{} points but {} labels", points.len(), labels.len())));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(bad));
            }
            flat.extend(p);
        }
        Ok(Self { dim, points: flat, labels, seed: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Sign {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Sign] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Sign)> + '_ {
        self.points.chunks(self.dim).zip(self.labels.iter().copied())
    }

    /// Samples `start..end`, as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> LabeledDataset {
        LabeledDataset {
            dim: self.dim,
            points: self.points[start * self.dim..end * self.dim].to_vec(),
            labels: self.labels[start..end].to_vec(),
            seed: self.seed,
        }
    }

    /// Reorders samples by `order`, a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> LabeledDataset {
        let mut points = Vec::with_capacity(self.points.len());
        for &i in order {
            points.extend_from_slice(self.point(i));
        }
        LabeledDataset {
            dim: self.dim,
            points,
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            seed: self.seed,
        }
    }

    /// CSV with header `x1,...,xd,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        writer.write_record(&header)?;
        for (x, y) in self.iter() {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header = reader.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let expected: Vec<String> = (1..=dim).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Document(format!("unexpected dataset header {:?}", header)));
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut row = Vec::with_capacity(dim);
            for field in record.iter().take(dim) {
                row.push(field.trim().parse::<f64>().map_err(|_| Error::Document(format!("bad coordinate {field:?}")))?);
            }
            let y: i64 = record[dim].trim().parse().map_err(|_| Error::Document(format!("bad label {:?}", &record[dim])))?;
            labels.push(Sign::from_i64(y).ok_or_else(|| Error::Document(format!("label {y} outside {{-1, 1}}")))?);
            points.push(row);
        }
        Self::new(dim, points, labels)
    }
}

/// The `2^m` distributions `π_σ` of the hypercube construction.
///
/// The level-`q` cells are listed in the order that splits coarser blocks
/// first (Z-order), the first `m` of them form `X_1..X_m` and the rest `X_0`.
/// The marginal puts mass `W = 1/n` on each `X_j` and the remainder on
/// `X_0`; `η_σ = (1 + σ_j h)/2` on `X_j` and `1` on `X_0`.
#[derive(Clone, Debug)]
pub struct AssouadFamily {
    pub dim: usize,
    pub q: u32,
    pub m: usize,
    pub h: Rational,
    pub w: Rational,
    /// `X_1..X_m` in order.
    pub cells: Vec<CellIndex>,
    /// Members indexed by `σ`, bit `j` of the index giving `σ_(j+1) = +1`.
    pub members: Vec<PiecewiseDistribution>,
    density_in: Rational,
    density_out: Option<Rational>,
}

/// Level-`q` cells in the order that refines coarser blocks first.
pub fn z_order_cells(dim: usize, q: u32) -> Vec<CellIndex> {
    let mut cells = vec![CellIndex::root(dim)];
    for _ in 0..q {
        cells = cells.iter().flat_map(CellIndex::children).collect();
    }
    cells
}

pub fn sigma_of(index: usize, m: usize) -> Vec<Sign> {
    (0..m).map(|j| Sign::from_bool(index >> j & 1 == 1)).collect()
}

impl AssouadFamily {
    pub fn new(dim: usize, q: u32, m: usize, h: Rational, n: u64) -> Result<Self> {
        if m == 0 || m > 16 {
            return Err(Error::Parameter(format!("m = {m} must lie in 1..=16")));
        }
        check_table_size(dim, q)?;
        let total = 1usize << (dim * q as usize);
        if m > total {
            return Err(Error::Parameter(format!("m = {m} exceeds the {total} cells of level {q}")));
        }
        if n == 0 {
            return Err(Error::Parameter("sample budget n must be positive".into()));
        }
        if !(h.is_positive() && h <= int(1)) {
            return Err(Error::Parameter(format!("margin h = {} outside (0, 1]", format_rational(&h))));
        }
        let w = ratio(1, n as i64);
        let cell_measure = inv_pow2(dim as u64 * q as u64);
        if w > cell_measure {
            return Err(Error::Infeasible(format!("W = 1/{n} exceeds the level-{q} cell measure")));
        }
        let mw = &w * int(m as i64);
        let outside_cells = total - m;
        if outside_cells == 0 && mw != int(1) {
            return Err(Error::Infeasible("X_0 is empty but m·W != 1".into()));
        }
        if outside_cells > 0 && mw >= int(1) {
            return Err(Error::Infeasible("m·W >= 1 leaves no mass for X_0".into()));
        }
        let order = z_order_cells(dim, q);
        let cells: Vec<CellIndex> = order[..m].to_vec();
        let density_in = &w / &cell_measure;
        let density_out = (outside_cells > 0)
            .then(|| (int(1) - &mw) / (&cell_measure * int(outside_cells as i64)));
        let (lo, hi) = match &density_out {
            Some(o) => (density_in.clone().min(o.clone()), density_in.clone().max(o.clone())),
            None => (density_in.clone(), density_in.clone()),
        };

        let mut slot = vec![usize::MAX; total];
        for (j, c) in cells.iter().enumerate() {
            slot[c.linear_index()] = j;
        }
        let mut members = Vec::with_capacity(1 << m);
        for index in 0..1usize << m {
            let sigma = sigma_of(index, m);
            let mut density = Vec::with_capacity(total);
            let mut eta = Vec::with_capacity(total);
            for s in &slot {
                if *s == usize::MAX {
                    density.push(density_out.clone().expect("outside cells exist"));
                    eta.push(int(1));
                } else {
                    density.push(density_in.clone());
                    let signed = if sigma[*s].is_plus() { h.clone() } else { -h.clone() };
                    eta.push((int(1) + signed) / int(2));
                }
            }
            members.push(PiecewiseDistribution::from_tables(
                dim,
                q,
                density,
                eta,
                h.clone(),
                lo.clone(),
                hi.clone(),
            )?);
        }
        Ok(Self { dim, q, m, h, w, cells, members, density_in, density_out })
    }

    /// Whether some density value falls outside `[a, A]`.
    pub fn flagged_for(&self, a: &Rational, big_a: &Rational) -> bool {
        let outside = |v: &Rational| v < a || v > big_a;
        outside(&self.density_in) || self.density_out.as_ref().is_some_and(outside)
    }

    /// `f*_σ`: `σ_j` on `X_j` and `+1` on `X_0`.
    pub fn bayes_rule(&self, index: usize) -> RuleTree {
        self.members[index].bayes_rule()
    }

    /// Level-`q` budget test `floor(w(q)) >= 2^d·ceil(m / 2^d)`: the most
    /// leaves any `f*_σ` places on level `q`. Necessary for every `f*_σ` to
    /// lie in `F_w`; not sufficient, since a block of equal signs merges
    /// into a leaf one level up.
    pub fn level_q_condition(&self, w: &crate::sparse_class::WeightFunction) -> Result<bool> {
        let arity = 1u64 << self.dim;
        let needed = arity * (self.m as u64).div_ceil(arity);
        Ok(w.budget(self.q)? >= num_bigint::BigUint::from(needed))
    }

    /// Whether every `f*_σ` lies in `F_w`, by checking all `2^m` of them.
    pub fn all_members(&self, w: &crate::sparse_class::WeightFunction) -> Result<bool> {
        for i in 0..self.members.len() {
            if !w.member(&self.bayes_rule(i))? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `H²(π_σ, π_σ')` in closed form and by summing over outcomes.
    pub fn hellinger_sq(&self, i: usize, j: usize) -> Result<Hellinger> {
        if i >= self.members.len() || j >= self.members.len() {
            return Err(Error::Parameter("member index out of range".into()));
        }
        let distance = (i ^ j).count_ones();
        if distance > 1 {
            return Err(Error::Parameter(format!("members {i} and {j} differ in {distance} coordinates")));
        }
        let w = to_f64(&self.w);
        let h = to_f64(&self.h);
        let closed_form = distance as f64 * 2.0 * w * (1.0 - (1.0 - h * h).sqrt());
        let brute_force = hellinger_sq_brute(&self.members[i], &self.members[j], self.q)?;
        Ok(Hellinger { closed_form, brute_force })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hellinger {
    pub closed_form: f64,
    pub brute_force: f64,
}

/// Probabilities of the outcomes `(cell, y)` over the cells of `level`.
pub fn outcome_probabilities(dist: &PiecewiseDistribution, level: u32) -> Result<Vec<f64>> {
    check_table_size(dist.dim(), level)?;
    let mut out = Vec::with_capacity(2 << (dist.dim() * level as usize));
    for cell in CellIndex::cells_at(dist.dim(), level) {
        let (mass, pos) = dist.cell_masses(&cell)?;
        out.push(to_f64(&pos));
        out.push(to_f64(&(mass - pos)));
    }
    Ok(out)
}

/// `Σ_(cell, y) (√p₁ - √p₂)²` over the cells of `level`.
pub fn hellinger_sq_brute(p1: &PiecewiseDistribution, p2: &PiecewiseDistribution, level: u32) -> Result<f64> {
    if p1.dim() != p2.dim() {
        return Err(Error::DimensionMismatch { expected: p1.dim(), found: p2.dim() });
    }
    let level = level.max(p1.resolution()).max(p2.resolution());
    let a = outcome_probabilities(p1, level)?;
    let b = outcome_probabilities(p2, level)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum())
}

/// `H²(P^⊗n, Q^⊗n) = 2(1 - (1 - H²(P, Q)/2)^n)`.
pub fn tensorized_hellinger_sq(h2: f64, n: u32) -> f64 {
    2.0 * (1.0 - (1.0 - h2 / 2.0).powi(n as i32))
}

/// `H²(P^⊗n, Q^⊗n)` by enumerating all outcome tuples of length `n`.
pub fn product_hellinger_sq(p: &[f64], q: &[f64], n: u32) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Parameter("outcome alphabets differ".into()));
    }
    // outcomes with zero mass under both laws contribute nothing
    let support: Vec<(f64, f64)> = p.iter().zip(q).filter(|(a, b)| **a > 0.0 || **b > 0.0).map(|(a, b)| (*a, *b)).collect();
    let tuples = (support.len() as f64).powi(n as i32);
    if tuples > 5e7 {
        return Err(Error::Unsupported(format!("{tuples} outcome tuples are too many to enumerate")));
    }
    let mut total = 0.0;
    let mut digits = vec![0usize; n as usize];
    loop {
        let (mut a, mut b) = (1.0, 1.0);
        for &dgt in &digits {
            a *= support[dgt].0;
            b *= support[dgt].1;
        }
        total += (a.sqrt() - b.sqrt()).powi(2);
        let mut pos = 0;
        loop {
            if pos == digits.len() {
                return Ok(total);
            }
            digits[pos] += 1;
            if digits[pos] < support.len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}
