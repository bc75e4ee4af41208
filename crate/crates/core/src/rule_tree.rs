//! Prediction rules on `[0,1]^d` written as finite `2^d`-ary trees.
//!
//! A leaf at depth `j` under cell `c` is a nonzero coefficient `a_c^(j)`
//! carrying the leaf's sign; an internal node is a zero coefficient whose
//! `2^d` children describe the next level. The canonical form forbids an
//! internal node whose children are all leaves of one common sign.

use std::fmt;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dyadic::{CellIndex, MAX_LEVEL};
use crate::error::{Error, Result};
use crate::rational::{inv_pow2, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn from_bool(plus: bool) -> Self {
        if plus {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Sign::Plus),
            -1 => Some(Sign::Minus),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf(Sign),
    Internal(Vec<Node>),
}

impl Node {
    pub fn leaf(sign: Sign) -> Self {
        Node::Leaf(sign)
    }

    fn check_arity(&self, arity: usize, depth: u32) -> Result<()> {
        match self {
            Node::Leaf(_) => Ok(()),
            Node::Internal(children) => {
                if children.len() != arity {
                    return Err(Error::Structure(format!(
                        "internal node at depth {depth} has {} children, expected {arity}",
                        children.len()
                    )));
                }
                if depth >= MAX_LEVEL {
                    return Err(Error::Structure(format!("tree deeper than {MAX_LEVEL}")));
                }
                children.iter().try_for_each(|c| c.check_arity(arity, depth + 1))
            }
        }
    }

    fn depth(&self) -> u32 {
        match self {
            Node::Leaf(_) => 0,
            Node::Internal(children) => 1 + children.iter().map(Node::depth).max().unwrap_or(0),
        }
    }

    fn canonical(self) -> Node {
        match self {
            Node::Leaf(s) => Node::Leaf(s),
            Node::Internal(children) => {
                let children: Vec<Node> = children.into_iter().map(Node::canonical).collect();
                match children.first() {
                    Some(Node::Leaf(s)) if children.iter().all(|c| *c == Node::Leaf(*s)) => {
                        Node::Leaf(*s)
                    }
                    _ => Node::Internal(children),
                }
            }
        }
    }

    fn is_canonical(&self) -> bool {
        match self {
            Node::Leaf(_) => true,
            Node::Internal(children) => {
                let merged = matches!(children.first(), Some(Node::Leaf(s))
                    if children.iter().all(|c| *c == Node::Leaf(*s)));
                !merged && children.iter().all(Node::is_canonical)
            }
        }
    }

    fn count_leaves(&self, depth: usize, counts: &mut Vec<usize>) {
        if counts.len() <= depth {
            counts.resize(depth + 1, 0);
        }
        match self {
            Node::Leaf(_) => counts[depth] += 1,
            Node::Internal(children) => children.iter().for_each(|c| c.count_leaves(depth + 1, counts)),
        }
    }

    /// Fraction of this node's cell on which the rule equals `sign`.
    pub(crate) fn sign_fraction(&self, sign: Sign) -> Rational {
        match self {
            Node::Leaf(s) if *s == sign => Rational::one(),
            Node::Leaf(_) => Rational::zero(),
            Node::Internal(children) => {
                let total: Rational = children.iter().map(|c| c.sign_fraction(sign)).sum();
                total / Rational::from_integer(children.len().into())
            }
        }
    }
}

/// Fraction of a common cell on which two subtrees disagree.
fn disagreement_fraction(a: &Node, b: &Node) -> Rational {
    match (a, b) {
        (Node::Leaf(s), Node::Leaf(t)) => {
            if s == t {
                Rational::zero()
            } else {
                Rational::one()
            }
        }
        (Node::Leaf(s), other) | (other, Node::Leaf(s)) => other.sign_fraction(s.flip()),
        (Node::Internal(xs), Node::Internal(ys)) => {
            let total: Rational = xs.iter().zip(ys).map(|(x, y)| disagreement_fraction(x, y)).sum();
            total / Rational::from_integer(xs.len().into())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RuleTree {
    dim: usize,
    root: Node,
}

impl RuleTree {
    /// Validates arity; the tree need not be canonical.
    pub fn new(dim: usize, root: Node) -> Result<Self> {
        if dim == 0 || dim > 16 {
            return Err(Error::Structure(format!("unsupported dimension {dim}")));
        }
        root.check_arity(1 << dim, 0)?;
        Ok(Self { dim, root })
    }

    /// Builds a tree and brings it to canonical form.
    pub fn canonical(dim: usize, root: Node) -> Result<Self> {
        Ok(Self::new(dim, root)?.canonicalize())
    }

    pub fn constant(dim: usize, sign: Sign) -> Self {
        Self { dim, root: Node::Leaf(sign) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn depth(&self) -> u32 {
        self.root.depth()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(bad));
        }
        let mut node = &self.root;
        let mut level = 0;
        loop {
            match node {
                Node::Leaf(s) => return Ok(*s),
                Node::Internal(children) => {
                    level += 1;
                    let pos = CellIndex::locate(x, level)?.child_position();
                    node = &children[pos];
                }
            }
        }
    }

    /// Value of the rule on a cell no shallower than the tree's leaves along
    /// its path. Returns `None` when the rule is not constant on the cell.
    pub fn sign_on_cell(&self, cell: &CellIndex) -> Option<Sign> {
        let mut node = &self.root;
        for level in 1..=cell.level() {
            match node {
                Node::Leaf(s) => return Some(*s),
                Node::Internal(children) => node = &children[cell.ancestor(level).child_position()],
            }
        }
        match node {
            Node::Leaf(s) => Some(*s),
            Node::Internal(_) => None,
        }
    }

    pub fn canonicalize(&self) -> RuleTree {
        Self { dim: self.dim, root: self.root.clone().canonical() }
    }

    pub fn is_canonical(&self) -> bool {
        self.root.is_canonical()
    }

    /// Number of nonzero coefficients (leaves) at each depth.
    pub fn coefficient_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        self.root.count_leaves(0, &mut counts);
        counts
    }

    /// `||f - g||_{L^1(λ_d)} = 2·λ_d{f ≠ g}`, exactly.
    pub fn l1_distance(&self, other: &RuleTree) -> Result<Rational> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(disagreement_fraction(&self.root, &other.root) * Rational::from_integer(2.into()))
    }

    /// Lebesgue measure of `{x : f(x) = sign}`.
    pub fn measure_of(&self, sign: Sign) -> Rational {
        self.root.sign_fraction(sign)
    }

    /// Leaves with their cells, in depth-first lexicographic order.
    pub fn leaves(&self) -> Vec<(CellIndex, Sign)> {
        fn walk(node: &Node, cell: CellIndex, out: &mut Vec<(CellIndex, Sign)>) {
            match node {
                Node::Leaf(s) => out.push((cell, *s)),
                Node::Internal(children) => {
                    for (pos, child) in children.iter().enumerate() {
                        walk(child, cell.child(pos), out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, CellIndex::root(self.dim), &mut out);
        out
    }

    /// Values on every cell of `level` in row-major order. The tree must not
    /// be deeper than `level`.
    pub fn sign_table(&self, level: u32) -> Result<Vec<Sign>> {
        if self.depth() > level {
            return Err(Error::Precondition(format!(
                "tree of depth {} cannot be tabulated at level {level}",
                self.depth()
            )));
        }
        check_table_size(self.dim, level)?;
        let mut table = vec![Sign::Minus; 1 << (self.dim * level as usize)];
        for (cell, sign) in self.leaves() {
            let shift = level - cell.level();
            // every level-`level` descendant of the leaf cell
            let span = 1u64 << shift;
            let mut offsets = vec![0u64; self.dim];
            loop {
                let index: Vec<u64> =
                    cell.index().iter().zip(&offsets).map(|(&k, &o)| (k << shift) + o).collect();
                table[CellIndex::new(level, index)?.linear_index()] = sign;
                let mut axis = self.dim;
                loop {
                    if axis == 0 {
                        break;
                    }
                    axis -= 1;
                    offsets[axis] += 1;
                    if offsets[axis] < span {
                        break;
                    }
                    offsets[axis] = 0;
                }
                if offsets.iter().all(|&o| o == 0) {
                    break;
                }
            }
        }
        Ok(table)
    }

    /// Depth-`level` rule from per-cell signs in row-major order, canonicalized.
    pub fn from_sign_table(dim: usize, level: u32, signs: &[Sign]) -> Result<RuleTree> {
        check_table_size(dim, level)?;
        if signs.len() != 1 << (dim * level as usize) {
            return Err(Error::Structure(format!(
                "expected {} cell signs, got {}",
                1usize << (dim * level as usize),
                signs.len()
            )));
        }
        fn build(cell: CellIndex, level: u32, signs: &[Sign]) -> Node {
            if cell.level() == level {
                return Node::Leaf(signs[cell.linear_index()]);
            }
            Node::Internal(cell.children().into_iter().map(|c| build(c, level, signs)).collect()).canonical()
        }
        RuleTree::new(dim, build(CellIndex::root(dim), level, signs))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TreeDoc { d: self.dim, node: NodeDoc::from(&self.root) })
            .expect("tree documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<RuleTree> {
        let doc: TreeDoc = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        if doc.d == 0 || doc.d > 16 {
            return Err(Error::Document(format!("unsupported dimension {}", doc.d)));
        }
        let root = doc.node.into_node(1 << doc.d)?;
        RuleTree::new(doc.d, root)
    }
}

pub(crate) fn check_table_size(dim: usize, level: u32) -> Result<()> {
    if dim * level as usize > 26 {
        return Err(Error::Unsupported(format!(
            "a table of 2^{} cells is too large",
            dim * level as usize
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    d: usize,
    node: NodeDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    v: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<NodeDoc>>,
}

impl From<&Node> for NodeDoc {
    fn from(node: &Node) -> Self {
        match node {
            Node::Leaf(s) => NodeDoc { v: s.as_i8() as i64, children: None },
            Node::Internal(children) => {
                NodeDoc { v: 0, children: Some(children.iter().map(NodeDoc::from).collect()) }
            }
        }
    }
}

impl NodeDoc {
    fn into_node(self, arity: usize) -> Result<Node> {
        match (self.v, self.children) {
            (0, Some(children)) => {
                if children.len() != arity {
                    return Err(Error::Structure(format!(
                        "internal node has {} children, expected {arity}",
                        children.len()
                    )));
                }
                Ok(Node::Internal(
                    children.into_iter().map(|c| c.into_node(arity)).collect::<Result<_>>()?,
                ))
            }
            (0, None) => Err(Error::Document("internal node without children".into())),
            (v, None) => Sign::from_i64(v)
                .map(Node::Leaf)
                .ok_or_else(|| Error::Document(format!("coefficient {v} outside {{-1, 0, 1}}"))),
            (v, Some(_)) => Err(Error::Document(format!("leaf with value {v} has children"))),
        }
    }
}

/// Shorthand used throughout the tests.
pub fn leaf(v: i8) -> Node {
    Node::Leaf(if v > 0 { Sign::Plus } else { Sign::Minus })
}

pub fn internal(children: Vec<Node>) -> Node {
    Node::Internal(children)
}

/// Measure of one cell at `level` in dimension `dim`.
pub fn cell_measure(dim: usize, level: u32) -> Rational {
    inv_pow2(dim as u64 * level as u64)
}
