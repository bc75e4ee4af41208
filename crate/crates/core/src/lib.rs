//! Sparse dyadic representations of classification rules on `[0,1]^d`, the
//! per-cell majority-vote plug-in classifier, exact excess-risk evaluation
//! and the experiment harnesses built on them.

pub mod dyadic;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod plugin;
pub mod rational;
pub mod rule_tree;
pub mod sparse_class;
pub mod synthetic_dist;

pub use dyadic::CellIndex;
pub use error::{Error, Result};
pub use rational::Rational;
pub use rule_tree::{Node, RuleTree, Sign};
pub use sparse_class::{TailRule, TailSum, WeightFunction, WeightKind};
pub use synthetic_dist::{AssouadFamily, DensityProfile, LabeledDataset, PiecewiseDistribution};
pub use plugin::{approximate, fit, fit_parallel, select_j, theoretical_bound, FittedRule};
pub use geometry::{circle_chain, covering_bound, dyadic_approx, fat_cantor_measure, l1_error, PlanarSet};
pub use experiment::{run_rates, ExperimentConfig, RatesRow};
