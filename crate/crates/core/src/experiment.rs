//! Rate sweeps: sample Bayes rules from a class, draw data, fit the
//! plug-in rule at `J_n` and record exact excess risks.

use std::io::Write;
use std::path::PathBuf;

use num_traits::Signed;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::plugin::{fit, select_j, theoretical_bound};
use crate::rational::{f64_enclosure, format_rational, int, to_f64, Rational};
use crate::sparse_class::{value_to_rational, WeightFunction};
use crate::synthetic_dist::{DensityProfile, PiecewiseDistribution};

pub const CSV_HEADER: &str = "n,J_n,mean_excess,std_err,bound,ratio";

pub const DEFAULT_RULE_DEPTH: u32 = 16;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub class: WeightFunction,
    pub dim: usize,
    pub h: Rational,
    pub a: Rational,
    pub big_a: Rational,
    pub density: DensityProfile,
    pub n_grid: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    /// Depth cap for sampled Bayes rules.
    pub rule_depth: u32,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    class: Value,
    d: usize,
    h: Value,
    a: Value,
    #[serde(rename = "A")]
    big_a: Value,
    #[serde(default)]
    density: Option<Value>,
    n_grid: Vec<u64>,
    trials: usize,
    seed: u64,
    #[serde(default)]
    rule_depth: Option<u32>,
    #[serde(default)]
    threads: Option<usize>,
    #[serde(default)]
    out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config document:
    /// `{"class":{..},"d":1,"h":"4/5","a":1,"A":1,"density":{"kind":"uniform"},
    ///   "n_grid":[256,512],"trials":200,"seed":7,"rule_depth":16,"threads":8,"out":"rates.csv"}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let config = ExperimentConfig {
            class: WeightFunction::from_spec(&doc.class, doc.d)?,
            dim: doc.d,
            h: value_to_rational(&doc.h)?,
            a: value_to_rational(&doc.a)?,
            big_a: value_to_rational(&doc.big_a)?,
            density: match doc.density {
                Some(v) => DensityProfile::from_spec(&v)?,
                None => DensityProfile::Uniform,
            },
            n_grid: doc.n_grid,
            trials: doc.trials,
            seed: doc.seed,
            rule_depth: doc.rule_depth.unwrap_or(DEFAULT_RULE_DEPTH),
            threads: doc.threads.unwrap_or(0),
            out: doc.out,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::json!({
            "class": self.class.to_spec(),
            "d": self.dim,
            "h": format_rational(&self.h),
            "a": format_rational(&self.a),
            "A": format_rational(&self.big_a),
            "density": self.density.to_spec(),
            "n_grid": self.n_grid,
            "trials": self.trials,
            "seed": self.seed,
            "rule_depth": self.rule_depth,
            "threads": self.threads,
        });
        if let Some(out) = &self.out {
            v["out"] = Value::String(out.display().to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.class.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: self.class.dim() });
        }
        if !(self.h.is_positive() && self.h <= int(1)) {
            return Err(Error::Parameter(format!("h = {} outside (0, 1]", format_rational(&self.h))));
        }
        if !(self.a.is_positive() && self.a <= int(1) && self.big_a >= int(1)) {
            return Err(Error::Parameter(format!(
                "a = {}, A = {} violate 0 < a <= 1 <= A",
                format_rational(&self.a),
                format_rational(&self.big_a)
            )));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Parameter("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("n_grid must be strictly increasing".into()));
        }
        if self.n_grid[0] < 3 {
            return Err(Error::Parameter("every n must be at least 3".into()));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if self.rule_depth == 0 {
            return Err(Error::Parameter("rule_depth must be at least 1".into()));
        }
        if !self.class.is_l1_ball() {
            return Err(Error::Precondition("class is not an L1-ball".into()));
        }
        self.density.check(self.dim)?;
        let (lo, hi) = self.density.range();
        if lo < self.a || hi > self.big_a {
            return Err(Error::Parameter(format!(
                "density range [{}, {}] outside [a, A]",
                format_rational(&lo),
                format_rational(&hi)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatesRow {
    pub n: u64,
    pub level: u32,
    pub mean_excess: f64,
    pub std_err: f64,
    pub bound: f64,
    /// `mean_excess · n / ln n`.
    pub ratio: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D1_049E_B5D6_32BB);
    z ^ (z >> 31)
}

/// Seed for the data of trial `t` at sample size `n`. Depends only on its
/// three inputs, so extending the grid leaves existing cells unchanged.
pub fn trial_seed(base: u64, n: u64, t: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ n) ^ t)
}

/// Seed of the Bayes rule of trial `t`, shared by every `n`.
pub fn rule_seed(base: u64, t: u64) -> u64 {
    trial_seed(base, 0, t)
}

/// Bayes rule and distribution of one trial.
pub fn trial_distribution(config: &ExperimentConfig, t: u64) -> Result<PiecewiseDistribution> {
    let fstar = config.class.sample_rule(config.rule_depth, rule_seed(config.seed, t))?;
    PiecewiseDistribution::from_rule(&fstar, config.h.clone(), &config.density, config.a.clone(), config.big_a.clone())
}

/// Exact excess risk of the plug-in rule of one `(n, trial)` cell.
pub fn trial_excess(dist: &PiecewiseDistribution, n: u64, level: u32, seed: u64) -> Result<Rational> {
    let data = dist.sample(n as usize, seed);
    let fitted = fit(&data, level)?;
    dist.excess_risk(&fitted.to_rule_tree())
}

/// `(1 + A)·ε + exp(..)` with `ε = A · tail(J_n)`, the smallest admissible
/// accuracy at level `J_n`.
pub fn rate_bound(config: &ExperimentConfig, n: u64, level: u32) -> Result<f64> {
    let tail = config.class.tail_sum(level)?;
    let eps = f64_enclosure(&(&config.big_a * &tail.upper)).1;
    theoretical_bound(eps, n, to_f64(&config.a), to_f64(&config.big_a), to_f64(&config.h), config.dim, level)
}

pub fn run_rates(config: &ExperimentConfig) -> Result<Vec<RatesRow>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        let dists: Vec<PiecewiseDistribution> = (0..config.trials as u64)
            .into_par_iter()
            .map(|t| trial_distribution(config, t))
            .collect::<Result<_>>()?;
        let a = to_f64(&config.a);
        let mut rows = Vec::with_capacity(config.n_grid.len());
        for &n in &config.n_grid {
            let level = select_j(n, a, config.dim)?;
            let excess: Vec<f64> = dists
                .par_iter()
                .enumerate()
                .map(|(t, dist)| trial_excess(dist, n, level, trial_seed(config.seed, n, t as u64)).map(|r| to_f64(&r)))
                .collect::<Result<_>>()?;
            let (mean, std_err) = mean_and_std_err(&excess);
            let bound = rate_bound(config, n, level)?;
            rows.push(RatesRow { n, level, mean_excess: mean, std_err, bound, ratio: mean * n as f64 / (n as f64).ln() });
        }
        Ok(rows)
    })
}

/// Sample mean and standard error (`s/√m`, 0 for a single value), summed
/// in a fixed order.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

pub fn write_rates_csv<W: Write>(rows: &[RatesRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.level.to_string(),
            r.mean_excess.to_string(),
            r.std_err.to_string(),
            r.bound.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope of `ln(mean_excess)` on `ln(ln n / n)` over the rows.
pub fn rate_slope(rows: &[RatesRow]) -> f64 {
    let xs: Vec<f64> = rows.iter().map(|r| ((r.n as f64).ln() / r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_excess.ln()).collect();
    ols_slope(&xs, &ys)
}

/// `2(1 + A)/C` with `C = a(1 - e^{-h²/2})(2^d - 1)/(A·2^{d(K+1)})`.
pub fn truncated_rate_constant(k: u32, dim: usize, h: f64, a: f64, big_a: f64) -> f64 {
    let c = a * (1.0 - (-h * h / 2.0).exp()) * (2f64.powi(dim as i32) - 1.0)
        / (big_a * 2f64.powi((dim as u32 * (k + 1)) as i32));
    2.0 * (1.0 + big_a) / c
}
