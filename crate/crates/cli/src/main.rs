//! `sparse-dyadic`: generate rules and data, fit the plug-in rule, evaluate
//! risks and run the rate, Assouad, circle and fat-Cantor diagnostics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use sparse_dyadic::experiment::{run_rates, write_rates_csv, ExperimentConfig};
use sparse_dyadic::geometry::{circle_chain, covering_bound, dyadic_approx, fat_cantor_limit_lower, l1_error};
use sparse_dyadic::rational::{format_rational, parse_rational, to_f64};
use sparse_dyadic::synthetic_dist::sigma_of;
use sparse_dyadic::{
    approximate, fat_cantor_measure, fit, select_j, AssouadFamily, DensityProfile, Error, LabeledDataset,
    PiecewiseDistribution, PlanarSet, Rational, Result, RuleTree, WeightFunction,
};

#[derive(Parser)]
#[command(name = "sparse-dyadic", version, about = "Sparse dyadic classification rules and the plug-in estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file of default flag values (`rates`: the experiment config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a rule from a weight class; optionally write its distribution.
    GenRule {
        /// Class spec as JSON text or a path, e.g. {"kind":"truncated","K":1}.
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        depth: u32,
        /// Also write the distribution with this rule as Bayes rule.
        #[arg(long)]
        dist_out: Option<PathBuf>,
        #[arg(long, default_value = "4/5")]
        h: String,
        /// Density spec as JSON text or a path; uniform by default.
        #[arg(long)]
        density: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a labelled sample from a distribution document.
    GenData {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the plug-in rule at a level (or at J_n when --level is absent).
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        level: Option<u32>,
        /// Density lower bound used for J_n.
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        /// Also write per-cell counts as CSV.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Exact excess risk and risk of a rule.
    Risk {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        rule: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Population approximation at J_eps.
    Approx {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        eps: String,
        #[command(flatten)]
        common: Common,
    },
    /// Rate sweep; writes the CSV table.
    Rates {
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Assouad hypercube family diagnostics.
    AssouadCheck {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long)]
        q: u32,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        h: String,
        #[arg(long)]
        n: u64,
        /// Class to test membership against.
        #[arg(long)]
        class: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Dyadic approximation of a planar set; the reference disc chain by default.
    Circle {
        #[arg(long, default_value = "0.01")]
        eps: f64,
        /// Planar set as JSON text or a path.
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        level: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Fat-Cantor measures λ(F_0..F_k).
    Cantor {
        #[arg(long, default_value_t = 10)]
        k: u32,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenRule { common, .. }
            | Command::GenData { common, .. }
            | Command::Fit { common, .. }
            | Command::Risk { common, .. }
            | Command::Approx { common, .. }
            | Command::Rates { common, .. }
            | Command::AssouadCheck { common, .. }
            | Command::Circle { common, .. }
            | Command::Cantor { common, .. } => common,
        }
    }
}

/// Inline JSON when the text starts with `{` or `"`, otherwise a file path.
fn json_arg(text: &str) -> Result<Value> {
    let t = text.trim_start();
    let body = if t.starts_with('{') || t.starts_with('"') || t.starts_with('[') {
        text.to_string()
    } else {
        read(Path::new(text))?
    };
    Ok(serde_json::from_str(&body)?)
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| with_path(path, e))
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_text(out: &Option<PathBuf>, text: &str) -> Result<()> {
    let mut w = output(out)?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

fn rational_line(label: &str, r: &Rational) -> String {
    format!("{label} {} ({})", format_rational(r), to_f64(r))
}

/// Appends `--key value` pairs from a JSON object for flags missing from `argv`.
fn merge_config(mut argv: Vec<String>) -> std::result::Result<Vec<String>, (u8, String)> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else { return Ok(argv) };
    let Some(path) = argv.get(pos + 1).cloned() else { return Ok(argv) };
    if argv.iter().any(|a| a == "rates") {
        return Ok(argv);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| (1, format!("config {path}: {e}")))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| (2, format!("config {path}: {e}")))?;
    let obj = doc.as_object().ok_or_else(|| (2, format!("config {path}: expected a JSON object")))?;
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let value = match value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        argv.push(flag);
        argv.push(value);
    }
    Ok(argv)
}

fn run(command: Command) -> Result<()> {
    let common = command.common().clone();
    let seed = common.seed.unwrap_or(0);
    match command {
        Command::GenRule { class, dim, depth, dist_out, h, density, .. } => {
            let w = WeightFunction::from_spec(&json_arg(&class)?, dim)?;
            let rule = w.sample_rule(depth, seed)?;
            eprintln!("sampled rule: depth {}, counts {:?}", rule.depth(), rule.coefficient_counts());
            if let Some(path) = dist_out {
                let profile = match density {
                    Some(d) => DensityProfile::from_spec(&json_arg(&d)?)?,
                    None => DensityProfile::Uniform,
                };
                let (lo, hi) = profile.range();
                let one = Rational::from_integer(1.into());
                let a = lo.min(one.clone());
                let big_a = hi.max(one);
                let dist = PiecewiseDistribution::from_rule(&rule, parse_rational(&h)?, &profile, a, big_a)?;
                std::fs::write(&path, dist.to_json()?).map_err(|e| with_path(&path, e))?;
            }
            write_text(&common.out, &rule.to_json())
        }
        Command::GenData { dist, n, .. } => {
            let dist = PiecewiseDistribution::from_json(&read(&dist)?)?;
            let data = dist.sample(n, seed);
            let mut w = output(&common.out)?;
            data.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Fit { data, level, a, counts, .. } => {
            let data = LabeledDataset::read_csv(BufReader::new(open(&data)?))?;
            let level = match level {
                Some(l) => l,
                None => select_j(data.len() as u64, a, data.dim())?,
            };
            let fitted = fit(&data, level)?;
            eprintln!("fitted level {level} on {} points", data.len());
            if let Some(path) = counts {
                let mut w = BufWriter::new(create(&path)?);
                fitted.write_counts_csv(&mut w)?;
                w.flush()?;
            }
            write_text(&common.out, &fitted.to_rule_tree().to_json())
        }
        Command::Risk { dist, rule, .. } => {
            let dist = PiecewiseDistribution::from_json(&read(&dist)?)?;
            let rule = RuleTree::from_json(&read(&rule)?)?;
            let excess = dist.excess_risk(&rule)?;
            let risk = dist.risk(&rule)?;
            write_text(&common.out, &format!("{}\n{}", rational_line("excess_risk", &excess), rational_line("risk", &risk)))
        }
        Command::Approx { dist, class, eps, .. } => {
            let dist = PiecewiseDistribution::from_json(&read(&dist)?)?;
            let w = WeightFunction::from_spec(&json_arg(&class)?, dist.dim())?;
            let eps = parse_rational(&eps)?;
            let approx = approximate(&dist, &w, &eps)?;
            let excess = dist.excess_risk(&approx.rule)?;
            eprintln!("J_eps = {}", approx.level);
            eprintln!("{}", rational_line("excess_risk", &excess));
            write_text(&common.out, &approx.rule.to_json())
        }
        Command::Rates { threads, .. } => {
            let path = common.config.ok_or_else(|| Error::Parameter("rates needs --config".into()))?;
            let mut config = ExperimentConfig::from_json(&read(&path)?)?;
            if let Some(t) = threads {
                config.threads = t;
            }
            if let Some(s) = common.seed {
                config.seed = s;
            }
            if common.out.is_some() {
                config.out = common.out.clone();
            }
            eprintln!("running {} grid points x {} trials", config.n_grid.len(), config.trials);
            let rows = run_rates(&config)?;
            let mut w = output(&config.out)?;
            write_rates_csv(&rows, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::AssouadCheck { d, q, m, h, n, class, .. } => {
            let family = AssouadFamily::new(d, q, m, parse_rational(&h)?, n)?;
            let mut lines = vec![format!("family_size {}", family.members.len())];
            let mut max_delta = 0.0f64;
            let mut closed = 0.0;
            let mut brute = 0.0;
            for i in 0..family.members.len() {
                for bit in 0..m {
                    let j = i ^ (1 << bit);
                    if j > i {
                        let hs = family.hellinger_sq(i, j)?;
                        max_delta = max_delta.max((hs.closed_form - hs.brute_force).abs());
                        closed = hs.closed_form;
                        brute = hs.brute_force;
                    }
                }
            }
            lines.push(format!("W {}", format_rational(&family.w)));
            lines.push(format!("hellinger_closed_form {closed}"));
            lines.push(format!("hellinger_brute_force {brute}"));
            lines.push(format!("max_delta {max_delta:e}"));
            lines.push(format!("cells {}", family.cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")));
            if let Some(spec) = class {
                let w = WeightFunction::from_spec(&json_arg(&spec)?, d)?;
                lines.push(format!("level_q_condition {}", family.level_q_condition(&w)?));
                let all = family.all_members(&w)?;
                lines.push(format!("all_members {all}"));
                if !all {
                    let bad = (0..family.members.len()).find(|&i| !w.member(&family.bayes_rule(i)).unwrap_or(false));
                    if let Some(i) = bad {
                        let sigma: Vec<String> = sigma_of(i, m).iter().map(|s| s.to_string()).collect();
                        lines.push(format!("first_non_member sigma=({})", sigma.join(",")));
                    }
                }
            }
            write_text(&common.out, &lines.join("\n"))
        }
        Command::Circle { eps, set, level, .. } => {
            let text = match set {
                None => {
                    let c = circle_chain(eps)?;
                    [
                        format!("eps {}", c.eps),
                        format!("eps0 {}", c.eps0),
                        format!("level {}", c.level),
                        format!("cover {}", c.cover),
                        format!("error_lower {}", c.error.lower),
                        format!("error_upper {}", c.error.upper),
                        format!("intermediate_bound {} holds {}", c.intermediate, c.intermediate_holds()),
                        format!("final_bound {} holds {}", c.final_bound, c.final_holds()),
                    ]
                    .join("\n")
                }
                Some(spec) => {
                    let set = PlanarSet::from_json(&json_arg(&spec)?)?;
                    let level = level.ok_or_else(|| Error::Parameter("--set needs --level".into()))?;
                    let rule = dyadic_approx(&set, level)?;
                    let e = l1_error(&set, &rule)?;
                    let mut lines = vec![
                        format!("level {level}"),
                        format!("cover {}", covering_bound(&set, eps)?),
                        format!("error_lower {}", e.lower),
                        format!("error_upper {}", e.upper),
                    ];
                    if let Some(x) = &e.exact {
                        lines.push(rational_line("error_exact", x));
                    }
                    lines.join("\n")
                }
            };
            write_text(&common.out, &text)
        }
        Command::Cantor { k, .. } => {
            let mut lines = vec!["k,measure,decimal".to_string()];
            for i in 0..=k {
                let m = fat_cantor_measure(i);
                lines.push(format!("{i},{},{}", format_rational(&m), to_f64(&m)));
            }
            eprintln!("certified lower bound on the limit from k={k}: {}", fat_cantor_limit_lower(k));
            write_text(&common.out, &lines.join("\n"))
        }
    }
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err((code, e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
