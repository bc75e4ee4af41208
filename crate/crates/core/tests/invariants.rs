use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_dyadic::rational::{int, ratio, to_f64};
use sparse_dyadic::{
    run_rates, CellIndex, DensityProfile, ExperimentConfig, PiecewiseDistribution, RuleTree, WeightFunction,
};

fn uniform_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

proptest! {
    #[test]
    fn every_point_lies_in_exactly_one_cell(seed in any::<u64>(), dim in 1usize..4, level in 0u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = uniform_point(&mut rng, dim);
            let located = CellIndex::locate(&x, level).unwrap();
            let exact: Vec<_> = x.iter().map(|&v| sparse_dyadic::rational::from_f64_decimal(v).unwrap()).collect();
            let hits = CellIndex::cells_at(dim, level).filter(|c| c.contains(&exact)).count();
            prop_assert_eq!(hits, 1);
            prop_assert!(located.contains(&exact));
            let finer = CellIndex::locate(&x, level + 1).unwrap();
            prop_assert_eq!(finer.parent().unwrap(), located.clone());
            for c in located.children() {
                prop_assert_eq!(c.parent().unwrap(), located.clone());
            }
        }
    }
}

#[test]
fn grid_points_and_corners_are_located() {
    for dim in 1..=3 {
        for level in 0..4u32 {
            let side = 1u64 << (level + 1);
            let total = (side + 1).pow(dim as u32);
            for k in 0..total {
                let mut rest = k;
                let mut x = Vec::with_capacity(dim);
                for _ in 0..dim {
                    x.push((rest % (side + 1)) as f64 / side as f64);
                    rest /= side + 1;
                }
                let exact: Vec<_> = x.iter().map(|&v| sparse_dyadic::rational::from_f64_decimal(v).unwrap()).collect();
                let hits: Vec<_> = CellIndex::cells_at(dim, level).filter(|c| c.contains(&exact)).collect();
                assert_eq!(hits.len(), 1, "{x:?} at level {level}");
                assert_eq!(hits[0], CellIndex::locate(&x, level).unwrap());
            }
        }
    }
}

#[test]
fn l1_distance_agrees_with_monte_carlo() {
    let w = WeightFunction::truncated(2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for pair in 0..3u64 {
        let f = w.sample_rule(5, 100 + pair).unwrap();
        let g = w.sample_rule(5, 200 + pair).unwrap();
        let exact = to_f64(&f.l1_distance(&g).unwrap());
        let m = 1_000_000;
        let mut differ = 0u64;
        for _ in 0..m {
            let x = uniform_point(&mut rng, 2);
            if f.evaluate(&x).unwrap() != g.evaluate(&x).unwrap() {
                differ += 1;
            }
        }
        let p = differ as f64 / m as f64;
        let se = 2.0 * (p * (1.0 - p) / m as f64).sqrt().max(1.0 / m as f64);
        assert!((2.0 * p - exact).abs() <= 4.0 * se, "exact {exact}, estimate {}", 2.0 * p);
    }
}

#[test]
fn empirical_risk_agrees_with_exact_risk() {
    let w = WeightFunction::truncated(1, 1).unwrap();
    let fstar = w.sample_rule(6, 11).unwrap();
    let density = DensityProfile::Halves { low: ratio(1, 2) };
    let dist = PiecewiseDistribution::from_rule(&fstar, ratio(3, 5), &density, ratio(1, 2), int(2)).unwrap();
    let f = w.sample_rule(6, 12).unwrap();
    let m = 1_000_000;
    let data = dist.sample(m, 5);
    let mistakes = |rule: &RuleTree| {
        (0..data.len()).filter(|&i| rule.evaluate(data.point(i)).unwrap() != data.label(i)).count() as f64 / m as f64
    };
    let risk_f = to_f64(&dist.risk(&f).unwrap());
    let risk_star = to_f64(&dist.risk(&fstar).unwrap());
    let emp_f = mistakes(&f);
    let emp_star = mistakes(&fstar);
    let se = |p: f64| (p * (1.0 - p) / m as f64).sqrt();
    assert!((emp_f - risk_f).abs() <= 4.0 * se(risk_f));
    assert!((emp_star - risk_star).abs() <= 4.0 * se(risk_star));
    let excess = to_f64(&dist.excess_risk(&f).unwrap());
    assert!((excess - (risk_f - risk_star)).abs() < 1e-12);
    // Same sample for both rules, so the difference has its own spread.
    let diff: Vec<f64> = (0..data.len())
        .map(|i| {
            let ef = (f.evaluate(data.point(i)).unwrap() != data.label(i)) as u8 as f64;
            let es = (fstar.evaluate(data.point(i)).unwrap() != data.label(i)) as u8 as f64;
            ef - es
        })
        .collect();
    let mean = diff.iter().sum::<f64>() / m as f64;
    let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    assert!((mean - excess).abs() <= 4.0 * (var / m as f64).sqrt());
}

#[test]
fn rates_rows_respect_the_bound() {
    let config = ExperimentConfig {
        class: WeightFunction::truncated(1, 1).unwrap(),
        dim: 1,
        h: ratio(1, 2),
        a: int(1),
        big_a: int(1),
        density: DensityProfile::Uniform,
        n_grid: vec![100, 400, 1600],
        trials: 200,
        seed: 3,
        rule_depth: 12,
        threads: 0,
        out: None,
    };
    let rows = run_rates(&config).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert!(row.mean_excess <= row.bound + 3.0 * row.std_err, "{row:?}");
    }
}
