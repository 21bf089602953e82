mod common;

use std::collections::BTreeMap;

use common::ols_normal_equations;
use hetid::simulation::simulate_with_latent;
use hetid::{estimate_asf, simulate, CellRules, Control, DgpSpec, Scheme};

/// Within each control cell, regressing each latent coefficient on the
/// treatment dummies should give slopes near zero.
#[test]
fn coefficients_are_mean_independent_of_treatment_given_control() {
    let spec = DgpSpec::two_cell(1_000_000, 2024);
    let rows = simulate_with_latent(&spec).unwrap();
    let mut by_cell: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (obs, _)) in rows.iter().enumerate() {
        if let Control::Label(l) = &obs.v {
            by_cell.entry(l.clone()).or_default().push(i);
        }
    }
    let mut worst: f64 = 0.0;
    for idx in by_cell.values() {
        let design: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                std::iter::once(1.0)
                    .chain(rows[i].0.x.iter().map(|&b| b as u8 as f64))
                    .collect()
            })
            .collect();
        for comp in 0..3 {
            let y: Vec<f64> = idx.iter().map(|&i| rows[i].1[comp]).collect();
            let b = ols_normal_equations(&design, &y).unwrap();
            for slope in &b[1..] {
                worst = worst.max(slope.abs());
            }
        }
    }
    assert!(worst < 0.01, "largest slope {worst}");
}

#[test]
fn sample_scores_converge_to_the_design() {
    let spec = DgpSpec::two_cell(1_000_000, 99);
    let sim = simulate(&spec).unwrap();
    let design = [[0.3, 0.2], [0.2, 0.4]];
    let mut counts = [[0usize; 3]; 2];
    for r in sim.data.rows() {
        let c = match &r.v {
            Control::Label(l) => l[1..].parse::<usize>().unwrap(),
            Control::Point(_) => unreachable!(),
        };
        counts[c][r.treatment_index()] += 1;
    }
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let n: usize = counts[c].iter().sum();
        for t in 0..2 {
            let p = counts[c][t + 1] as f64 / n as f64;
            worst = worst.max((p - design[c][t]).abs());
        }
    }
    assert!(worst < 0.005, "max deviation {worst}");
}

#[test]
fn continuous_controls_recover_effects() {
    let spec = DgpSpec::continuous(200_000, 31);
    let sim = simulate(&spec).unwrap();
    let est = estimate_asf(
        &sim.data,
        Scheme::QuantileBins { k: 10 },
        &CellRules::default(),
    )
    .unwrap();
    for (a, b) in est.ate.iter().zip(&sim.true_ate) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

#[test]
fn row_substreams_are_order_free() {
    let spec = DgpSpec::heterogeneous(3000, 5);
    let full = simulate(&spec).unwrap();
    let mut shorter = spec.clone();
    shorter.n = 1000;
    let part = simulate(&shorter).unwrap();
    assert_eq!(&full.data.rows()[..1000], part.data.rows());
}

/// Estimation error grows as the scores approach saturation: pooled over
/// 20 seeds, at least two thirds of adjacent steps along (0.5, 0.9, 0.99)
/// do not decrease the error.
#[test]
fn sweep_error_grows_toward_saturation() {
    let sums = [0.5, 0.9, 0.99];
    let rules = CellRules::default();
    let (mut up, mut total) = (0, 0);
    for seed in 0..20 {
        let base = DgpSpec::heterogeneous(20_000, 100 + seed);
        let points = hetid::failure_sweep(&base, &sums, Scheme::Discrete, &rules).unwrap();
        for w in points.windows(2) {
            total += 1;
            match (w[0].ate_error, w[1].ate_error) {
                (Some(a), Some(b)) if b >= a => up += 1,
                (_, None) => up += 1,
                _ => {}
            }
        }
    }
    assert!(3 * up >= 2 * total, "{up} of {total} steps non-decreasing");
}
