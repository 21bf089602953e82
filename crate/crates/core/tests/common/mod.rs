//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use hetid::{CellDistribution, GpsVector, JointDistribution, TreatmentDist};
use proptest::prelude::*;

/// Cyclic Jacobi rotations; returns all eigenvalues, ascending.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// OLS of `y` on rows of the raw design matrix via `(X'X) b = X'y`.
pub fn ols_normal_equations(design: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = design[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &yi) in design.iter().zip(y) {
        for i in 0..k {
            xty[i] += row[i] * yi;
            for j in 0..k {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    gauss_solve(xtx, xty)
}

/// Exclusive scores with every entry >= 1e-6; the total is either exactly
/// saturated or drawn uniformly below one.
pub fn gps_strategy(max_t: usize) -> impl Strategy<Value = GpsVector> {
    (1..=max_t).prop_flat_map(gps_of_len)
}

pub fn gps_of_len(t: usize) -> impl Strategy<Value = GpsVector> {
    (
        prop::collection::vec(0.01f64..1.0, t),
        prop_oneof![Just(1.0), 0.0f64..1.0],
    )
        .prop_filter_map("entry below 1e-6", |(w, s)| {
            let total: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|x| x * s / total).collect();
            if p.iter().any(|&x| x < 1e-6) {
                return None;
            }
            GpsVector::new(p).ok()
        })
}

/// Random joint distribution on `{0,1}^T`: a random support, uniform weights
/// normalized over it.
pub fn joint_strategy(max_t: usize) -> impl Strategy<Value = JointDistribution> {
    (1..=max_t).prop_flat_map(joint_of_len)
}

pub fn joint_of_len(t: usize) -> impl Strategy<Value = JointDistribution> {
    let n = 1usize << t;
    (
        Just(t),
        prop::collection::vec(any::<bool>(), n),
        prop::collection::vec(0.01f64..1.0, n),
    )
        .prop_filter_map("empty support", |(t, mask, w)| {
            let total: f64 = w
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(x, _)| x)
                .sum();
            if total == 0.0 {
                return None;
            }
            let mut probs = BTreeMap::new();
            for (code, (&m, &wi)) in mask.iter().zip(&w).enumerate() {
                if m {
                    let profile = (0..t).map(|b| (code >> b) & 1 == 1).collect();
                    probs.insert(profile, wi / total);
                }
            }
            let sum: f64 = probs.values().sum();
            // rounding: push the residual onto the first profile
            let first = probs.values_mut().next().unwrap();
            *first += 1.0 - sum;
            JointDistribution::new(t, probs).ok()
        })
}

/// Normalizes positive weights to a probability vector that sums to one within 1e-12.
pub fn normalize(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let s: f64 = p.iter().sum();
    p[0] += 1.0 - s;
    p
}

pub fn cells_from(dists: Vec<TreatmentDist>, weights: &[f64]) -> Vec<CellDistribution> {
    dists
        .into_iter()
        .zip(normalize(weights))
        .enumerate()
        .map(|(i, (d, w))| CellDistribution::new(format!("cell{i:02}"), w, d))
        .collect()
}
