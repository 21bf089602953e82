//! Per-cell least squares on the control regression `E[Y|X,V] = p(X)'q(V)`,
//! aggregation into the average structural function, and the data audit.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{extreme_eigenvalues, DesignVector, GpsVector, MomentMatrix};
use crate::dataset::{Dataset, Observation, TreatmentMode};
use crate::error::{Error, Result};
use crate::identification::{overlap_reason, Reason};
use crate::partition::{partition_controls, Scheme};

/// Thresholds applied to estimated cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRules {
    /// A cell is singular when `lambda_min <= lambda_rtol * lambda_max`.
    pub lambda_rtol: f64,
    /// `None` means `T + 2`.
    pub min_cell_size: Option<usize>,
    pub overlap_delta: f64,
}

impl Default for CellRules {
    fn default() -> Self {
        Self {
            lambda_rtol: 1e-6,
            min_cell_size: None,
            overlap_delta: 0.01,
        }
    }
}

impl CellRules {
    pub fn min_cell_size_for(&self, treatments: usize) -> usize {
        self.min_cell_size.unwrap_or(treatments + 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEstimate {
    pub cell_id: String,
    pub n_obs: usize,
    pub moment_hat: MomentMatrix,
    pub cross_moment_hat: Vec<f64>,
    pub q_hat: Option<Vec<f64>>,
    pub lambda_min_hat: f64,
    pub lambda_max_hat: f64,
    pub gps_hat: Option<GpsVector>,
    pub reason: Option<Reason>,
}

/// Sample analogs of `E[p(X)p(X)'|v]` and `E[p(X)Y|v]` on the rows of one
/// cell, and `q_hat` when the cell is large and well conditioned enough.
pub fn estimate_cell(
    cell_id: &str,
    rows: &[&Observation],
    treatments: usize,
    mode: TreatmentMode,
    lambda_rtol: f64,
    min_cell_size: usize,
) -> Result<CellEstimate> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len();
    let dim = treatments + 1;

    // Group outcomes by profile; sorting each group makes the sums
    // independent of row order.
    let mut groups: BTreeMap<&[bool], Vec<f64>> = BTreeMap::new();
    for row in rows {
        if row.x.len() != treatments {
            return Err(Error::ProfileLength {
                expected: treatments,
                found: row.x.len(),
            });
        }
        groups.entry(row.x.as_slice()).or_default().push(row.y);
    }

    let mut outer = DMatrix::zeros(dim, dim);
    let mut cross = vec![0.0; dim];
    for (profile, ys) in groups.iter_mut() {
        ys.sort_by(f64::total_cmp);
        let count = ys.len() as f64;
        let y_sum: f64 = ys.iter().sum();
        let p = DesignVector::from_profile(profile)?;
        let e = p.entries();
        for i in 0..dim {
            if e[i] == 0.0 {
                continue;
            }
            cross[i] += y_sum;
            for j in i..dim {
                outer[(i, j)] += count * e[j];
            }
        }
    }
    let moment_hat = MomentMatrix::from_outer_sum(outer, n);
    let inv = 1.0 / n as f64;
    cross.iter_mut().for_each(|c| *c *= inv);

    let (lambda_min_hat, lambda_max_hat) = extreme_eigenvalues(moment_hat.as_matrix());

    let gps_hat = match mode {
        TreatmentMode::Exclusive => {
            let probs = (1..dim).map(|t| moment_hat.get(0, t)).collect();
            Some(GpsVector::new(probs)?)
        }
        TreatmentMode::General => None,
    };

    let mut reason = None;
    let mut q_hat = None;
    if n < min_cell_size {
        reason = Some(Reason::InsufficientData);
    } else if lambda_min_hat <= lambda_rtol * lambda_max_hat {
        reason = Some(Reason::SingularMomentMatrix);
    } else {
        q_hat = solve(&moment_hat, &cross);
        if q_hat.is_none() {
            reason = Some(Reason::SingularMomentMatrix);
        }
    }

    Ok(CellEstimate {
        cell_id: cell_id.to_string(),
        n_obs: n,
        moment_hat,
        cross_moment_hat: cross,
        q_hat,
        lambda_min_hat,
        lambda_max_hat,
        gps_hat,
        reason,
    })
}

fn solve(m: &MomentMatrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let chol = m.as_matrix().clone().cholesky()?;
    let q = chol.solve(&DVector::from_column_slice(rhs));
    q.iter()
        .all(|x| x.is_finite())
        .then(|| q.iter().copied().collect())
}

/// The single rule used by both `audit` and `estimate_asf` to decide whether
/// an estimated cell is usable. Checks run in a fixed order: sample size,
/// then overlap (exclusive data only), then conditioning.
pub fn classify_cell(
    est: &CellEstimate,
    treatments: usize,
    mode: TreatmentMode,
    rules: &CellRules,
) -> Option<Reason> {
    if est.n_obs < rules.min_cell_size_for(treatments) {
        return Some(Reason::InsufficientData);
    }
    if mode == TreatmentMode::Exclusive {
        if let Some(reason) = est
            .gps_hat
            .as_ref()
            .and_then(|g| overlap_reason(g, rules.overlap_delta))
        {
            return Some(reason);
        }
    }
    if est.lambda_min_hat <= rules.lambda_rtol * est.lambda_max_hat || est.q_hat.is_none() {
        return Some(Reason::SingularMomentMatrix);
    }
    None
}

fn estimate_cells(data: &Dataset, scheme: Scheme, rules: &CellRules) -> Result<Vec<CellEstimate>> {
    let cells = partition_controls(data, scheme)?;
    let t = data.treatments();
    let min_size = rules.min_cell_size_for(t);
    let cells: Vec<(String, Vec<usize>)> = cells.into_iter().collect();
    cells
        .par_iter()
        .map(|(id, idx)| {
            let rows: Vec<&Observation> = idx.iter().map(|&i| &data.rows()[i]).collect();
            let mut est = estimate_cell(id, &rows, t, data.mode(), rules.lambda_rtol, min_size)?;
            est.reason = classify_cell(&est, t, data.mode(), rules);
            if est.reason.is_some() {
                est.q_hat = None;
            }
            Ok(est)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsfEstimate {
    /// Estimate of `E[q(V)]`, weighted by retained cell counts.
    pub eq_mean: Vec<f64>,
    /// `ate[t] = mu(e_t) - mu(0_T) = eq_mean[t + 1]`.
    pub ate: Vec<f64>,
    /// Share of observations in cells without `q_hat`.
    pub trimmed_mass: f64,
    pub cell_estimates: Vec<CellEstimate>,
    pub warnings: Vec<String>,
}

impl AsfEstimate {
    /// `mu_hat(x) = p(x)' eq_mean`.
    pub fn asf(&self, profile: &[bool]) -> Result<f64> {
        let p = DesignVector::from_profile(profile)?;
        if p.entries().len() != self.eq_mean.len() {
            return Err(Error::ProfileLength {
                expected: self.eq_mean.len() - 1,
                found: profile.len(),
            });
        }
        Ok(p.dot(&self.eq_mean))
    }
}

/// Estimates `E[q(V)]` and the average treatment effects, trimming cells that
/// fail [`classify_cell`].
pub fn estimate_asf(data: &Dataset, scheme: Scheme, rules: &CellRules) -> Result<AsfEstimate> {
    let cells = estimate_cells(data, scheme, rules)?;
    let dim = data.treatments() + 1;

    let mut weighted = vec![0.0; dim];
    let mut retained = 0usize;
    let mut trimmed = 0usize;
    let mut warnings = Vec::new();
    for cell in &cells {
        match (&cell.q_hat, cell.reason) {
            (Some(q), _) => {
                retained += cell.n_obs;
                for (w, x) in weighted.iter_mut().zip(q) {
                    *w += cell.n_obs as f64 * x;
                }
            }
            (None, reason) => {
                trimmed += cell.n_obs;
                let reason = reason.unwrap_or(Reason::SingularMomentMatrix);
                warnings.push(format!(
                    "cell {} trimmed ({} rows): {reason}",
                    cell.cell_id, cell.n_obs
                ));
            }
        }
    }
    if retained == 0 {
        return Err(Error::NotIdentifiedEverywhere);
    }
    let eq_mean: Vec<f64> = weighted.iter().map(|w| w / retained as f64).collect();
    let ate = eq_mean[1..].to_vec();
    Ok(AsfEstimate {
        eq_mean,
        ate,
        trimmed_mass: trimmed as f64 / data.len() as f64,
        cell_estimates: cells,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Identified,
    NotIdentified,
}

impl Verdict {
    pub fn from_identified(ok: bool) -> Self {
        if ok {
            Verdict::Identified
        } else {
            Verdict::NotIdentified
        }
    }

    pub fn is_identified(self) -> bool {
        self == Verdict::Identified
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Identified => "IDENTIFIED",
            Verdict::NotIdentified => "NOT_IDENTIFIED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub cell_id: String,
    pub n_obs: usize,
    pub gps: Option<Vec<f64>>,
    pub gps_sum: Option<f64>,
    pub lambda_min: f64,
    pub verdict: Verdict,
    pub reason: Option<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub verdict: Verdict,
    pub mode: TreatmentMode,
    pub treatments: usize,
    pub n_obs: usize,
    pub failing_mass: f64,
    pub rules: CellRules,
    /// Sorted by cell id.
    pub cells: Vec<CellReport>,
}

impl IdentificationReport {
    pub fn identified(&self) -> bool {
        self.verdict.is_identified()
    }

    pub fn failing(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| !c.verdict.is_identified())
    }
}

/// Per-cell identification diagnostics for a dataset. Exclusive data are
/// judged by the propensity-score overlap rule, general data by the
/// conditioning of the estimated moment matrix.
pub fn audit(data: &Dataset, scheme: Scheme, rules: &CellRules) -> Result<IdentificationReport> {
    let cells = estimate_cells(data, scheme, rules)?;
    let mut failing_rows = 0usize;
    let reports: Vec<CellReport> = cells
        .into_iter()
        .map(|c| {
            if c.reason.is_some() {
                failing_rows += c.n_obs;
            }
            CellReport {
                gps_sum: c.gps_hat.as_ref().map(GpsVector::sum),
                gps: c.gps_hat.map(|g| g.probs().to_vec()),
                cell_id: c.cell_id,
                n_obs: c.n_obs,
                lambda_min: c.lambda_min_hat,
                verdict: Verdict::from_identified(c.reason.is_none()),
                reason: c.reason,
            }
        })
        .collect();
    Ok(IdentificationReport {
        verdict: Verdict::from_identified(failing_rows == 0),
        mode: data.mode(),
        treatments: data.treatments(),
        n_obs: data.len(),
        failing_mass: failing_rows as f64 / data.len() as f64,
        rules: CellRules {
            min_cell_size: Some(rules.min_cell_size_for(data.treatments())),
            ..*rules
        },
        cells: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Control;
    use approx::assert_abs_diff_eq;

    fn obs(y: f64, t: usize, treatments: usize, v: &str) -> Observation {
        let mut x = vec![false; treatments];
        if t > 0 {
            x[t - 1] = true;
        }
        Observation {
            y,
            x,
            v: Control::Label(v.into()),
        }
    }

    fn refs(rows: &[Observation]) -> Vec<&Observation> {
        rows.iter().collect()
    }

    #[test]
    fn all_untreated_cell_is_singular() {
        let rows: Vec<_> = (0..10).map(|_| obs(4.0, 0, 2, "a")).collect();
        let est = estimate_cell("a", &refs(&rows), 2, TreatmentMode::Exclusive, 1e-6, 4).unwrap();
        assert_eq!(est.q_hat, None);
        assert_eq!(est.reason, Some(Reason::SingularMomentMatrix));
        assert_eq!(est.moment_hat.get(0, 0), 1.0);
        assert_eq!(est.moment_hat.get(1, 1), 0.0);
    }

    #[test]
    fn binary_two_by_two() {
        // intercept = mean of untreated, slope = difference of means
        let mut rows: Vec<_> = (0..5).map(|_| obs(1.0, 0, 1, "a")).collect();
        rows.extend((0..5).map(|_| obs(3.0, 1, 1, "a")));
        let est = estimate_cell("a", &refs(&rows), 1, TreatmentMode::Exclusive, 1e-6, 3).unwrap();
        let q = est.q_hat.unwrap();
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 2.0, epsilon = 1e-12);
        assert_eq!(est.gps_hat.unwrap().probs(), &[0.5]);
    }

    #[test]
    fn noiseless_three_profiles() {
        let rows: Vec<_> = [0, 1, 2, 0, 2, 1, 0]
            .iter()
            .map(|&t| obs(1.0 + [0.0, 2.0, 3.0][t], t, 2, "a"))
            .collect();
        let est = estimate_cell("a", &refs(&rows), 2, TreatmentMode::Exclusive, 1e-6, 4).unwrap();
        for (g, w) in est.q_hat.unwrap().iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_cell_is_insufficient() {
        let rows = vec![
            obs(1.0, 0, 1, "a"),
            obs(2.0, 1, 1, "a"),
            obs(1.5, 0, 1, "a"),
        ];
        let est = estimate_cell("a", &refs(&rows), 1, TreatmentMode::Exclusive, 1e-6, 10).unwrap();
        assert_eq!(est.reason, Some(Reason::InsufficientData));
        assert!(est.q_hat.is_none());
    }

    fn two_cell_data() -> Dataset {
        let mut rows = Vec::new();
        for i in 0..30 {
            let t = i % 3;
            rows.push(obs(1.0 + [0.0, 2.0, 3.0][t], t, 2, "a"));
        }
        // cell b never leaves treatment untreated
        for i in 0..30 {
            let t = 1 + i % 2;
            rows.push(obs(1.0 + [0.0, 2.0, 3.0][t], t, 2, "b"));
        }
        Dataset::new(2, TreatmentMode::Exclusive, rows).unwrap()
    }

    #[test]
    fn asf_trims_saturated_cell() {
        let data = two_cell_data();
        let est = estimate_asf(&data, Scheme::Discrete, &CellRules::default()).unwrap();
        assert_abs_diff_eq!(est.trimmed_mass, 0.5);
        assert_abs_diff_eq!(est.ate[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.ate[1], 3.0, epsilon = 1e-10);
        assert_eq!(est.warnings.len(), 1);
        assert!(est.warnings[0].contains("GPS_SUM_AT_ONE"));
        let b = &est.cell_estimates[1];
        assert_eq!(b.reason, Some(Reason::GpsSumAtOne));
        assert_abs_diff_eq!(est.asf(&[false, false]).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.asf(&[true, false]).unwrap(), 3.0, epsilon = 1e-10);

        let report = audit(&data, Scheme::Discrete, &CellRules::default()).unwrap();
        assert!(!report.identified());
        assert_eq!(report.cells[1].reason, Some(Reason::GpsSumAtOne));
        assert_eq!(report.cells[0].verdict, Verdict::Identified);
        assert_abs_diff_eq!(report.failing_mass, 0.5);
    }

    #[test]
    fn all_trimmed_is_an_error() {
        let rows: Vec<_> = (0..10).map(|i| obs(1.0, 1 + i % 2, 2, "a")).collect();
        let data = Dataset::new(2, TreatmentMode::Exclusive, rows).unwrap();
        assert_eq!(
            estimate_asf(&data, Scheme::Discrete, &CellRules::default()),
            Err(Error::NotIdentifiedEverywhere)
        );
    }

    #[test]
    fn audit_insufficient_data() {
        let rows = vec![
            obs(1.0, 0, 1, "a"),
            obs(2.0, 1, 1, "a"),
            obs(1.5, 0, 1, "a"),
        ];
        let data = Dataset::new(1, TreatmentMode::Exclusive, rows).unwrap();
        let rules = CellRules {
            min_cell_size: Some(10),
            ..CellRules::default()
        };
        let report = audit(&data, Scheme::Discrete, &rules).unwrap();
        assert_eq!(report.cells[0].reason, Some(Reason::InsufficientData));
    }

    #[test]
    fn general_mode_reports_no_gps() {
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let x = vec![i % 2 == 0, i % 4 < 2];
                let y = 1.0 + 2.0 * x[0] as u8 as f64 + 3.0 * x[1] as u8 as f64;
                Observation {
                    y,
                    x,
                    v: Control::Label("a".into()),
                }
            })
            .collect();
        let data = Dataset::new(2, TreatmentMode::General, rows).unwrap();
        let report = audit(&data, Scheme::Discrete, &CellRules::default()).unwrap();
        assert!(report.identified());
        assert_eq!(report.cells[0].gps, None);
        let est = estimate_asf(&data, Scheme::Discrete, &CellRules::default()).unwrap();
        assert_abs_diff_eq!(est.ate[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.ate[1], 3.0, epsilon = 1e-10);
    }
}
