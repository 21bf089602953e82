//! Identification verdicts over a collection of control cells.
//!
//! A cell stands for one value (or bin) of the control variable `V`, carrying
//! its probability mass and the conditional distribution of the treatments.
//! "With probability one" becomes "in every cell of positive weight".

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    conditional_variance, extreme_eigenvalues, is_singular, is_singular_with,
    moment_matrix_from_gps, moment_matrix_from_joint, null_space_direction, smallest_eigenvalue,
    GpsVector, JointDistribution, MomentMatrix, COMPONENT_ZERO_TOL, PROB_SUM_TOL, SINGULAR_RTOL,
};
use crate::error::{Error, Result};

/// Tolerance on the total cell weight.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Why a cell fails identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    SingularMomentMatrix,
    ZeroGps,
    GpsSumAtOne,
    InsufficientData,
}

impl Reason {
    pub const ALL: [Reason; 4] = [
        Reason::SingularMomentMatrix,
        Reason::ZeroGps,
        Reason::GpsSumAtOne,
        Reason::InsufficientData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::SingularMomentMatrix => "SINGULAR_MOMENT_MATRIX",
            Reason::ZeroGps => "ZERO_GPS",
            Reason::GpsSumAtOne => "GPS_SUM_AT_ONE",
            Reason::InsufficientData => "INSUFFICIENT_DATA",
        }
    }
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Conditional treatment distribution within a cell.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentDist {
    /// Mutually exclusive treatments described by their propensity scores.
    Exclusive(GpsVector),
    /// Arbitrary joint distribution over `{0,1}^T`.
    Joint(JointDistribution),
    /// A moment matrix given directly.
    Moments(MomentMatrix),
}

impl TreatmentDist {
    pub fn treatments(&self) -> usize {
        match self {
            TreatmentDist::Exclusive(g) => g.treatments(),
            TreatmentDist::Joint(j) => j.treatments(),
            TreatmentDist::Moments(m) => m.treatments(),
        }
    }

    pub fn moment_matrix(&self) -> MomentMatrix {
        match self {
            TreatmentDist::Exclusive(g) => moment_matrix_from_gps(g),
            TreatmentDist::Joint(j) => moment_matrix_from_joint(j),
            TreatmentDist::Moments(m) => m.clone(),
        }
    }

    pub fn gps(&self) -> Option<&GpsVector> {
        match self {
            TreatmentDist::Exclusive(g) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDistribution {
    pub cell_id: String,
    pub weight: f64,
    pub treatment: TreatmentDist,
}

impl CellDistribution {
    pub fn new(cell_id: impl Into<String>, weight: f64, treatment: TreatmentDist) -> Self {
        Self {
            cell_id: cell_id.into(),
            weight,
            treatment,
        }
    }

    pub fn exclusive(cell_id: impl Into<String>, weight: f64, gps: GpsVector) -> Self {
        Self::new(cell_id, weight, TreatmentDist::Exclusive(gps))
    }
}

/// Per-cell numbers behind a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub lambda_min: f64,
    pub gps_sum: Option<f64>,
    pub min_gps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationVerdict {
    pub identified: bool,
    /// Sorted by cell id.
    pub failing_cells: Vec<(String, Reason)>,
    pub per_cell: BTreeMap<String, CellDiagnostics>,
}

impl IdentificationVerdict {
    fn from_parts(
        failing_cells: Vec<(String, Reason)>,
        per_cell: BTreeMap<String, CellDiagnostics>,
    ) -> Self {
        Self {
            identified: failing_cells.is_empty(),
            failing_cells,
            per_cell,
        }
    }
}

/// Coefficient means `q(v)`, one vector of length `T+1` per cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QFunction {
    pub values: BTreeMap<String, Vec<f64>>,
}

impl QFunction {
    pub fn new(values: BTreeMap<String, Vec<f64>>) -> Self {
        Self { values }
    }

    /// The same vector in every cell.
    pub fn constant(cells: &[CellDistribution], q: &[f64]) -> Self {
        Self {
            values: cells
                .iter()
                .map(|c| (c.cell_id.clone(), q.to_vec()))
                .collect(),
        }
    }

    pub fn get(&self, cell_id: &str) -> Result<&[f64]> {
        self.values
            .get(cell_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingCell(cell_id.to_string()))
    }

    /// `E[q(V)] = sum_v weight(v) q(v)`.
    pub fn mean(&self, cells: &[CellDistribution]) -> Result<Vec<f64>> {
        let dim = cells[0].treatment.treatments() + 1;
        let mut acc = vec![0.0; dim];
        for cell in sorted(cells) {
            let q = self.get(&cell.cell_id)?;
            check_len(q, dim)?;
            for (a, x) in acc.iter_mut().zip(q) {
                *a += cell.weight * x;
            }
        }
        Ok(acc)
    }
}

fn check_len(q: &[f64], dim: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.len(),
        });
    }
    Ok(())
}

fn sorted(cells: &[CellDistribution]) -> Vec<&CellDistribution> {
    let mut v: Vec<_> = cells.iter().collect();
    v.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    v
}

/// Checks that the cells form a valid collection: nonempty, unique ids, a
/// common number of treatments and weights summing to one.
pub fn validate_cells(cells: &[CellDistribution]) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::NoCells);
    }
    let t = cells[0].treatment.treatments();
    let mut ids = BTreeSet::new();
    let mut total = 0.0;
    for cell in cells {
        if !ids.insert(cell.cell_id.as_str()) {
            return Err(Error::DuplicateCell(cell.cell_id.clone()));
        }
        if !(0.0..=1.0).contains(&cell.weight) {
            return Err(Error::BadWeight(cell.cell_id.clone()));
        }
        let ct = cell.treatment.treatments();
        if ct != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                found: ct,
            });
        }
        total += cell.weight;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::BadWeights(total));
    }
    Ok(())
}

fn gps_stats(dist: &TreatmentDist) -> (Option<f64>, Option<f64>) {
    match dist.gps() {
        Some(g) => (Some(g.sum()), Some(g.min())),
        None => (None, None),
    }
}

/// Conditional nonsingularity of `E[p(X)p(X)'|V]`: a positive-weight cell
/// fails when `lambda_min <= dim * lambda_max * 1e-10` or `lambda_min < overlap_delta`.
pub fn verdict_eigen(
    cells: &[CellDistribution],
    overlap_delta: f64,
) -> Result<IdentificationVerdict> {
    validate_cells(cells)?;
    let mut failing = Vec::new();
    let mut per_cell = BTreeMap::new();
    for cell in sorted(cells) {
        let m = cell.treatment.moment_matrix();
        let lambda_min = smallest_eigenvalue(&m);
        if cell.weight > 0.0 && (is_singular(&m) || lambda_min < overlap_delta) {
            failing.push((cell.cell_id.clone(), Reason::SingularMomentMatrix));
        }
        let (gps_sum, min_gps) = gps_stats(&cell.treatment);
        per_cell.insert(
            cell.cell_id.clone(),
            CellDiagnostics {
                lambda_min,
                gps_sum,
                min_gps,
            },
        );
    }
    Ok(IdentificationVerdict::from_parts(failing, per_cell))
}

/// Nonsingularity of `var(X | V)` in every positive-weight cell, judged with
/// the same relative threshold as the moment matrix.
pub fn verdict_variance(cells: &[CellDistribution]) -> Result<IdentificationVerdict> {
    validate_cells(cells)?;
    let mut failing = Vec::new();
    let mut per_cell = BTreeMap::new();
    for cell in sorted(cells) {
        let var = conditional_variance(&cell.treatment.moment_matrix());
        let (lambda_min, _) = extreme_eigenvalues(&var);
        if cell.weight > 0.0 && is_singular_with(&var, SINGULAR_RTOL) {
            failing.push((cell.cell_id.clone(), Reason::SingularMomentMatrix));
        }
        let (gps_sum, min_gps) = gps_stats(&cell.treatment);
        per_cell.insert(
            cell.cell_id.clone(),
            CellDiagnostics {
                lambda_min,
                gps_sum,
                min_gps,
            },
        );
    }
    Ok(IdentificationVerdict::from_parts(failing, per_cell))
}

/// Overlap rule for exclusive scores: `ZeroGps` when some score is below
/// `delta` (or not positive), `GpsSumAtOne` when the sum exceeds `1 - delta`
/// (or reaches one within rounding).
pub fn overlap_reason(gps: &GpsVector, overlap_delta: f64) -> Option<Reason> {
    let min = gps.min();
    let sum = gps.sum();
    if min < overlap_delta || min <= 0.0 {
        Some(Reason::ZeroGps)
    } else if sum > 1.0 - overlap_delta || sum >= 1.0 - PROB_SUM_TOL {
        Some(Reason::GpsSumAtOne)
    } else {
        None
    }
}

/// Generalized-propensity-score verdict for mutually exclusive treatments.
pub fn verdict_overlap(
    cells: &[CellDistribution],
    overlap_delta: f64,
) -> Result<IdentificationVerdict> {
    validate_cells(cells)?;
    let mut failing = Vec::new();
    let mut per_cell = BTreeMap::new();
    for cell in sorted(cells) {
        let gps = cell
            .treatment
            .gps()
            .ok_or_else(|| Error::NotExclusiveMode(cell.cell_id.clone()))?;
        if cell.weight > 0.0 {
            if let Some(reason) = overlap_reason(gps, overlap_delta) {
                failing.push((cell.cell_id.clone(), reason));
            }
        }
        per_cell.insert(
            cell.cell_id.clone(),
            CellDiagnostics {
                lambda_min: smallest_eigenvalue(&moment_matrix_from_gps(gps)),
                gps_sum: Some(gps.sum()),
                min_gps: Some(gps.min()),
            },
        );
    }
    Ok(IdentificationVerdict::from_parts(failing, per_cell))
}

/// Runs the eigenvalue, conditional-variance and score-sum verdicts with
/// numeric thresholds only and reports whether all three agree.
pub fn verdicts_agree(cells: &[CellDistribution]) -> Result<bool> {
    validate_cells(cells)?;
    for cell in cells {
        let gps = cell
            .treatment
            .gps()
            .ok_or_else(|| Error::NotExclusiveMode(cell.cell_id.clone()))?;
        if gps.min() <= 0.0 {
            return Err(Error::ZeroScore {
                cell: cell.cell_id.clone(),
            });
        }
    }
    let by_eigen = verdict_eigen(cells, 0.0)?.identified;
    let by_variance = verdict_variance(cells)?.identified;
    let by_sum = verdict_overlap(cells, 0.0)?.identified;
    Ok(by_eigen == by_variance && by_variance == by_sum)
}

/// Builds an observationally equivalent `q_bar != q0` with a different mean
/// whenever some positive-weight cell has a singular moment matrix.
///
/// In each singular cell take a unit null-space direction `d(v)`. Pick the
/// smallest coordinate `j` that is non-zero in some such cell, keep the
/// perturbation only where `d_j(v) != 0`, and flip its sign there so that
/// `d_j(v) > 0`. Every coordinate-`j` contribution to `E[q_bar - q0]` is then
/// positive, so the means differ, while `M(v) d(v) = 0` leaves `E[Y|X,V]` unchanged.
pub fn construct_equivalent_q(
    cells: &[CellDistribution],
    q0: &QFunction,
) -> Result<Option<QFunction>> {
    validate_cells(cells)?;
    let dim = cells[0].treatment.treatments() + 1;
    for cell in cells {
        check_len(q0.get(&cell.cell_id)?, dim)?;
    }

    let directions: Vec<(&CellDistribution, DVector<f64>)> = sorted(cells)
        .into_iter()
        .filter(|c| c.weight > 0.0)
        .filter_map(|c| null_space_direction(&c.treatment.moment_matrix()).map(|d| (c, d)))
        .collect();

    let Some(coord) = (0..dim).find(|&j| {
        directions
            .iter()
            .any(|(_, d)| d[j].abs() > COMPONENT_ZERO_TOL)
    }) else {
        return Ok(None);
    };

    let mut q_bar = q0.clone();
    for (cell, d) in directions {
        if d[coord].abs() <= COMPONENT_ZERO_TOL {
            continue;
        }
        let scale = d[coord].signum() / d.norm();
        let q = q_bar.values.get_mut(&cell.cell_id).expect("checked above");
        for (qi, di) in q.iter_mut().zip(d.iter()) {
            *qi += scale * di;
        }
    }
    Ok(Some(q_bar))
}

/// `sum_v weight(v) (qa(v) - qb(v))' M(v) (qa(v) - qb(v))`, the mean squared
/// gap between the control regressions implied by `qa` and `qb`.
pub fn observational_distance(
    cells: &[CellDistribution],
    qa: &QFunction,
    qb: &QFunction,
) -> Result<f64> {
    Ok(rayleigh_gap(cells, qa, qb)?.0)
}

/// `(lhs, rhs)` of the Rayleigh bound: `lhs` is the observational distance and
/// `rhs = sum_v weight ||qa - qb||^2 max(lambda_min, 0)`. Always `lhs >= rhs`
/// up to rounding.
pub fn rayleigh_gap(
    cells: &[CellDistribution],
    qa: &QFunction,
    qb: &QFunction,
) -> Result<(f64, f64)> {
    validate_cells(cells)?;
    let dim = cells[0].treatment.treatments() + 1;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for cell in sorted(cells) {
        let a = qa.get(&cell.cell_id)?;
        let b = qb.get(&cell.cell_id)?;
        check_len(a, dim)?;
        check_len(b, dim)?;
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let m = cell.treatment.moment_matrix();
        let norm2: f64 = diff.iter().map(|x| x * x).sum();
        lhs += cell.weight * m.quadratic_form(&diff);
        rhs += cell.weight * norm2 * smallest_eigenvalue(&m).max(0.0);
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cell(id: &str, w: f64, p: &[f64]) -> CellDistribution {
        CellDistribution::exclusive(id, w, GpsVector::new(p.to_vec()).unwrap())
    }

    #[test]
    fn eigen_verdict_examples() {
        let cells = [cell("a", 0.5, &[0.3, 0.2]), cell("b", 0.5, &[0.1, 0.4])];
        let v = verdict_eigen(&cells, 0.0).unwrap();
        assert!(v.identified);
        assert!(v.per_cell["b"].lambda_min > 0.0);

        let cells = [cell("a", 0.5, &[0.3, 0.2]), cell("b", 0.5, &[0.5, 0.5])];
        let v = verdict_eigen(&cells, 0.0).unwrap();
        assert!(!v.identified);
        assert_eq!(
            v.failing_cells,
            vec![("b".to_string(), Reason::SingularMomentMatrix)]
        );

        let v = verdict_eigen(&[cell("only", 1.0, &[0.0])], 0.0).unwrap();
        assert!(!v.identified);
        assert_eq!(verdict_eigen(&[], 0.0), Err(Error::NoCells));
    }

    #[test]
    fn zero_weight_cells_are_ignored() {
        let cells = [cell("a", 1.0, &[0.3, 0.2]), cell("b", 0.0, &[0.5, 0.5])];
        assert!(verdict_eigen(&cells, 0.0).unwrap().identified);
        assert!(verdict_overlap(&cells, 0.01).unwrap().identified);
        let q0 = QFunction::constant(&cells, &[1.0, 2.0, 3.0]);
        assert_eq!(construct_equivalent_q(&cells, &q0).unwrap(), None);
    }

    #[test]
    fn overlap_verdict_examples() {
        let v = verdict_overlap(&[cell("a", 1.0, &[0.3, 0.3])], 0.01).unwrap();
        assert!(v.identified);
        assert_abs_diff_eq!(v.per_cell["a"].gps_sum.unwrap(), 0.6, epsilon = 1e-15);

        let v = verdict_overlap(&[cell("a", 1.0, &[0.5, 0.5])], 0.01).unwrap();
        assert_eq!(v.failing_cells, vec![("a".into(), Reason::GpsSumAtOne)]);

        let v = verdict_overlap(&[cell("a", 1.0, &[0.0, 0.3])], 0.01).unwrap();
        assert_eq!(v.failing_cells, vec![("a".into(), Reason::ZeroGps)]);
        assert_eq!(v.per_cell["a"].min_gps, Some(0.0));

        let joint = CellDistribution::new(
            "j",
            1.0,
            TreatmentDist::Joint(JointDistribution::from_gps(
                &GpsVector::new(vec![0.2]).unwrap(),
            )),
        );
        assert_eq!(
            verdict_overlap(&[joint], 0.01),
            Err(Error::NotExclusiveMode("j".into()))
        );
    }

    #[test]
    fn verdicts_agree_examples() {
        assert!(verdicts_agree(&[cell("a", 1.0, &[0.5, 0.5])]).unwrap());
        assert!(
            !verdict_eigen(&[cell("a", 1.0, &[0.5, 0.5])], 0.0)
                .unwrap()
                .identified
        );
        assert!(verdicts_agree(&[cell("a", 1.0, &[0.2, 0.2])]).unwrap());
        assert!(
            verdict_variance(&[cell("a", 1.0, &[0.2, 0.2])])
                .unwrap()
                .identified
        );
        assert_eq!(
            verdicts_agree(&[cell("a", 1.0, &[0.0, 0.2])]),
            Err(Error::ZeroScore { cell: "a".into() })
        );
    }

    #[test]
    fn equivalent_q_single_singular_cell() {
        let cells = [cell("a", 1.0, &[0.5, 0.5])];
        let q0 = QFunction::constant(&cells, &[1.0, 2.0, 3.0]);
        let q_bar = construct_equivalent_q(&cells, &q0).unwrap().unwrap();
        let s = 3f64.sqrt();
        let expected = [1.0 + 1.0 / s, 2.0 - 1.0 / s, 3.0 - 1.0 / s];
        for (g, e) in q_bar.get("a").unwrap().iter().zip(expected) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
        assert!(observational_distance(&cells, &q_bar, &q0).unwrap() <= 1e-12);
    }

    #[test]
    fn equivalent_q_two_cells() {
        let cells = [cell("a", 0.5, &[0.3, 0.2]), cell("b", 0.5, &[0.5, 0.5])];
        let q0 = QFunction::constant(&cells, &[1.0, 2.0, 3.0]);
        let q_bar = construct_equivalent_q(&cells, &q0).unwrap().unwrap();
        assert_eq!(q_bar.get("a").unwrap(), q0.get("a").unwrap());
        assert_ne!(q_bar.get("b").unwrap(), q0.get("b").unwrap());

        let mean_bar = q_bar.mean(&cells).unwrap();
        let mean_0 = q0.mean(&cells).unwrap();
        let s = 3f64.sqrt();
        for (j, want) in [1.0 / s, -1.0 / s, -1.0 / s].iter().enumerate() {
            assert_abs_diff_eq!(mean_bar[j] - mean_0[j], 0.5 * want, epsilon = 1e-12);
        }
        assert!(observational_distance(&cells, &q_bar, &q0).unwrap() <= 1e-12);

        let fine = [cell("a", 0.5, &[0.3, 0.2]), cell("b", 0.5, &[0.1, 0.4])];
        let q0 = QFunction::constant(&fine, &[1.0, 2.0, 3.0]);
        assert_eq!(construct_equivalent_q(&fine, &q0).unwrap(), None);
    }

    #[test]
    fn observational_distance_examples() {
        let cells = [cell("a", 0.3, &[0.3, 0.2]), cell("b", 0.7, &[0.1, 0.4])];
        let qa = QFunction::constant(&cells, &[1.0, 2.0, 3.0]);
        assert_eq!(observational_distance(&cells, &qa, &qa).unwrap(), 0.0);
        assert_eq!(rayleigh_gap(&cells, &qa, &qa).unwrap(), (0.0, 0.0));

        let qb = QFunction::constant(&cells, &[0.0, 2.0, 3.0]);
        assert_abs_diff_eq!(
            observational_distance(&cells, &qa, &qb).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        let missing = QFunction::default();
        assert_eq!(
            observational_distance(&cells, &qa, &missing),
            Err(Error::MissingCell("a".into()))
        );
    }

    #[test]
    fn rayleigh_bound_tight_on_identity() {
        let cells = [CellDistribution::new(
            "a",
            1.0,
            TreatmentDist::Moments(MomentMatrix::identity(2).unwrap()),
        )];
        let qa = QFunction::constant(&cells, &[1.0, 1.0]);
        let qb = QFunction::constant(&cells, &[0.0, 0.0]);
        let (lhs, rhs) = rayleigh_gap(&cells, &qa, &qb).unwrap();
        assert_abs_diff_eq!(lhs, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rhs, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn collection_validation() {
        let bad = [cell("a", 0.5, &[0.3]), cell("b", 0.4, &[0.3])];
        assert!(matches!(validate_cells(&bad), Err(Error::BadWeights(_))));
        let dup = [cell("a", 0.5, &[0.3]), cell("a", 0.5, &[0.3])];
        assert_eq!(validate_cells(&dup), Err(Error::DuplicateCell("a".into())));
        let mixed = [cell("a", 0.5, &[0.3]), cell("b", 0.5, &[0.3, 0.1])];
        assert!(matches!(
            validate_cells(&mixed),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reason_strings() {
        for r in Reason::ALL {
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.as_str()));
        }
    }
}
