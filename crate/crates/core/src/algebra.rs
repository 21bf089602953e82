//! Linear algebra on the design vector `p(X) = (1, X(1), ..., X(T))'` and on
//! conditional second-moment matrices `E[p(X)p(X)' | V = v]`.
//!
//! All matrices here are tiny, `(T+1) x (T+1)`, and are built symmetric by
//! construction. Singularity is always judged relative to the largest
//! eigenvalue so the tests are scale free.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for calling an exact (distribution-derived) matrix
/// singular: `lambda_min <= dim * lambda_max * SINGULAR_RTOL`.
pub const SINGULAR_RTOL: f64 = 1e-10;

/// Slack allowed when checking that probabilities sum to at most (or exactly) one.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Components of a unit vector smaller than this are treated as zero.
pub const COMPONENT_ZERO_TOL: f64 = 1e-10;

/// The design vector `p(x)` for one treatment profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector {
    entries: Vec<f64>,
}

impl DesignVector {
    pub fn from_profile(profile: &[bool]) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::NoTreatments);
        }
        let mut entries = Vec::with_capacity(profile.len() + 1);
        entries.push(1.0);
        entries.extend(profile.iter().map(|&on| if on { 1.0 } else { 0.0 }));
        Ok(Self { entries })
    }

    /// `p(0_T)`: nobody treated.
    pub fn untreated(treatments: usize) -> Result<Self> {
        Self::from_profile(&vec![false; treatments])
    }

    /// `p(e_t)` with `t` zero-based.
    pub fn sole_treatment(treatments: usize, t: usize) -> Result<Self> {
        if t >= treatments {
            return Err(Error::DimensionMismatch {
                expected: treatments,
                found: t + 1,
            });
        }
        let mut profile = vec![false; treatments];
        profile[t] = true;
        Self::from_profile(&profile)
    }

    pub fn treatments(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_exclusive(&self) -> bool {
        self.entries[1..].iter().sum::<f64>() <= 1.0
    }

    pub fn dot(&self, coef: &[f64]) -> f64 {
        self.entries.iter().zip(coef).map(|(a, b)| a * b).sum()
    }
}

/// Generalized propensity scores `(Pr[X(1)=1|v], ..., Pr[X(T)=1|v])` for
/// mutually exclusive treatments. The leftover mass `1 - sum` is the untreated state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GpsVector {
    probs: Vec<f64>,
}

impl GpsVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NoTreatments);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ScoreOutOfRange { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + PROB_SUM_TOL {
            return Err(Error::NotExclusive { sum });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn treatments(&self) -> usize {
        self.probs.len()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Probability of the untreated state `0_T`.
    pub fn untreated(&self) -> f64 {
        (1.0 - self.sum()).max(0.0)
    }
}

impl TryFrom<Vec<f64>> for GpsVector {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<GpsVector> for Vec<f64> {
    fn from(g: GpsVector) -> Self {
        g.probs
    }
}

/// A probability distribution over treatment profiles in `{0,1}^T`.
/// Profiles absent from the map have probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    treatments: usize,
    probs: BTreeMap<Vec<bool>, f64>,
}

impl JointDistribution {
    pub fn new(treatments: usize, probs: BTreeMap<Vec<bool>, f64>) -> Result<Self> {
        if treatments == 0 {
            return Err(Error::NoTreatments);
        }
        let mut sum = 0.0;
        for (profile, &p) in &probs {
            if profile.len() != treatments {
                return Err(Error::ProfileLength {
                    expected: treatments,
                    found: profile.len(),
                });
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::BadProbability {
                    profile: profile.clone(),
                    value: p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self { treatments, probs })
    }

    /// The distribution induced by exclusive propensity scores: mass `p_t` on
    /// `e_t` and the remainder on `0_T`.
    pub fn from_gps(gps: &GpsVector) -> Self {
        let t = gps.treatments();
        let mut probs = BTreeMap::new();
        probs.insert(vec![false; t], gps.untreated());
        for (i, &p) in gps.probs().iter().enumerate() {
            let mut profile = vec![false; t];
            profile[i] = true;
            probs.insert(profile, p);
        }
        Self {
            treatments: t,
            probs,
        }
    }

    pub fn treatments(&self) -> usize {
        self.treatments
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<bool>, f64)> {
        self.probs.iter().map(|(k, &v)| (k, v))
    }

    /// True when every profile with positive mass has at most one treatment on.
    pub fn is_exclusive(&self) -> bool {
        self.probs
            .iter()
            .all(|(profile, &p)| p == 0.0 || profile.iter().filter(|&&on| on).count() <= 1)
    }
}

/// The symmetric `(T+1) x (T+1)` matrix `E[p(X)p(X)' | V = v]`. Row and column
/// zero hold the intercept block.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    values: DMatrix<f64>,
}

impl MomentMatrix {
    /// Builds a moment matrix from explicit rows. The rows must be square,
    /// exactly symmetric, finite, at least 2x2, with a unit intercept entry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim < 2 {
            return Err(Error::NoTreatments);
        }
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("moment matrix"));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for j in (i + 1)..dim {
                if row[j] != rows[j][i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        if rows[0][0] != 1.0 {
            return Err(Error::BadIntercept(rows[0][0]));
        }
        Ok(Self {
            values: DMatrix::from_fn(dim, dim, |i, j| rows[i][j]),
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::NoTreatments);
        }
        Ok(Self {
            values: DMatrix::identity(dim, dim),
        })
    }

    /// Builds `(1/n) sum_i p(x_i) p(x_i)'` from raw upper-triangle sums.
    /// `sums` must hold the symmetric sum of outer products and `n > 0`.
    pub(crate) fn from_outer_sum(sums: DMatrix<f64>, n: usize) -> Self {
        let dim = sums.nrows();
        let inv = 1.0 / n as f64;
        let mut values = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = sums[(i, j)] * inv;
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        // the intercept entry is n/n
        values[(0, 0)] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn treatments(&self) -> usize {
        self.dim() - 1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.values[(i, j)]).collect())
            .collect()
    }

    /// `d' M d`.
    pub fn quadratic_form(&self, d: &[f64]) -> f64 {
        let v = DVector::from_column_slice(d);
        (v.transpose() * &self.values * &v)[(0, 0)]
    }
}

impl Serialize for MomentMatrix {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

/// `[[1, p'], [p, diag(p)]]` for exclusive treatments.
pub fn moment_matrix_from_gps(gps: &GpsVector) -> MomentMatrix {
    let p = gps.probs();
    let dim = p.len() + 1;
    let mut values = DMatrix::zeros(dim, dim);
    values[(0, 0)] = 1.0;
    for (t, &pt) in p.iter().enumerate() {
        values[(0, t + 1)] = pt;
        values[(t + 1, 0)] = pt;
        values[(t + 1, t + 1)] = pt;
    }
    MomentMatrix { values }
}

/// `sum_x Pr[x] p(x) p(x)'` over the support of `dist`.
pub fn moment_matrix_from_joint(dist: &JointDistribution) -> MomentMatrix {
    let dim = dist.treatments() + 1;
    let mut values = DMatrix::zeros(dim, dim);
    for (profile, prob) in dist.iter() {
        if prob == 0.0 {
            continue;
        }
        // p(x) has a 1 in slot 0 and in slot t+1 for every active treatment
        let active: Vec<usize> = std::iter::once(0)
            .chain(
                profile
                    .iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(t, _)| t + 1),
            )
            .collect();
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a..] {
                values[(i, j)] += prob;
            }
        }
    }
    // probabilities sum to one only within tolerance; pin the intercept
    values[(0, 0)] = 1.0;
    for i in 0..dim {
        for j in (i + 1)..dim {
            values[(j, i)] = values[(i, j)];
        }
    }
    MomentMatrix { values }
}

/// Eigenvalues in ascending order with matching eigenvectors as columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let (values, _) = symmetric_eigen(m);
    (values[0], values[values.len() - 1])
}

pub fn smallest_eigenvalue(m: &MomentMatrix) -> f64 {
    extreme_eigenvalues(m.as_matrix()).0
}

/// Scale-free singularity test for a symmetric PSD matrix.
pub fn is_singular_with(m: &DMatrix<f64>, rtol: f64) -> bool {
    let (lo, hi) = extreme_eigenvalues(m);
    lo <= m.nrows() as f64 * hi.max(0.0) * rtol
}

pub fn is_singular(m: &MomentMatrix) -> bool {
    is_singular_with(m.as_matrix(), SINGULAR_RTOL)
}

/// Schur complement of the intercept entry: `E[XX'|v] - E[X|v]E[X'|v]`,
/// i.e. `var(X | V = v)`.
pub fn conditional_variance(m: &MomentMatrix) -> DMatrix<f64> {
    let t = m.treatments();
    let mut var = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let v = m.get(i + 1, j + 1) - m.get(0, i + 1) * m.get(0, j + 1);
            var[(i, j)] = v;
            var[(j, i)] = v;
        }
    }
    var
}

/// Schur complement of the diagonal treatment block, `1 - sum_t E[X(t)|v]`
/// for exclusive treatments.
pub fn schur_complement_of_diag_block(m: &MomentMatrix) -> Result<f64> {
    let dim = m.dim();
    for i in 1..dim {
        for j in (i + 1)..dim {
            if m.get(i, j) != 0.0 {
                return Err(Error::NotDiagonalBlock { row: i, col: j });
            }
        }
    }
    let mut complement = m.get(0, 0);
    for t in 1..dim {
        let d = m.get(t, t);
        if d <= 0.0 {
            return Err(Error::ZeroDiagonal { index: t - 1 });
        }
        let c = m.get(0, t);
        complement -= c * c / d;
    }
    Ok(complement)
}

/// A unit vector `d` with `M d ~ 0` when `M` is singular, sign fixed so that
/// the first non-negligible component is positive.
pub fn null_space_direction(m: &MomentMatrix) -> Option<DVector<f64>> {
    let (values, vectors) = symmetric_eigen(m.as_matrix());
    let lo = values[0];
    let hi = values[values.len() - 1].max(0.0);
    if lo > m.dim() as f64 * hi * SINGULAR_RTOL {
        return None;
    }
    let mut d: DVector<f64> = vectors.column(0).into_owned();
    d /= d.norm();
    if let Some(first) = d.iter().find(|x| x.abs() > COMPONENT_ZERO_TOL) {
        if *first < 0.0 {
            d = -d;
        }
    }
    Some(d)
}
