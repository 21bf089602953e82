//! Discretization of the control variable into cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Control, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One cell per distinct label.
    Discrete,
    /// `k` empirical-quantile bins per control coordinate.
    QuantileBins { k: usize },
}

/// Cell id to the (ascending) row indices it contains.
pub type Partition = BTreeMap<String, Vec<usize>>;

pub fn partition_controls(data: &Dataset, scheme: Scheme) -> Result<Partition> {
    match scheme {
        Scheme::Discrete => discrete(data),
        Scheme::QuantileBins { k } => quantile(data, k),
    }
}

fn discrete(data: &Dataset) -> Result<Partition> {
    let mut cells = Partition::new();
    for (i, row) in data.rows().iter().enumerate() {
        match &row.v {
            Control::Label(label) => cells.entry(label.clone()).or_default().push(i),
            Control::Point(_) => {
                return Err(Error::Scheme(
                    "discrete scheme needs labelled controls".into(),
                ))
            }
        }
    }
    Ok(cells)
}

/// Upper cut points of the lower `k - 1` bins: the `j/k` empirical quantile
/// `sorted[ceil(j n / k) - 1]`. A value equal to a cut point falls in the
/// lower bin.
fn cut_points(values: &mut [f64], k: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    (1..k).map(|j| values[(j * n).div_ceil(k) - 1]).collect()
}

fn bin_of(x: f64, cuts: &[f64]) -> usize {
    cuts.partition_point(|&c| c < x)
}

fn quantile(data: &Dataset, k: usize) -> Result<Partition> {
    if k < 2 {
        return Err(Error::Scheme(format!("need at least 2 bins, got {k}")));
    }
    let Some(dim) = data.control_dim() else {
        return Err(Error::Scheme(
            "quantile bins need real-valued controls".into(),
        ));
    };
    let points: Vec<&[f64]> = data
        .rows()
        .iter()
        .map(|r| match &r.v {
            Control::Point(p) => p.as_slice(),
            Control::Label(_) => unreachable!("dataset controls are homogeneous"),
        })
        .collect();

    let mut cuts = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut col: Vec<f64> = points.iter().map(|p| p[c]).collect();
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < k {
            return Err(Error::TooManyBins {
                coordinate: c + 1,
                distinct: distinct.len(),
                bins: k,
            });
        }
        cuts.push(cut_points(&mut col, k));
    }

    let width = (k - 1).to_string().len();
    let mut cells = Partition::new();
    for (i, p) in points.iter().enumerate() {
        let id = p
            .iter()
            .zip(&cuts)
            .map(|(&x, c)| format!("q{:0width$}", bin_of(x, c)))
            .collect::<Vec<_>>()
            .join("_");
        cells.entry(id).or_default().push(i);
    }
    Ok(cells)
}
