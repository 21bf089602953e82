use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether at most one treatment may be on per unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentMode {
    #[default]
    Exclusive,
    General,
}

impl std::fmt::Display for TreatmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TreatmentMode::Exclusive => "exclusive",
            TreatmentMode::General => "general",
        })
    }
}

/// Observed control value: a discrete label or a point in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Label(String),
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub x: Vec<bool>,
    pub v: Control,
}

impl Observation {
    /// Index of the active treatment (1-based) or 0 when untreated. Only
    /// meaningful for exclusive profiles.
    pub fn treatment_index(&self) -> usize {
        self.x.iter().position(|&on| on).map_or(0, |t| t + 1)
    }
}

/// A validated sample of `(Y, X, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    treatments: usize,
    mode: TreatmentMode,
    rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(treatments: usize, mode: TreatmentMode, rows: Vec<Observation>) -> Result<Self> {
        if treatments == 0 {
            return Err(Error::NoTreatments);
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let control_dim = match &rows[0].v {
            Control::Label(_) => None,
            Control::Point(p) => Some(p.len()),
        };
        for (i, row) in rows.iter().enumerate() {
            let bad = |msg: String| Error::InvalidRow { row: i, msg };
            if !row.y.is_finite() {
                return Err(bad("outcome is not finite".into()));
            }
            if row.x.len() != treatments {
                return Err(bad(format!(
                    "{} treatment indicators, expected {treatments}",
                    row.x.len()
                )));
            }
            if mode == TreatmentMode::Exclusive && row.x.iter().filter(|&&on| on).count() > 1 {
                return Err(bad("more than one treatment in exclusive mode".into()));
            }
            match (&row.v, control_dim) {
                (Control::Label(_), None) => {}
                (Control::Point(p), Some(d)) if p.len() == d => {
                    if p.iter().any(|c| !c.is_finite()) {
                        return Err(bad("control value is not finite".into()));
                    }
                    if d == 0 {
                        return Err(bad("empty control vector".into()));
                    }
                }
                _ => return Err(bad("control kind or dimension differs from row 0".into())),
            }
        }
        Ok(Self {
            treatments,
            mode,
            rows,
        })
    }

    pub fn treatments(&self) -> usize {
        self.treatments
    }

    pub fn mode(&self) -> TreatmentMode {
        self.mode
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `None` for labelled controls, else the dimension of `V`.
    pub fn control_dim(&self) -> Option<usize> {
        match &self.rows[0].v {
            Control::Label(_) => None,
            Control::Point(p) => Some(p.len()),
        }
    }

    /// Same observations with the treatment indices relabelled: new
    /// treatment `t` is old treatment `perm[t]`.
    pub fn permute_treatments(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.treatments {
            return Err(Error::DimensionMismatch {
                expected: self.treatments,
                found: perm.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|r| Observation {
                y: r.y,
                x: perm.iter().map(|&p| r.x[p]).collect(),
                v: r.v.clone(),
            })
            .collect();
        Self::new(self.treatments, self.mode, rows)
    }
}
