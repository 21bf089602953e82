//! Synthetic data from heterogeneous-coefficient models `Y = p(X)' eps` in
//! which `X` depends on the control `V` and on independent uniform draws only,
//! so `E[eps | X, V] = E[eps | V]` holds exactly.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; row `i` uses stream `i`,
//! so rows can be generated in any order and in parallel with identical output.
//! Per row the draws are, in order: the control, one uniform for the
//! treatment, then `T + 1` standard normals for the coefficient noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::GpsVector;
use crate::dataset::{Control, Dataset, Observation, TreatmentMode};
use crate::error::{Error, Result};
use crate::estimation::{audit, estimate_asf, CellRules, Verdict};
use crate::partition::Scheme;

/// Draws used for the Monte Carlo truth under continuous controls.
pub const TRUTH_DRAWS: usize = 1_000_000;
/// Added to the data seed to get the truth seed.
pub const TRUTH_SEED_OFFSET: u64 = 0x7275_7468;
/// Points used to check propensity scores over a continuous support.
pub const PROBE_POINTS: usize = 10_000;
const PROBE_SEED_OFFSET: u64 = 0x7072_6f62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSpec {
    /// `V` takes `weights.len()` labelled values with the given probabilities.
    Discrete { weights: Vec<f64> },
    /// `V ~ Uniform[0, 1]^dim`.
    UniformContinuous { dim: usize },
}

/// A vector-valued function of the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlFn {
    Constant {
        value: Vec<f64>,
    },
    /// One vector per discrete cell.
    PerCell {
        values: Vec<Vec<f64>>,
    },
    /// `intercept + slopes * v` for continuous controls; `slopes` has one row
    /// per output component.
    Linear {
        intercept: Vec<f64>,
        slopes: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum ControlDraw {
    Cell(usize),
    Point(Vec<f64>),
}

impl ControlFn {
    fn len(&self) -> Option<usize> {
        match self {
            ControlFn::Constant { value } => Some(value.len()),
            ControlFn::PerCell { values } => values.first().map(Vec::len),
            ControlFn::Linear { intercept, .. } => Some(intercept.len()),
        }
    }

    fn eval(&self, v: &ControlDraw) -> Vec<f64> {
        match (self, v) {
            (ControlFn::Constant { value }, _) => value.clone(),
            (ControlFn::PerCell { values }, ControlDraw::Cell(k)) => values[*k].clone(),
            (ControlFn::Linear { intercept, slopes }, ControlDraw::Point(p)) => intercept
                .iter()
                .zip(slopes)
                .map(|(a, row)| a + row.iter().zip(p).map(|(b, x)| b * x).sum::<f64>())
                .collect(),
            _ => unreachable!("validated against the control kind"),
        }
    }

    fn check(&self, name: &str, len: usize, control: &ControlSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("{name}: {msg}")));
        if self.len() != Some(len) {
            return bad(format!("components must have length {len}"));
        }
        match (self, control) {
            (ControlFn::Constant { .. }, _) => Ok(()),
            (ControlFn::PerCell { values }, ControlSpec::Discrete { weights }) => {
                if values.len() != weights.len() {
                    return bad(format!(
                        "need {} cells, got {}",
                        weights.len(),
                        values.len()
                    ));
                }
                if values.iter().any(|v| v.len() != len) {
                    return bad(format!("components must have length {len}"));
                }
                Ok(())
            }
            (ControlFn::Linear { slopes, .. }, ControlSpec::UniformContinuous { dim }) => {
                if slopes.len() != len || slopes.iter().any(|r| r.len() != *dim) {
                    return bad(format!("slopes must be {len} x {dim}"));
                }
                Ok(())
            }
            (ControlFn::PerCell { .. }, _) => bad("per-cell values need a discrete control".into()),
            (ControlFn::Linear { .. }, _) => bad("linear form needs a continuous control".into()),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            ControlFn::Constant { value } => value.iter().all(|x| x.is_finite()),
            ControlFn::PerCell { values } => values.iter().flatten().all(|x| x.is_finite()),
            ControlFn::Linear { intercept, slopes } => intercept
                .iter()
                .chain(slopes.iter().flatten())
                .all(|x| x.is_finite()),
        }
    }
}

/// A data generating process with mutually exclusive treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub treatments: usize,
    pub n: usize,
    pub control: ControlSpec,
    /// Generalized propensity scores as a function of `v`.
    pub gps: ControlFn,
    /// `alpha(v) = E[eps | V = v]`, length `T + 1`.
    pub coef_mean: ControlFn,
    pub noise_scale: f64,
    pub seed: u64,
    /// When set, scores are rescaled to sum to this value at every `v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_sum: Option<f64>,
}

impl DgpSpec {
    /// Ten equally likely cells whose slopes alternate between `(1, -2)` and
    /// `(3, 0)`, so the true effects are `(2, -1)`. Scores vary with the cell.
    pub fn heterogeneous(n: usize, seed: u64) -> Self {
        let k = 10;
        let gps = (0..k)
            .map(|c| vec![0.15 + 0.03 * c as f64, 0.35 - 0.02 * c as f64])
            .collect();
        let coef = (0..k)
            .map(|c| {
                let base = c as f64 / 10.0;
                if c % 2 == 0 {
                    vec![base, 1.0, -2.0]
                } else {
                    vec![base, 3.0, 0.0]
                }
            })
            .collect();
        Self {
            treatments: 2,
            n,
            control: ControlSpec::Discrete {
                weights: vec![1.0 / k as f64; k],
            },
            gps: ControlFn::PerCell { values: gps },
            coef_mean: ControlFn::PerCell { values: coef },
            noise_scale: 1.0,
            seed,
            gps_sum: None,
        }
    }

    /// Two equally likely cells with `alpha(0) = (0, 1, -2)` and
    /// `alpha(1) = (0, 3, 0)`; true effects `(2, -1)`.
    pub fn two_cell(n: usize, seed: u64) -> Self {
        Self {
            treatments: 2,
            n,
            control: ControlSpec::Discrete {
                weights: vec![0.5, 0.5],
            },
            gps: ControlFn::PerCell {
                values: vec![vec![0.3, 0.2], vec![0.2, 0.4]],
            },
            coef_mean: ControlFn::PerCell {
                values: vec![vec![0.0, 1.0, -2.0], vec![0.0, 3.0, 0.0]],
            },
            noise_scale: 1.0,
            seed,
            gps_sum: None,
        }
    }

    /// Noiseless `Y = 1 + 2 X(1) + 3 X(2)` over four cells with varying scores.
    pub fn homogeneous(n: usize, seed: u64) -> Self {
        Self {
            treatments: 2,
            n,
            control: ControlSpec::Discrete {
                weights: vec![0.25; 4],
            },
            gps: ControlFn::PerCell {
                values: vec![
                    vec![0.3, 0.3],
                    vec![0.2, 0.4],
                    vec![0.4, 0.2],
                    vec![0.25, 0.25],
                ],
            },
            coef_mean: ControlFn::Constant {
                value: vec![1.0, 2.0, 3.0],
            },
            noise_scale: 0.0,
            seed,
            gps_sum: None,
        }
    }

    /// Continuous scalar control with scores and coefficients linear in `v`.
    pub fn continuous(n: usize, seed: u64) -> Self {
        Self {
            treatments: 2,
            n,
            control: ControlSpec::UniformContinuous { dim: 1 },
            gps: ControlFn::Linear {
                intercept: vec![0.2, 0.3],
                slopes: vec![vec![0.2], vec![-0.1]],
            },
            coef_mean: ControlFn::Linear {
                intercept: vec![0.0, 1.0, -2.0],
                slopes: vec![vec![1.0], vec![2.0], vec![2.0]],
            },
            noise_scale: 1.0,
            seed,
            gps_sum: None,
        }
    }

    pub fn with_gps_sum(&self, sum: f64) -> Self {
        Self {
            gps_sum: Some(sum),
            ..self.clone()
        }
    }

    /// Natural partition of the generated controls.
    pub fn default_scheme(&self, bins: usize) -> Scheme {
        match self.control {
            ControlSpec::Discrete { .. } => Scheme::Discrete,
            ControlSpec::UniformContinuous { .. } => Scheme::QuantileBins { k: bins },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if self.treatments == 0 {
            return bad("at least one treatment is required");
        }
        if self.n == 0 {
            return bad("sample size must be positive");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be finite and nonnegative");
        }
        if let Some(s) = self.gps_sum {
            if !(s > 0.0 && s <= 1.0) {
                return bad("gps_sum must lie in (0, 1]");
            }
        }
        match &self.control {
            ControlSpec::Discrete { weights } => {
                if weights.is_empty() {
                    return bad("discrete control needs at least one cell");
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad("cell weights must be nonnegative");
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                    return bad("cell weights must sum to one");
                }
            }
            ControlSpec::UniformContinuous { dim } => {
                if *dim == 0 {
                    return bad("continuous control needs dim >= 1");
                }
            }
        }
        self.gps.check("gps", self.treatments, &self.control)?;
        self.coef_mean
            .check("coef_mean", self.treatments + 1, &self.control)?;
        if !self.gps.is_finite() || !self.coef_mean.is_finite() {
            return bad("non-finite parameter");
        }
        for v in self.support_probe() {
            self.gps_at(&v)?;
        }
        Ok(())
    }

    /// Discrete grid, or vertices of the unit cube plus random probe points.
    fn support_probe(&self) -> Vec<ControlDraw> {
        match &self.control {
            ControlSpec::Discrete { weights } => {
                (0..weights.len()).map(ControlDraw::Cell).collect()
            }
            ControlSpec::UniformContinuous { dim } => {
                let mut pts = Vec::with_capacity(PROBE_POINTS + 16);
                if *dim <= 12 {
                    for mask in 0..(1usize << dim) {
                        pts.push(ControlDraw::Point(
                            (0..*dim).map(|j| ((mask >> j) & 1) as f64).collect(),
                        ));
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(PROBE_SEED_OFFSET));
                for _ in 0..PROBE_POINTS {
                    pts.push(ControlDraw::Point(
                        (0..*dim).map(|_| rng.random()).collect(),
                    ));
                }
                pts
            }
        }
    }

    fn gps_at(&self, v: &ControlDraw) -> Result<GpsVector> {
        let mut raw = self.gps.eval(v);
        if let Some(target) = self.gps_sum {
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidSpec(
                    "cannot rescale scores that sum to zero".into(),
                ));
            }
            raw.iter_mut().for_each(|p| *p *= target / total);
        }
        GpsVector::new(raw).map_err(|e| Error::InvalidSpec(format!("gps at {v:?}: {e}")))
    }

    fn label(&self, k: usize) -> String {
        let cells = match &self.control {
            ControlSpec::Discrete { weights } => weights.len(),
            ControlSpec::UniformContinuous { .. } => 1,
        };
        let width = (cells.max(2) - 1).to_string().len();
        format!("c{k:0width$}")
    }

    fn draw_control(&self, rng: &mut ChaCha8Rng) -> ControlDraw {
        match &self.control {
            ControlSpec::Discrete { weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (k, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        last = k;
                        acc += w;
                        if u < acc {
                            return ControlDraw::Cell(k);
                        }
                    }
                }
                ControlDraw::Cell(last)
            }
            ControlSpec::UniformContinuous { dim } => {
                ControlDraw::Point((0..*dim).map(|_| rng.random()).collect())
            }
        }
    }

    /// One row and its latent coefficient vector.
    fn draw_row(&self, row: usize) -> (Observation, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row as u64);

        let v = self.draw_control(&mut rng);
        let gps = self.gps_at(&v).expect("spec validated");
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut treated = None;
        for (t, &p) in gps.probs().iter().enumerate() {
            acc += p;
            if u < acc {
                treated = Some(t);
                break;
            }
        }

        let eps: Vec<f64> = self
            .coef_mean
            .eval(&v)
            .into_iter()
            .map(|a| {
                let z: f64 = rng.sample(StandardNormal);
                a + self.noise_scale * z
            })
            .collect();

        let mut x = vec![false; self.treatments];
        let mut y = eps[0];
        if let Some(t) = treated {
            x[t] = true;
            y += eps[t + 1];
        }
        let v = match v {
            ControlDraw::Cell(k) => Control::Label(self.label(k)),
            ControlDraw::Point(p) => Control::Point(p),
        };
        (Observation { y, x, v }, eps)
    }

    /// `E[alpha(V)]`, with the Monte Carlo seed when it had to be simulated.
    fn true_coef_mean(&self) -> (Vec<f64>, Option<u64>) {
        let dim = self.treatments + 1;
        match &self.control {
            ControlSpec::Discrete { weights } => {
                let mut mean = vec![0.0; dim];
                for (k, &w) in weights.iter().enumerate() {
                    for (m, a) in mean
                        .iter_mut()
                        .zip(self.coef_mean.eval(&ControlDraw::Cell(k)))
                    {
                        *m += w * a;
                    }
                }
                (mean, None)
            }
            ControlSpec::UniformContinuous { .. } => {
                let seed = self.seed.wrapping_add(TRUTH_SEED_OFFSET);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut mean = vec![0.0; dim];
                for _ in 0..TRUTH_DRAWS {
                    let v = self.draw_control(&mut rng);
                    for (m, a) in mean.iter_mut().zip(self.coef_mean.eval(&v)) {
                        *m += a;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= TRUTH_DRAWS as f64);
                (mean, Some(seed))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: Dataset,
    /// Component `t` is `E[alpha(V)]_{t+1}`.
    pub true_ate: Vec<f64>,
    /// Seed of the Monte Carlo truth for continuous controls.
    pub truth_seed: Option<u64>,
}

pub fn simulate(spec: &DgpSpec) -> Result<Simulation> {
    let (rows, _) = simulate_with_latent(spec)?
        .into_iter()
        .unzip::<_, _, Vec<_>, Vec<_>>();
    let data = Dataset::new(spec.treatments, TreatmentMode::Exclusive, rows)?;
    let (mean, truth_seed) = spec.true_coef_mean();
    Ok(Simulation {
        data,
        true_ate: mean[1..].to_vec(),
        truth_seed,
    })
}

/// Rows paired with the coefficient vector `eps` that produced them.
pub fn simulate_with_latent(spec: &DgpSpec) -> Result<Vec<(Observation, Vec<f64>)>> {
    spec.validate()?;
    Ok((0..spec.n)
        .into_par_iter()
        .map(|i| spec.draw_row(i))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub sum: f64,
    pub verdict: Verdict,
    pub failing_cells: usize,
    pub total_cells: usize,
    /// Euclidean distance between estimated and true effects, when estimable.
    pub ate_error: Option<f64>,
}

/// Rescales the scores of `base` to each target sum in turn, then simulates,
/// audits and estimates.
pub fn failure_sweep(
    base: &DgpSpec,
    sums: &[f64],
    scheme: Scheme,
    rules: &CellRules,
) -> Result<Vec<SweepPoint>> {
    if sums.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidSpec("sweep sums must be ascending".into()));
    }
    sums.iter()
        .map(|&s| {
            let sim = simulate(&base.with_gps_sum(s))?;
            let report = audit(&sim.data, scheme, rules)?;
            let ate_error = match estimate_asf(&sim.data, scheme, rules) {
                Ok(est) => Some(
                    est.ate
                        .iter()
                        .zip(&sim.true_ate)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                ),
                Err(Error::NotIdentifiedEverywhere) => None,
                Err(e) => return Err(e),
            };
            Ok(SweepPoint {
                sum: s,
                verdict: report.verdict,
                failing_cells: report.failing().count(),
                total_cells: report.cells.len(),
                ate_error,
            })
        })
        .collect()
}
