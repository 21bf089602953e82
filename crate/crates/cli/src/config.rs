//! Command line, config file and the resolved [`RunConfig`].
//!
//! Precedence is flag, then config file, then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetid::{CellRules, DgpSpec, TreatmentMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_BINS: usize = 5;
pub const DEFAULT_N: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SUMS: [f64; 4] = [0.5, 0.9, 0.99, 1.0];

#[derive(Debug, Parser)]
#[command(
    name = "hetid",
    version,
    about = "Identification audit and treatment effects for heterogeneous-coefficient models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a preset or JSON data generating process.
    Simulate(Flags),
    /// Per-cell identification report.
    Audit(Flags),
    /// Average treatment effects over identified cells.
    Estimate(Flags),
    /// Push the propensity-score sum toward one and record what breaks.
    Sweep(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Simulate,
    Audit,
    Estimate,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Heterogeneous,
    TwoCell,
    Homogeneous,
    Continuous,
}

impl Preset {
    pub fn spec(self, n: usize, seed: u64) -> DgpSpec {
        match self {
            Preset::Heterogeneous => DgpSpec::heterogeneous(n, seed),
            Preset::TwoCell => DgpSpec::two_cell(n, seed),
            Preset::Homogeneous => DgpSpec::homogeneous(n, seed),
            Preset::Continuous => DgpSpec::continuous(n, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exclusive,
    General,
}

impl From<ModeArg> for TreatmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exclusive => TreatmentMode::Exclusive,
            ModeArg::General => TreatmentMode::General,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the settings below (snake_case keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (audit, estimate).
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Output file: CSV for simulate and sweep, JSON for audit and estimate.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Treatment mode; inferred from the CSV header when omitted.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Number of treatments for `t`-column CSVs whose largest treatment is absent.
    #[arg(long)]
    pub treatments: Option<usize>,
    /// Quantile bins per coordinate for continuous controls.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Overlap margin on the estimated propensity scores.
    #[arg(long)]
    pub overlap_delta: Option<f64>,
    /// Relative eigenvalue floor: a cell is singular when lambda_min <= this * lambda_max.
    #[arg(long)]
    pub lambda_threshold: Option<f64>,
    /// Smallest cell that gets its own fit [default: T + 2].
    #[arg(long)]
    pub min_cell_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// estimate: fail with exit code 2 instead of trimming cells.
    #[arg(long)]
    pub strict: bool,
    /// Built-in process for simulate and sweep.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON data generating process; overrides --preset.
    #[arg(long)]
    pub dgp: Option<PathBuf>,
    /// Sample size for simulate and sweep.
    #[arg(long)]
    pub n: Option<usize>,
    /// simulate: rescale the propensity scores to this sum.
    #[arg(long)]
    pub gps_sum: Option<f64>,
    /// sweep: ascending propensity-score sums.
    #[arg(long, value_delimiter = ',')]
    pub sums: Option<Vec<f64>>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub emit_config: bool,
}

/// Settings accepted in a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Option<TreatmentMode>,
    pub treatments: Option<usize>,
    pub bins: Option<usize>,
    pub overlap_delta: Option<f64>,
    pub lambda_threshold: Option<f64>,
    pub min_cell_size: Option<usize>,
    pub seed: Option<u64>,
    pub strict: Option<bool>,
    pub preset: Option<Preset>,
    pub dgp: Option<PathBuf>,
    pub n: Option<usize>,
    pub gps_sum: Option<f64>,
    pub sums: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Action,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Option<TreatmentMode>,
    pub treatments: Option<usize>,
    pub bins: usize,
    pub overlap_delta: f64,
    pub lambda_threshold: f64,
    pub min_cell_size: Option<usize>,
    pub seed: u64,
    pub strict: bool,
    pub preset: Preset,
    pub dgp: Option<PathBuf>,
    pub n: usize,
    pub gps_sum: Option<f64>,
    pub sums: Vec<f64>,
}

impl RunConfig {
    pub fn defaults(command: Action) -> Self {
        let rules = CellRules::default();
        Self {
            command,
            input: None,
            output: None,
            mode: None,
            treatments: None,
            bins: DEFAULT_BINS,
            overlap_delta: rules.overlap_delta,
            lambda_threshold: rules.lambda_rtol,
            min_cell_size: rules.min_cell_size,
            seed: DEFAULT_SEED,
            strict: false,
            preset: Preset::Heterogeneous,
            dgp: None,
            n: DEFAULT_N,
            gps_sum: None,
            sums: DEFAULT_SUMS.to_vec(),
        }
    }

    /// Layers `file` and then `flags` over the defaults.
    pub fn resolve(command: Action, flags: &Flags, file: &FileConfig) -> Self {
        let d = Self::defaults(command);
        Self {
            command,
            input: flags.input.clone().or(file.input.clone()).or(d.input),
            output: flags.output.clone().or(file.output.clone()).or(d.output),
            mode: flags.mode.map(Into::into).or(file.mode).or(d.mode),
            treatments: flags.treatments.or(file.treatments).or(d.treatments),
            bins: flags.bins.or(file.bins).unwrap_or(d.bins),
            overlap_delta: flags
                .overlap_delta
                .or(file.overlap_delta)
                .unwrap_or(d.overlap_delta),
            lambda_threshold: flags
                .lambda_threshold
                .or(file.lambda_threshold)
                .unwrap_or(d.lambda_threshold),
            min_cell_size: flags
                .min_cell_size
                .or(file.min_cell_size)
                .or(d.min_cell_size),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            strict: flags.strict || file.strict.unwrap_or(d.strict),
            preset: flags.preset.or(file.preset).unwrap_or(d.preset),
            dgp: flags.dgp.clone().or(file.dgp.clone()).or(d.dgp),
            n: flags.n.or(file.n).unwrap_or(d.n),
            gps_sum: flags.gps_sum.or(file.gps_sum).or(d.gps_sum),
            sums: flags.sums.clone().or(file.sums.clone()).unwrap_or(d.sums),
        }
    }

    pub fn rules(&self) -> CellRules {
        CellRules {
            lambda_rtol: self.lambda_threshold,
            min_cell_size: self.min_cell_size,
            overlap_delta: self.overlap_delta,
        }
    }

    /// Range checks, plus the paths each subcommand needs.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.bins < 2 {
            return bad("--bins must be at least 2".into());
        }
        if !(0.0..0.5).contains(&self.overlap_delta) {
            return bad(format!(
                "--overlap-delta {} is outside [0, 0.5)",
                self.overlap_delta
            ));
        }
        if !(0.0..1.0).contains(&self.lambda_threshold) {
            return bad(format!(
                "--lambda-threshold {} is outside [0, 1)",
                self.lambda_threshold
            ));
        }
        if self.min_cell_size == Some(0) {
            return bad("--min-cell-size must be at least 1".into());
        }
        if self.treatments == Some(0) {
            return bad("--treatments must be at least 1".into());
        }
        if self.n == 0 {
            return bad("--n must be at least 1".into());
        }
        if let Some(s) = self.gps_sum {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("--gps-sum {s} is outside [0, 1]"));
            }
        }
        if self.sums.is_empty() || self.sums.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("--sums must be a non-empty list in [0, 1]".into());
        }
        if self.sums.windows(2).any(|w| w[0] > w[1]) {
            return bad("--sums must be ascending".into());
        }
        let needs_input = matches!(self.command, Action::Audit | Action::Estimate);
        if needs_input
            && self
                .input
                .as_deref()
                .is_none_or(|p| p.as_os_str().is_empty())
        {
            return bad("--input is required".into());
        }
        if self
            .output
            .as_deref()
            .is_none_or(|p| p.as_os_str().is_empty())
        {
            return bad("--output is required".into());
        }
        Ok(())
    }

    /// The process for simulate and sweep: `--dgp` if given, else the preset.
    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        let mut spec = match &self.dgp {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => self.preset.spec(self.n, self.seed),
        };
        // explicit sample size and seed always win over the file
        spec.n = self.n;
        spec.seed = self.seed;
        if let Some(s) = self.gps_sum {
            spec = spec.with_gps_sum(s);
        }
        spec.validate()?;
        Ok(spec)
    }
}
