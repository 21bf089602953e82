use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use hetid::{
    audit, estimate_asf, failure_sweep, simulate, Control, Dataset, DgpSpec, Scheme, Simulation,
};
use serde::Serialize;

use crate::config::{Action, Cli, Command, FileConfig, RunConfig};
use crate::csv_io::{load_csv, write_csv, LoadOptions};
use crate::error::{CliError, Result};
use crate::report::{round_sig, to_json, write_atomic};

/// Parses `args` (program name first), runs, and reports. Returns the exit
/// code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "error[USAGE]: {text}");
            }
            return code;
        }
    };
    let (action, flags) = match cli.command {
        Command::Simulate(f) => (Action::Simulate, f),
        Command::Audit(f) => (Action::Audit, f),
        Command::Estimate(f) => (Action::Estimate, f),
        Command::Sweep(f) => (Action::Sweep, f),
    };
    let result = (|| {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let config = RunConfig::resolve(action, &flags, &file);
        if flags.emit_config {
            write!(out, "{}", to_json(&config)?).map_err(|e| CliError::io("<stdout>", e))?;
            return Ok(0);
        }
        run(&config, out)
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

/// Executes one validated subcommand; `out` receives the human summary.
pub fn run(config: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    config.validate()?;
    let output = config.output.as_deref().expect("validated");
    let lines = match config.command {
        Action::Simulate => run_simulate(config, output)?,
        Action::Audit => run_audit(config, output)?,
        Action::Estimate => run_estimate(config, output)?,
        Action::Sweep => run_sweep(config, output)?,
    };
    for line in lines {
        writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))?;
    }
    Ok(0)
}

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().unwrap_or_default().to_string_lossy();
    output.with_file_name(format!("{stem}.meta.json"))
}

#[derive(Serialize)]
struct SimulationMeta<'a> {
    spec: &'a DgpSpec,
    n_obs: usize,
    true_ate: &'a [f64],
    truth_seed: Option<u64>,
}

fn run_simulate(config: &RunConfig, output: &Path) -> Result<Vec<String>> {
    let spec = config.dgp_spec()?;
    let Simulation {
        data,
        true_ate,
        truth_seed,
    } = simulate(&spec)?;
    let meta = SimulationMeta {
        spec: &spec,
        n_obs: data.len(),
        true_ate: &true_ate,
        truth_seed,
    };
    write_csv(output, &data)?;
    let meta_path = sidecar_path(output);
    write_atomic(&meta_path, to_json(&meta)?.as_bytes())?;
    Ok(vec![
        format!("wrote {} rows to {}", data.len(), output.display()),
        format!("true ate = {}", fmt_vec(&true_ate)),
    ])
}

fn load(config: &RunConfig) -> Result<(Dataset, Scheme)> {
    let input = config.input.as_deref().expect("validated");
    let data = load_csv(
        input,
        LoadOptions {
            mode: config.mode,
            treatments: config.treatments,
        },
    )?;
    let scheme = match data.rows()[0].v {
        Control::Label(_) => Scheme::Discrete,
        Control::Point(_) => Scheme::QuantileBins { k: config.bins },
    };
    Ok((data, scheme))
}

fn run_audit(config: &RunConfig, output: &Path) -> Result<Vec<String>> {
    let (data, scheme) = load(config)?;
    let report = audit(&data, scheme, &config.rules())?;
    write_atomic(output, to_json(&report)?.as_bytes())?;
    let failing = report.failing().count();
    let total = report.cells.len();
    let line = if report.identified() {
        format!("IDENTIFIED: all {total} cells pass")
    } else {
        format!(
            "NOT IDENTIFIED: {failing} of {total} cells fail, failing mass {}",
            round_sig(report.failing_mass)
        )
    };
    Ok(vec![line])
}

fn run_estimate(config: &RunConfig, output: &Path) -> Result<Vec<String>> {
    let (data, scheme) = load(config)?;
    let rules = config.rules();
    if config.strict {
        let report = audit(&data, scheme, &rules)?;
        if !report.identified() {
            return Err(CliError::NotIdentified {
                failing: report.failing().count(),
                total: report.cells.len(),
            });
        }
    }
    let est = estimate_asf(&data, scheme, &rules)?;
    write_atomic(output, to_json(&est)?.as_bytes())?;
    let mut lines: Vec<String> = est
        .ate
        .iter()
        .enumerate()
        .map(|(t, a)| format!("ate[{}] = {}", t + 1, round_sig(*a)))
        .collect();
    lines.push(format!("trimmed_mass = {}", round_sig(est.trimmed_mass)));
    lines.extend(est.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(lines)
}

fn run_sweep(config: &RunConfig, output: &Path) -> Result<Vec<String>> {
    let spec = config.dgp_spec()?;
    let scheme = spec.default_scheme(config.bins);
    let points = failure_sweep(&spec, &config.sums, scheme, &config.rules())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sum", "verdict", "ate_error"])?;
    let mut lines = Vec::new();
    for p in &points {
        let err = p
            .ate_error
            .map(|e| round_sig(e).to_string())
            .unwrap_or_default();
        w.write_record([
            round_sig(p.sum).to_string(),
            p.verdict.as_str().to_string(),
            err.clone(),
        ])?;
        lines.push(format!(
            "sum {}: {} ({} of {} cells fail), ate error {}",
            round_sig(p.sum),
            p.verdict.as_str(),
            p.failing_cells,
            p.total_cells,
            if err.is_empty() { "n/a" } else { &err }
        ));
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io(output, e.into_error()))?;
    write_atomic(output, &bytes)?;
    Ok(lines)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| round_sig(*x).to_string()).collect();
    format!("({})", parts.join(", "))
}
