//! CSV schemas.
//!
//! Exclusive: `y,t,<controls>` where `t` is 0 for untreated or the 1-based
//! index of the single active treatment.
//! General: `y,x1,...,xT,<controls>` with each `x` in {0, 1}.
//! Controls are either one string column `v` (discrete labels) or numeric
//! columns `v1,...,vd`.

use std::io::{Read, Write};
use std::path::Path;

use hetid::{Control, Dataset, Observation, TreatmentMode};

use crate::error::{CliError, Result};
use crate::report::write_atomic;

/// Overrides for what the header alone cannot tell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Defaults to exclusive for a `t` column and general for `x` columns.
    pub mode: Option<TreatmentMode>,
    /// Number of treatments for the `t` schema; defaults to the largest `t`.
    pub treatments: Option<usize>,
}

enum TreatmentCols {
    Index(usize),
    Dummies(Vec<usize>),
}

enum ControlCols {
    Label(usize),
    Point(Vec<usize>),
}

struct Layout {
    y: usize,
    treat: TreatmentCols,
    control: ControlCols,
}

/// Columns named `{prefix}1..{prefix}k`, in order; errors on gaps.
fn numbered(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<usize>() {
                if rest.starts_with('0') {
                    return Err(CliError::Header(format!(
                        "column `{name}` has a leading zero"
                    )));
                }
                found.push((k, col));
            }
        }
    }
    found.sort();
    for (want, &(k, _)) in (1..).zip(&found) {
        if k != want {
            return Err(CliError::Header(format!(
                "expected column `{prefix}{want}`, found `{prefix}{k}`"
            )));
        }
    }
    Ok(found.into_iter().map(|(_, col)| col).collect())
}

fn layout(headers: &csv::StringRecord) -> Result<Layout> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut seen = std::collections::BTreeSet::new();
    for h in headers {
        if !seen.insert(h) {
            return Err(CliError::Header(format!("duplicate column `{h}`")));
        }
    }
    let y = find("y").ok_or_else(|| CliError::MissingColumn("y".into()))?;

    let dummies = numbered(headers, "x")?;
    let treat = match (find("t"), dummies.is_empty()) {
        (Some(_), false) => {
            return Err(CliError::Header(
                "use either `t` or `x1..xT`, not both".into(),
            ))
        }
        (Some(t), true) => TreatmentCols::Index(t),
        (None, false) => TreatmentCols::Dummies(dummies),
        (None, true) => return Err(CliError::MissingColumn("t".into())),
    };

    let coords = numbered(headers, "v")?;
    let control = match (find("v"), coords.is_empty()) {
        (Some(_), false) => {
            return Err(CliError::Header(
                "use either `v` or `v1..vd`, not both".into(),
            ))
        }
        (Some(v), true) => ControlCols::Label(v),
        (None, false) => ControlCols::Point(coords),
        (None, true) => return Err(CliError::MissingColumn("v".into())),
    };

    let used =
        1 + match &treat {
            TreatmentCols::Index(_) => 1,
            TreatmentCols::Dummies(d) => d.len(),
        } + match &control {
            ControlCols::Label(_) => 1,
            ControlCols::Point(p) => p.len(),
        };
    if used != headers.len() {
        let extra: Vec<&str> = headers
            .iter()
            .filter(|h| {
                *h != "y" && *h != "t" && *h != "v" && !is_numbered(h, "x") && !is_numbered(h, "v")
            })
            .collect();
        return Err(CliError::Header(format!("unexpected columns {extra:?}")));
    }
    Ok(Layout { y, treat, control })
}

fn is_numbered(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

pub fn load_csv(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let layout = layout(&headers)?;

    // The `t` schema needs every row before T is known.
    let mut parsed: Vec<(f64, TreatmentValue, Control)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let bad = |msg: String| CliError::InvalidRow { row, msg };
        let y_raw = &record[layout.y];
        let y: f64 = y_raw
            .trim()
            .parse()
            .map_err(|_| bad(format!("y = {y_raw:?} is not a number")))?;
        if !y.is_finite() {
            return Err(bad(format!("y = {y_raw:?} is not finite")));
        }
        let treat = match &layout.treat {
            TreatmentCols::Index(col) => {
                let raw = &record[*col];
                let t = raw
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("t = {raw:?} is not a non-negative integer")))?;
                TreatmentValue::Index(t)
            }
            TreatmentCols::Dummies(cols) => {
                let mut x = Vec::with_capacity(cols.len());
                for (k, &col) in cols.iter().enumerate() {
                    x.push(match record[col].trim() {
                        "0" => false,
                        "1" => true,
                        other => return Err(bad(format!("x{} = {other:?} is not 0 or 1", k + 1))),
                    });
                }
                TreatmentValue::Dummies(x)
            }
        };
        let v = match &layout.control {
            ControlCols::Label(col) => Control::Label(record[*col].to_string()),
            ControlCols::Point(cols) => {
                let mut p = Vec::with_capacity(cols.len());
                for (k, &col) in cols.iter().enumerate() {
                    let raw = &record[col];
                    let c: f64 = raw
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("v{} = {raw:?} is not a number", k + 1)))?;
                    if !c.is_finite() {
                        return Err(bad(format!("v{} = {raw:?} is not finite", k + 1)));
                    }
                    p.push(c);
                }
                Control::Point(p)
            }
        };
        parsed.push((y, treat, v));
    }
    if parsed.is_empty() {
        return Err(CliError::EmptyDataset);
    }

    let (treatments, mode) = match &layout.treat {
        TreatmentCols::Index(_) => {
            let max_t = parsed
                .iter()
                .map(|(_, t, _)| match t {
                    TreatmentValue::Index(t) => *t,
                    TreatmentValue::Dummies(_) => 0,
                })
                .max()
                .unwrap_or(0);
            let t = match opts.treatments {
                Some(t) => t,
                None if max_t == 0 => {
                    return Err(CliError::Config(
                        "no row is treated; pass --treatments to set T".into(),
                    ))
                }
                None => max_t,
            };
            (t, opts.mode.unwrap_or(TreatmentMode::Exclusive))
        }
        TreatmentCols::Dummies(cols) => {
            if let Some(t) = opts.treatments.filter(|&t| t != cols.len()) {
                return Err(CliError::Config(format!(
                    "--treatments {t} disagrees with {} x columns",
                    cols.len()
                )));
            }
            (cols.len(), opts.mode.unwrap_or(TreatmentMode::General))
        }
    };
    if treatments == 0 {
        return Err(CliError::Config(
            "at least one treatment is required".into(),
        ));
    }

    let mut rows = Vec::with_capacity(parsed.len());
    for (i, (y, treat, v)) in parsed.into_iter().enumerate() {
        let row = i + 1;
        let x = match treat {
            TreatmentValue::Index(t) if t > treatments => {
                return Err(CliError::InvalidRow {
                    row,
                    msg: format!("t = {t} is outside 0..={treatments}"),
                })
            }
            TreatmentValue::Index(t) => (1..=treatments).map(|k| k == t).collect(),
            TreatmentValue::Dummies(x) => x,
        };
        if mode == TreatmentMode::Exclusive && x.iter().filter(|&&on| on).count() > 1 {
            return Err(CliError::InvalidRow {
                row,
                msg: "more than one treatment is on under exclusive mode".into(),
            });
        }
        rows.push(Observation { y, x, v });
    }
    Dataset::new(treatments, mode, rows).map_err(|e| match e {
        hetid::Error::InvalidRow { row, msg } => CliError::InvalidRow { row: row + 1, msg },
        e => CliError::Core(e),
    })
}

enum TreatmentValue {
    Index(usize),
    Dummies(Vec<bool>),
}

/// Exclusive datasets use the `t` schema, general ones the `x` schema.
/// Numbers use the shortest representation that parses back exactly.
pub fn write_csv_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let t = data.treatments();
    let mut header = vec!["y".to_string()];
    match data.mode() {
        TreatmentMode::Exclusive => header.push("t".into()),
        TreatmentMode::General => header.extend((1..=t).map(|k| format!("x{k}"))),
    }
    match data.control_dim() {
        None => header.push("v".into()),
        Some(d) => header.extend((1..=d).map(|k| format!("v{k}"))),
    }
    w.write_record(&header)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for row in data.rows() {
        record.clear();
        record.push(row.y.to_string());
        match data.mode() {
            TreatmentMode::Exclusive => record.push(row.treatment_index().to_string()),
            TreatmentMode::General => record.extend(
                row.x
                    .iter()
                    .map(|&on| if on { "1" } else { "0" }.to_string()),
            ),
        }
        match &row.v {
            Control::Label(l) => record.push(l.clone()),
            Control::Point(p) => record.extend(p.iter().map(f64::to_string)),
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(data, &mut buf)?;
    write_atomic(path, &buf)
}
