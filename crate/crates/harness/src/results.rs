//! Result rows and their CSV encoding.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const HEADER: [&str; 14] = [
    "experiment",
    "integrator",
    "alpha",
    "prefactor",
    "D",
    "L",
    "h",
    "n_runs",
    "n_diverged",
    "bias",
    "bias_se",
    "signed_bias",
    "mse",
    "mse_se",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// One `(integrator, grid point)` aggregate. Empty optional fields mean "not
/// applicable" (e.g. no friction for SGLD) or "no estimate" (all runs diverged).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub integrator: String,
    pub alpha: Option<f64>,
    pub prefactor: Option<f64>,
    pub friction: Option<f64>,
    pub steps: u64,
    pub h: Option<f64>,
    pub n_runs: usize,
    pub n_diverged: usize,
    pub bias: Option<f64>,
    pub bias_se: Option<f64>,
    pub signed_bias: Option<f64>,
    pub mse: Option<f64>,
    pub mse_se: Option<f64>,
}

fn fmt_float(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

impl ResultRow {
    fn to_record(&self) -> [String; 14] {
        [
            self.experiment.clone(),
            self.integrator.clone(),
            fmt_float(self.alpha),
            fmt_float(self.prefactor),
            fmt_float(self.friction),
            self.steps.to_string(),
            fmt_float(self.h),
            self.n_runs.to_string(),
            self.n_diverged.to_string(),
            fmt_float(self.bias),
            fmt_float(self.bias_se),
            fmt_float(self.signed_bias),
            fmt_float(self.mse),
            fmt_float(self.mse_se),
        ]
    }

    fn from_record(record: &csv::StringRecord, line: u64) -> Result<Self, CsvError> {
        let err = |msg: String| CsvError::Parse { line, msg };
        if record.len() != HEADER.len() {
            return Err(err(format!("expected {} fields, got {}", HEADER.len(), record.len())));
        }
        let opt = |i: usize| -> Result<Option<f64>, CsvError> {
            let s = &record[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| err(format!("{}: `{s}`: {e}", HEADER[i])))
        };
        let count = |i: usize| -> Result<u64, CsvError> {
            record[i].parse().map_err(|e| err(format!("{}: `{}`: {e}", HEADER[i], &record[i])))
        };
        Ok(Self {
            experiment: record[0].to_string(),
            integrator: record[1].to_string(),
            alpha: opt(2)?,
            prefactor: opt(3)?,
            friction: opt(4)?,
            steps: count(5)?,
            h: opt(6)?,
            n_runs: count(7)? as usize,
            n_diverged: count(8)? as usize,
            bias: opt(9)?,
            bias_se: opt(10)?,
            signed_bias: opt(11)?,
            mse: opt(12)?,
            mse_se: opt(13)?,
        })
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_io)?;
    for row in rows {
        w.write_record(row.to_record()).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>, CsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| CsvError::Parse {
            line: e.position().map_or(i as u64 + 1, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if !seen_header {
            if record.iter().ne(HEADER.iter().copied()) {
                return Err(CsvError::Parse { line, msg: "unexpected header".into() });
            }
            seen_header = true;
            continue;
        }
        rows.push(ResultRow::from_record(&record, line)?);
    }
    if !seen_header {
        return Err(CsvError::Parse { line: 1, msg: "missing header".into() });
    }
    Ok(rows)
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), CsvError> {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, CsvError> {
    read_rows(std::fs::File::open(path)?)
}

fn csv_io(e: csv::Error) -> CsvError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CsvError::Io(io),
        other => CsvError::Parse { line: 0, msg: format!("{other:?}") },
    }
}
