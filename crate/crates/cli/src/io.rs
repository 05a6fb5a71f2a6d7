use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use pdglasso::SymMatrix;

/// Asymmetry beyond this (relative) is an input error.
const ASYM_ERROR: f64 = 1e-10;
/// Asymmetry beyond this (relative) is symmetrized with a warning.
const ASYM_WARN: f64 = 1e-12;

pub const STANDARDIZE_CAVEAT: &str = "warning: --standardize rescales S to a correlation matrix. \
Paired-data coloured models are not invariant under rescaling, so care needs to be taken in the \
interpretation of the resulting symmetries.";

/// A numeric CSV file with a header row.
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .with_context(|| format!("{}: cannot read header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            bail!("{}: line {line}: expected {} fields, found {}", path.display(), names.len(), record.len());
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, field)| {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).with_context(|| {
                    format!("{}: line {line}, column {}: '{field}' is not a finite number", path.display(), k + 1)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if names.is_empty() || rows.is_empty() {
        bail!("{}: no data", path.display());
    }
    if !names.len().is_multiple_of(2) {
        bail!(
            "{}: {} columns; paired data needs an even count (first half L, second half R)",
            path.display(),
            names.len()
        );
    }
    Ok(Table { names, rows })
}

/// Sample second-moment matrix, variable names and sample size.
pub struct Input {
    pub names: Vec<String>,
    pub s: SymMatrix,
    pub n: Option<usize>,
    pub standardized: bool,
}

pub struct InputOptions {
    pub cov: bool,
    pub n: Option<usize>,
    pub center: bool,
    pub standardize: bool,
}

pub fn load_input(path: &Path, opts: &InputOptions) -> Result<Input> {
    let table = read_table(path)?;
    let p = table.names.len();
    let (s, n) = if opts.cov {
        if table.rows.len() != p {
            bail!("{}: covariance input must be {p} x {p}, found {} rows", path.display(), table.rows.len());
        }
        let m = DMatrix::from_fn(p, p, |i, j| table.rows[i][j]);
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > ASYM_ERROR * scale {
            bail!("{}: covariance matrix is not symmetric (max asymmetry {asym:e})", path.display());
        }
        if asym > ASYM_WARN * scale {
            eprintln!("warning: symmetrizing covariance input (max asymmetry {asym:e})");
        }
        (SymMatrix::symmetrized(m), opts.n)
    } else {
        if opts.n.is_some_and(|n| n != table.rows.len()) {
            bail!("--n conflicts with the {} data rows", table.rows.len());
        }
        let n = table.rows.len();
        let mut y = DMatrix::from_fn(n, p, |i, j| table.rows[i][j]);
        if opts.center {
            for mut col in y.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
        }
        (SymMatrix::symmetrized(y.transpose() * &y / n as f64), Some(n))
    };
    let s = if opts.standardize {
        eprintln!("{STANDARDIZE_CAVEAT}");
        s.to_correlation().context("cannot standardize: a variance is not positive")?
    } else {
        s
    };
    Ok(Input { names: table.names, s, n, standardized: opts.standardize })
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Serializes `rows` as CSV with a header.
pub fn to_csv<T: serde::Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
