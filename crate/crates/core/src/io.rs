//! CSV ingestion and output, row filters, marginal screening and the
//! small text formats accepted on the command line.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assoc::{permutation_pvalue, AssocKind};
use crate::data::{check_same_rows, DataMatrix};
use crate::error::{Result, SsdrError};

/// Smallest permutation count accepted by [`screen_variables`].
pub const MIN_PERMUTATIONS: usize = 99;

/// A numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DataMatrix,
}

impl Table {
    /// Position of a column given by name, or by 0-based index when no
    /// header matches.
    pub fn column_index(&self, column: &str) -> Result<usize> {
        if let Some(j) = self.names.iter().position(|n| n == column) {
            return Ok(j);
        }
        match column.parse::<usize>() {
            Ok(j) if j < self.names.len() => Ok(j),
            _ => Err(SsdrError::InvalidColumn(column.to_string())),
        }
    }
}

/// Predictors and response split out of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DataMatrix,
    pub y: DataMatrix,
    /// Predictor names in file order.
    pub x_names: Vec<String>,
    pub response: String,
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    /// Rows kept in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            x_names: self.x_names.clone(),
            response: self.response.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            x_names: cols.iter().map(|&j| self.x_names[j].clone()).collect(),
            response: self.response.clone(),
        }
    }
}

/// Parses a headed, comma-separated numeric table.
///
/// Rows in errors are 1-based data rows (the header is row 0).
pub fn parse_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(0, "header", e))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(SsdrError::ParseError {
            row: 0,
            column: "header".into(),
            reason: "missing header".into(),
        });
    }
    let d = names.len();
    let mut data = Vec::new();
    let mut n = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(row, "*", e))?;
        if rec.len() != d {
            return Err(SsdrError::ParseError {
                row,
                column: "*".into(),
                reason: format!("expected {d} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).map_err(|reason| SsdrError::ParseError {
                row,
                column: names[j].clone(),
                reason,
            })?;
            data.push(v);
        }
        n += 1;
    }
    // Row-major buffer.
    let m = DMatrix::from_row_slice(n, d, &data);
    Ok(Table {
        names,
        values: DataMatrix::new(m)?,
    })
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("empty cell".into());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value '{cell}'")),
        Err(_) => Err(format!("not a number: '{cell}'")),
    }
}

fn csv_error(row: usize, column: &str, e: csv::Error) -> SsdrError {
    SsdrError::ParseError {
        row,
        column: column.into(),
        reason: e.to_string(),
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| SsdrError::Io(format!("{}: {e}", path.display())))?;
    parse_table(file)
}

/// Splits the response column (by name, or 0-based index) out of a table.
pub fn split_response(table: &Table, response: &str) -> Result<Dataset> {
    let r = table.column_index(response)?;
    if table.names.len() < 2 {
        return Err(SsdrError::InvalidInput(
            "need at least one predictor column".into(),
        ));
    }
    let keep: Vec<usize> = (0..table.names.len()).filter(|&j| j != r).collect();
    Ok(Dataset {
        x: table.values.select_columns(&keep),
        y: table.values.column(r),
        x_names: keep.iter().map(|&j| table.names[j].clone()).collect(),
        response: table.names[r].clone(),
    })
}

pub fn read_csv(path: &Path, response: &str) -> Result<Dataset> {
    split_response(&read_table(path)?, response)
}

/// Writes a headed table. Floats use the shortest form that parses back
/// to the same value.
pub fn write_table<W: Write>(writer: W, names: &[String], values: &DataMatrix) -> Result<()> {
    if names.len() != values.ncols() {
        return Err(SsdrError::InvalidInput(format!(
            "{} names for {} columns",
            names.len(),
            values.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| SsdrError::Io(e.to_string());
    w.write_record(names).map_err(io)?;
    let m = values.as_matrix();
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, names: &[String], values: &DataMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| SsdrError::Io(format!("{}: {e}", path.display())))?;
    write_table(file, names, values)
}

/// Predictors followed by the response, as one table.
pub fn dataset_table(data: &Dataset) -> (Vec<String>, DataMatrix) {
    let mut names = data.x_names.clone();
    names.push(data.response.clone());
    let (n, p) = (data.x.nrows(), data.x.ncols());
    let m = DMatrix::from_fn(n, p + 1, |i, j| {
        if j < p {
            data.x.as_matrix()[(i, j)]
        } else {
            data.y.as_matrix()[(i, 0)]
        }
    });
    (names, DataMatrix::new(m).expect("finite inputs"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Gt,
    Lt,
    Ge,
    Le,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Gt => value > threshold,
            Comparison::Lt => value < threshold,
            Comparison::Ge => value >= threshold,
            Comparison::Le => value <= threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::Gt => "gt",
            Comparison::Lt => "lt",
            Comparison::Ge => "ge",
            Comparison::Le => "le",
        }
    }
}

impl FromStr for Comparison {
    type Err = SsdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Comparison::Gt),
            "lt" => Ok(Comparison::Lt),
            "ge" => Ok(Comparison::Ge),
            "le" => Ok(Comparison::Le),
            other => Err(SsdrError::InvalidInput(format!(
                "unknown comparison '{other}'"
            ))),
        }
    }
}

/// Drop rows whose `column` value satisfies `cmp threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub cmp: Comparison,
    pub threshold: f64,
}

impl fmt::Display for RowFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.column,
            self.cmp.as_str(),
            self.threshold
        )
    }
}

/// `column:cmp:threshold`, e.g. `crim:gt:3.2`. The column name may itself
/// contain colons.
impl FromStr for RowFilter {
    type Err = SsdrError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SsdrError::InvalidInput(format!("filter '{s}' is not column:cmp:threshold"));
        let mut parts = s.rsplitn(3, ':');
        let threshold = parts.next().ok_or_else(bad)?;
        let cmp = parts.next().ok_or_else(bad)?;
        let column = parts.next().ok_or_else(bad)?;
        if column.is_empty() {
            return Err(bad());
        }
        let threshold: f64 = threshold.trim().parse().map_err(|_| bad())?;
        if !threshold.is_finite() {
            return Err(bad());
        }
        Ok(RowFilter {
            column: column.to_string(),
            cmp: cmp.parse()?,
            threshold,
        })
    }
}

/// Removes rows where the filter column (predictor or response) satisfies
/// the comparison, from `x` and `y` jointly.
pub fn filter_rows(data: &Dataset, filter: &RowFilter) -> Result<Dataset> {
    let values: Vec<f64> = if filter.column == data.response {
        data.y.as_matrix().column(0).iter().copied().collect()
    } else {
        let j = data
            .x_names
            .iter()
            .position(|n| *n == filter.column)
            .ok_or_else(|| SsdrError::InvalidColumn(filter.column.clone()))?;
        data.x.as_matrix().column(j).iter().copied().collect()
    };
    let keep: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| !filter.cmp.holds(v, filter.threshold))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(SsdrError::EmptyAfterFilter);
    }
    Ok(data.select_rows(&keep))
}

/// Columns whose permutation p-value for distance covariance with `y` is
/// below `alpha`. Column j draws permutations from stream j of `seed`.
pub fn screen_variables(
    x: &DataMatrix,
    y: &DataMatrix,
    alpha: f64,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_same_rows(x, y)?;
    if n_perm < MIN_PERMUTATIONS {
        return Err(SsdrError::InvalidInput(format!(
            "n_perm = {n_perm} < {MIN_PERMUTATIONS}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SsdrError::InvalidInput(format!(
            "alpha = {alpha} outside (0, 1]"
        )));
    }
    let mut keep = Vec::new();
    for j in 0..x.ncols() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let pv = permutation_pvalue(AssocKind::Dcov, &x.column(j), y, n_perm, &mut rng)?;
        // alpha = 1 keeps everything, including p = 1.
        if pv < alpha || alpha >= 1.0 {
            keep.push(j);
        }
    }
    Ok(keep)
}

/// Either `start:step:stop` or a comma-separated list. Values must be
/// finite, nonnegative and strictly ascending.
pub fn parse_theta_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| SsdrError::InvalidInput(format!("theta grid '{s}': {why}"));
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("not a finite number"))
    };
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:step:stop"));
        }
        let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(bad("need step > 0 and stop ≥ start"));
        }
        if (stop - start) / step > 1e6 {
            return Err(bad("more than a million points"));
        }
        crate::svs::theta_grid(start, stop, step)
    } else {
        s.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() {
        return Err(bad("empty"));
    }
    if grid.iter().any(|&t| t < 0.0) {
        return Err(bad("negative value"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("not strictly ascending"));
    }
    Ok(grid)
}

/// Shuffled split with `round(n · test_fraction)` test rows, each part in
/// ascending row order.
pub fn train_test_split(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SsdrError::InvalidInput(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(SsdrError::InvalidInput(format!(
            "test fraction {test_fraction} leaves an empty part for n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
