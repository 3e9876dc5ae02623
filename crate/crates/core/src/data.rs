//! Sample matrices (rows are observations, columns are variables).

use nalgebra::DMatrix;

use crate::error::{Result, SsdrError};

/// An n×d matrix of finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    /// Wraps a matrix, rejecting NaN and infinite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(SsdrError::InvalidInput(format!(
                "non-finite entry at row {r}, column {c}"
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(SsdrError::InvalidInput("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    /// A single-column matrix.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn column(&self, j: usize) -> DataMatrix {
        DataMatrix {
            values: self.values.columns(j, 1).into_owned(),
        }
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_columns(cols),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_rows(rows),
        }
    }

    /// Product `self · b`. Finite inputs give finite outputs unless they overflow.
    pub fn project(&self, b: &DMatrix<f64>) -> Result<DataMatrix> {
        if b.nrows() != self.ncols() {
            return Err(SsdrError::InvalidInput(format!(
                "basis has {} rows, data has {} columns",
                b.nrows(),
                self.ncols()
            )));
        }
        DataMatrix::new(&self.values * b)
    }

    /// True when every row is identical.
    pub fn is_constant(&self) -> bool {
        let n = self.nrows();
        n == 0
            || (1..n).all(|i| {
                self.values
                    .row(i)
                    .iter()
                    .zip(self.values.row(0).iter())
                    .all(|(a, b)| a == b)
            })
    }
}

pub(crate) fn check_same_rows(x: &DataMatrix, y: &DataMatrix) -> Result<usize> {
    if x.nrows() != y.nrows() {
        return Err(SsdrError::InvalidInput(format!(
            "row-count mismatch: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(SsdrError::InvalidInput("need at least two rows".into()));
    }
    Ok(x.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan() {
        let err = DataMatrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, SsdrError::InvalidInput(_)));
        assert!(DataMatrix::from_column(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn constant_detection() {
        assert!(DataMatrix::from_column(&[2.0, 2.0, 2.0])
            .unwrap()
            .is_constant());
        assert!(!DataMatrix::from_column(&[2.0, 2.0, 3.0])
            .unwrap()
            .is_constant());
    }

    #[test]
    fn ragged_rows_fail() {
        assert!(DataMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
