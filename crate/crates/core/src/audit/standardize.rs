//! Column standardization with statistics frozen on the fitting split.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AuditError, Matrix};

/// Standard deviations below this are treated as constant columns.
const CONSTANT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column.
    pub fn fit(x: &Matrix) -> Result<Self, AuditError> {
        if x.rows() < 2 {
            return Err(AuditError::InsufficientData(x.rows()));
        }
        if !x.is_finite() {
            return Err(AuditError::NumericalError("non-finite feature value"));
        }
        let n = x.rows() as f64;
        let mut means = Vec::with_capacity(x.cols());
        let mut stds = Vec::with_capacity(x.cols());
        for c in 0..x.cols() {
            let mean = x.column(c).sum::<f64>() / n;
            let var = x.column(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            stds.push(libm::sqrt(var));
        }
        Ok(Self { means, stds })
    }

    /// Columns mapped to zeros because they had no spread.
    pub fn constant_columns(&self) -> Vec<usize> {
        self.stds
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < CONSTANT_EPS)
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies the fitted statistics, never the statistics of `x` itself.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, AuditError> {
        if x.cols() != self.means.len() {
            return Err(AuditError::ShapeMismatch("column count differs from the fitted data"));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if self.stds[c] < CONSTANT_EPS {
                    0.0
                } else {
                    (*v - self.means[c]) / self.stds[c]
                };
            }
        }
        Ok(out)
    }
}

/// Fits on `x` and returns the standardized copy with the statistics.
pub fn standardize(x: &Matrix) -> Result<(Matrix, Standardizer), AuditError> {
    let s = Standardizer::fit(x)?;
    let z = s.transform(x)?;
    Ok((z, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_points() {
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let (z, _) = standardize(&x).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_becomes_zero() {
        let x = Matrix::from_rows(&[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]]).unwrap();
        let (z, s) = standardize(&x).unwrap();
        assert_eq!(s.constant_columns(), [0]);
        assert!(z.column(0).all(|v| v == 0.0));
    }

    #[test]
    fn uses_fitted_statistics() {
        let train = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let test = Matrix::from_rows(&[vec![10.0], vec![12.0]]).unwrap();
        let s = Standardizer::fit(&train).unwrap();
        assert_eq!(s.transform(&test).unwrap().as_slice(), &[9.0, 11.0]);
    }

    #[test]
    fn single_row_rejected() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(Standardizer::fit(&x), Err(AuditError::InsufficientData(1)));
    }
}
