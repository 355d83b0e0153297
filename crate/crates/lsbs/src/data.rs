//! Training data containers: the sample matrix and the scaled metric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A collection of `m` training samples in dimension `d`, stored as the
/// columns of a `d × m` matrix. Column `j` is the sample `x^(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    entries: DMatrix<f64>,
}

impl SampleMatrix {
    /// Wraps a `d × m` matrix whose columns are samples. Rejects empty
    /// matrices and non-finite entries.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Data(format!(
                "sample matrix must be non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sample matrix contains non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    /// Builds a sample matrix from an iterator of equal-length columns.
    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Data("no sample columns provided".into()));
        }
        let d = columns[0].len();
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::Data("sample columns have inconsistent lengths".into()));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of samples `m`.
    pub fn len(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty matrices
    }

    /// The underlying `d × m` matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Sample `j` as a column slice of length `d`.
    pub fn column(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.entries.column(j)
    }

    /// Contiguous storage of column `j` (column-major layout).
    pub(crate) fn column_slice(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.entries.as_slice()[j * d..(j + 1) * d]
    }

    /// Restriction of the data to a subset of coordinates: returns the
    /// `members.len() × m` matrix with rows picked in `members` order.
    pub fn restrict_rows(&self, members: &[usize]) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(members.len(), m, |i, j| self.entries[(members[i], j)])
    }

    /// Row `alpha` as a dense vector of length `m`.
    pub fn row_vec(&self, alpha: usize) -> Vec<f64> {
        self.entries.row(alpha).iter().copied().collect()
    }

    /// Per-coordinate minima and maxima over the samples.
    pub fn coordinate_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let mut lower = DVector::from_element(d, f64::INFINITY);
        let mut upper = DVector::from_element(d, f64::NEG_INFINITY);
        for j in 0..self.len() {
            for i in 0..d {
                let v = self.entries[(i, j)];
                if v < lower[i] {
                    lower[i] = v;
                }
                if v > upper[i] {
                    upper[i] = v;
                }
            }
        }
        (lower, upper)
    }
}

/// Per-coordinate scaling applied inside squared distances: the squared
/// norm of `u` is `Σ_i u_i² / scales[i]`. Unit scales reproduce the
/// standard Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    scales: Vec<f64>,
    inv_scales: Vec<f64>,
}

impl Metric {
    /// A scaled metric with the given positive per-coordinate divisors.
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Parameter("metric needs at least one scale".into()));
        }
        if scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Parameter("metric scales must be strictly positive".into()));
        }
        let inv_scales = scales.iter().map(|s| 1.0 / s).collect();
        Ok(Self { scales, inv_scales })
    }

    /// The standard Euclidean metric in dimension `d`.
    pub fn euclidean(d: usize) -> Self {
        Self {
            scales: vec![1.0; d],
            inv_scales: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Scales restricted to a coordinate subset, in `members` order.
    pub fn restrict(&self, members: &[usize]) -> Vec<f64> {
        members.iter().map(|&i| self.scales[i]).collect()
    }

    /// Scaled squared distance between two vectors of the metric's dimension.
    pub fn squared_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.scales.len());
        debug_assert_eq!(b.len(), self.scales.len());
        let mut acc = 0.0;
        for i in 0..a.len() {
            let delta = a[i] - b[i];
            acc += delta * delta * self.inv_scales[i];
        }
        acc
    }

    /// Reciprocal scales restricted to a coordinate subset.
    pub(crate) fn restrict_inverse(&self, members: &[usize]) -> Vec<f64> {
        members.iter().map(|&i| self.inv_scales[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn rejects_non_finite_entries() {
        let m = dmatrix![1.0, f64::NAN; 0.0, 2.0];
        assert!(SampleMatrix::new(m).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(SampleMatrix::new(DMatrix::zeros(0, 3)).is_err());
        assert!(SampleMatrix::new(DMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn unit_scales_reproduce_euclidean_norm() {
        let metric = Metric::euclidean(3);
        let a = [1.0, 2.0, 3.0];
        let b = [0.0, 0.0, -1.0];
        assert_eq!(metric.squared_distance(&a, &b), 1.0 + 4.0 + 16.0);
    }

    #[test]
    fn scaled_distance_divides_per_coordinate() {
        let metric = Metric::new(vec![4.0, 1.0]).unwrap();
        let a = [2.0, 1.0];
        let b = [0.0, 0.0];
        assert_eq!(metric.squared_distance(&a, &b), 4.0 / 4.0 + 1.0);
    }

    #[test]
    fn metric_rejects_non_positive_scales() {
        assert!(Metric::new(vec![1.0, 0.0]).is_err());
        assert!(Metric::new(vec![-1.0]).is_err());
        assert!(Metric::new(vec![]).is_err());
    }

    #[test]
    fn restrict_rows_picks_in_member_order() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        let samples = SampleMatrix::new(m).unwrap();
        let r = samples.restrict_rows(&[2, 0]);
        assert_eq!(r, dmatrix![5.0, 6.0; 1.0, 2.0]);
    }

    #[test]
    fn coordinate_bounds_cover_all_columns() {
        let m = dmatrix![1.0, -2.0, 0.5; 0.0, 3.0, -1.0];
        let samples = SampleMatrix::new(m).unwrap();
        let (lo, hi) = samples.coordinate_bounds();
        assert_eq!(lo.as_slice(), &[-2.0, -1.0]);
        assert_eq!(hi.as_slice(), &[1.0, 3.0]);
    }
}
