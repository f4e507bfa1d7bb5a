//! Compressed-column sparse matrices over real or complex scalars.

use nalgebra::{ComplexField, DMatrix};

use crate::error::{Error, Result};
use crate::Complex64;

/// Scalar field shared by the sparse kernels: `f64` and `Complex64`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {}
impl<T: ComplexField<RealField = f64> + Copy + Send + Sync> Scalar for T {}

/// Sparse matrix in compressed sparse column layout.
///
/// Row indices are sorted within each column and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T = f64> {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Assembles from coordinate triplets; duplicate coordinates are summed.
    /// Entries that sum to an exact zero are kept as structural entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(i, j, v) in triplets {
            let p = next[j];
            rows[p] = i;
            vals[p] = v;
            next[j] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == rows[p] {
                    let last = values.last_mut().unwrap();
                    *last += vals[p];
                } else {
                    row_idx.push(rows[p]);
                    values.push(vals[p]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Keeps entries with `|a_ij| > 0`.
    pub fn from_dense(dense: &DMatrix<T>) -> Self {
        let mut trip = Vec::new();
        for j in 0..dense.ncols() {
            for i in 0..dense.nrows() {
                let v = dense[(i, j)];
                if v.modulus() > 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), &trip).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[T]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (rows, vals) = self.column(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn scale(&self, alpha: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }

    /// `alpha * self + beta * other`, keeping the structural union of both patterns.
    pub fn add_scaled(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let trip: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// `self * x` for a dense block `x`.
    pub fn mul_dense(&self, x: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(self.ncols, x.nrows(), "sparse product dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            for j in 0..self.ncols {
                let xj = x[(j, c)];
                if xj == T::zero() {
                    continue;
                }
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    out[(self.row_idx[p], c)] += self.values[p] * xj;
                }
            }
        }
        out
    }

    /// `selfᵀ * x` without forming the transpose.
    pub fn tr_mul_dense(&self, x: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(self.nrows, x.nrows(), "sparse transpose product dimension mismatch");
        let mut out = DMatrix::zeros(self.ncols, x.ncols());
        for c in 0..x.ncols() {
            for j in 0..self.ncols {
                let mut acc = T::zero();
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    acc += self.values[p] * x[(self.row_idx[p], c)];
                }
                out[(j, c)] = acc;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    /// Same sparsity pattern (values may differ).
    pub fn same_pattern<U: Scalar>(&self, other: &SparseMatrix<U>) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    /// Stacks `[[self, g], [gᵀ, 0]]`.
    pub fn saddle_block(&self, g: &SparseMatrix<f64>) -> Result<Self> {
        let n_v = self.nrows;
        if self.ncols != n_v || g.nrows() != n_v {
            return Err(Error::DimensionMismatch(format!(
                "saddle block needs square W ({:?}) and G with {} rows ({:?})",
                self.shape(),
                n_v,
                g.shape()
            )));
        }
        let n = n_v + g.ncols();
        let mut trip: Vec<(usize, usize, T)> = self.triplets().collect();
        for (i, j, v) in g.triplets() {
            let v = T::from_real(v);
            trip.push((i, n_v + j, v));
            trip.push((n_v + j, i, v));
        }
        Self::from_triplets(n, n, &trip)
    }
}

impl SparseMatrix<f64> {
    pub fn to_complex(&self) -> SparseMatrix<Complex64> {
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Frobenius norm of `self - selfᵀ`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        self.add_scaled(1.0, &t, -1.0)
            .map(|d| d.frobenius_norm())
            .unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = SparseMatrix::from_triplets(3, 2, &[(2, 0, 1.0), (0, 0, 2.0), (2, 0, 3.0), (1, 1, -1.0)]).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(2, 0), 4.0);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.column(0).0, &[0, 2]);
    }

    #[test]
    fn out_of_bounds_triplet_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 0, 2.0), (2, 2, 3.0), (0, 2, -1.0)]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = m.to_dense();
        assert_eq!(m.mul_dense(&x), &d * &x);
        assert_eq!(m.tr_mul_dense(&x), d.transpose() * &x);
        assert_eq!(m.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn saddle_block_layout() {
        let w = SparseMatrix::<f64>::identity(2);
        let g = SparseMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]).unwrap();
        let k = w.saddle_block(&g).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(k, expected);
    }
}
