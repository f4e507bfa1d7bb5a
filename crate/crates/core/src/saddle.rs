//! Factor-once / solve-many saddle-point systems `[[W, G], [Gᵀ, 0]]`.
//!
//! Solving with right-hand side `[r; 0]` and keeping the top `n_v` rows
//! applies `W⁻¹Π`-type operators without ever forming the projector; the
//! multiplier block is discarded.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lu::{SparseLu, SymbolicLu};
use crate::par::Execution;
use crate::sparse::{Scalar, SparseMatrix};
use crate::Complex64;

/// Which leading block `W` a factorization holds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SaddleKind {
    /// `W = M`
    MassBlock,
    /// `W = A` (or `Aᵀ`)
    StiffnessBlock,
    /// `W = sM − A`
    ShiftedBlock(Complex64),
    /// `W = M − hA`, the implicit Euler matrix.
    EulerBlock(f64),
}

/// Reusable ordering for every saddle matrix with the same block pattern.
#[derive(Clone, Debug)]
pub struct SaddleAnalysis {
    symbolic: SymbolicLu,
}

impl SaddleAnalysis {
    pub fn new<T: Scalar>(w: &SparseMatrix<T>, g: &SparseMatrix<f64>) -> Result<Self> {
        let k = w.saddle_block(g)?;
        Ok(Self {
            symbolic: SymbolicLu::analyze(&k)?,
        })
    }

    pub fn factor<T: Scalar>(
        &self,
        w: &SparseMatrix<T>,
        g: &SparseMatrix<f64>,
        kind: SaddleKind,
    ) -> Result<SaddleFactorization<T>> {
        let k = w.saddle_block(g)?;
        let lu = SparseLu::factor_with(&self.symbolic, &k).map_err(|e| annotate(e, kind))?;
        Ok(SaddleFactorization {
            kind,
            n_v: w.nrows(),
            n_p: g.ncols(),
            lu,
        })
    }
}

fn annotate(e: Error, kind: SaddleKind) -> Error {
    match e {
        Error::SingularSaddle(msg) => Error::SingularSaddle(format!("{kind:?}: {msg}")),
        other => other,
    }
}

/// LU factors of one assembled saddle matrix.
#[derive(Clone, Debug)]
pub struct SaddleFactorization<T = f64> {
    kind: SaddleKind,
    n_v: usize,
    n_p: usize,
    lu: SparseLu<T>,
}

/// Factors `[[W, G], [Gᵀ, 0]]`.
pub fn factor_saddle<T: Scalar>(
    w: &SparseMatrix<T>,
    g: &SparseMatrix<f64>,
    kind: SaddleKind,
) -> Result<SaddleFactorization<T>> {
    SaddleAnalysis::new(w, g)?.factor(w, g, kind)
}

/// Top `n_v` rows of the solve with right-hand side `[rhs; 0]`.
pub fn solve_saddle<T: Scalar>(f: &SaddleFactorization<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    f.solve(rhs, Execution::default())
}

impl<T: Scalar> SaddleFactorization<T> {
    pub fn kind(&self) -> SaddleKind {
        self.kind
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn lu(&self) -> &SparseLu<T> {
        &self.lu
    }

    /// Velocity part `x` of `[[W, G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]`.
    pub fn solve(&self, rhs: &DMatrix<T>, exec: Execution) -> Result<DMatrix<T>> {
        let full = self.solve_full(rhs, exec)?;
        Ok(full.rows(0, self.n_v).into_owned())
    }

    /// Full solution `[x; multiplier]`.
    pub fn solve_full(&self, rhs: &DMatrix<T>, exec: Execution) -> Result<DMatrix<T>> {
        if rhs.nrows() != self.n_v {
            return Err(Error::DimensionMismatch(format!(
                "saddle right-hand side has {} rows, expected {}",
                rhs.nrows(),
                self.n_v
            )));
        }
        let mut padded = DMatrix::zeros(self.n_v + self.n_p, rhs.ncols());
        padded.rows_mut(0, self.n_v).copy_from(rhs);
        Ok(self.lu.solve(&padded, exec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (SparseMatrix, SparseMatrix) {
        let w = SparseMatrix::identity(2);
        let g = SparseMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]).unwrap();
        (w, g)
    }

    #[test]
    fn hand_solves() {
        let (w, g) = tiny();
        let f = factor_saddle(&w, &g, SaddleKind::MassBlock).unwrap();
        let x = solve_saddle(&f, &DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0]);
        let x = solve_saddle(&f, &DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(x.norm() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_singular() {
        let w = SparseMatrix::<f64>::identity(2);
        let g = SparseMatrix::from_triplets(2, 1, &[(0, 0, 0.0)]).unwrap();
        assert!(matches!(
            factor_saddle(&w, &g, SaddleKind::MassBlock),
            Err(Error::SingularSaddle(_))
        ));
    }

    #[test]
    fn wrong_rhs_rows() {
        let (w, g) = tiny();
        let f = factor_saddle(&w, &g, SaddleKind::MassBlock).unwrap();
        assert!(matches!(
            f.solve(&DMatrix::zeros(3, 1), Execution::Sequential),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let (w, g) = tiny();
        let f = factor_saddle(&w, &g, SaddleKind::StiffnessBlock).unwrap();
        let rhs = DMatrix::from_column_slice(2, 2, &[0.3, -1.7, 2.0, 5.0]);
        let a = f.solve(&rhs, Execution::Parallel).unwrap();
        let b = f.solve(&rhs, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
