//! Sparse LU factorization with threshold partial pivoting.
//!
//! Left-looking (Gilbert–Peierls) column elimination: each column of
//! `P K Q = L U` is produced by a sparse triangular solve whose nonzero
//! pattern comes from a depth-first reach in the graph of `L`. The column
//! order `Q` is a minimum-degree ordering of the symmetrized pattern and can
//! be computed once and reused for every matrix with the same pattern.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::sparse::{Scalar, SparseMatrix};

/// Preference for the diagonal entry during pivoting: it is kept whenever
/// its magnitude is at least this fraction of the column maximum.
const DIAGONAL_PREFERENCE: f64 = 0.1;

/// Pivots below `PIVOT_TOL * max|K|` are treated as exact zeros.
const PIVOT_TOL: f64 = 1e-13;

/// Column ordering shared by all matrices with one sparsity pattern.
#[derive(Clone, Debug)]
pub struct SymbolicLu {
    n: usize,
    col_perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SymbolicLu {
    pub fn analyze<T: Scalar>(k: &SparseMatrix<T>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {:?}",
                k.shape()
            )));
        }
        Ok(Self {
            n: k.nrows(),
            col_perm: minimum_degree(k),
            col_ptr: k.col_ptr().to_vec(),
            row_idx: k.row_idx().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    pub fn matches<T: Scalar>(&self, k: &SparseMatrix<T>) -> bool {
        k.nrows() == self.n && k.col_ptr() == self.col_ptr.as_slice() && k.row_idx() == self.row_idx.as_slice()
    }
}

/// Numeric factors of `P K Q = L U`.
#[derive(Clone, Debug)]
pub struct SparseLu<T> {
    n: usize,
    // L is unit lower triangular, diagonal stored first in each column;
    // row indices are already in pivoted numbering.
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<T>,
    // U is upper triangular, diagonal stored last in each column.
    u_ptr: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<T>,
    /// Original row -> pivot position.
    pinv: Vec<usize>,
    /// Pivot position -> original column.
    q: Vec<usize>,
}

impl<T: Scalar> SparseLu<T> {
    pub fn factor(k: &SparseMatrix<T>) -> Result<Self> {
        let sym = SymbolicLu::analyze(k)?;
        Self::factor_with(&sym, k)
    }

    pub fn factor_with(sym: &SymbolicLu, k: &SparseMatrix<T>) -> Result<Self> {
        if !sym.matches(k) {
            return Err(Error::DimensionMismatch(
                "matrix pattern differs from the symbolic analysis".into(),
            ));
        }
        let n = sym.n;
        let q = sym.col_perm.clone();
        let scale = k.max_abs();
        let tiny = PIVOT_TOL * scale;
        if n > 0 && scale == 0.0 {
            return Err(Error::SingularSaddle("matrix is identically zero".into()));
        }

        const UNSET: usize = usize::MAX;
        let mut pinv = vec![UNSET; n];
        let mut l_ptr = Vec::with_capacity(n + 1);
        let mut l_idx: Vec<usize> = Vec::with_capacity(4 * k.nnz() + n);
        let mut l_val: Vec<T> = Vec::with_capacity(4 * k.nnz() + n);
        let mut u_ptr = Vec::with_capacity(n + 1);
        let mut u_idx: Vec<usize> = Vec::with_capacity(4 * k.nnz() + n);
        let mut u_val: Vec<T> = Vec::with_capacity(4 * k.nnz() + n);

        let mut x = vec![T::zero(); n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];

        for col in 0..n {
            l_ptr.push(l_idx.len());
            u_ptr.push(u_idx.len());
            let kc = q[col];
            let (b_rows, b_vals) = k.column(kc);

            // Reach of the column's pattern in the graph of the partial L.
            let mut top = n;
            for &r in b_rows {
                if !marked[r] {
                    top = reach_dfs(
                        r,
                        &l_ptr,
                        &l_idx,
                        &pinv,
                        col,
                        &mut marked,
                        &mut xi,
                        top,
                        &mut stack,
                        &mut pstack,
                    );
                }
            }
            for &r in &xi[top..n] {
                marked[r] = false;
                x[r] = T::zero();
            }
            for (&r, &v) in b_rows.iter().zip(b_vals) {
                x[r] = v;
            }

            // x = L \ K(:, kc) restricted to the reach, in topological order.
            for px in top..n {
                let j = xi[px];
                let jj = pinv[j];
                if jj == UNSET {
                    continue;
                }
                let xj = x[j];
                // Skip the unit diagonal stored first.
                for p in (l_ptr[jj] + 1)..l_end(&l_ptr, jj, l_idx.len()) {
                    let r = l_idx[p];
                    x[r] -= l_val[p] * xj;
                }
            }

            // Pick the pivot among rows not yet pivotal.
            let mut ipiv = UNSET;
            let mut best = -1.0;
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    let t = x[i].modulus();
                    if t > best {
                        best = t;
                        ipiv = i;
                    }
                } else {
                    u_idx.push(pinv[i]);
                    u_val.push(x[i]);
                }
            }
            if ipiv == UNSET || best <= tiny {
                return Err(Error::SingularSaddle(format!(
                    "pivot {best:e} in column {col} below threshold {tiny:e}"
                )));
            }
            if pinv[kc] == UNSET && x[kc].modulus() >= DIAGONAL_PREFERENCE * best {
                ipiv = kc;
            }
            let pivot = x[ipiv];
            u_idx.push(col);
            u_val.push(pivot);
            pinv[ipiv] = col;
            l_idx.push(ipiv);
            l_val.push(T::one());
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    l_idx.push(i);
                    l_val.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
        }
        l_ptr.push(l_idx.len());
        u_ptr.push(u_idx.len());
        for r in &mut l_idx {
            *r = pinv[*r];
        }

        Ok(Self {
            n,
            l_ptr,
            l_idx,
            l_val,
            u_ptr,
            u_idx,
            u_val,
            pinv,
            q,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len()
    }

    /// Solves `K x = b` in place for one right-hand side.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = vec![T::zero(); n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.pinv[i]] = bi;
        }
        // L y = P b
        for j in 0..n {
            let yj = y[j];
            if yj == T::zero() {
                continue;
            }
            for p in (self.l_ptr[j] + 1)..self.l_ptr[j + 1] {
                y[self.l_idx[p]] -= self.l_val[p] * yj;
            }
        }
        // U z = y
        for j in (0..n).rev() {
            let last = self.u_ptr[j + 1] - 1;
            y[j] /= self.u_val[last];
            let yj = y[j];
            if yj == T::zero() {
                continue;
            }
            for p in self.u_ptr[j]..last {
                y[self.u_idx[p]] -= self.u_val[p] * yj;
            }
        }
        for (k, &c) in self.q.iter().enumerate() {
            b[c] = y[k];
        }
    }

    /// Column-by-column solve of `K X = B`.
    pub fn solve(&self, rhs: &DMatrix<T>, exec: Execution) -> DMatrix<T> {
        assert_eq!(rhs.nrows(), self.n);
        let cols = par::map_range(exec, rhs.ncols(), |c| {
            let mut col: Vec<T> = rhs.column(c).iter().copied().collect();
            self.solve_in_place(&mut col);
            col
        });
        let mut out = DMatrix::zeros(self.n, rhs.ncols());
        for (c, col) in cols.into_iter().enumerate() {
            out.column_mut(c).copy_from_slice(&col);
        }
        out
    }

    /// Dense `P⁻¹ L U Q⁻¹`, for verification on small matrices.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let n = self.n;
        let mut l = DMatrix::zeros(n, n);
        let mut u = DMatrix::zeros(n, n);
        for j in 0..n {
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                l[(self.l_idx[p], j)] = self.l_val[p];
            }
            for p in self.u_ptr[j]..self.u_ptr[j + 1] {
                u[(self.u_idx[p], j)] = self.u_val[p];
            }
        }
        let lu = l * u;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                out[(i, self.q[k])] = lu[(self.pinv[i], k)];
            }
        }
        out
    }
}

fn l_end(l_ptr: &[usize], j: usize, len: usize) -> usize {
    if j + 1 < l_ptr.len() {
        l_ptr[j + 1]
    } else {
        len
    }
}

/// Non-recursive depth-first search from `start` in the graph of `L`;
/// finished nodes are pushed onto `xi[..top]` from the back.
#[allow(clippy::too_many_arguments)]
fn reach_dfs(
    start: usize,
    l_ptr: &[usize],
    l_idx: &[usize],
    pinv: &[usize],
    ncols_done: usize,
    marked: &mut [bool],
    xi: &mut [usize],
    mut top: usize,
    stack: &mut [usize],
    pstack: &mut [usize],
) -> usize {
    let mut head = 0usize;
    stack[0] = start;
    loop {
        let j = stack[head];
        let jj = pinv[j];
        let has_col = jj != usize::MAX && jj < ncols_done;
        if !marked[j] {
            marked[j] = true;
            pstack[head] = if has_col { l_ptr[jj] + 1 } else { 0 };
        }
        let mut done = true;
        if has_col {
            let end = l_end(l_ptr, jj, l_idx.len());
            let mut p = pstack[head];
            while p < end {
                let i = l_idx[p];
                p += 1;
                if !marked[i] {
                    pstack[head] = p;
                    head += 1;
                    stack[head] = i;
                    done = false;
                    break;
                }
            }
            if done {
                pstack[head] = end;
            }
        }
        if done {
            top -= 1;
            xi[top] = j;
            if head == 0 {
                break;
            }
            head -= 1;
        }
    }
    top
}

/// Minimum-degree ordering of the pattern of `K + Kᵀ` on an explicit
/// elimination graph. Ties are broken by the smaller index, so the ordering
/// is deterministic.
pub fn minimum_degree<T: Scalar>(k: &SparseMatrix<T>) -> Vec<usize> {
    let n = k.nrows();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in k.triplets() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}
