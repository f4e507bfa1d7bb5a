//! Dense kernels: thin QR, block Gram–Schmidt, SVD, Schur forms,
//! generalized eigenvalues and the Lyapunov solver used by the Riccati code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::Complex64;

/// Relative rank tolerance for breakdown detection.
pub const RANK_TOL: f64 = 1e-12;

/// Second Gram–Schmidt pass when a column keeps less than this fraction of its norm.
pub const REORTH_RATIO: f64 = 0.7;

/// Thin QR factors `X = Q R`.
#[derive(Clone, Debug)]
pub struct BlockQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl BlockQr {
    /// `R[0..k, 0..k]`, e.g. the leading input block of the first factor.
    pub fn r_block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        self.r
            .view((rows.start, cols.start), (rows.len(), cols.len()))
            .into_owned()
    }
}

/// Householder thin QR with a nonnegative diagonal in `R`.
///
/// Fails with `RankDeficient` when `|R[i,i]| < RANK_TOL * ‖X‖_F`.
pub fn thin_qr(x: &DMatrix<f64>) -> Result<BlockQr> {
    thin_qr_scaled(x, x.norm())
}

/// As [`thin_qr`], with the rank test taken relative to `scale` instead of `‖X‖_F`.
pub fn thin_qr_scaled(x: &DMatrix<f64>, scale: f64) -> Result<BlockQr> {
    let (n, k) = x.shape();
    if n < k {
        return Err(Error::DimensionMismatch(format!("thin QR needs n >= k, got {n}x{k}")));
    }
    let (mut q, mut r) = householder_qr(x);
    let tol = RANK_TOL * scale;
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
        if !(r[(i, i)] > tol) || !r[(i, i)].is_finite() {
            return Err(Error::RankDeficient {
                column: i,
                value: r[(i, i)],
                tol,
            });
        }
    }
    Ok(BlockQr { q, r })
}

/// Thin Householder QR without any rank test.
pub fn householder_qr(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = x.ncols().min(x.nrows());
    let qr = x.clone().qr();
    let q = qr.q().columns(0, k).into_owned();
    let r = qr.r().rows(0, k).into_owned();
    (q, r)
}

/// Orthogonalizes `candidate` against mutually orthonormal `existing` blocks
/// (block modified Gram–Schmidt), with one extra pass when any column lost
/// more than `1 - REORTH_RATIO` of its norm. Returns the accumulated
/// coefficients `V_iᵀ candidate` and the orthogonalized block.
pub fn block_gram_schmidt(candidate: &DMatrix<f64>, existing: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut w = candidate.clone();
    if existing.is_empty() {
        return (Vec::new(), w);
    }
    let before: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut coeffs: Vec<DMatrix<f64>> = existing
        .iter()
        .map(|v| {
            let h = v.tr_mul(&w);
            w -= v * &h;
            h
        })
        .collect();
    let lost = w
        .column_iter()
        .zip(&before)
        .any(|(c, &b)| b > 0.0 && c.norm() < REORTH_RATIO * b);
    if lost {
        for (v, h) in existing.iter().zip(coeffs.iter_mut()) {
            let dh = v.tr_mul(&w);
            w -= v * &dh;
            *h += dh;
        }
    }
    (coeffs, w)
}

/// Singular value decomposition with singular values sorted decreasingly.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

/// Sweep cap for the Jacobi SVD; convergence is quadratic, so this is never
/// reached on sane input.
const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD. Slower than bidiagonalization but keeps
/// full accuracy when singular values cluster, which is exactly the
/// situation for oblique projectors.
pub fn dense_svd(x: &DMatrix<f64>) -> Result<Svd> {
    if x.nrows() < x.ncols() {
        let t = dense_svd(&x.transpose())?;
        return Ok(Svd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        });
    }
    let (m, n) = x.shape();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("SVD of a non-finite matrix".into()));
    }
    let mut a = x.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("Jacobi SVD sweep cap reached".into()));
    }
    let sigma: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let tol = sigma.iter().copied().fold(0.0, f64::max) * f64::EPSILON * m as f64;
    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut filled = Vec::new();
    for (c, &j) in idx.iter().enumerate() {
        if sigma[j] > tol {
            u.column_mut(c).copy_from(&(a.column(j) / sigma[j]));
            filled.push(c);
        }
    }
    complete_orthonormal(&mut u, &filled);
    let singular_values = idx.iter().map(|&j| sigma[j]).collect();
    let v_t = DMatrix::from_fn(n, n, |r, c| v[(c, idx[r])]);
    Ok(Svd {
        u,
        singular_values,
        v_t,
    })
}

fn rotate_columns(x: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..x.nrows() {
        let (xp, xq) = (x[(i, p)], x[(i, q)]);
        x[(i, p)] = c * xp - s * xq;
        x[(i, q)] = s * xp + c * xq;
    }
}

/// Fills the columns of `u` not listed in `filled` with an orthonormal
/// completion drawn from the coordinate vectors.
fn complete_orthonormal(u: &mut DMatrix<f64>, filled: &[usize]) {
    let (m, n) = u.shape();
    let mut done: Vec<usize> = filled.to_vec();
    let mut next = 0;
    for c in 0..n {
        if filled.contains(&c) {
            continue;
        }
        while next < m {
            let mut e = nalgebra::DVector::<f64>::zeros(m);
            e[next] = 1.0;
            next += 1;
            for _ in 0..2 {
                for &k in &done {
                    let h = u.column(k).dot(&e);
                    e -= u.column(k) * h;
                }
            }
            let nrm = e.norm();
            if nrm > 0.5 {
                u.column_mut(c).copy_from(&(e / nrm));
                done.push(c);
                break;
            }
        }
    }
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().max()
}

pub fn spectral_norm_complex(x: &DMatrix<Complex64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().max()
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Iterations allowed per deflated eigenvalue before giving up.
const SCHUR_ITER_PER_EIGENVALUE: usize = 100;

/// Householder reduction to upper Hessenberg form, `h ← Pᴴ h P`, `q ← q P`.
fn hessenberg(h: &mut DMatrix<Complex64>, q: &mut DMatrix<Complex64>) {
    let n = h.nrows();
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<Complex64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let phase = if v[0].norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            v[0] / v[0].norm()
        };
        v[0] += phase * xnorm;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= vnorm);
        // left: rows k+1.., reflector I − 2vvᴴ
        for j in k..n {
            let dot: Complex64 = v.iter().enumerate().map(|(i, vi)| vi.conj() * h[(k + 1 + i, j)]).sum();
            for (i, vi) in v.iter().enumerate() {
                h[(k + 1 + i, j)] -= *vi * dot * 2.0;
            }
        }
        for m in [&mut *h, &mut *q] {
            for r in 0..n {
                let dot: Complex64 = v.iter().enumerate().map(|(i, vi)| m[(r, k + 1 + i)] * vi).sum();
                for (i, vi) in v.iter().enumerate() {
                    m[(r, k + 1 + i)] -= dot * vi.conj() * 2.0;
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = ZERO;
        }
    }
}

/// Rotation `[[c, s], [−s̄, c]]` with real `c` that maps `(x, y)` to `(r, 0)`.
fn givens(x: Complex64, y: Complex64) -> (f64, Complex64) {
    let ax = x.norm();
    let nrm = (ax * ax + y.norm_sqr()).sqrt();
    if nrm == 0.0 {
        (1.0, ZERO)
    } else if ax == 0.0 {
        (0.0, Complex64::new(1.0, 0.0))
    } else {
        (ax / nrm, x / ax * y.conj() / nrm)
    }
}

/// Complex Schur form `X = Q T Qᴴ` with `T` upper triangular.
///
/// Hessenberg reduction followed by single-shift QR sweeps with Wilkinson
/// shifts and a periodic exceptional shift. Hamiltonian matrices, whose
/// spectrum is symmetric about the imaginary axis, can cycle under plain
/// Wilkinson shifts.
pub fn complex_schur(x: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::DimensionMismatch("Schur form needs a square matrix".into()));
    }
    let mut h = x.clone();
    let mut q = DMatrix::<Complex64>::identity(n, n);
    hessenberg(&mut h, &mut q);
    let eps = f64::EPSILON;
    let small = f64::MIN_POSITIVE * n.max(1) as f64 / eps;
    let mut hi = n.saturating_sub(1);
    let mut iter = 0;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            if sub <= small || sub <= eps * (h[(l - 1, l - 1)].norm() + h[(l, l)].norm()) {
                h[(l, l - 1)] = ZERO;
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > SCHUR_ITER_PER_EIGENVALUE {
            return Err(Error::NoConvergence("complex Schur iteration cap reached".into()));
        }
        let shift = if iter % 10 == 0 {
            h[(hi, hi)] + h[(hi, hi - 1)].re.abs() * 0.75
        } else {
            let (a, b, c, d) = (h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)]);
            let half = (a - d) * 0.5;
            let disc = (half * half + b * c).sqrt();
            let tr = (a + d) * 0.5;
            let (m1, m2) = (tr + disc, tr - disc);
            if (m1 - d).norm() <= (m2 - d).norm() {
                m1
            } else {
                m2
            }
        };
        let (mut xv, mut yv) = (h[(l, l)] - shift, h[(l + 1, l)]);
        for k in l..hi {
            if k > l {
                xv = h[(k, k - 1)];
                yv = h[(k + 1, k - 1)];
            }
            let (c, s) = givens(xv, yv);
            for j in k.saturating_sub(1).max(l)..n {
                let (a, b) = (h[(k, j)], h[(k + 1, j)]);
                h[(k, j)] = a * c + s * b;
                h[(k + 1, j)] = b * c - s.conj() * a;
            }
            if k > l {
                h[(k + 1, k - 1)] = ZERO;
            }
            let rows = (k + 2).min(hi) + 1;
            for r in 0..rows {
                let (a, b) = (h[(r, k)], h[(r, k + 1)]);
                h[(r, k)] = a * c + b * s.conj();
                h[(r, k + 1)] = b * c - a * s;
            }
            for r in 0..n {
                let (a, b) = (q[(r, k)], q[(r, k + 1)]);
                q[(r, k)] = a * c + b * s.conj();
                q[(r, k + 1)] = b * c - a * s;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = ZERO;
        }
    }
    Ok((q, h))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(x: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let (_, t) = complex_schur(&x.map(|v| Complex64::new(v, 0.0)))?;
    Ok(t.diagonal().iter().copied().collect())
}

/// Complex Schur form `X = Q T Qᴴ` reordered so that the eigenvalues accepted
/// by `select` lead the diagonal. Returns `(Q, T, count_selected)`.
pub fn ordered_schur(
    x: &DMatrix<Complex64>,
    select: impl Fn(Complex64) -> bool,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, usize)> {
    let (mut q, mut t) = complex_schur(x)?;
    let n = t.nrows();
    let mut ks = 0;
    for j in 0..n {
        if select(t[(j, j)]) {
            let mut pos = j;
            while pos > ks {
                swap_adjacent(&mut q, &mut t, pos - 1);
                pos -= 1;
            }
            ks += 1;
        }
    }
    Ok((q, t, ks))
}

/// Exchanges the diagonal entries `i` and `i+1` of an upper triangular `T`
/// by a unitary rotation, updating `Q` accordingly.
fn swap_adjacent(q: &mut DMatrix<Complex64>, t: &mut DMatrix<Complex64>, i: usize) {
    let n = t.nrows();
    let a = t[(i, i)];
    let b = t[(i, i + 1)];
    let c = t[(i + 1, i + 1)];
    // Eigenvector of the 2x2 block for eigenvalue c.
    let x1 = b;
    let x2 = c - a;
    let nrm = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
    if nrm == 0.0 {
        return;
    }
    let (z00, z10) = (x1 / nrm, x2 / nrm);
    let (z01, z11) = (-z10.conj(), z00.conj());
    for col in i..n {
        let (r1, r2) = (t[(i, col)], t[(i + 1, col)]);
        t[(i, col)] = z00.conj() * r1 + z10.conj() * r2;
        t[(i + 1, col)] = z01.conj() * r1 + z11.conj() * r2;
    }
    for row in 0..=(i + 1) {
        let (c1, c2) = (t[(row, i)], t[(row, i + 1)]);
        t[(row, i)] = c1 * z00 + c2 * z10;
        t[(row, i + 1)] = c1 * z01 + c2 * z11;
    }
    for row in 0..n {
        let (c1, c2) = (q[(row, i)], q[(row, i + 1)]);
        q[(row, i)] = c1 * z00 + c2 * z10;
        q[(row, i + 1)] = c1 * z01 + c2 * z11;
    }
    t[(i + 1, i)] = Complex64::new(0.0, 0.0);
    t[(i, i)] = c;
    t[(i + 1, i + 1)] = a;
}

/// One eigenvalue of a pencil `(A, B)` in homogeneous form `λ = α / β`,
/// scaled so that `|α|² + |β|² = 1`.
#[derive(Clone, Copy, Debug)]
pub struct PencilEigenvalue {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub infinite: bool,
}

impl PencilEigenvalue {
    /// `α / β`, or complex infinity for flagged infinite eigenvalues.
    pub fn value(&self) -> Complex64 {
        if self.infinite {
            Complex64::new(f64::INFINITY, 0.0)
        } else {
            self.alpha / self.beta
        }
    }
}

/// Relative size (against the largest eigenvalue of the shift-inverted
/// operator) below which an eigenvalue is reported as infinite.
pub const INFINITE_EIG_TOL: f64 = 1e-7;

/// Eigenvalues of the pencil `A - λB` via a real shift-and-invert
/// transformation: the eigenvalues `μ` of `(A - σB)⁻¹B` map to
/// `λ = σ + 1/μ`, and `μ ≈ 0` marks an infinite eigenvalue.
///
/// Defective infinite eigenvalues (index-2 pencils) are perturbed to
/// `O(√ε)` in `μ`, so the flag uses [`INFINITE_EIG_TOL`] relative to
/// `max |μ|`.
pub fn dense_generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<PencilEigenvalue>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "pencil matrices must be square and equal size".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let na = a.norm();
    let nb = b.norm().max(f64::MIN_POSITIVE);
    let base = if na > 0.0 { na / nb } else { 1.0 };
    // Shifts away from any structured value; the first nonsingular one wins.
    let candidates = [-0.319_744_1, 0.571_337_9, -1.402_781_3, 2.731_592_7, -0.054_321];
    for &c in &candidates {
        let sigma = c * base;
        let shifted = a - b * sigma;
        let lu = shifted.clone().lu();
        let u = lu.u();
        let min_piv = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let max_piv = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
        if !(min_piv > 1e-10 * max_piv) {
            continue;
        }
        let s = match lu.solve(b) {
            Some(s) => s,
            None => continue,
        };
        let mus = eigenvalues(&s)?;
        let mu_max = mus.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let out = mus
            .into_iter()
            .map(|mu| {
                let alpha = Complex64::new(1.0, 0.0) + mu * sigma;
                let beta = mu;
                let scale = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
                PencilEigenvalue {
                    alpha: alpha / scale,
                    beta: beta / scale,
                    infinite: mu.norm() <= INFINITE_EIG_TOL * mu_max,
                }
            })
            .collect();
        return Ok(out);
    }
    Err(Error::NoConvergence(
        "no regular shift found for the pencil (singular pencil?)".into(),
    ))
}

/// Solves `F Y + Y Fᵀ + W = 0` by Bartels–Stewart on the complex Schur form of `F`.
pub fn lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if f.shape() != (n, n) || w.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Lyapunov operands must be square".into()));
    }
    let fc = f.map(|v| Complex64::new(v, 0.0));
    let (u, s) = complex_schur(&fc)?;
    let wt = u.adjoint() * w.map(|v| Complex64::new(v, 0.0)) * &u;
    // S Ỹ + Ỹ Sᴴ = -W̃, solved column by column from the last one.
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs: Vec<Complex64> = (0..n).map(|i| -wt[(i, j)]).collect();
        for k in (j + 1)..n {
            let c = s[(j, k)].conj();
            for i in 0..n {
                rhs[i] -= y[(i, k)] * c;
            }
        }
        let shift = s[(j, j)].conj();
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for k in (i + 1)..n {
                acc -= s[(i, k)] * y[(k, j)];
            }
            let d = s[(i, i)] + shift;
            if d.norm() == 0.0 {
                return Err(Error::NoConvergence(
                    "Lyapunov operator is singular (eigenvalues λ_i + λ_j = 0)".into(),
                ));
            }
            y[(i, j)] = acc / d;
        }
    }
    let yr = (&u * y * u.adjoint()).map(|v| v.re);
    Ok((&yr + yr.transpose()) * 0.5)
}
