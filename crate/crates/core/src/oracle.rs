//! Dense reference computations for small systems.
//!
//! Everything the sparse path avoids is formed explicitly here: the oblique
//! projector `Π = I − G(GᵀM⁻¹G)⁻¹GᵀM⁻¹`, its factorization `Π = Θ_l Θ_rᵀ`,
//! the ODE on the constraint manifold, and the dense Riccati residual.
//!
//! `Θ` comes from the thin SVD `Π = U₁Σ₁W₁ᵀ` as `Θ_l = U₁Σ₁`, `Θ_r = W₁`.
//! Since `Π² = Π`, `U₁Σ₁(W₁ᵀU₁Σ₁)W₁ᵀ = U₁Σ₁W₁ᵀ`, and cancelling the full-rank
//! outer factors gives `W₁ᵀU₁Σ₁ = I`, i.e. `Θ_rᵀΘ_l = I`.

use nalgebra::DMatrix;

use crate::dense::{self, dense_generalized_eigen, dense_svd, thin_qr};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::sysmodel::DescriptorSystem;
use crate::Complex64;

pub const DEFAULT_SIZE_CAP: usize = 500;

/// Size cap for dense work, overridable through `EBARA_ORACLE_CAP`.
pub fn size_cap() -> usize {
    std::env::var("EBARA_ORACLE_CAP")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_SIZE_CAP)
}

pub fn check_cap(n: usize) -> Result<()> {
    let cap = size_cap();
    if n > cap {
        return Err(Error::SizeCapExceeded { n, cap });
    }
    Ok(())
}

fn cholesky_inverse_apply(m: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::Validation {
        invariant: "SPD",
        detail: "dense Cholesky of the mass matrix failed".into(),
    })?;
    Ok(chol.solve(x))
}

#[derive(Clone, Debug)]
pub struct DenseProjector {
    pub pi: DMatrix<f64>,
    pub theta_l: DMatrix<f64>,
    pub theta_r: DMatrix<f64>,
    /// Dense `M⁻¹`, kept for the residual formulas.
    pub m_inv: DMatrix<f64>,
}

pub fn build_projector(sys: &DescriptorSystem) -> Result<DenseProjector> {
    projector_from(&sys.m().to_dense(), &sys.g().to_dense())
}

pub fn projector_from(m: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DenseProjector> {
    let n_v = m.nrows();
    let n_p = g.ncols();
    check_cap(n_v)?;
    let eye = DMatrix::<f64>::identity(n_v, n_v);
    let m_inv = cholesky_inverse_apply(m, &eye)?;
    let pi = if n_p == 0 {
        eye.clone()
    } else {
        let minv_g = &m_inv * g;
        let schur = g.transpose() * &minv_g;
        let schur_inv = schur.try_inverse().ok_or_else(|| Error::Validation {
            invariant: "rank",
            detail: "GᵀM⁻¹G is singular".into(),
        })?;
        &eye - g * schur_inv * minv_g.transpose()
    };
    let svd = dense_svd(&pi)?;
    let r = n_v - n_p;
    let u1 = svd.u.columns(0, r).into_owned();
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&svd.singular_values[..r]));
    let theta_l = u1 * sigma;
    let theta_r = svd.v_t.rows(0, r).transpose();
    Ok(DenseProjector {
        pi,
        theta_l,
        theta_r,
        m_inv,
    })
}

/// Largest violation among the five projector identities.
#[derive(Clone, Copy, Debug)]
pub struct ProjectorErrors {
    pub idempotent: f64,
    pub annihilates_g: f64,
    pub m_symmetric: f64,
    pub theta_product: f64,
    pub theta_biorthogonal: f64,
}

impl ProjectorErrors {
    pub fn max(&self) -> f64 {
        [
            self.idempotent,
            self.annihilates_g,
            self.m_symmetric,
            self.theta_product,
            self.theta_biorthogonal,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl DenseProjector {
    /// Each identity measured relative to the natural scale of its terms.
    pub fn identity_errors(&self, m: &DMatrix<f64>, g: &DMatrix<f64>) -> ProjectorErrors {
        let p = &self.pi;
        let pn = p.norm().max(1.0);
        let r = self.theta_r.ncols();
        ProjectorErrors {
            idempotent: (p * p - p).norm() / pn,
            annihilates_g: if g.ncols() == 0 {
                0.0
            } else {
                (p * g).norm() / (pn * g.norm())
            },
            m_symmetric: (p * m - m * p.transpose()).norm() / (pn * m.norm()),
            theta_product: (&self.theta_l * self.theta_r.transpose() - p).norm() / pn,
            theta_biorthogonal: (self.theta_l.transpose() * &self.theta_r - DMatrix::<f64>::identity(r, r)).norm(),
        }
    }

    /// `M⁻¹Π`.
    pub fn m_inv_pi(&self) -> DMatrix<f64> {
        &self.m_inv * &self.pi
    }
}

/// The ODE `M_Θ ṽ' = A_Θ ṽ + B_Θ u`, `y = C_Θ ṽ` on the constraint manifold.
#[derive(Clone, Debug)]
pub struct ThetaSystem {
    pub m: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub theta_r: DMatrix<f64>,
}

impl ThetaSystem {
    pub fn new(sys: &DescriptorSystem, proj: &DenseProjector) -> Self {
        let tr = &proj.theta_r;
        Self {
            m: tr.transpose() * sys.m().to_dense() * tr,
            a: tr.transpose() * sys.a().to_dense() * tr,
            b: tr.transpose() * sys.b(),
            c: sys.c() * tr,
            theta_r: tr.clone(),
        }
    }

    /// `M_Θ⁻¹A_Θ` (or `M_Θ⁻¹A_Θᵀ` for the adjoint pair).
    pub fn operator(&self, adjoint: bool) -> Result<DMatrix<f64>> {
        let a = if adjoint { self.a.transpose() } else { self.a.clone() };
        cholesky_inverse_apply(&self.m, &a)
    }

    /// `M_Θ⁻¹B_Θ` (or `M_Θ⁻¹C_Θᵀ` for the adjoint pair).
    pub fn start_block(&self, adjoint: bool) -> Result<DMatrix<f64>> {
        let b = if adjoint { self.c.transpose() } else { self.b.clone() };
        cholesky_inverse_apply(&self.m, &b)
    }

    /// `C_Θ (sM_Θ − A_Θ)⁻¹ B_Θ`.
    pub fn transfer(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let w = self.m.map(|v| s * v) - self.a.map(|v| Complex64::new(v, 0.0));
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        let x = w
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularShift(format!("s = {s} is an eigenvalue of the reduced pencil")))?;
        Ok(self.c.map(|v| Complex64::new(v, 0.0)) * x)
    }

    pub fn spectrum(&self) -> Result<Vec<Complex64>> {
        let f = self.operator(false)?;
        crate::dense::eigenvalues(&f)
    }
}

/// Basis and projected operator of the textbook extended block Arnoldi
/// process on a dense pair `(F, S)`.
#[derive(Clone, Debug)]
pub struct DenseArnoldi {
    /// `V_1 .. V_{m+1}` (the last one may be missing after exhaustion).
    pub blocks: Vec<DMatrix<f64>>,
    /// `𝒱_{m+1}ᵀ F 𝒱_m`.
    pub t_bar: DMatrix<f64>,
}

impl DenseArnoldi {
    pub fn basis(&self, m: usize) -> DMatrix<f64> {
        hstack(&self.blocks[..m])
    }
}

pub(crate) fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// `m` steps of extended block Arnoldi on `(F, S)` with `F` invertible:
/// `V₁ = qr([S, F⁻¹S])`, then `qr([F V_j⁽¹⁾, F⁻¹ V_j⁽²⁾])` after Gram–Schmidt.
pub fn theta_arnoldi(f: &DMatrix<f64>, s: &DMatrix<f64>, m: usize) -> Result<DenseArnoldi> {
    let n = f.nrows();
    check_cap(n)?;
    let b = s.ncols();
    let f_lu = f.clone().lu();
    let finv = |x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        f_lu.solve(x)
            .ok_or_else(|| Error::SingularShift("operator is singular".into()))
    };
    let mut start = DMatrix::zeros(n, 2 * b);
    start.columns_mut(0, b).copy_from(s);
    start.columns_mut(b, b).copy_from(&finv(s)?);
    let breakdown = |iteration: usize, e: Error| match e {
        Error::RankDeficient { column, value, tol } => Error::Breakdown {
            iteration,
            column,
            value,
            tol,
        },
        other => other,
    };
    let qr = thin_qr(&start).map_err(|e| breakdown(0, e))?;
    let mut blocks = vec![qr.q];
    for j in 0..m {
        let v = &blocks[j];
        let mut cand = DMatrix::zeros(n, 2 * b);
        cand.columns_mut(0, b).copy_from(&(f * v.columns(0, b)));
        cand.columns_mut(b, b).copy_from(&finv(&v.columns(b, b).into_owned())?);
        let scale = cand.norm();
        let (_, w) = dense::block_gram_schmidt(&cand, &blocks);
        let qr = dense::thin_qr_scaled(&w, scale).map_err(|e| breakdown(j + 1, e))?;
        blocks.push(qr.q);
    }
    let vm = hstack(&blocks[..m]);
    let vm1 = hstack(&blocks[..m + 1]);
    let t_bar = vm1.transpose() * f * vm;
    Ok(DenseArnoldi { blocks, t_bar })
}

/// Spectral norm of `M⁻¹ΠAᵀX + XAΠᵀM⁻¹ − XBBᵀX + M⁻¹ΠCᵀCΠᵀM⁻¹` with `X = ZZᵀ`.
pub fn dense_gare_residual(sys: &DescriptorSystem, proj: &DenseProjector, z: &DMatrix<f64>) -> Result<f64> {
    dense_gare_residual_x(sys, proj, &(z * z.transpose()))
}

/// As [`dense_gare_residual`] for an explicit symmetric `X`.
pub fn dense_gare_residual_x(sys: &DescriptorSystem, proj: &DenseProjector, x: &DMatrix<f64>) -> Result<f64> {
    check_cap(sys.n_v())?;
    let mp = proj.m_inv_pi();
    let a = sys.a().to_dense();
    let mpc = &mp * sys.c().transpose();
    let xb = x * sys.b();
    let first = &mp * a.transpose() * x;
    let r = &first + first.transpose() - &xb * xb.transpose() + &mpc * mpc.transpose();
    Ok(dense::spectral_norm(&r))
}

/// `‖M⁻¹ΠCᵀCΠᵀM⁻¹‖₂`, the residual at `X = 0`.
pub fn gare_constant_norm(sys: &DescriptorSystem, proj: &DenseProjector) -> f64 {
    let mpc = proj.m_inv_pi() * sys.c().transpose();
    dense::spectral_norm(&(&mpc * mpc.transpose()))
}

/// Dense block pencil `([[A − BK, G], [Gᵀ, 0]], [[M, 0], [0, 0]])`.
pub fn block_pencil(sys: &DescriptorSystem, gain: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n_v, n_p) = (sys.n_v(), sys.n_p());
    let n = n_v + n_p;
    let mut a = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(n, n);
    let mut av = sys.a().to_dense();
    if let Some(k) = gain {
        av -= sys.b() * k;
    }
    let g = sys.g().to_dense();
    a.view_mut((0, 0), (n_v, n_v)).copy_from(&av);
    a.view_mut((0, n_v), (n_v, n_p)).copy_from(&g);
    a.view_mut((n_v, 0), (n_p, n_v)).copy_from(&g.transpose());
    e.view_mut((0, 0), (n_v, n_v)).copy_from(&sys.m().to_dense());
    (a, e)
}

/// Finite eigenvalues of the (optionally feedback-corrected) block pencil.
pub fn pencil_finite_spectrum(sys: &DescriptorSystem, gain: Option<&DMatrix<f64>>) -> Result<Vec<Complex64>> {
    check_cap(sys.n_v() + sys.n_p())?;
    let (a, e) = block_pencil(sys, gain);
    Ok(dense_generalized_eigen(&a, &e)?
        .into_iter()
        .filter(|ev| !ev.infinite)
        .map(|ev| ev.value())
        .collect())
}

/// Eigenvalues of `(QᵀMQ)⁻¹QᵀAQ` with `Q` an orthonormal basis of `ker Gᵀ`;
/// these are the finite eigenvalues of the block pencil.
pub fn constrained_spectrum(m: &SparseMatrix, a: &SparseMatrix, g: &SparseMatrix) -> Result<Vec<Complex64>> {
    let n_v = m.nrows();
    check_cap(n_v)?;
    let q = null_space_of_transpose(&g.to_dense())?;
    let mq = q.transpose() * m.to_dense() * &q;
    let aq = q.transpose() * a.to_dense() * &q;
    let f = cholesky_inverse_apply(&mq, &aq)?;
    crate::dense::eigenvalues(&f)
}

/// Orthonormal basis of `{x : Gᵀx = 0}` for full-rank `G`.
pub fn null_space_of_transpose(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = g.shape();
    if p == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let full = g.clone().qr();
    // Householder Q of size n×n; the trailing n − p columns span ker Gᵀ.
    let q = full.q();
    let mut ext = DMatrix::zeros(n, n);
    ext.columns_mut(0, p).copy_from(&q);
    let mut k = p;
    for e in 0..n {
        if k == n {
            break;
        }
        let mut v = DMatrix::<f64>::zeros(n, 1);
        v[(e, 0)] = 1.0;
        let prev = ext.columns(0, k).into_owned();
        for _ in 0..2 {
            let h = prev.tr_mul(&v);
            v -= &prev * h;
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            ext.column_mut(k).copy_from(&(v / nrm));
            k += 1;
        }
    }
    Ok(ext.columns(p, n - p).into_owned())
}

/// Dense solve of `[[W, G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]`, returning `x`.
pub fn dense_saddle_solve(w: &DMatrix<f64>, g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n_v, n_p) = g.shape();
    check_cap(n_v + n_p)?;
    let n = n_v + n_p;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (n_v, n_v)).copy_from(w);
    k.view_mut((0, n_v), (n_v, n_p)).copy_from(g);
    k.view_mut((n_v, 0), (n_p, n_v)).copy_from(&g.transpose());
    let mut b = DMatrix::zeros(n, rhs.ncols());
    b.rows_mut(0, n_v).copy_from(rhs);
    let x = k
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSaddle("dense saddle matrix is singular".into()))?;
    Ok(x.rows(0, n_v).into_owned())
}

/// Largest principal-angle sine between `span(U)` and `span(V)`, assuming
/// equal dimensions: `‖(I − Q_U Q_Uᵀ) Q_V‖₂`.
pub fn max_principal_sine(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let qu = thin_qr(u)?.q;
    let qv = thin_qr(v)?.q;
    let resid = &qv - &qu * qu.tr_mul(&qv);
    Ok(dense::spectral_norm(&resid).min(1.0))
}
