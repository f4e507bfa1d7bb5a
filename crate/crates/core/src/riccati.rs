//! Low-rank Riccati solver on the extended Krylov space, and the LQR gain.
//!
//! With the adjoint basis `𝕍_m` of `(M⁻¹ΠAᵀ, M⁻¹ΠCᵀ)` the Galerkin condition
//! reduces the projected Riccati equation to the small CARE
//! `𝕋_m Y + Y 𝕋_mᵀ − Y (𝕍_mᵀB)(𝕍_mᵀB)ᵀ Y + E₁Λ¹¹(E₁Λ¹¹)ᵀ = 0`,
//! and the residual of `X_m = 𝕍_m Y 𝕍_mᵀ` has 2-norm `‖T_{m+1,m} E_mᵀ Y‖`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dense::{self, dense_svd, lyapunov, ordered_schur};
use crate::ekba::{ekba_init, ekba_step, ExtendedBasis, PairMode, SaddleOperator};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::sysmodel::DescriptorSystem;
use crate::Complex64;

/// Largest accepted condition number of the `X₁` block of the stable subspace.
pub const MAX_X1_CONDITION: f64 = 1e12;

/// Solves `T Y + Y Tᵀ − Y R Y + Q = 0`, `R = Bt Btᵀ`, `Q = Ct Ctᵀ`, for the
/// stabilizing `Y = Yᵀ ⪰ 0` (closed loop `T − Y R` stable).
///
/// The stable invariant subspace `[X₁; X₂]` of the Hamiltonian
/// `[[Tᵀ, −R], [−Q, −T]]` gives `Y = X₂X₁⁻¹`; one Newton–Kleinman step
/// then polishes the result.
pub fn care_dense(t: &DMatrix<f64>, bt: &DMatrix<f64>, ct: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = t.nrows();
    if t.ncols() != k || bt.nrows() != k || ct.nrows() != k {
        return Err(Error::DimensionMismatch(format!(
            "CARE operands: T {:?}, Bt {:?}, Ct {:?}",
            t.shape(),
            bt.shape(),
            ct.shape()
        )));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let r = bt * bt.transpose();
    let q = ct * ct.transpose();
    let mut h = DMatrix::<f64>::zeros(2 * k, 2 * k);
    h.view_mut((0, 0), (k, k)).copy_from(&t.transpose());
    h.view_mut((0, k), (k, k)).copy_from(&(-&r));
    h.view_mut((k, 0), (k, k)).copy_from(&(-&q));
    h.view_mut((k, k), (k, k)).copy_from(&(-t));
    let hc = h.map(|v| Complex64::new(v, 0.0));
    let (u, _, stable) = ordered_schur(&hc, |z| z.re < 0.0)?;
    if stable != k {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian has {stable} stable eigenvalues, expected {k}"
        )));
    }
    let x1 = u.view((0, 0), (k, k)).into_owned();
    let x2 = u.view((k, 0), (k, k)).into_owned();
    let sv = x1.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < MAX_X1_CONDITION) {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace basis is ill-conditioned (cond X₁ = {cond:e})"
        )));
    }
    // Y X₁ = X₂  ⇔  X₁ᵀ Yᵀ = X₂ᵀ
    let yt = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or_else(|| Error::NoStabilizingSolution("X₁ is singular".into()))?;
    let y = yt.transpose().map(|z| z.re);
    let y = (&y + y.transpose()) * 0.5;
    let y = newton_kleinman_step(t, &r, &q, &y)?;
    let y = refine(t, &r, &q, y)?;
    let closed = t - &y * &r;
    if crate::dense::eigenvalues(&closed)?.iter().any(|z| z.re >= 0.0) {
        return Err(Error::NoStabilizingSolution(
            "closed-loop matrix T − YR is not stable".into(),
        ));
    }
    Ok(y)
}

/// Newton steps in correction form, `(T − YR)Δ + Δ(T − YR)ᵀ + 𝓡(Y) = 0`,
/// kept while the residual keeps shrinking.
fn refine(t: &DMatrix<f64>, r: &DMatrix<f64>, q: &DMatrix<f64>, mut y: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let residual = |y: &DMatrix<f64>| {
        let ty = t * y;
        &ty + ty.transpose() - y * r * y + q
    };
    let mut res = residual(&y);
    let mut norm = res.norm();
    for _ in 0..3 {
        let delta = lyapunov(&(t - &y * r), &res)?;
        let cand = &y + delta;
        let cand = (&cand + cand.transpose()) * 0.5;
        let cand_res = residual(&cand);
        let cand_norm = cand_res.norm();
        if !(cand_norm < norm) {
            break;
        }
        y = cand;
        res = cand_res;
        norm = cand_norm;
    }
    Ok(y)
}

/// One step `(T − Y R) Y⁺ + Y⁺ (T − Y R)ᵀ + Q + Y R Y = 0`.
pub fn newton_kleinman_step(
    t: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let f = t - y * r;
    let w = q + y * r * y;
    lyapunov(&f, &w)
}

/// Newton–Kleinman iteration from a stabilizing `y0` until the update is
/// below `tol` relative to the iterate.
pub fn newton_kleinman(
    t: &DMatrix<f64>,
    bt: &DMatrix<f64>,
    ct: &DMatrix<f64>,
    y0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let r = bt * bt.transpose();
    let q = ct * ct.transpose();
    let mut y = y0.clone();
    for it in 0..max_iter {
        let next = newton_kleinman_step(t, &r, &q, &y)?;
        let change = (&next - &y).norm();
        y = next;
        if change <= tol * y.norm().max(1.0) {
            return Ok(y);
        }
        if it + 1 == max_iter {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "Newton–Kleinman did not settle in {max_iter} steps"
    )))
}

/// `T Y + Y Tᵀ − Y Bt Btᵀ Y + Ct Ctᵀ`.
pub fn care_residual(t: &DMatrix<f64>, bt: &DMatrix<f64>, ct: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let yb = y * bt;
    t * y + y * t.transpose() - &yb * yb.transpose() + ct * ct.transpose()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EbaraOptions {
    pub tol: f64,
    pub dtol: f64,
    pub m_max: usize,
    /// Solve the reduced CARE only every `check_every` iterations.
    pub check_every: usize,
    pub exec: Execution,
}

impl Default for EbaraOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            dtol: 1e-12,
            m_max: 100,
            check_every: 1,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// `m_max` reached with the residual above `tol`.
    MaxIterations,
    /// The Krylov space stopped growing before the residual dropped below `tol`.
    Breakdown,
}

/// One residual evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub m: usize,
    /// `‖T_{m+1,m} E_mᵀ Y_m‖₂`.
    pub residual: f64,
    /// `residual / ‖Λ¹¹Λ¹¹ᵀ‖₂`.
    pub relative: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    /// Reduced solution of order `2·m·n_c`.
    pub y: DMatrix<f64>,
    /// `X_m ≈ Z Zᵀ`, `n_v × r`.
    pub z: DMatrix<f64>,
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub status: SolveStatus,
    /// `‖Λ¹¹Λ¹¹ᵀ‖₂ = ‖M⁻¹ΠCᵀCΠᵀM⁻¹‖₂`.
    pub denominator: f64,
}

impl RiccatiSolution {
    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    /// Relative residual per evaluation.
    pub fn residual_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.relative).collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.relative)
    }

    /// `MaxIterations` unless converged; the partial solution stays in `self`.
    pub fn require_converged(&self) -> Result<()> {
        match self.status {
            SolveStatus::Converged => Ok(()),
            _ => Err(Error::MaxIterations {
                iterations: self.iterations,
                residual: self.final_residual(),
            }),
        }
    }
}

/// Reduced CARE data at order `m` of an adjoint basis: `(𝕋_m, 𝕍_mᵀB, E₁Λ¹¹)`.
pub fn reduced_care_data(
    basis: &ExtendedBasis,
    sys: &DescriptorSystem,
    m: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let t = basis.projected_operator(m)?;
    let vb = basis.basis_matrix(m).tr_mul(sys.b());
    Ok((t, vb, basis.projected_input(m)))
}

/// `‖T_{m+1,m} E_mᵀ Y‖₂`.
pub fn projected_residual(basis: &ExtendedBasis, m: usize, y: &DMatrix<f64>) -> Result<f64> {
    let w = basis.block_width();
    let trailing = basis.trailing_block(m)?;
    let last_rows = y.rows((m - 1) * w, w);
    Ok(dense::spectral_norm(&(trailing * last_rows)))
}

/// EBARA: adjoint extended Krylov basis, reduced CARE per iteration, stop on
/// the relative projected residual, then low-rank truncation of `Y`.
///
/// `observer` sees each residual evaluation as it happens.
pub fn ebara_solve(
    sys: &DescriptorSystem,
    opts: &EbaraOptions,
    mut observer: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<RiccatiSolution> {
    if !(opts.tol > 0.0) || !(opts.dtol > 0.0) || opts.m_max == 0 || opts.check_every == 0 {
        return Err(Error::DimensionMismatch(format!("invalid EBARA options {opts:?}")));
    }
    let started = std::time::Instant::now();
    let n_c = sys.n_c();
    if sys.c().iter().all(|&v| v == 0.0) {
        let rec = IterationRecord {
            m: 1,
            residual: 0.0,
            relative: 0.0,
            elapsed_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(obs) = observer.as_mut() {
            obs(&rec);
        }
        return Ok(RiccatiSolution {
            y: DMatrix::zeros(2 * n_c, 2 * n_c),
            z: DMatrix::zeros(sys.n_v(), 0),
            records: vec![rec],
            iterations: 1,
            status: SolveStatus::Converged,
            denominator: 0.0,
        });
    }

    let op = SaddleOperator::new(sys, PairMode::AdjointPair, opts.exec)?;
    let mut basis = ekba_init(&op, PairMode::AdjointPair)?;
    let l11 = basis.lambda11();
    let denominator = dense::spectral_norm(&(&l11 * l11.transpose()));
    let mut records = Vec::new();
    let mut last: Option<(usize, DMatrix<f64>)> = None;
    let mut status = SolveStatus::MaxIterations;

    for m in 1..=opts.m_max {
        let broke = match ekba_step(&mut basis, &op) {
            Ok(()) => false,
            Err(Error::Breakdown { .. }) => true,
            Err(e) => return Err(e),
        };
        if m % opts.check_every != 0 && !broke && m != opts.m_max {
            continue;
        }
        let (t, vb, c0) = reduced_care_data(&basis, sys, m)?;
        let y = care_dense(&t, &vb, &c0)?;
        let residual = projected_residual(&basis, m, &y)?;
        let rec = IterationRecord {
            m,
            residual,
            relative: residual / denominator,
            elapsed_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(obs) = observer.as_mut() {
            obs(&rec);
        }
        records.push(rec);
        last = Some((m, y));
        if rec.relative < opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if broke {
            status = SolveStatus::Breakdown;
            break;
        }
    }
    let (m, y) = last.expect("at least one residual evaluation");
    let z = truncate_lowrank(&y, &basis.basis_matrix(m), opts.dtol)?;
    Ok(RiccatiSolution {
        y,
        z,
        records,
        iterations: m,
        status,
        denominator,
    })
}

/// `Z = 𝕍 U_r Σ_r^{1/2}` keeping the singular values of `Y` that are at least `dtol`.
pub fn truncate_lowrank(y: &DMatrix<f64>, v: &DMatrix<f64>, dtol: f64) -> Result<DMatrix<f64>> {
    if y.nrows() != v.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "Y is {:?} but the basis has {} columns",
            y.shape(),
            v.ncols()
        )));
    }
    if y.is_empty() {
        return Ok(DMatrix::zeros(v.nrows(), 0));
    }
    let svd = dense_svd(y)?;
    let r = svd.singular_values.iter().take_while(|&&s| s >= dtol).count();
    let mut ur = svd.u.columns(0, r).into_owned();
    for (j, s) in svd.singular_values.iter().take(r).enumerate() {
        ur.column_mut(j).scale_mut(s.sqrt());
    }
    Ok(v * ur)
}

/// `K = Bᵀ Z Zᵀ M` kept as the pair `(BᵀZ, ZᵀM)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGain {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl FeedbackGain {
    pub fn zero(n_b: usize, n_v: usize) -> Self {
        Self {
            left: DMatrix::zeros(n_b, 0),
            right: DMatrix::zeros(0, n_v),
        }
    }

    pub fn n_b(&self) -> usize {
        self.left.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.right.ncols()
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    /// Dense `n_b × n_v` gain.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.left * &self.right
    }

    /// `K x` through the factors.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.left * (&self.right * x)
    }
}

pub fn feedback_gain(z: &DMatrix<f64>, sys: &DescriptorSystem) -> FeedbackGain {
    FeedbackGain {
        left: sys.b().tr_mul(z),
        right: sys.m().tr_mul_dense(z).transpose(),
    }
}

/// CSV with columns `iteration, residual` (relative residuals).
pub fn residual_csv(sol: &RiccatiSolution) -> String {
    let mut s = String::from("iteration,residual\n");
    for r in &sol.records {
        let _ = writeln!(s, "{},{:.16e}", r.m, r.relative);
    }
    s
}

pub fn write_residual_csv(path: &Path, sol: &RiccatiSolution) -> Result<()> {
    std::fs::write(path, residual_csv(sol))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_stable_case() {
        let y = care_dense(&scalar(-1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((y[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn scalar_marginal_case() {
        let y = care_dense(&scalar(0.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        // Unstable mode that the input cannot reach.
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let bt = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let ct = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(care_dense(&t, &bt, &ct), Err(Error::NoStabilizingSolution(_))));
    }

    #[test]
    fn truncation_of_identity_and_zero() {
        let v = DMatrix::<f64>::identity(5, 2);
        let z = truncate_lowrank(&DMatrix::identity(2, 2), &v, 1e-12).unwrap();
        assert_eq!(&z * z.transpose(), &v * v.transpose());
        let z = truncate_lowrank(&DMatrix::zeros(2, 2), &v, 1e-12).unwrap();
        assert_eq!(z.ncols(), 0);
    }

    #[test]
    fn empty_gain_is_zero() {
        let k = FeedbackGain::zero(2, 7);
        assert_eq!(k.matrix(), DMatrix::zeros(2, 7));
    }
}
