//! Reduced models, transfer functions and frequency sweeps.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dense::spectral_norm_complex;
use crate::ekba::{ExtendedBasis, PairMode};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::saddle::{SaddleAnalysis, SaddleKind};
use crate::sparse::SparseMatrix;
use crate::sysmodel::DescriptorSystem;
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReducedForm {
    /// `v' = 𝕋_m v + 𝔹_m u`, `y = ℂ_m v`.
    StateSpace,
    /// `𝕄_m v' = 𝔸_m v + 𝔹_m u`, `y = ℂ_m v`.
    Generalized,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReducedModel {
    StateSpace {
        t: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    },
    Generalized {
        m: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    },
}

impl ReducedModel {
    pub fn form(&self) -> ReducedForm {
        match self {
            ReducedModel::StateSpace { .. } => ReducedForm::StateSpace,
            ReducedModel::Generalized { .. } => ReducedForm::Generalized,
        }
    }

    pub fn order(&self) -> usize {
        self.b().nrows()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        match self {
            ReducedModel::StateSpace { b, .. } | ReducedModel::Generalized { b, .. } => b,
        }
    }

    pub fn c(&self) -> &DMatrix<f64> {
        match self {
            ReducedModel::StateSpace { c, .. } | ReducedModel::Generalized { c, .. } => c,
        }
    }

    /// `(E, A)` with `E = I` for the state-space form.
    pub fn pencil(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            ReducedModel::StateSpace { t, .. } => (DMatrix::identity(t.nrows(), t.nrows()), t.clone()),
            ReducedModel::Generalized { m, a, .. } => (m.clone(), a.clone()),
        }
    }
}

/// Reduced model of order `2·m·n_b` from the first `m` blocks of a forward basis.
pub fn build_reduced(
    basis: &ExtendedBasis,
    sys: &DescriptorSystem,
    form: ReducedForm,
    m: usize,
) -> Result<ReducedModel> {
    if basis.mode() != PairMode::ForwardPair {
        return Err(Error::ModeMismatch("model reduction needs a forward-pair basis".into()));
    }
    if m == 0 || m > basis.usable_order() {
        return Err(Error::DimensionMismatch(format!(
            "order {m} requested, basis supports at most {}",
            basis.usable_order()
        )));
    }
    let v = basis.basis_matrix(m);
    let c = sys.c() * &v;
    Ok(match form {
        ReducedForm::StateSpace => ReducedModel::StateSpace {
            t: basis.projected_operator(m)?,
            b: basis.projected_input(m),
            c,
        },
        ReducedForm::Generalized => {
            let mm = v.transpose() * sys.m().mul_dense(&v);
            ReducedModel::Generalized {
                m: (&mm + mm.transpose()) * 0.5,
                a: v.transpose() * sys.a().mul_dense(&v),
                b: v.transpose() * sys.b(),
                c,
            }
        }
    })
}

/// Anything with a transfer matrix `F(s)` (`n_c × n_b`).
pub trait TransferFunction: Sync {
    fn eval(&self, s: Complex64) -> Result<DMatrix<Complex64>>;
}

fn to_complex(x: &DMatrix<f64>) -> DMatrix<Complex64> {
    x.map(|v| Complex64::new(v, 0.0))
}

/// Pivot ratio below which a dense shifted matrix counts as singular.
const DENSE_SINGULAR_TOL: f64 = 1e-14;

/// Dense `(sE − A)⁻¹ B` with a singularity check on the LU pivots.
pub fn dense_resolvent(
    e: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    s: Complex64,
) -> Result<DMatrix<Complex64>> {
    let w = e.map(|v| s * v) - to_complex(a);
    let lu = w.lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > DENSE_SINGULAR_TOL * max) {
        return Err(Error::SingularShift(format!("s = {s} hits the reduced spectrum")));
    }
    lu.solve(&to_complex(b))
        .ok_or_else(|| Error::SingularShift(format!("s = {s} hits the reduced spectrum")))
}

/// `F_m(s)` of a reduced model by a dense solve.
pub fn eval_reduced_tf(model: &ReducedModel, s: Complex64) -> Result<DMatrix<Complex64>> {
    let (e, a) = model.pencil();
    let x = dense_resolvent(&e, &a, model.b(), s)?;
    Ok(to_complex(model.c()) * x)
}

impl TransferFunction for ReducedModel {
    fn eval(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        eval_reduced_tf(self, s)
    }
}

/// Full-order transfer function `F(s) = C x`, `[[sM − A, G], [Gᵀ, 0]] [x; ⋆] = [B; 0]`.
///
/// The ordering of the shifted saddle pattern is computed once and shared by
/// all shifts; numeric factors are built per shift and dropped afterwards.
#[derive(Clone, Debug)]
pub struct FullTransfer {
    m: SparseMatrix<Complex64>,
    a: SparseMatrix<Complex64>,
    g: SparseMatrix,
    b: DMatrix<Complex64>,
    c: DMatrix<Complex64>,
    analysis: SaddleAnalysis,
}

impl FullTransfer {
    pub fn new(sys: &DescriptorSystem) -> Result<Self> {
        Self::with_matrices(sys, sys.a())
    }

    /// Same `M`, `G`, `B`, `C` with another system matrix.
    pub fn with_matrices(sys: &DescriptorSystem, a: &SparseMatrix) -> Result<Self> {
        let m = sys.m().to_complex();
        let a = a.to_complex();
        let probe = m.add_scaled(Complex64::new(1.0, 0.0), &a, Complex64::new(-1.0, 0.0))?;
        let analysis = SaddleAnalysis::new(&probe, sys.g())?;
        Ok(Self {
            m,
            a,
            g: sys.g().clone(),
            b: to_complex(sys.b()),
            c: to_complex(sys.c()),
            analysis,
        })
    }

    /// `x` from `[[sM − A, G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]`.
    pub fn shifted_solve(&self, s: Complex64, rhs: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let w = self.m.add_scaled(s, &self.a, Complex64::new(-1.0, 0.0))?;
        let f = self
            .analysis
            .factor(&w, &self.g, SaddleKind::ShiftedBlock(s))
            .map_err(|e| match e {
                Error::SingularSaddle(msg) => Error::SingularShift(format!("s = {s}: {msg}")),
                other => other,
            })?;
        f.solve(rhs, Execution::Sequential)
    }

    pub fn input(&self) -> &DMatrix<Complex64> {
        &self.b
    }

    pub fn output(&self) -> &DMatrix<Complex64> {
        &self.c
    }
}

impl TransferFunction for FullTransfer {
    fn eval(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let x = self.shifted_solve(s, &self.b)?;
        Ok(&self.c * x)
    }
}

/// `F(s)` of the full system, one complex sparse factorization.
pub fn eval_full_tf(sys: &DescriptorSystem, s: Complex64) -> Result<DMatrix<Complex64>> {
    FullTransfer::new(sys)?.eval(s)
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrequencyResponse {
    pub omegas: Vec<f64>,
    pub values: Vec<DMatrix<Complex64>>,
    /// `σ_max(F(jω))`.
    pub norms: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub full: FrequencyResponse,
    pub reduced: FrequencyResponse,
    /// `σ_max(F(jω) − F_m(jω))` per kept point.
    pub error: Vec<f64>,
    /// Grid maximum of the error: a lower bound for the H∞ norm of `F − F_m`.
    pub hinf_sample: f64,
    /// Frequencies dropped because a shift hit a spectrum.
    pub skipped: Vec<f64>,
}

/// Compares two transfer functions on `jω` for each grid point; points where
/// either side is singular are recorded in `skipped` and left out.
pub fn compare_on_grid(
    full: &dyn TransferFunction,
    reduced: &dyn TransferFunction,
    omegas: &[f64],
    exec: Execution,
) -> Result<SweepResult> {
    if omegas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DimensionMismatch(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    let points = par::map(exec, omegas, |&w| {
        let s = Complex64::new(0.0, w);
        let f = full.eval(s)?;
        let r = reduced.eval(s)?;
        Ok::<_, Error>((f, r))
    });
    let mut out = SweepResult::default();
    for (&w, point) in omegas.iter().zip(points) {
        match point {
            Ok((f, r)) => {
                if f.shape() != r.shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "transfer shapes differ: {:?} vs {:?}",
                        f.shape(),
                        r.shape()
                    )));
                }
                let e = spectral_norm_complex(&(&f - &r));
                out.full.omegas.push(w);
                out.full.norms.push(spectral_norm_complex(&f));
                out.full.values.push(f);
                out.reduced.omegas.push(w);
                out.reduced.norms.push(spectral_norm_complex(&r));
                out.reduced.values.push(r);
                out.error.push(e);
                out.hinf_sample = out.hinf_sample.max(e);
            }
            Err(Error::SingularShift(_)) => out.skipped.push(w),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Full versus reduced response on `n_points` log-spaced frequencies in `[ω_lo, ω_hi]`.
pub fn frequency_sweep(
    sys: &DescriptorSystem,
    model: &ReducedModel,
    omega_lo: f64,
    omega_hi: f64,
    n_points: usize,
    exec: Execution,
) -> Result<SweepResult> {
    if !(omega_lo > 0.0 && omega_lo < omega_hi) || n_points == 0 {
        return Err(Error::DimensionMismatch(format!(
            "invalid frequency range [{omega_lo}, {omega_hi}] with {n_points} points"
        )));
    }
    let full = FullTransfer::new(sys)?;
    compare_on_grid(&full, model, &log_grid(omega_lo, omega_hi, n_points), exec)
}

/// CSV with columns `omega, norm_full, norm_reduced, error`.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut s = String::from("omega,norm_full,norm_reduced,error\n");
    for i in 0..sweep.error.len() {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            sweep.full.omegas[i], sweep.full.norms[i], sweep.reduced.norms[i], sweep.error[i]
        );
    }
    s
}

pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    std::fs::write(path, sweep_csv(sweep))?;
    Ok(())
}
