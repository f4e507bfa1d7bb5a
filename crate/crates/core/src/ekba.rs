//! Extended block Arnoldi on the index-2 system, driven only by saddle solves.
//!
//! With `P = M⁻¹Π` applied through the `M`-block saddle system, the process
//! builds an orthonormal basis of
//! `span{S, F⁻¹S, F S, F⁻² S, ...}` where `F = M⁻¹ΠA` acts on the
//! constraint manifold `Gᵀv = 0` and `S = M⁻¹ΠB` (or the adjoint pair with
//! `Aᵀ` and `Cᵀ`). The forward branch is an `M`-block solve with
//! right-hand side `A V⁽¹⁾`, the inverse branch an `A`-block solve with
//! right-hand side `M V⁽²⁾`.

use nalgebra::DMatrix;

use crate::dense::{block_gram_schmidt, householder_qr, thin_qr_scaled, BlockQr};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::saddle::{SaddleAnalysis, SaddleFactorization, SaddleKind};
use crate::sparse::SparseMatrix;
use crate::sysmodel::DescriptorSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// `(M⁻¹ΠA, M⁻¹ΠB)`, used for model reduction.
    ForwardPair,
    /// `(M⁻¹ΠAᵀ, M⁻¹ΠCᵀ)`, used for the Riccati solver.
    AdjointPair,
}

/// The four primitive actions the Arnoldi process needs.
pub trait KrylovOperator: Sync {
    fn n_v(&self) -> usize;
    /// Starting block (`B` or `Cᵀ`).
    fn start(&self) -> &DMatrix<f64>;
    /// `x` from `[[M, G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]`.
    fn mass_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// `x` from `[[A, G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]` (with `A` replaced by the operator's matrix).
    fn stiff_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// `A x` (or `Aᵀ x`, `(A − BK) x`).
    fn apply_a(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    fn apply_m(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    fn execution(&self) -> Execution {
        Execution::default()
    }

    /// `M⁻¹Π A x`.
    fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.mass_solve(&self.apply_a(x))
    }

    /// `(M⁻¹Π A)⁻¹ x` on the constraint manifold.
    fn inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.stiff_solve(&self.apply_m(x))
    }
}

/// Operator backed by two sparse saddle factorizations.
#[derive(Clone, Debug)]
pub struct SaddleOperator {
    mode: PairMode,
    m: SparseMatrix,
    a: SparseMatrix,
    start: DMatrix<f64>,
    mass: SaddleFactorization,
    stiff: SaddleFactorization,
    exec: Execution,
}

impl SaddleOperator {
    pub fn new(sys: &DescriptorSystem, mode: PairMode, exec: Execution) -> Result<Self> {
        let (a, start) = match mode {
            PairMode::ForwardPair => (sys.a().clone(), sys.b().clone()),
            PairMode::AdjointPair => (sys.a().transpose(), sys.c().transpose()),
        };
        let g = sys.g();
        let (mass, stiff) = par::join(
            exec,
            || SaddleAnalysis::new(sys.m(), g)?.factor(sys.m(), g, SaddleKind::MassBlock),
            || SaddleAnalysis::new(&a, g)?.factor(&a, g, SaddleKind::StiffnessBlock),
        );
        Ok(Self {
            mode,
            m: sys.m().clone(),
            a,
            start,
            mass: mass?,
            stiff: stiff?,
            exec,
        })
    }

    pub fn mode(&self) -> PairMode {
        self.mode
    }

    pub fn mass_factor(&self) -> &SaddleFactorization {
        &self.mass
    }

    pub fn stiff_factor(&self) -> &SaddleFactorization {
        &self.stiff
    }
}

impl KrylovOperator for SaddleOperator {
    fn n_v(&self) -> usize {
        self.m.nrows()
    }

    fn start(&self) -> &DMatrix<f64> {
        &self.start
    }

    fn mass_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.mass.solve(rhs, self.exec)
    }

    fn stiff_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.stiff.solve(rhs, self.exec)
    }

    fn apply_a(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.a.mul_dense(x)
    }

    fn apply_m(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.m.mul_dense(x)
    }

    fn execution(&self) -> Execution {
        self.exec
    }
}

/// Where and why the space stopped growing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreakdownInfo {
    pub iteration: usize,
    pub column: usize,
    pub value: f64,
    pub tol: f64,
}

impl From<BreakdownInfo> for Error {
    fn from(b: BreakdownInfo) -> Self {
        Error::Breakdown {
            iteration: b.iteration,
            column: b.column,
            value: b.value,
            tol: b.tol,
        }
    }
}

/// Orthonormal blocks `V_1 .. V_k` (each `n_v × 2b`) with the operator
/// images `M⁻¹ΠA V_j` kept for the projected matrix.
#[derive(Clone, Debug)]
pub struct ExtendedBasis {
    mode: PairMode,
    half: usize,
    blocks: Vec<DMatrix<f64>>,
    images: Vec<DMatrix<f64>>,
    /// Gram–Schmidt coefficients of step j: `H_{1,j} .. H_{j+1,j}`.
    coeffs: Vec<Vec<DMatrix<f64>>>,
    lambda: DMatrix<f64>,
    breakdown: Option<BreakdownInfo>,
}

fn as_breakdown(iteration: usize, e: Error) -> Error {
    match e {
        Error::RankDeficient { column, value, tol } => Error::Breakdown {
            iteration,
            column,
            value,
            tol,
        },
        other => other,
    }
}

/// First block: `V₁, Λ = qr([P·S, P_A·S])` with both saddle solves.
///
/// A rank-deficient starting block is reported as `Breakdown` at iteration 0.
pub fn ekba_init(op: &dyn KrylovOperator, mode: PairMode) -> Result<ExtendedBasis> {
    let s = op.start();
    let b = s.ncols();
    if s.nrows() != op.n_v() {
        return Err(Error::DimensionMismatch(format!(
            "starting block has {} rows, expected {}",
            s.nrows(),
            op.n_v()
        )));
    }
    if b == 0 {
        return Err(Error::DimensionMismatch("starting block has no columns".into()));
    }
    let (fwd, inv) = par::join(op.execution(), || op.mass_solve(s), || op.stiff_solve(s));
    let mut start = DMatrix::zeros(op.n_v(), 2 * b);
    start.columns_mut(0, b).copy_from(&fwd?);
    start.columns_mut(b, b).copy_from(&inv?);
    let scale = start.norm();
    let BlockQr { q, r } = thin_qr_scaled(&start, scale).map_err(|e| as_breakdown(0, e))?;
    Ok(ExtendedBasis {
        mode,
        half: b,
        blocks: vec![q],
        images: Vec::new(),
        coeffs: Vec::new(),
        lambda: r,
        breakdown: None,
    })
}

/// One Arnoldi step from the last block. On rank loss the image is still
/// recorded, the breakdown is stored in the basis, and `Breakdown` is returned.
pub fn ekba_step(basis: &mut ExtendedBasis, op: &dyn KrylovOperator) -> Result<()> {
    if let Some(b) = basis.breakdown {
        return Err(b.into());
    }
    let j = basis.blocks.len();
    if basis.images.len() != j - 1 {
        return Err(Error::ModeMismatch("basis images out of step with blocks".into()));
    }
    let b = basis.half;
    let v = &basis.blocks[j - 1];
    let second = v.columns(b, b).into_owned();
    // The image of the whole block carries the forward branch in its first half.
    let (image, inv) = par::join(op.execution(), || op.forward(v), || op.inverse(&second));
    let image = image?;
    let inv = inv?;
    let mut cand = DMatrix::zeros(op.n_v(), 2 * b);
    cand.columns_mut(0, b).copy_from(&image.columns(0, b));
    cand.columns_mut(b, b).copy_from(&inv);
    basis.images.push(image);

    let scale = cand.norm();
    let (mut h, w) = block_gram_schmidt(&cand, &basis.blocks);
    // Subtracting earlier blocks amplifies their rounding error outside
    // ker Gᵀ by |cand|/|w| each step; Πᵀw = M⁻¹ΠMw removes it before it compounds.
    let projected = op.mass_solve(&op.apply_m(&w))?;
    let (extra, w) = block_gram_schmidt(&projected, &basis.blocks);
    for (hi, ei) in h.iter_mut().zip(extra) {
        *hi += ei;
    }
    match thin_qr_scaled(&w, scale) {
        Ok(BlockQr { q, r }) => {
            h.push(r);
            basis.coeffs.push(h);
            basis.blocks.push(q);
            Ok(())
        }
        Err(e) => {
            let err = as_breakdown(j, e);
            if let Error::Breakdown {
                iteration,
                column,
                value,
                tol,
            } = err
            {
                basis.breakdown = Some(BreakdownInfo {
                    iteration,
                    column,
                    value,
                    tol,
                });
            }
            Err(err)
        }
    }
}

impl ExtendedBasis {
    /// Runs `ekba_init` and up to `m` steps. Breakdown ends the loop early
    /// and is recorded in [`ExtendedBasis::breakdown`]; other errors propagate.
    pub fn build(op: &dyn KrylovOperator, mode: PairMode, m: usize) -> Result<Self> {
        let mut basis = ekba_init(op, mode)?;
        for _ in 0..m {
            match ekba_step(&mut basis, op) {
                Ok(()) => {}
                Err(Error::Breakdown { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(basis)
    }

    pub fn mode(&self) -> PairMode {
        self.mode
    }

    /// Input (or output) count `b`; blocks have `2b` columns.
    pub fn half_width(&self) -> usize {
        self.half
    }

    pub fn block_width(&self) -> usize {
        2 * self.half
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of blocks whose operator image is known, i.e. the largest `m`
    /// for which the projected operator `𝕋_m` is available.
    pub fn usable_order(&self) -> usize {
        self.images.len()
    }

    pub fn breakdown(&self) -> Option<BreakdownInfo> {
        self.breakdown
    }

    /// `Λ`, the `2b × 2b` factor of the first QR.
    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// `Λ¹¹`, the leading `b × b` block of `Λ`.
    pub fn lambda11(&self) -> DMatrix<f64> {
        self.lambda.view((0, 0), (self.half, self.half)).into_owned()
    }

    /// `𝕍_m = [V_1, ..., V_m]`.
    pub fn basis_matrix(&self, m: usize) -> DMatrix<f64> {
        crate::oracle::hstack(&self.blocks[..m])
    }

    /// `M⁻¹ΠA V_j` for `j = 1..`.
    pub fn images(&self) -> &[DMatrix<f64>] {
        &self.images
    }

    fn check_order(&self, m: usize, need_next: bool) -> Result<()> {
        let have = if need_next {
            self.blocks.len() - 1
        } else {
            self.images.len()
        };
        if m == 0 || m > have.min(self.images.len()) {
            return Err(Error::DimensionMismatch(format!(
                "order {m} not available ({} blocks, {} images)",
                self.blocks.len(),
                self.images.len()
            )));
        }
        Ok(())
    }

    /// `𝕋̄_m = 𝕍_{m+1}ᵀ (M⁻¹ΠA) 𝕍_m`, block upper Hessenberg; blocks below the
    /// first subdiagonal are exact zeros.
    pub fn assemble_t(&self, m: usize) -> Result<DMatrix<f64>> {
        self.check_order(m, true)?;
        Ok(self.project_images(m, m + 1))
    }

    /// `𝕋_m = 𝕍_mᵀ (M⁻¹ΠA) 𝕍_m`, the leading square part of `𝕋̄_m`.
    pub fn projected_operator(&self, m: usize) -> Result<DMatrix<f64>> {
        self.check_order(m, false)?;
        Ok(self.project_images(m, m))
    }

    fn project_images(&self, m: usize, rows: usize) -> DMatrix<f64> {
        let w = self.block_width();
        let mut t = DMatrix::zeros(rows * w, m * w);
        for j in 0..m {
            for i in 0..rows.min(j + 2) {
                let blk = self.blocks[i].tr_mul(&self.images[j]);
                t.view_mut((i * w, j * w), (w, w)).copy_from(&blk);
            }
        }
        t
    }

    /// `T_{m+1,m}`, or after a breakdown at step `m` the triangular factor of
    /// the part of `M⁻¹ΠA V_m` outside `span 𝕍_m` (same norms against any
    /// right factor).
    pub fn trailing_block(&self, m: usize) -> Result<DMatrix<f64>> {
        self.check_order(m, false)?;
        let w = self.block_width();
        if m < self.blocks.len() {
            return Ok(self.blocks[m].tr_mul(&self.images[m - 1]));
        }
        let (_, rest) = block_gram_schmidt(&self.images[m - 1], &self.blocks[..m]);
        let (_, r) = householder_qr(&rest);
        let mut out = DMatrix::zeros(w, w);
        out.view_mut((0, 0), (r.nrows(), w)).copy_from(&r);
        Ok(out)
    }

    /// `𝔹_m = [Λ¹¹; 0; ...; 0]`, the projection of the starting block.
    pub fn projected_input(&self, m: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m * self.block_width(), self.half);
        out.view_mut((0, 0), (self.half, self.half)).copy_from(&self.lambda11());
        out
    }

    /// Gram–Schmidt coefficient matrix `H̄_m` (`2(m+1)b × 2mb`).
    pub fn h_bar(&self, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 || m > self.coeffs.len() {
            return Err(Error::DimensionMismatch(format!("H̄ of order {m} not available")));
        }
        let w = self.block_width();
        let mut h = DMatrix::zeros((m + 1) * w, m * w);
        for (j, col) in self.coeffs.iter().take(m).enumerate() {
            for (i, blk) in col.iter().enumerate() {
                h.view_mut((i * w, j * w), (w, w)).copy_from(blk);
            }
        }
        Ok(h)
    }
}
