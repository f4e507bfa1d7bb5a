//! The stabilized system `M v' = (A − BK) v + G p + B u`, `Gᵀv = 0`.
//!
//! `K = K_l K_r` has rank at most `r` and is never assembled against `B`.
//! Every saddle matrix with leading block `W + σBK` is solved through the
//! factors of `[[W, G], [Gᵀ, 0]]` and a Sherman–Morrison–Woodbury update:
//! with `x₀ = S(rhs)` and `X_B = S(σB)`,
//!
//! `x = x₀ − X_B (I + K X_B)⁻¹ K x₀`.
//!
//! `σ = −1` for `A − BK`, `+1` for `sM − (A − BK)` and `+h` for the implicit
//! Euler matrix `M − h(A − BK)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::ekba::{ExtendedBasis, KrylovOperator, PairMode};
use crate::error::{Error, Result};
use crate::mmio::fmt_f64;
use crate::mor::{build_reduced, FullTransfer, ReducedForm, ReducedModel, TransferFunction};
use crate::par::{self, Execution};
use crate::riccati::FeedbackGain;
use crate::saddle::{SaddleAnalysis, SaddleFactorization, SaddleKind};
use crate::sparse::Scalar;
use crate::sysmodel::DescriptorSystem;
use crate::Complex64;

/// Condition bound for the `r × r` capture matrix `I + K X_B`.
pub const MAX_CAPTURE_CONDITION: f64 = 1e12;

/// A saddle factorization plus the low-rank correction for `+σBK`.
#[derive(Clone, Debug)]
pub struct SmwCorrection<T: Scalar = f64> {
    factor: SaddleFactorization<T>,
    left: DMatrix<T>,
    right: DMatrix<T>,
    /// `X_B = S(σB)`, `n_v × n_b`.
    xb: DMatrix<T>,
    capture: Option<LU<T, Dyn, Dyn>>,
}

impl<T: Scalar> SmwCorrection<T> {
    /// `factor` holds `[[W, G], [Gᵀ, 0]]`; the corrected block is `W + σBK`.
    pub fn new(
        factor: SaddleFactorization<T>,
        b: &DMatrix<f64>,
        gain: &FeedbackGain,
        sigma: T,
        exec: Execution,
    ) -> Result<Self> {
        let lift = |x: &DMatrix<f64>| x.map(T::from_real);
        let left = lift(&gain.left);
        let right = lift(&gain.right);
        if gain.rank() == 0 {
            return Ok(Self {
                factor,
                left,
                right,
                xb: DMatrix::zeros(b.nrows(), b.ncols()),
                capture: None,
            });
        }
        let xb = factor.solve(&(lift(b) * sigma), exec)?;
        let n_b = b.ncols();
        let kxb = &left * (&right * &xb);
        let scale = kxb.singular_values().max().max(1.0);
        let capture = DMatrix::<T>::identity(n_b, n_b) + kxb;
        let sv = capture.singular_values();
        // measured against the terms that cancel, so a 1×1 capture can fail too
        let cond = sv.max().max(scale) / sv.min();
        if !(cond < MAX_CAPTURE_CONDITION) {
            return Err(Error::SingularCapture(format!(
                "{:?}: cond(I + K X_B) = {cond:e}",
                factor.kind()
            )));
        }
        Ok(Self {
            factor,
            left,
            right,
            xb,
            capture: Some(capture.lu()),
        })
    }

    pub fn kind(&self) -> SaddleKind {
        self.factor.kind()
    }

    /// Velocity part of the corrected saddle solve.
    pub fn solve(&self, rhs: &DMatrix<T>, exec: Execution) -> Result<DMatrix<T>> {
        let x0 = self.factor.solve(rhs, exec)?;
        let Some(capture) = &self.capture else {
            return Ok(x0);
        };
        let kx = &self.left * (&self.right * &x0);
        let z = capture
            .solve(&kx)
            .ok_or_else(|| Error::SingularCapture("capture matrix lost rank".into()))?;
        Ok(x0 - &self.xb * z)
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopSystem {
    base: DescriptorSystem,
    gain: FeedbackGain,
    mass: SaddleFactorization,
    stiff: SmwCorrection,
    exec: Execution,
}

impl ClosedLoopSystem {
    pub fn new(base: DescriptorSystem, gain: FeedbackGain, exec: Execution) -> Result<Self> {
        if gain.n_b() != base.n_b() || gain.n_v() != base.n_v() {
            return Err(Error::DimensionMismatch(format!(
                "gain is {}×{}, system has n_b = {}, n_v = {}",
                gain.n_b(),
                gain.n_v(),
                base.n_b(),
                base.n_v()
            )));
        }
        let g = base.g();
        let (mass, stiff) = par::join(
            exec,
            || SaddleAnalysis::new(base.m(), g)?.factor(base.m(), g, SaddleKind::MassBlock),
            || SaddleAnalysis::new(base.a(), g)?.factor(base.a(), g, SaddleKind::StiffnessBlock),
        );
        let stiff = SmwCorrection::new(stiff?, base.b(), &gain, -1.0, exec)?;
        Ok(Self {
            mass: mass?,
            stiff,
            base,
            gain,
            exec,
        })
    }

    pub fn base(&self) -> &DescriptorSystem {
        &self.base
    }

    pub fn gain(&self) -> &FeedbackGain {
        &self.gain
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// `(A − BK) x` without forming `BK`.
    pub fn apply_closed(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ax = self.base.a().mul_dense(x);
        if self.gain.rank() == 0 {
            return ax;
        }
        ax - self.base.b() * self.gain.apply(x)
    }

    /// Corrected factorization for a real saddle kind. The `A` block is cached;
    /// other kinds are factored on each call.
    pub fn corrected(&self, kind: SaddleKind) -> Result<SmwCorrection> {
        let (m, a, g) = (self.base.m(), self.base.a(), self.base.g());
        let (w, sigma) = match kind {
            SaddleKind::StiffnessBlock => return Ok(self.stiff.clone()),
            SaddleKind::MassBlock => (m.clone(), 0.0),
            SaddleKind::EulerBlock(h) => (m.add_scaled(1.0, a, -h)?, h),
            SaddleKind::ShiftedBlock(s) if s.im == 0.0 => (m.add_scaled(s.re, a, -1.0)?, 1.0),
            SaddleKind::ShiftedBlock(s) => {
                return Err(Error::DimensionMismatch(format!(
                    "complex shift {s} needs a complex right-hand side"
                )))
            }
        };
        let factor = SaddleAnalysis::new(&w, g)?.factor(&w, g, kind)?;
        if sigma == 0.0 {
            return SmwCorrection::new(
                factor,
                self.base.b(),
                &FeedbackGain::zero(self.base.n_b(), self.base.n_v()),
                0.0,
                self.exec,
            );
        }
        SmwCorrection::new(factor, self.base.b(), &self.gain, sigma, self.exec)
    }

    /// Corrected factorization of `[[sM − (A − BK), G], [Gᵀ, 0]]`.
    pub fn shifted(&self, s: Complex64) -> Result<SmwCorrection<Complex64>> {
        let m = self.base.m().to_complex();
        let a = self.base.a().to_complex();
        let w = m.add_scaled(s, &a, Complex64::new(-1.0, 0.0))?;
        let g = self.base.g();
        let factor = SaddleAnalysis::new(&w, g)?.factor(&w, g, SaddleKind::ShiftedBlock(s))?;
        SmwCorrection::new(factor, self.base.b(), &self.gain, Complex64::new(1.0, 0.0), self.exec)
    }
}

/// Solves `[[W', G], [Gᵀ, 0]] [x; ⋆] = [rhs; 0]` where `W'` is the
/// closed-loop version of the block named by `kind`.
pub fn smw_solve(cl: &ClosedLoopSystem, kind: SaddleKind, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match kind {
        SaddleKind::StiffnessBlock => cl.stiff.solve(rhs, cl.exec),
        SaddleKind::MassBlock => cl.mass.solve(rhs, cl.exec),
        _ => cl.corrected(kind)?.solve(rhs, cl.exec),
    }
}

/// Forward-pair Krylov operator of the closed loop.
pub struct ClosedLoopOperator<'a> {
    cl: &'a ClosedLoopSystem,
}

impl<'a> ClosedLoopOperator<'a> {
    pub fn new(cl: &'a ClosedLoopSystem) -> Self {
        Self { cl }
    }
}

impl KrylovOperator for ClosedLoopOperator<'_> {
    fn n_v(&self) -> usize {
        self.cl.base.n_v()
    }

    fn start(&self) -> &DMatrix<f64> {
        self.cl.base.b()
    }

    fn mass_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.cl.mass.solve(rhs, self.cl.exec)
    }

    fn stiff_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.cl.stiff.solve(rhs, self.cl.exec)
    }

    fn apply_a(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.cl.apply_closed(x)
    }

    fn apply_m(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.cl.base.m().mul_dense(x)
    }

    fn execution(&self) -> Execution {
        self.cl.exec
    }
}

/// Extended Krylov reduction of the closed loop with `m` steps. The model
/// order is capped by the usable order of the basis.
pub fn reduce_closed_loop(cl: &ClosedLoopSystem, m: usize, form: ReducedForm) -> Result<(ExtendedBasis, ReducedModel)> {
    let op = ClosedLoopOperator::new(cl);
    let basis = ExtendedBasis::build(&op, PairMode::ForwardPair, m)?;
    let order = m.min(basis.usable_order());
    let model = match build_reduced(&basis, &cl.base, form, order)? {
        ReducedModel::Generalized { m: mm, b, c, .. } => {
            let v = basis.basis_matrix(order);
            ReducedModel::Generalized {
                m: mm,
                a: v.transpose() * op.apply_a(&v),
                b,
                c,
            }
        }
        model => model,
    };
    Ok((basis, model))
}

/// Closed-loop transfer function `C (sM − A + BK)⁻¹ B` on the manifold.
pub struct ClosedLoopTransfer {
    full: FullTransfer,
    gain: FeedbackGain,
}

impl ClosedLoopTransfer {
    pub fn new(cl: &ClosedLoopSystem) -> Result<Self> {
        Ok(Self {
            full: FullTransfer::new(&cl.base)?,
            gain: cl.gain.clone(),
        })
    }
}

impl TransferFunction for ClosedLoopTransfer {
    fn eval(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        // With right-hand side B, x₀ and X_B coincide.
        let x0 = self.full.shifted_solve(s, self.full.input())?;
        let x = if self.gain.rank() == 0 {
            x0
        } else {
            let lift = |x: &DMatrix<f64>| x.map(|v| Complex64::new(v, 0.0));
            let kx = lift(&self.gain.left) * (lift(&self.gain.right) * &x0);
            let n_b = kx.nrows();
            let capture = DMatrix::<Complex64>::identity(n_b, n_b) + &kx;
            let z = capture
                .lu()
                .solve(&kx)
                .ok_or_else(|| Error::SingularShift(format!("s = {s} is a closed-loop eigenvalue")))?;
            &x0 - &x0 * z
        };
        Ok(self.full.output() * x)
    }
}

/// External input `u(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSignal {
    Zero,
    /// Every channel equal to the value.
    Constant(f64),
    /// Zero before `at`, `value` on every channel from `at` on.
    Step {
        at: f64,
        value: f64,
    },
    /// Zero-order hold of the rows of `values` (one column per input) at
    /// increasing `times`; zero before the first sample.
    Sampled {
        times: Vec<f64>,
        values: DMatrix<f64>,
    },
}

impl InputSignal {
    pub fn value(&self, t: f64, n_b: usize) -> DVector<f64> {
        match self {
            InputSignal::Zero => DVector::zeros(n_b),
            InputSignal::Constant(c) => DVector::from_element(n_b, *c),
            InputSignal::Step { at, value } => DVector::from_element(n_b, if t >= *at { *value } else { 0.0 }),
            InputSignal::Sampled { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    DVector::zeros(n_b)
                } else {
                    values.row(k - 1).transpose()
                }
            }
        }
    }

    /// Channels the signal can drive (`None` for the broadcast variants).
    pub fn channels(&self) -> Option<usize> {
        match self {
            InputSignal::Sampled { values, .. } => Some(values.ncols()),
            _ => None,
        }
    }

    /// CSV with header `t,u_1,...,u_k`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input signal CSV".into()))?;
        let width = header.split(',').count();
        if width < 2 {
            return Err(Error::Parse(format!(
                "input signal header `{header}` has no input column"
            )));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("input signal row {}: {e}", i + 2)))?;
            if fields.len() != width {
                return Err(Error::Parse(format!(
                    "input signal row {} has {} fields, expected {width}",
                    i + 2,
                    fields.len()
                )));
            }
            if times.last().is_some_and(|&t| !(fields[0] > t)) {
                return Err(Error::Parse(format!(
                    "input signal times must increase (row {})",
                    i + 2
                )));
            }
            times.push(fields[0]);
            data.extend_from_slice(&fields[1..]);
        }
        let values = DMatrix::from_row_slice(times.len(), width - 1, &data);
        Ok(InputSignal::Sampled { times, values })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Uniform grid `t_k = k h`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub h: f64,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(h: f64, horizon: f64) -> Result<Self> {
        if !(h > 0.0 && horizon >= h && horizon.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "invalid time grid h = {h}, T = {horizon}"
            )));
        }
        Ok(Self { h, horizon })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per time, `n_c` columns.
    pub outputs: DMatrix<f64>,
    /// Input applied to the plant at each time (including `−K v` under feedback).
    pub inputs: DMatrix<f64>,
    pub cost: Option<f64>,
    /// `max_k ‖Gᵀv_k‖ / (‖v_k‖ ‖G‖)` for full simulations, zero for reduced ones.
    pub constraint_violation: f64,
}

impl Trajectory {
    pub fn output_norms(&self) -> Vec<f64> {
        self.outputs.row_iter().map(|r| r.norm()).collect()
    }
}

fn check_finite(v: &DMatrix<f64>, step: usize, time: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::SimulationDiverged { step, time })
    }
}

struct Recorder {
    times: Vec<f64>,
    outputs: DMatrix<f64>,
    inputs: DMatrix<f64>,
}

impl Recorder {
    fn new(steps: usize, n_c: usize, n_b: usize) -> Self {
        Self {
            times: Vec::with_capacity(steps + 1),
            outputs: DMatrix::zeros(steps + 1, n_c),
            inputs: DMatrix::zeros(steps + 1, n_b),
        }
    }

    fn push(&mut self, t: f64, y: &DMatrix<f64>, u: &DVector<f64>) {
        let k = self.times.len();
        self.times.push(t);
        self.outputs.row_mut(k).copy_from(&y.transpose());
        self.inputs.row_mut(k).copy_from(&u.transpose());
    }

    fn finish(self, constraint_violation: f64) -> Trajectory {
        let mut traj = Trajectory {
            times: self.times,
            outputs: self.outputs,
            inputs: self.inputs,
            cost: None,
            constraint_violation,
        };
        traj.cost = Some(cost_quadrature(&traj));
        traj
    }
}

fn check_channels(input: &InputSignal, n_b: usize) -> Result<()> {
    match input.channels() {
        Some(k) if k != n_b => Err(Error::DimensionMismatch(format!(
            "input signal has {k} channels, system has {n_b} inputs"
        ))),
        _ => Ok(()),
    }
}

/// Implicit Euler on the index-2 DAE,
/// `[[M − hA', G], [Gᵀ, 0]] [v_{k+1}; ⋆] = [M v_k + h B u_{k+1}; 0]`,
/// with `A' = A` or `A − BK` when `gain` is given. One factorization per run.
pub fn simulate_dae(
    sys: &DescriptorSystem,
    gain: Option<&FeedbackGain>,
    input: &InputSignal,
    grid: TimeGrid,
    v0: Option<&DVector<f64>>,
) -> Result<Trajectory> {
    let (n_v, n_b) = (sys.n_v(), sys.n_b());
    check_channels(input, n_b)?;
    let g_norm = sys.g().frobenius_norm();
    let violation = |v: &DMatrix<f64>| {
        let n = v.norm();
        if n == 0.0 || g_norm == 0.0 {
            0.0
        } else {
            sys.g().tr_mul_dense(v).norm() / (n * g_norm)
        }
    };
    let mut v = match v0 {
        Some(v0) if v0.len() != n_v => {
            return Err(Error::DimensionMismatch(format!(
                "v0 has length {}, expected {n_v}",
                v0.len()
            )))
        }
        Some(v0) => DMatrix::from_column_slice(n_v, 1, v0.as_slice()),
        None => DMatrix::zeros(n_v, 1),
    };
    let v0_violation = violation(&v);
    if !(v0_violation <= 1e-8) {
        return Err(Error::InvalidInitialState(format!(
            "‖Gᵀv0‖ / (‖v0‖‖G‖) = {v0_violation:e}"
        )));
    }
    let zero = FeedbackGain::zero(n_b, n_v);
    let gain = gain.unwrap_or(&zero);
    if gain.n_b() != n_b || gain.n_v() != n_v {
        return Err(Error::DimensionMismatch("gain does not match the system".into()));
    }
    let h = grid.h;
    let w = sys.m().add_scaled(1.0, sys.a(), -h)?;
    let factor = SaddleAnalysis::new(&w, sys.g())?.factor(&w, sys.g(), SaddleKind::EulerBlock(h))?;
    let stepper = SmwCorrection::new(factor, sys.b(), gain, h, Execution::Sequential)?;

    let steps = grid.steps();
    let mut rec = Recorder::new(steps, sys.n_c(), n_b);
    let applied = |v: &DMatrix<f64>, t: f64| {
        let u = input.value(t, n_b);
        if gain.rank() == 0 {
            u
        } else {
            u - gain.apply(v).column(0)
        }
    };
    rec.push(0.0, &(sys.c() * &v), &applied(&v, 0.0));
    let mut worst = v0_violation;
    for k in 1..=steps {
        let t = grid.time(k);
        let u = input.value(t, n_b);
        let rhs = sys.m().mul_dense(&v) + sys.b() * DMatrix::from_column_slice(n_b, 1, (u * h).as_slice());
        v = stepper.solve(&rhs, Execution::Sequential)?;
        check_finite(&v, k, t)?;
        worst = worst.max(violation(&v));
        rec.push(t, &(sys.c() * &v), &applied(&v, t));
    }
    Ok(rec.finish(worst))
}

/// Same integrator on a reduced model from a zero state:
/// `(I − h𝕋) x_{k+1} = x_k + h𝔹 u_{k+1}` or `(M_m − hA_m) x_{k+1} = M_m x_k + h B_m u_{k+1}`.
pub fn simulate_reduced(model: &ReducedModel, input: &InputSignal, grid: TimeGrid) -> Result<Trajectory> {
    let b = model.b();
    let (n, n_b) = (b.nrows(), b.ncols());
    check_channels(input, n_b)?;
    let (e, a) = model.pencil();
    let h = grid.h;
    let lu = (&e - &a * h).lu();
    if !lu.is_invertible() {
        return Err(Error::SingularShift(format!(
            "reduced Euler matrix with h = {h} is singular"
        )));
    }
    let steps = grid.steps();
    let mut rec = Recorder::new(steps, model.c().nrows(), n_b);
    let mut x = DMatrix::zeros(n, 1);
    rec.push(0.0, &(model.c() * &x), &input.value(0.0, n_b));
    for k in 1..=steps {
        let t = grid.time(k);
        let u = input.value(t, n_b);
        let rhs: DMatrix<f64> = &e * &x + b * DMatrix::from_column_slice(n_b, 1, (&u * h).as_slice());
        x = lu.solve(&rhs).ok_or(Error::SimulationDiverged { step: k, time: t })?;
        check_finite(&x, k, t)?;
        rec.push(t, &(model.c() * &x), &u);
    }
    Ok(rec.finish(0.0))
}

/// Trapezoidal `½∫(yᵀy + uᵀu) dt` over the trajectory.
pub fn cost_quadrature(traj: &Trajectory) -> f64 {
    let f = |k: usize| traj.outputs.row(k).norm_squared() + traj.inputs.row(k).norm_squared();
    traj.times
        .windows(2)
        .enumerate()
        .map(|(k, w)| 0.5 * (w[1] - w[0]) * (f(k) + f(k + 1)))
        .sum::<f64>()
        * 0.5
}

/// CSV with columns `t, y_1..y_{n_c}, u_1..u_{n_b}`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let (n_c, n_b) = (traj.outputs.ncols(), traj.inputs.ncols());
    let mut s = String::from("t");
    for i in 1..=n_c {
        let _ = write!(s, ",y_{i}");
    }
    for i in 1..=n_b {
        let _ = write!(s, ",u_{i}");
    }
    s.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        s.push_str(&fmt_f64(*t));
        for v in traj.outputs.row(k).iter().chain(traj.inputs.row(k).iter()) {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::write(path, trajectory_csv(traj))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_of_constant_unit_output() {
        let n = 201;
        let traj = Trajectory {
            times: (0..n).map(|k| k as f64 * 0.01).collect(),
            outputs: DMatrix::from_element(n, 1, 1.0),
            inputs: DMatrix::zeros(n, 1),
            cost: None,
            constraint_violation: 0.0,
        };
        assert!((cost_quadrature(&traj) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_order_hold() {
        let sig = InputSignal::from_csv_str("t,u_1,u_2\n0,1,2\n1.5,3,4\n").unwrap();
        assert_eq!(sig.value(-0.1, 2).as_slice(), &[0.0, 0.0]);
        assert_eq!(sig.value(0.0, 2).as_slice(), &[1.0, 2.0]);
        assert_eq!(sig.value(1.49, 2).as_slice(), &[1.0, 2.0]);
        assert_eq!(sig.value(7.0, 2).as_slice(), &[3.0, 4.0]);
        assert!(InputSignal::from_csv_str("t,u\n1,0\n0,1\n").is_err());
    }

    #[test]
    fn step_and_constant() {
        let s = InputSignal::Step { at: 1.0, value: 2.0 };
        assert_eq!(s.value(0.5, 1)[0], 0.0);
        assert_eq!(s.value(1.0, 1)[0], 2.0);
        assert_eq!(InputSignal::Constant(1.0).value(3.0, 3).as_slice(), &[1.0; 3]);
    }

    #[test]
    fn scalar_reduced_simulation_decays_to_steady_state() {
        let model = ReducedModel::StateSpace {
            t: DMatrix::from_element(1, 1, -1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        };
        let traj = simulate_reduced(&model, &InputSignal::Constant(1.0), TimeGrid::new(0.01, 30.0).unwrap()).unwrap();
        let last = traj.outputs[(traj.times.len() - 1, 0)];
        assert!((last - 1.0).abs() <= 1e-10);
        let csv = trajectory_csv(&traj);
        assert!(csv.starts_with("t,y_1,u_1\n"));
        assert_eq!(csv.lines().count(), traj.times.len() + 1);
    }
}
