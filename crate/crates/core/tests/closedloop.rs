use ebara::closedloop::{
    cost_quadrature, reduce_closed_loop, simulate_dae, simulate_reduced, smw_solve, ClosedLoopOperator,
    ClosedLoopSystem, ClosedLoopTransfer, InputSignal, TimeGrid,
};
use ebara::ekba::{ExtendedBasis, PairMode, SaddleOperator};
use ebara::mor::{build_reduced, compare_on_grid, log_grid, ReducedForm, TransferFunction};
use ebara::oracle::{build_projector, dense_saddle_solve, pencil_finite_spectrum, ThetaSystem};
use ebara::riccati::{ebara_solve, feedback_gain, EbaraOptions, FeedbackGain};
use ebara::saddle::{factor_saddle, SaddleKind};
use ebara::sysmodel::generate_synthetic;
use ebara::{Complex64, DescriptorSystem, Error, Execution, Stability, SyntheticSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unstable(n_v: usize, n_p: usize, n_b: usize, seed: u64) -> DescriptorSystem {
    generate_synthetic(&SyntheticSpec::new(
        n_v,
        n_p,
        n_b,
        n_b,
        Stability::Unstable { count: 2, shift: 0.5 },
        seed,
    ))
    .unwrap()
}

fn stable(n_v: usize, n_p: usize, n_b: usize, n_c: usize, seed: u64) -> DescriptorSystem {
    generate_synthetic(&SyntheticSpec::new(n_v, n_p, n_b, n_c, Stability::Stable, seed)).unwrap()
}

fn random_gain(n_b: usize, n_v: usize, rank: usize, seed: u64) -> FeedbackGain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeedbackGain {
        left: DMatrix::from_fn(n_b, rank, |_, _| rng.random::<f64>() - 0.5),
        right: DMatrix::from_fn(rank, n_v, |_, _| rng.random::<f64>() - 0.5),
    }
}

fn lqr_gain(sys: &DescriptorSystem) -> FeedbackGain {
    let sol = ebara_solve(sys, &EbaraOptions::default(), None).unwrap();
    sol.require_converged().unwrap();
    feedback_gain(&sol.z, sys)
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[test]
fn zero_gain_reproduces_plain_solve() {
    let sys = unstable(60, 8, 2, 1);
    let cl = ClosedLoopSystem::new(sys.clone(), FeedbackGain::zero(2, 60), Execution::Parallel).unwrap();
    let rhs = DMatrix::from_fn(60, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let plain = factor_saddle(sys.a(), sys.g(), SaddleKind::StiffnessBlock)
        .unwrap()
        .solve(&rhs, Execution::Parallel)
        .unwrap();
    let smw = smw_solve(&cl, SaddleKind::StiffnessBlock, &rhs).unwrap();
    assert!((&smw - &plain).amax() <= 1e-14 * plain.amax());
    let zero = smw_solve(&cl, SaddleKind::StiffnessBlock, &DMatrix::zeros(60, 2)).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn smw_matches_assembled_dense_solves() {
    for (n_b, seed) in [(1, 11), (2, 12), (4, 13)] {
        let sys = unstable(60, 8, n_b, seed);
        let gain = random_gain(n_b, 60, n_b.min(3), seed + 100);
        let cl = ClosedLoopSystem::new(sys.clone(), gain.clone(), Execution::Parallel).unwrap();
        let bk = sys.b() * gain.matrix();
        let (m, a, g) = (sys.m().to_dense(), sys.a().to_dense(), sys.g().to_dense());
        let rhs = DMatrix::from_fn(60, 3, |i, j| (i as f64 * 0.37 + j as f64).sin());
        for (kind, w) in [
            (SaddleKind::StiffnessBlock, &a - &bk),
            (SaddleKind::EulerBlock(0.1), &m - (&a - &bk) * 0.1),
            (
                SaddleKind::ShiftedBlock(Complex64::new(0.7, 0.0)),
                &m * 0.7 - (&a - &bk),
            ),
        ] {
            let smw = smw_solve(&cl, kind, &rhs).unwrap();
            let dense = dense_saddle_solve(&w, &g, &rhs).unwrap();
            assert!(
                rel(&smw, &dense) <= 1e-10,
                "n_b = {n_b}, {kind:?}: {:e}",
                rel(&smw, &dense)
            );
        }

        let s = Complex64::new(0.3, 2.0);
        let w = (m.map(|v| s * v) - (&a - &bk).map(|v| Complex64::new(v, 0.0))).into_owned();
        let n = 60 + 8;
        let mut k = DMatrix::<Complex64>::zeros(n, n);
        k.view_mut((0, 0), (60, 60)).copy_from(&w);
        k.view_mut((0, 60), (60, 8))
            .copy_from(&g.map(|v| Complex64::new(v, 0.0)));
        k.view_mut((60, 0), (8, 60))
            .copy_from(&g.transpose().map(|v| Complex64::new(v, 0.0)));
        let mut full_rhs = DMatrix::<Complex64>::zeros(n, 3);
        full_rhs
            .view_mut((0, 0), (60, 3))
            .copy_from(&rhs.map(|v| Complex64::new(v, 0.0)));
        let dense = k.lu().solve(&full_rhs).unwrap().rows(0, 60).into_owned();
        let smw = cl
            .shifted(s)
            .unwrap()
            .solve(&rhs.map(|v| Complex64::new(v, 0.0)), Execution::Parallel)
            .unwrap();
        assert!((&smw - &dense).norm() <= 1e-10 * dense.norm());
    }
}

#[test]
fn singular_capture_is_reported() {
    let sys = unstable(40, 6, 1, 14);
    // K = Xᵀ/‖X‖² with X = S_A(B) makes I − K X vanish.
    let x = factor_saddle(sys.a(), sys.g(), SaddleKind::StiffnessBlock)
        .unwrap()
        .solve(sys.b(), Execution::Sequential)
        .unwrap();
    let norm = x.norm_squared();
    let gain = FeedbackGain {
        left: DMatrix::from_element(1, 1, 1.0 / norm),
        right: x.transpose(),
    };
    let err = ClosedLoopSystem::new(sys, gain, Execution::Sequential).unwrap_err();
    assert!(matches!(err, Error::SingularCapture(_)), "{err}");
}

#[test]
fn zero_gain_basis_equals_open_loop_basis() {
    let sys = unstable(60, 8, 2, 2);
    let cl = ClosedLoopSystem::new(sys.clone(), FeedbackGain::zero(2, 60), Execution::Parallel).unwrap();
    let (closed, _) = reduce_closed_loop(&cl, 5, ReducedForm::StateSpace).unwrap();
    let op = SaddleOperator::new(&sys, PairMode::ForwardPair, Execution::Parallel).unwrap();
    let open = ExtendedBasis::build(&op, PairMode::ForwardPair, 5).unwrap();
    assert!((closed.basis_matrix(6) - open.basis_matrix(6)).amax() <= 1e-12);
}

#[test]
fn closed_loop_transfer_matches_theta_oracle() {
    let sys = unstable(60, 8, 2, 3);
    let gain = lqr_gain(&sys);
    let cl = ClosedLoopSystem::new(sys.clone(), gain.clone(), Execution::Parallel).unwrap();
    let tf = ClosedLoopTransfer::new(&cl).unwrap();
    let proj = build_projector(&sys).unwrap();
    let mut theta = ThetaSystem::new(&sys, &proj);
    theta.a -= &theta.b * gain.matrix() * &proj.theta_r;
    for s in [
        Complex64::new(0.0, 0.5),
        Complex64::new(1.0, -3.0),
        Complex64::new(-0.2, 40.0),
    ] {
        let full = tf.eval(s).unwrap();
        let oracle = theta.transfer(s).unwrap();
        assert!((&full - &oracle).norm() <= 1e-8 * oracle.norm().max(1.0));
    }
}

#[test]
fn closed_loop_reduction_at_exactness_order() {
    let sys = unstable(60, 8, 2, 4);
    let gain = lqr_gain(&sys);
    let cl = ClosedLoopSystem::new(sys.clone(), gain.clone(), Execution::Parallel).unwrap();
    assert!(pencil_finite_spectrum(&sys, Some(&gain.matrix()))
        .unwrap()
        .iter()
        .all(|z| z.re < 0.0));
    // 2·m·n_b ≥ n_v − n_p = 52
    let (basis, model) = reduce_closed_loop(&cl, 13, ReducedForm::StateSpace).unwrap();
    assert!(model.order() >= 52.min(basis.usable_order() * 4));
    let (_, t) = model.pencil();
    assert!(t.complex_eigenvalues().iter().all(|z| z.re < 0.0));
    let tf = ClosedLoopTransfer::new(&cl).unwrap();
    let sweep = compare_on_grid(&tf, &model, &log_grid(1e-5, 1e5, 41), Execution::Parallel).unwrap();
    assert!(sweep.skipped.is_empty());
    assert!(
        sweep.hinf_sample <= 1e-6,
        "closed-loop sweep error {:e}",
        sweep.hinf_sample
    );

    let (_, gen) = reduce_closed_loop(&cl, 13, ReducedForm::Generalized).unwrap();
    let s = Complex64::new(0.0, 1.0);
    let (a, b) = (gen.eval(s).unwrap(), model.eval(s).unwrap());
    assert!((&a - &b).norm() <= 1e-8 * a.norm());
}

#[test]
fn zero_input_gives_zero_output() {
    let sys = stable(40, 6, 2, 2, 5);
    let traj = simulate_dae(&sys, None, &InputSignal::Zero, TimeGrid::new(0.1, 2.0).unwrap(), None).unwrap();
    assert_eq!(traj.times.len(), 21);
    assert!(traj.outputs.iter().all(|&v| v == 0.0));
    assert_eq!(traj.cost, Some(0.0));
    let model = build_reduced(
        &ExtendedBasis::build(
            &SaddleOperator::new(&sys, PairMode::ForwardPair, Execution::Sequential).unwrap(),
            PairMode::ForwardPair,
            2,
        )
        .unwrap(),
        &sys,
        ReducedForm::StateSpace,
        2,
    )
    .unwrap();
    let traj = simulate_reduced(&model, &InputSignal::Zero, TimeGrid::new(0.1, 2.0).unwrap()).unwrap();
    assert!(traj.outputs.iter().all(|&v| v == 0.0));
}

#[test]
fn stable_response_reaches_algebraic_steady_state() {
    let sys = stable(60, 8, 2, 2, 6);
    let traj = simulate_dae(
        &sys,
        None,
        &InputSignal::Constant(1.0),
        TimeGrid::new(0.1, 400.0).unwrap(),
        None,
    )
    .unwrap();
    assert!(traj.constraint_violation <= 1e-8);
    let x_bar = dense_saddle_solve(
        &sys.a().to_dense(),
        &sys.g().to_dense(),
        &(-(sys.b() * DMatrix::from_element(2, 1, 1.0))),
    )
    .unwrap();
    let y_bar = sys.c() * x_bar;
    let last = traj.outputs.row(traj.times.len() - 1).transpose();
    assert!(
        (&last - &y_bar).norm() <= 1e-6 * y_bar.norm().max(1.0),
        "{last} vs {y_bar}"
    );
}

#[test]
fn nonzero_divergence_initial_state_is_rejected() {
    let sys = stable(40, 6, 1, 1, 7);
    let v0 = sys.g().to_dense().column(0).into_owned();
    let err = simulate_dae(
        &sys,
        None,
        &InputSignal::Zero,
        TimeGrid::new(0.1, 1.0).unwrap(),
        Some(&v0),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidInitialState(_)));
}

#[test]
fn feedback_turns_growth_into_settling() {
    let sys = unstable(60, 8, 2, 8);
    let gain = lqr_gain(&sys);
    let grid = TimeGrid::new(0.05, 40.0).unwrap();
    let open = simulate_dae(&sys, None, &InputSignal::Constant(1.0), grid, None);
    let grew = match open {
        Ok(t) => t.output_norms().iter().copied().fold(0.0, f64::max) > 1e6,
        Err(Error::SimulationDiverged { .. }) => true,
        Err(e) => panic!("{e}"),
    };
    assert!(grew);

    let closed = simulate_dae(&sys, Some(&gain), &InputSignal::Constant(1.0), grid, None).unwrap();
    assert!(closed.constraint_violation <= 1e-8);
    let norms = closed.output_norms();
    let n = norms.len();
    let tail = &closed.outputs.rows(n - 41, 41);
    let spread = tail
        .row_iter()
        .map(|r| (r - closed.outputs.row(n - 1)).norm())
        .fold(0.0, f64::max);
    assert!(
        spread <= 1e-6 * norms[n - 1].max(1.0),
        "closed-loop output still moving: {spread:e}"
    );

    let half = TimeGrid::new(0.05, 20.0).unwrap();
    let c1 = simulate_dae(&sys, Some(&gain), &InputSignal::Zero, half, Some(&impulse_state(&sys))).unwrap();
    let c2 = simulate_dae(&sys, Some(&gain), &InputSignal::Zero, grid, Some(&impulse_state(&sys))).unwrap();
    let tail_cost = c2.cost.unwrap() - c1.cost.unwrap();
    assert!(
        tail_cost <= 1e-6 * c1.cost.unwrap(),
        "closed-loop cost keeps growing: {tail_cost:e}"
    );
}

/// A divergence-free state: `M⁻¹Π` applied to the first input column.
fn impulse_state(sys: &DescriptorSystem) -> DVector<f64> {
    let x = factor_saddle(sys.m(), sys.g(), SaddleKind::MassBlock)
        .unwrap()
        .solve(&sys.b().columns(0, 1).into_owned(), Execution::Sequential)
        .unwrap();
    x.column(0).into_owned()
}

#[test]
fn full_order_reduced_simulation_matches_full_simulation() {
    let sys = stable(40, 6, 1, 1, 9);
    let op = SaddleOperator::new(&sys, PairMode::ForwardPair, Execution::Parallel).unwrap();
    let basis = ExtendedBasis::build(&op, PairMode::ForwardPair, 17).unwrap();
    let model = build_reduced(&basis, &sys, ReducedForm::StateSpace, basis.usable_order()).unwrap();
    assert!(model.order() >= 34);
    let grid = TimeGrid::new(0.05, 10.0).unwrap();
    let full = simulate_dae(&sys, None, &InputSignal::Constant(1.0), grid, None).unwrap();
    let red = simulate_reduced(&model, &InputSignal::Constant(1.0), grid).unwrap();
    assert!((&full.outputs - &red.outputs).amax() <= 1e-6);
}

#[test]
fn closed_loop_reduced_error_does_not_grow() {
    let sys = unstable(60, 8, 2, 10);
    let gain = lqr_gain(&sys);
    let cl = ClosedLoopSystem::new(sys.clone(), gain.clone(), Execution::Parallel).unwrap();
    let (_, model) = reduce_closed_loop(&cl, 4, ReducedForm::StateSpace).unwrap();
    let grid = TimeGrid::new(0.05, 30.0).unwrap();
    let full = simulate_dae(&sys, Some(&gain), &InputSignal::Constant(1.0), grid, None).unwrap();
    let red = simulate_reduced(&model, &InputSignal::Constant(1.0), grid).unwrap();
    let err: Vec<f64> = (0..full.times.len())
        .map(|k| (full.outputs.row(k) - red.outputs.row(k)).norm())
        .collect();
    let mid = err.len() / 2;
    let first = err[..mid].iter().copied().fold(0.0, f64::max);
    let second = err[mid..].iter().copied().fold(0.0, f64::max);
    assert!(second <= 1.1 * first, "{second:e} > 1.1 × {first:e}");
}

#[test]
fn open_loop_cost_grows_without_bound() {
    let sys = unstable(60, 8, 2, 8);
    let short = simulate_dae(
        &sys,
        None,
        &InputSignal::Constant(1.0),
        TimeGrid::new(0.05, 10.0).unwrap(),
        None,
    )
    .unwrap();
    let long = simulate_dae(
        &sys,
        None,
        &InputSignal::Constant(1.0),
        TimeGrid::new(0.05, 20.0).unwrap(),
        None,
    )
    .unwrap();
    assert!(long.cost.unwrap() > 100.0 * short.cost.unwrap());
    assert_eq!(cost_quadrature(&long), long.cost.unwrap());
}

#[test]
fn closed_loop_operator_applies_feedback_in_factored_form() {
    use ebara::ekba::KrylovOperator;
    let sys = unstable(40, 6, 2, 15);
    let gain = random_gain(2, 40, 2, 16);
    let cl = ClosedLoopSystem::new(sys.clone(), gain.clone(), Execution::Sequential).unwrap();
    let op = ClosedLoopOperator::new(&cl);
    let x = DMatrix::from_fn(40, 2, |i, j| (i + 2 * j) as f64 * 0.01);
    let dense = (sys.a().to_dense() - sys.b() * gain.matrix()) * &x;
    assert!((op.apply_a(&x) - dense).amax() <= 1e-13);
}
