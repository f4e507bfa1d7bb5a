use ebara::ekba::{ExtendedBasis, PairMode, SaddleOperator};
use ebara::mor::{
    build_reduced, compare_on_grid, eval_full_tf, frequency_sweep, log_grid, sweep_csv, FullTransfer, ReducedForm,
    ReducedModel, TransferFunction,
};
use ebara::oracle::{build_projector, ThetaSystem};
use ebara::sysmodel::generate_synthetic;
use ebara::{Complex64, DescriptorSystem, Execution, SparseMatrix, Stability, SyntheticSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stable(n_v: usize, n_p: usize, n_b: usize, seed: u64) -> DescriptorSystem {
    generate_synthetic(&SyntheticSpec::new(n_v, n_p, n_b, n_b, Stability::Stable, seed)).unwrap()
}

fn reduce(sys: &DescriptorSystem, m: usize, form: ReducedForm) -> ReducedModel {
    let op = SaddleOperator::new(sys, PairMode::ForwardPair, Execution::Parallel).unwrap();
    let basis = ExtendedBasis::build(&op, PairMode::ForwardPair, m).unwrap();
    build_reduced(&basis, sys, form, m.min(basis.usable_order())).unwrap()
}

#[test]
fn full_transfer_matches_theta_oracle_at_random_shifts() {
    let sys = stable(120, 16, 2, 1);
    let proj = build_projector(&sys).unwrap();
    let theta = ThetaSystem::new(&sys, &proj);
    let full = FullTransfer::new(&sys).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let s = Complex64::new(rng.random::<f64>() * 4.0 - 1.0, rng.random::<f64>() * 20.0 - 10.0);
        let f = full.eval(s).unwrap();
        let o = theta.transfer(s).unwrap();
        assert!((&f - &o).norm() <= 1e-8 * o.norm().max(1.0), "s = {s}");
    }
}

#[test]
fn exact_order_reproduces_transfer_everywhere() {
    let sys = stable(60, 8, 2, 3);
    // 2·m·n_b = 52 = n_v − n_p
    let model = reduce(&sys, 13, ReducedForm::StateSpace);
    assert_eq!(model.order(), 52);
    let sweep = frequency_sweep(&sys, &model, 1e-5, 1e5, 61, Execution::Parallel).unwrap();
    assert!(sweep.skipped.is_empty());
    assert!(sweep.hinf_sample <= 1e-8, "{:e}", sweep.hinf_sample);

    let gen = reduce(&sys, 13, ReducedForm::Generalized);
    let s = Complex64::new(0.0, 1.0);
    let (a, b) = (gen.eval(s).unwrap(), model.eval(s).unwrap());
    assert!((&a - &b).norm() <= 1e-8 * a.norm());
}

#[test]
fn generalized_mass_is_symmetric() {
    let sys = stable(60, 8, 2, 4);
    let ReducedModel::Generalized { m, .. } = reduce(&sys, 4, ReducedForm::Generalized) else {
        panic!("wrong form");
    };
    assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
}

#[test]
fn transfer_decays_at_large_real_shift() {
    let sys = stable(60, 8, 2, 5);
    let far = eval_full_tf(&sys, Complex64::new(1e8, 0.0)).unwrap();
    let unit = eval_full_tf(&sys, Complex64::new(0.0, 1.0)).unwrap();
    assert!(far.norm() <= 1e-6 * unit.norm());
}

#[test]
fn unconstrained_system_uses_plain_resolvent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 12;
    let m = DMatrix::<f64>::identity(n, n) * 2.0;
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    for i in 0..n {
        a[(i, i)] -= 3.0;
    }
    let b = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let c = DMatrix::from_fn(1, n, |_, _| rng.random::<f64>());
    let sys = DescriptorSystem::new(
        SparseMatrix::from_dense(&m),
        SparseMatrix::from_dense(&a),
        SparseMatrix::zeros(n, 0),
        b.clone(),
        c.clone(),
    )
    .unwrap();
    let s = Complex64::new(0.5, 2.0);
    let lift = |x: &DMatrix<f64>| x.map(|v| Complex64::new(v, 0.0));
    let w = lift(&m) * s - lift(&a);
    let dense = lift(&c) * w.lu().solve(&lift(&b)).unwrap();
    let f = eval_full_tf(&sys, s).unwrap();
    assert!((&f - &dense).norm() <= 1e-12 * dense.norm());
}

#[test]
fn one_state_model_has_analytic_response() {
    let model = ReducedModel::StateSpace {
        t: DMatrix::from_element(1, 1, -1.0),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
    };
    assert!((model.eval(Complex64::new(0.0, 0.0)).unwrap()[(0, 0)] - 1.0).norm() <= 1e-15);
    let zero = ReducedModel::StateSpace {
        t: DMatrix::from_element(1, 1, -1.0),
        b: DMatrix::zeros(1, 1),
        c: DMatrix::zeros(1, 1),
    };
    let omegas = log_grid(1e-3, 1e3, 13);
    let sweep = compare_on_grid(&model, &zero, &omegas, Execution::Sequential).unwrap();
    for (w, n) in omegas.iter().zip(&sweep.full.norms) {
        assert!((n - 1.0 / (1.0 + w * w).sqrt()).abs() <= 1e-14);
    }
    assert!((sweep.hinf_sample - 1.0 / (1.0 + 1e-6f64).sqrt()).abs() <= 1e-14);
}

#[test]
fn error_shrinks_with_order() {
    let sys = stable(100, 10, 2, 7);
    let errs: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&m| {
            let model = reduce(&sys, m, ReducedForm::StateSpace);
            frequency_sweep(&sys, &model, 1e-5, 1e5, 41, Execution::Parallel)
                .unwrap()
                .hinf_sample
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn reordering_inputs_permutes_columns() {
    let sys = stable(50, 6, 3, 8);
    let perm = [2, 0, 1];
    let b = sys.b();
    let pb = DMatrix::from_fn(b.nrows(), 3, |i, j| b[(i, perm[j])]);
    let permuted = sys.with_input(pb).unwrap();
    let s = Complex64::new(0.1, 0.7);
    let f = eval_full_tf(&sys, s).unwrap();
    let g = eval_full_tf(&permuted, s).unwrap();
    for (j, &src) in perm.iter().enumerate() {
        assert!((g.column(j) - f.column(src)).norm() <= 1e-12 * f.norm());
    }
}

#[test]
fn sweep_is_identical_in_both_execution_modes() {
    let sys = stable(60, 8, 2, 9);
    let model = reduce(&sys, 3, ReducedForm::StateSpace);
    let a = frequency_sweep(&sys, &model, 1e-2, 1e2, 17, Execution::Sequential).unwrap();
    let b = frequency_sweep(&sys, &model, 1e-2, 1e2, 17, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let csv = sweep_csv(&a);
    assert!(csv.starts_with("omega,norm_full,norm_reduced,error\n"));
    assert_eq!(csv.lines().count(), 18);
}
