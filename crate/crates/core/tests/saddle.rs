use ebara::oracle::{build_projector, dense_saddle_solve};
use ebara::saddle::{factor_saddle, SaddleKind};
use ebara::sysmodel::generate_synthetic;
use ebara::{Error, Execution, SparseMatrix, Stability, SyntheticSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let x = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    &x * x.transpose() + DMatrix::<f64>::identity(n, n) * n as f64 * 0.1
}

fn random_dense(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn assembled(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_v, n_p) = g.shape();
    let mut k = DMatrix::zeros(n_v + n_p, n_v + n_p);
    k.view_mut((0, 0), (n_v, n_v)).copy_from(w);
    k.view_mut((0, n_v), (n_v, n_p)).copy_from(g);
    k.view_mut((n_v, 0), (n_p, n_v)).copy_from(&g.transpose());
    k
}

#[test]
fn random_spd_block_matches_dense_lu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random_spd(20, &mut rng);
    let g = random_dense(20, 4, &mut rng);
    let f = factor_saddle(
        &SparseMatrix::from_dense(&w),
        &SparseMatrix::from_dense(&g),
        SaddleKind::MassBlock,
    )
    .unwrap();
    let rhs = random_dense(20, 3, &mut rng);
    let x = f.solve(&rhs, Execution::Sequential).unwrap();
    let k = assembled(&w, &g);
    let mut b = DMatrix::zeros(24, 3);
    b.rows_mut(0, 20).copy_from(&rhs);
    let dense = k.clone().lu().solve(&b).unwrap();
    assert!((&x - dense.rows(0, 20)).norm() <= 1e-10 * dense.norm());
    assert!((f.lu().reconstruct() - &k).norm() <= 1e-12 * k.norm());
    let full = f.solve_full(&rhs, Execution::Sequential).unwrap();
    assert!((&k * &full - &b).norm() <= 1e-10 * b.norm());
}

#[test]
fn nonsymmetric_30_case_matches_dense_block_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_dense(30, 30, &mut rng) + DMatrix::<f64>::identity(30, 30) * 4.0;
    let g = random_dense(30, 5, &mut rng);
    let f = factor_saddle(
        &SparseMatrix::from_dense(&w),
        &SparseMatrix::from_dense(&g),
        SaddleKind::StiffnessBlock,
    )
    .unwrap();
    let rhs = random_dense(30, 2, &mut rng);
    let x = f.solve(&rhs, Execution::Parallel).unwrap();
    let dense = dense_saddle_solve(&w, &g, &rhs).unwrap();
    assert!((&x - &dense).norm() <= 1e-10 * dense.norm());
    assert!((g.transpose() * &x).amax() <= 1e-12 * x.amax());
}

#[test]
fn synthetic_reconstruction_and_projector_identity() {
    let sys = generate_synthetic(&SyntheticSpec::new(80, 10, 2, 2, Stability::Stable, 3)).unwrap();
    let f = factor_saddle(sys.m(), sys.g(), SaddleKind::MassBlock).unwrap();
    let k = assembled(&sys.m().to_dense(), &sys.g().to_dense());
    assert!((f.lu().reconstruct() - &k).norm() <= 1e-12 * k.norm());

    // the M-block solve applies M⁻¹Π
    let proj = build_projector(&sys).unwrap();
    let rhs = DMatrix::from_fn(80, 4, |i, j| ((i + 3 * j) as f64 * 0.21).cos());
    let x = f.solve(&rhs, Execution::Sequential).unwrap();
    let oracle = proj.m_inv_pi() * &rhs;
    assert!((&x - &oracle).norm() <= 1e-10 * oracle.norm());
}

#[test]
fn dependent_gradient_columns_are_singular() {
    let w = SparseMatrix::<f64>::identity(4);
    let g = SparseMatrix::from_triplets(4, 2, &[(0, 0, 1.0), (1, 0, 1.0), (0, 1, 2.0), (1, 1, 2.0)]).unwrap();
    assert!(matches!(
        factor_saddle(&w, &g, SaddleKind::MassBlock),
        Err(Error::SingularSaddle(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solves_satisfy_both_block_rows(seed in 0u64..100_000, n_v in 6usize..25, frac in 0.1f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_p = ((n_v as f64 * frac) as usize).max(1);
        let w = random_spd(n_v, &mut rng);
        let g = random_dense(n_v, n_p, &mut rng);
        let f = factor_saddle(&SparseMatrix::from_dense(&w), &SparseMatrix::from_dense(&g), SaddleKind::MassBlock).unwrap();
        let rhs = random_dense(n_v, 2, &mut rng);
        let full = f.solve_full(&rhs, Execution::Sequential).unwrap();
        let x = full.rows(0, n_v);
        let p = full.rows(n_v, n_p);
        prop_assert!((&w * x + &g * p - &rhs).norm() <= 1e-9 * (rhs.norm() + w.norm() * x.norm()));
        prop_assert!((g.transpose() * x).norm() <= 1e-10 * g.norm() * x.norm().max(1.0));
    }
}
