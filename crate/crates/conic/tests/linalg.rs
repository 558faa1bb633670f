use approx::assert_relative_eq;
use irsma_conic::{max_eigpair, rank1_extract, solve, ConicProblem, LinExpr, Relation, SolveStatus};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn power_iteration(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    // Shift so the top eigenvalue dominates in magnitude.
    let n = m.nrows();
    let shifted = m + DMatrix::identity(n, n) * c(m.norm());
    let mut v = DVector::from_element(n, c(1.0));
    for _ in 0..20_000 {
        let w = &shifted * &v;
        v = &w / c(w.norm());
    }
    let lambda = (v.adjoint() * m * &v)[(0, 0)].re;
    (lambda, v)
}

#[test]
fn identity_gives_first_basis_vector() {
    let (lambda, v) = max_eigpair(&DMatrix::identity(3, 3));
    assert_relative_eq!(lambda, 1.0, epsilon = 1e-14);
    assert_relative_eq!(v[0].re, 1.0, epsilon = 1e-12);
    assert!(v[1].norm() < 1e-12 && v[2].norm() < 1e-12);
}

#[test]
fn diagonal_picks_largest_entry() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(5.0), c(2.0)]));
    let (lambda, v) = max_eigpair(&m);
    assert_relative_eq!(lambda, 5.0, epsilon = 1e-14);
    assert_relative_eq!(v[1].re, 1.0, epsilon = 1e-12);
    assert!(v[1].im.abs() < 1e-14);
}

#[test]
fn hermitian_eigpair_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let a = DMatrix::from_fn(8, 8, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = (&a + a.adjoint()) * c(0.5);
        let (lambda, v) = max_eigpair(&m);
        let (oracle, w) = power_iteration(&m);
        assert_relative_eq!(lambda, oracle, epsilon = 1e-8);
        let residual = (&m * &v - &v * c(lambda)).norm();
        assert!(residual <= 1e-10 * m.norm());
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!((v.adjoint() * &w)[(0, 0)].norm(), 1.0, epsilon = 1e-8);
    }
}

#[test]
fn rank_one_input_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..8 {
        let w = random_vector(&mut rng, n);
        let r = rank1_extract(&(&w * w.adjoint()));
        assert!(r.residual < 1e-10);
        let phase = (r.vector.adjoint() * &w)[(0, 0)];
        assert_relative_eq!(phase.norm(), w.norm_squared(), max_relative = 1e-10);
        let aligned = &r.vector * (phase / phase.norm());
        assert!((aligned - &w).norm() < 1e-9 * w.norm());
    }
}

#[test]
fn identity_is_maximally_spread() {
    let r = rank1_extract(&DMatrix::identity(2, 2));
    assert_relative_eq!(r.residual, 1.0 / 2f64.sqrt(), epsilon = 1e-14);
}

#[test]
fn zero_matrix_gives_zero_vector() {
    let r = rank1_extract(&DMatrix::zeros(3, 3));
    assert!(r.vector.iter().all(|z| z.norm() == 0.0));
    assert_eq!(r.residual, 0.0);
}

#[test]
fn small_second_eigenvalue_gives_small_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_vector(&mut rng, 4);
    let q = a.normalize();
    let mut b = random_vector(&mut rng, 4);
    b -= &q * (q.adjoint() * &b)[(0, 0)];
    let b = b.normalize();
    let m = &q * q.adjoint() + &b * b.adjoint() * c(1e-3);
    let r = rank1_extract(&m);
    assert!(r.residual <= 0.05, "{}", r.residual);
    assert_relative_eq!(r.ratio, 1.0 / 1.001, epsilon = 1e-10);
}

/// Feasibility of `[[x, 1], [1, t]] >= 0` with the diagonal pinned.
fn hyperbolic_feasible(x: f64, t: f64) -> bool {
    let mut p = ConicProblem::maximize();
    let b = p.add_symmetric_block(2);
    p.set_objective(LinExpr::new());
    p.add_constraint(LinExpr::new().entry(b, 0, 0, 1.0), Relation::Eq, x);
    p.add_constraint(LinExpr::new().entry(b, 1, 1, 1.0), Relation::Eq, t);
    p.add_constraint(LinExpr::new().entry(b, 0, 1, 1.0), Relation::Eq, 2.0);
    solve(&p, 1e-9).unwrap().status == SolveStatus::Optimal
}

#[test]
fn hyperbolic_encoding_on_grid() {
    let levels: [f64; 9] = [0.0, 0.05, 0.3, 0.5, 0.9, 1.5, 2.5, 4.0, 10.0];
    for &x in &levels {
        for &t in &levels {
            let product = x * t;
            // Skip the boundary where the feasible set has no interior.
            if (product - 1.0).abs() < 0.05 {
                continue;
            }
            assert_eq!(hyperbolic_feasible(x, t), product >= 1.0, "x={x} t={t}");
        }
    }
}
