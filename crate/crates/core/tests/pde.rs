//! Flux problem: derivatives, the Schur stencil, the linear special case and
//! data round trips.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ippgd_core::multigrid::COARSEST_SIDE;
use ippgd_core::operator::{read_matrix_market, read_vector, write_matrix_market, write_vector, Vector};
use ippgd_core::pde::{assemble_schur_field, MixedGrid, NuCoefficient, PdeProblem};
use ippgd_core::problems::{gradient_fd_check, ProblemSpec};
use ippgd_core::solver::{run, Method, RunStatus, SolverConfig};

fn random_vec(n: usize, seed: u64, scale: f64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

#[test]
fn gradient_matches_central_differences() {
    for (a0, a1, a2) in [(1.0, 1.0, 5.0), (1.0, 6.0, 5.0)] {
        let p = PdeProblem::manufactured(8, NuCoefficient::new(a0, a1, a2).unwrap()).unwrap();
        for seed in 0..4 {
            let w = random_vec(p.dim(), seed, 2.0);
            let dir = random_vec(p.dim(), 100 + seed, 1.0);
            let rel = gradient_fd_check(&p, &w, &dir, 1e-6).unwrap();
            assert!(rel < 1e-6, "ν = ({a0},{a1},{a2}) seed {seed}: {rel:e}");
        }
    }
}

#[test]
fn stencil_equals_composed_schur_operator() {
    let grid = MixedGrid::new(8).unwrap();
    let m = random_vec(grid.num_flux(), 9, 1.0).map(|v| 1.5 + v);
    let field = assemble_schur_field(&grid, &m).unwrap();
    let b = grid.divergence().to_dense();
    let minv = DMatrix::from_diagonal(&m.map(|v| 1.0 / v));
    let composed = &b * minv * b.transpose();
    let stencil = field.to_dense();
    let gap = (&composed - &stencil).abs().max() / composed.abs().max();
    assert!(gap < 1e-12, "relative gap {gap:e}");
}

#[test]
fn constant_coefficient_is_a_linear_problem() {
    let a0 = 2.5;
    let p = PdeProblem::manufactured(8, NuCoefficient::new(a0, 0.0, 1.0).unwrap()).unwrap();
    let mass = p.mass();
    for seed in 0..3 {
        let sigma = random_vec(p.dim(), 20 + seed, 3.0);
        let quad = 0.5 / a0 * sigma.component_mul(&sigma).dot(mass) - p.dirichlet_pairing().dot(&sigma);
        let f = p.energy(&sigma).unwrap();
        assert!((f - quad).abs() <= 1e-12 * quad.abs().max(1.0), "{f} vs {quad}");
        let g = p.gradient(&sigma).unwrap();
        let lin = mass.component_mul(&sigma) / a0 - p.dirichlet_pairing();
        assert!((&g - &lin).norm() <= 1e-12 * lin.norm());
        let metric = p.weighted_mass(&sigma).unwrap();
        assert!((&metric - mass / a0).norm() <= 1e-13 * mass.norm());
    }
    // α = a0 is the Newton step of PGD in M(1) and α = 1 that of IPPGDv in M/a0
    let mut cfg = SolverConfig::preset(Method::Pgd, a0);
    cfg.grad_tol = 1e-9;
    cfg.max_iters = 200;
    let out = run(&p, &Vector::zeros(p.dim()), &cfg).unwrap();
    assert!(out.status.converged(), "{:?}", out.status);
    assert!(out.trace.iterations() <= 3, "{} iterations", out.trace.iterations());
    let mut cfg = SolverConfig::preset(Method::Ippgdv, 1.0);
    cfg.max_iters = 200;
    let v = run(&p, &Vector::zeros(p.dim()), &cfg).unwrap();
    assert!(v.status.converged(), "{:?}", v.status);
    let gap = (&v.u - &out.u).norm() / out.u.norm();
    assert!(gap < 1e-3, "gap {gap:e}");
}

#[test]
fn particular_flux_satisfies_the_source() {
    let p = PdeProblem::manufactured(16, NuCoefficient::new(1.0, 1.0, 5.0).unwrap()).unwrap();
    let b = p.constraint();
    let r = b.apply(p.particular_flux()) - p.source_integrals();
    assert!(r.norm() <= 1e-9 * p.source_integrals().norm(), "{:e}", r.norm());
}

#[test]
fn problem_data_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let nu = NuCoefficient::new(1.0, 6.0, 5.0).unwrap();
    let p = PdeProblem::manufactured(8, nu).unwrap();

    let div = p.grid().divergence();
    let mtx = dir.path().join("div.mtx");
    write_matrix_market(&mtx, &div).unwrap();
    let back = read_matrix_market(&mtx).unwrap();
    assert_eq!(back.to_dense(), div.to_dense());

    let g = dir.path().join("g.txt");
    let bd = dir.path().join("bd.txt");
    write_vector(&g, p.source_integrals()).unwrap();
    write_vector(&bd, p.dirichlet_pairing()).unwrap();
    let q = PdeProblem::from_data(
        MixedGrid::new(8).unwrap(),
        nu,
        read_vector(&g).unwrap(),
        read_vector(&bd).unwrap(),
        None,
    )
    .unwrap();
    let w = random_vec(p.dim(), 5, 1.0);
    assert_eq!(p.eval_f(&w).unwrap().to_bits(), q.eval_f(&w).unwrap().to_bits());
    assert_eq!(p.particular_flux(), q.particular_flux());

    let mut cfg = SolverConfig::preset(Method::Pgd, 1.0 / p.constants().l_sharp);
    cfg.grad_tol = 1e-8;
    let a = run(&p, &Vector::zeros(p.dim()), &cfg).unwrap();
    let b = run(&q, &Vector::zeros(q.dim()), &cfg).unwrap();
    assert!(matches!(a.status, RunStatus::Converged(_)));
    assert!(a.trace.same_values(&b.trace));
    assert!(q.l2_error(&q.flux(&b.u)).is_none());
}

#[test]
fn malformed_vectors_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "1.0\nabc\n").unwrap();
    let err = read_vector(&path).unwrap_err().to_string();
    assert!(err.contains(":2:"), "{err}");
    std::fs::write(&path, "1.0\nNaN\n").unwrap();
    assert!(read_vector(&path).is_err());
}

#[test]
fn grids_must_coarsen_to_a_direct_solve() {
    let nu = NuCoefficient::new(1.0, 1.0, 5.0).unwrap();
    assert!(PdeProblem::manufactured(COARSEST_SIDE, nu).is_err());
    assert!(PdeProblem::manufactured(8, nu).is_ok());
}
