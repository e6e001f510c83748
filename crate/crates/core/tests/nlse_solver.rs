mod common;

use common::*;
use pde_surrogate::nlse::{self, BorderedSolver, HomotopyOptions, NlseState};
use pde_surrogate::{Field, GridSpec};

#[test]
fn linear_ground_state_matches_dense_eigensolver() {
    for (d, n) in [(1, 4), (1, 8), (2, 4)] {
        let g = GridSpec::new(d, n).unwrap();
        for seed in 0..5 {
            let a = random_field(g, 1.0, 16.0, seed);
            let st = nlse::linear_ground_state(&a, 1e-10).unwrap();
            let oracle = dense_linear_ground_energy(&a);
            assert!((st.e0 - oracle).abs() < 1e-9 * oracle.max(1.0), "{} vs {oracle}", st.e0);
            assert!(st.u.values().iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn homotopy_matches_projected_gradient() {
    let g = GridSpec::new(2, 4).unwrap();
    let opts = HomotopyOptions::default();
    for seed in 0..5 {
        let a = random_field(g, 1.0, 16.0, 100 + seed);
        let st = nlse::ground_state_homotopy(&a, &opts).unwrap();
        let oracle = projected_gradient_ground_energy(&a, 2.0);
        assert!((st.e0 - oracle).abs() < 1e-6, "{} vs {oracle}", st.e0);
    }
}

#[test]
fn stage_invariants_and_monotonicity() {
    let g = GridSpec::new(2, 8).unwrap();
    let opts = HomotopyOptions::default();
    for seed in 0..3 {
        let a = random_field(g, 1.0, 16.0, 200 + seed);
        let path = nlse::ground_state_path(&a, &opts).unwrap();
        assert_eq!(path.len(), 6);
        for w in path.windows(2) {
            assert!(w[1].e0 >= w[0].e0);
        }
        for st in &path {
            let norm = g.cell_volume() * st.u.values().iter().map(|v| v * v).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-10);
            assert!(st.u.min() > 0.0);
            assert!((nlse::rayleigh_energy(&st.u, &a, st.s) - st.e0).abs() < 1e-8);
            let r = nlse::nlse_residual(st, &a, st.s).unwrap();
            assert!(r.values().iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-10);
        }
    }
}

#[test]
fn newton_converges_quadratically() {
    let g = GridSpec::new(2, 8).unwrap();
    let a = random_field(g, 1.0, 16.0, 7);
    let start = nlse::linear_ground_state(&a, 1e-10).unwrap();
    for solver in [BorderedSolver::DenseLu, BorderedSolver::BlockElimination] {
        let (st, trace) = nlse::newton_correct_traced(&start, &a, 2.0, 1e-10, 50, solver).unwrap();
        assert!(st.residual_norm <= 1e-10);
        for w in trace.windows(2) {
            if w[0] < 1e-3 && w[1] > 1e-13 {
                assert!(w[1] <= 50.0 * w[0] * w[0], "{trace:?}");
            }
        }
    }
}

#[test]
fn solvers_agree_and_shift_invariance() {
    let g = GridSpec::new(2, 8).unwrap();
    let a = random_field(g, 1.0, 16.0, 8);
    let start = nlse::linear_ground_state(&a, 1e-10).unwrap();
    let (x, _) = nlse::newton_correct_traced(&start, &a, 0.4, 1e-10, 50, BorderedSolver::DenseLu).unwrap();
    let (y, _) = nlse::newton_correct_traced(&start, &a, 0.4, 1e-10, 50, BorderedSolver::BlockElimination).unwrap();
    assert!((x.e0 - y.e0).abs() < 1e-10);
    let opts = HomotopyOptions::default();
    let e = nlse::ground_state_homotopy(&a, &opts).unwrap().e0;
    for delta in [[1, 0], [0, 3], [5, 7]] {
        let es = nlse::ground_state_homotopy(&a.shifted(&delta), &opts).unwrap().e0;
        assert!((es - e).abs() < 1e-8 * e);
    }
}

#[test]
fn constant_potential_branch() {
    let g = GridSpec::new(2, 8).unwrap();
    let a = Field::constant(g, 3.0);
    let st = nlse::ground_state_homotopy(&a, &HomotopyOptions::default()).unwrap();
    assert!((st.e0 - 5.0).abs() < 1e-12);
    let warm = NlseState {
        u: Field::constant(g, 1.0),
        e0: 3.0 + 1.2,
        s: 1.2,
        residual_norm: 0.0,
    };
    let (_, trace) = nlse::newton_correct_traced(&warm, &a, 1.2, 1e-10, 50, BorderedSolver::Auto).unwrap();
    assert!(trace.len() <= 2);
}
