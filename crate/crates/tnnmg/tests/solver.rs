//! End-to-end solver behavior on the shipped problems.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tnnmg::blocks::{BlockStructure, BlockVector};
use tnnmg::driver::{nested_solve, solve, solve_problem, tnnmg_step, SolveConfig};
use tnnmg::functional::{QuadraticPart, SeparableFunctional, SmoothPart};
use tnnmg::linsolve::{GridHierarchy, LinearSolverConfig, LinearSolverKind};
use tnnmg::matrix::{BlockSparseMatrix, DenseBlock};
use tnnmg::nonsmooth::{Interval, NonsmoothTerm};
use tnnmg::oracle::{dense_solve_spd, oracle_box_qp_enumeration, oracle_coordinate_descent};
use tnnmg::postprocess::{damp, project_into_domain};
use tnnmg::problems::{
    build_friction_norm_1d, build_obstacle_1d, build_phasefield_simplex_1d, ProblemFamily,
};
use tnnmg::smoother::{LocalSolverKind, SmootherConfig};
use tnnmg::truncation::{build_pattern, truncated_gradient, truncated_hessian};

fn family_config(p: &tnnmg::problems::ProblemInstance) -> SolveConfig {
    SolveConfig {
        smoother: SmootherConfig {
            kind: p.default_smoother,
            ..SmootherConfig::default()
        },
        ..SolveConfig::default()
    }
}

/// Energies pinned from a converged `oracle_coordinate_descent` run
/// (tol 1e-13, seed 0) at the stated levels.
const PINNED: [(ProblemFamily, usize, f64); 6] = [
    (ProblemFamily::Obstacle1d, 6, -1.1532400790127846e0),
    (ProblemFamily::Minsurf1d, 5, 1.4142135623731122e0),
    (ProblemFamily::Phasefield1d, 5, 1.5764633242431294e1),
    (ProblemFamily::Friction1d, 5, -3.6933025844767056e-4),
    (ProblemFamily::Obstacle2d, 3, -8.447_821_514_423_086e-1),
    (ProblemFamily::Phasefield2d, 3, 1.282_294_963_367_718e1),
];

#[test]
fn solver_reproduces_pinned_energies() {
    for (family, level, expected) in PINNED {
        let p = family.build(level, 0).unwrap();
        let (_, report) = solve_problem(&p, &family_config(&p)).unwrap();
        assert!(report.converged, "{} did not converge", p.name);
        assert!(
            (report.final_energy - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
            "{}: energy {:.16e} vs pinned {:.16e}",
            p.name,
            report.final_energy,
            expected
        );
    }
}

#[test]
fn energy_history_is_monotone() {
    for (family, level, _) in PINNED {
        let p = family.build(level, 0).unwrap();
        let (_, report) = solve_problem(&p, &family_config(&p)).unwrap();
        let mut prev = f64::INFINITY;
        for r in &report.records {
            let slack = 1e-12 * (1.0 + r.energy.abs());
            assert!(r.energy <= prev + slack, "{}: energy rose", p.name);
            assert!(
                r.energy_after_smoothing <= r.energy + slack,
                "{}: smoother increased energy",
                p.name
            );
            prev = r.energy_after_smoothing;
        }
        assert!(report.final_energy <= report.records[0].energy);
    }
}

#[test]
fn small_obstacle_matches_enumeration_in_a_norm() {
    let p = build_obstacle_1d(3, Interval::new(-0.15, 0.15).unwrap(), -10.0).unwrap();
    let (u, report) = solve_problem(&p, &family_config(&p)).unwrap();
    assert!(report.converged);
    let (a, b) = match p.functional.smooth() {
        SmoothPart::Quadratic(q) => (q.matrix(), q.linear()),
        _ => unreachable!(),
    };
    let boxes = vec![Interval::new(-0.15, 0.15).unwrap(); 7];
    let exact = oracle_box_qp_enumeration(a, b, &boxes).unwrap();
    let diff = u.sub(&exact);
    let a_norm = a.quadratic_form(&diff).sqrt();
    assert!(a_norm <= 1e-8, "A-norm distance {a_norm}");
}

#[test]
fn minsurf_solution_is_linear_interpolant() {
    let p = ProblemFamily::Minsurf1d.build(4, 0).unwrap();
    let (u, report) = solve_problem(&p, &family_config(&p)).unwrap();
    assert!(report.converged);
    let n = p.functional.structure().total_dim();
    let h = 1.0 / (n as f64 + 1.0);
    for (k, &uk) in u.as_slice().iter().enumerate() {
        let expected = (k as f64 + 1.0) * h;
        assert!(
            (uk - expected).abs() <= 1e-6,
            "node {k}: {uk} vs interpolant {expected}"
        );
    }
}

#[test]
fn symmetric_phasefield_settles_on_uniform_blocks() {
    // Zero load: the minimizer is the feasible point closest to zero in the
    // operator norm, which by component symmetry has equal components.
    let p = build_phasefield_simplex_1d(4, 3, 0).unwrap();
    let (a, _) = match p.functional.smooth() {
        SmoothPart::Quadratic(q) => (q.matrix().clone(), ()),
        _ => unreachable!(),
    };
    let zero_b = BlockVector::zeros(p.functional.structure());
    let f = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, zero_b).unwrap()),
        p.functional.terms().to_vec(),
    )
    .unwrap();
    let (u, report) = solve(&f, &p.initial, &p.hierarchy, &family_config(&p)).unwrap();
    assert!(report.converged);
    for v in u.as_slice() {
        assert!((v - 1.0 / 3.0).abs() <= 1e-8, "component {v}");
    }
    let oracle = oracle_coordinate_descent(&f, &p.initial, 1e-13).unwrap();
    assert!((report.final_energy - oracle.energy).abs() <= 1e-8);
}

#[test]
fn phasefield_iterates_stay_on_the_simplex() {
    let p = build_phasefield_simplex_1d(4, 3, 1).unwrap();
    let (u, _) = solve_problem(&p, &family_config(&p)).unwrap();
    for k in 0..p.functional.structure().num_blocks() {
        let s: f64 = u.block(k).iter().sum();
        assert!((s - 1.0).abs() <= 1e-9, "block {k} sum {s}");
        assert!(u.block(k).iter().all(|&x| x >= -1e-12));
    }
}

#[test]
fn friction_sticks_completely_for_large_weight() {
    // Weight above the largest dual-norm load: the subdifferential at zero
    // absorbs the whole gradient and zero is the minimizer.
    let probe = build_friction_norm_1d(4, 0.0).unwrap();
    let b = match probe.functional.smooth() {
        SmoothPart::Quadratic(q) => q.linear().clone(),
        _ => unreachable!(),
    };
    let m = probe.functional.structure().num_blocks();
    let max_load = (0..m)
        .map(|k| b.block(k).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let p = build_friction_norm_1d(4, 2.0 * max_load).unwrap();
    let (u, report) = solve_problem(&p, &family_config(&p)).unwrap();
    assert!(report.converged);
    assert!(
        u.inf_norm() <= 1e-10,
        "stuck solution moved: {}",
        u.inf_norm()
    );
    // Independent optimality certificate: the oracle agrees with zero.
    let oracle = oracle_coordinate_descent(&p.functional, &p.initial, 1e-13).unwrap();
    assert!(oracle.point.inf_norm() <= 1e-10);
}

#[test]
fn friction_without_weight_is_one_newton_step() {
    let p = build_friction_norm_1d(4, 0.0).unwrap();
    let cfg = SolveConfig {
        linear: LinearSolverConfig {
            kind: LinearSolverKind::DensePseudoInverse,
            ..LinearSolverConfig::default()
        },
        ..family_config(&p)
    };
    let g0 = p.functional.gradient(&p.initial).unwrap().norm();
    let (u1, _) = tnnmg_step(&p.functional, &p.initial, &p.hierarchy, &cfg).unwrap();
    let g1 = p.functional.gradient(&u1).unwrap().norm();
    assert!(g1 <= 1e-10 * g0, "reduction {:.3e}", g1 / g0);
    let (a, b) = match p.functional.smooth() {
        SmoothPart::Quadratic(q) => (q.matrix(), q.linear()),
        _ => unreachable!(),
    };
    let exact = dense_solve_spd(a, b).unwrap();
    assert!(u1.sub(&exact).inf_norm() <= 1e-9);
}

#[test]
fn obstacle_converges_with_every_linear_solver() {
    for kind in [
        LinearSolverKind::VCycle,
        LinearSolverKind::Cg,
        LinearSolverKind::DensePseudoInverse,
    ] {
        let p = ProblemFamily::Obstacle1d.build(4, 0).unwrap();
        let cfg = SolveConfig {
            linear: LinearSolverConfig {
                kind,
                ..LinearSolverConfig::default()
            },
            ..family_config(&p)
        };
        let (_, report) = solve_problem(&p, &cfg).unwrap();
        assert!(report.converged, "{kind:?} did not converge");
        let oracle = oracle_coordinate_descent(&p.functional, &p.initial, 1e-13).unwrap();
        assert!(
            (report.final_energy - oracle.energy).abs() <= 1e-8,
            "{kind:?}: energy gap {}",
            (report.final_energy - oracle.energy).abs()
        );
    }
}

#[test]
fn nested_single_level_is_plain_solve() {
    let cfg = SolveConfig::default();
    let (u_nested, reports) =
        nested_solve(|l| ProblemFamily::Obstacle1d.build(l, 0), 4, 4, &cfg).unwrap();
    assert_eq!(reports.len(), 1);
    let p = ProblemFamily::Obstacle1d.build(4, 0).unwrap();
    let (u_plain, plain) = solve_problem(&p, &cfg).unwrap();
    assert_eq!(reports[0].1.iterations(), plain.iterations());
    assert_eq!(u_nested.as_slice(), u_plain.as_slice());
}

#[test]
fn nested_warm_start_needs_no_more_iterations_than_cold_start() {
    let cfg = SolveConfig::default();
    let (_, reports) = nested_solve(|l| ProblemFamily::Obstacle1d.build(l, 0), 2, 6, &cfg).unwrap();
    let finest = &reports.last().unwrap().1;
    assert!(finest.converged);
    let p = ProblemFamily::Obstacle1d.build(6, 0).unwrap();
    let (_, cold) = solve_problem(&p, &cfg).unwrap();
    assert!(
        finest.iterations() <= cold.iterations(),
        "warm {} > cold {}",
        finest.iterations(),
        cold.iterations()
    );
}

#[test]
fn nested_projection_restores_feasibility_for_simplex_blocks() {
    let cfg = SolveConfig {
        smoother: SmootherConfig {
            kind: LocalSolverKind::PolyhedralGs,
            ..SmootherConfig::default()
        },
        ..SolveConfig::default()
    };
    let (u, reports) =
        nested_solve(|l| ProblemFamily::Phasefield1d.build(l, 0), 1, 4, &cfg).unwrap();
    assert!(reports.iter().all(|(_, r)| r.converged));
    let p = ProblemFamily::Phasefield1d.build(4, 0).unwrap();
    assert!(p.functional.is_feasible(&u));
    let e = p.functional.evaluate(&u).unwrap();
    assert!(e.is_finite());
}

#[test]
fn termination_iterate_is_blockwise_stationary() {
    for (family, level) in [
        (ProblemFamily::Obstacle1d, 5),
        (ProblemFamily::Phasefield1d, 4),
        (ProblemFamily::Friction1d, 4),
    ] {
        let p = family.build(level, 0).unwrap();
        let (u, report) = solve_problem(&p, &family_config(&p)).unwrap();
        assert!(report.converged);
        let j = report.final_energy;
        // Exact block relaxation from the terminal iterate must not find
        // meaningful descent anywhere.
        let oracle = oracle_coordinate_descent(&p.functional, &u, 1e-13).unwrap();
        assert!(
            j - oracle.energy <= 1e-9 * (1.0 + j.abs()),
            "{}: residual descent {:.3e}",
            p.name,
            j - oracle.energy
        );
    }
}

#[test]
fn damping_never_exceeds_ray_grid_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for _ in 0..100 {
        let n = 4;
        let s = BlockStructure::scalar(n);
        let mut builder = BlockSparseMatrix::builder(&s);
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let mut v = if i == j { 0.4 } else { 0.0 };
                for row in &m {
                    v += row[i] * row[j];
                }
                builder.add_scalar(i, j, v);
            }
        }
        let a = builder.build().unwrap();
        let b =
            BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let f = SeparableFunctional::new(
            SmoothPart::Quadratic(QuadraticPart::new(a, b).unwrap()),
            vec![NonsmoothTerm::interval(-1.0, 1.0).unwrap(); n],
        )
        .unwrap();
        let u = f.project_feasible(
            &BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        );
        let v =
            BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let vt = project_into_domain(&f, &u, &v).unwrap();
        let rho = damp(&f, &u, &vt, 4.0).unwrap();
        let j_rho = f
            .evaluate(&u.add_scaled(rho, &vt))
            .unwrap()
            .finite()
            .unwrap();
        let j_u = f.evaluate(&u).unwrap().finite().unwrap();
        let j_full = f
            .evaluate(&u.add_scaled(1.0, &vt))
            .unwrap()
            .finite()
            .unwrap();
        assert!(j_rho <= j_u.min(j_full) + 1e-12 * (1.0 + j_u.abs()));
        // Dense grid over the feasible part of the damping interval.
        let grid_min = (0..=4000)
            .map(|i| 4.0 * i as f64 / 4000.0)
            .filter_map(|r| f.evaluate(&u.add_scaled(r, &vt)).unwrap().finite())
            .fold(f64::INFINITY, f64::min);
        assert!(
            j_rho <= grid_min + 1e-8 * (1.0 + grid_min.abs()),
            "damping missed the ray minimum: {j_rho} vs {grid_min}"
        );
    }
}

#[test]
fn projected_damping_beats_pure_damping_on_corner_geometry() {
    // Box-constrained quadratics whose Newton step exits through the right
    // wall while the current iterate sits near the lower right corner:
    // damping the projected correction must reach at least as low an energy
    // as the best feasible pure damping of the raw correction. (With the
    // step exiting through one face and nonnegative coupling, the projected
    // ray passes a point at least as good as every pure-damped point.)
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let s = BlockStructure::scalar(2);
    for _ in 0..200 {
        let (a11, a22): (f64, f64) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let a12 = rng.gen_range(0.0..0.4) * (a11 * a22).sqrt();
        let mut builder = BlockSparseMatrix::builder(&s);
        builder.add_scalar(0, 0, a11);
        builder.add_scalar(1, 1, a22);
        builder.add_scalar(0, 1, a12);
        builder.add_scalar(1, 0, a12);
        let a = builder.build().unwrap();
        // Unconstrained minimizer beyond the right wall, inside in y.
        let target =
            BlockVector::from_vec(&s, vec![rng.gen_range(1.2..2.5), rng.gen_range(0.3..0.95)])
                .unwrap();
        let b = a.apply(&target).unwrap();
        let f = SeparableFunctional::new(
            SmoothPart::Quadratic(QuadraticPart::new(a.clone(), b).unwrap()),
            vec![NonsmoothTerm::interval(0.0, 1.0).unwrap(); 2],
        )
        .unwrap();
        let u = BlockVector::from_vec(
            &s,
            vec![rng.gen_range(0.55..0.9), rng.gen_range(0.05..0.25)],
        )
        .unwrap();
        // Full Newton correction to the unconstrained minimizer.
        let v = target.sub(&u);
        let vt = project_into_domain(&f, &u, &v).unwrap();
        let rho = damp(&f, &u, &vt, 4.0).unwrap();
        let j_projected = f
            .evaluate(&u.add_scaled(rho, &vt))
            .unwrap()
            .finite()
            .unwrap();
        let j_pure = (0..=4000)
            .map(|i| 4.0 * i as f64 / 4000.0)
            .filter_map(|r| f.evaluate(&u.add_scaled(r, &v)).unwrap().finite())
            .fold(f64::INFINITY, f64::min);
        assert!(
            j_projected <= j_pure + 1e-10 * (1.0 + j_pure.abs()),
            "projected damping {j_projected} worse than pure damping {j_pure}"
        );
    }
}

#[test]
fn corrections_are_kernel_invariant_for_every_solver() {
    // Truncated obstacle system: active rows removed. Every linear solver
    // kind must return corrections inside the correction space.
    let p = ProblemFamily::Obstacle1d.build(5, 0).unwrap();
    let f = &p.functional;
    let cfg = family_config(&p);
    // Near the solution the obstacle is active on an interior region.
    let (u_star, _) = solve_problem(&p, &cfg).unwrap();
    let u_half = tnnmg::smoother::smooth(f, &u_star, &cfg.smoother).unwrap();
    let pattern = build_pattern(f, &u_half, 1e-10, 1e8).unwrap();
    assert!(
        pattern.truncated_fraction() > 0.0,
        "test needs active constraints"
    );
    let g = truncated_gradient(f, &u_half, &pattern).unwrap();
    let h = truncated_hessian(f, &u_half, &pattern).unwrap();
    for kind in [
        LinearSolverKind::VCycle,
        LinearSolverKind::Cg,
        LinearSolverKind::DensePseudoInverse,
    ] {
        let lin = LinearSolverConfig {
            kind,
            ..LinearSolverConfig::default()
        };
        let v = tnnmg::linsolve::solve_correction(&p.hierarchy, &h, &g, &pattern, &lin).unwrap();
        let defect = pattern.project(&v).sub(&v).norm();
        assert!(
            defect <= 1e-12 * (1.0 + v.norm()),
            "{kind:?}: kernel defect {defect}"
        );
        assert!(g.dot(&v) <= 1e-10 * (1.0 + g.norm() * v.norm()));
    }
}

#[test]
fn report_row_fields_are_consistent() {
    let p = ProblemFamily::Obstacle1d.build(4, 0).unwrap();
    let (_, report) = solve_problem(&p, &family_config(&p)).unwrap();
    for r in &report.records {
        assert!(r.truncated_fraction >= 0.0 && r.truncated_fraction <= 1.0);
        assert!(r.damping >= 0.0 && r.damping <= 4.0);
        assert!(r.correction_norm >= 0.0 && r.increment >= 0.0);
    }
    assert!(report.mean_rate(5).is_some());
}

#[test]
fn unconstrained_tnnmg_is_plain_newton_with_dense_solver() {
    // Sanity duplicate of the driver unit test at a larger size with the
    // default V-cycle replaced by the dense solve.
    let n = 31;
    let s = BlockStructure::scalar(n);
    let mut builder = BlockSparseMatrix::builder(&s);
    for i in 0..n {
        builder.add_scalar(i, i, 2.5);
        if i + 1 < n {
            builder.add_scalar(i, i + 1, -1.0);
            builder.add_scalar(i + 1, i, -1.0);
        }
    }
    let a = builder.build().unwrap();
    let b = BlockVector::from_vec(&s, (0..n).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
    let f = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b).unwrap()),
        vec![NonsmoothTerm::Interval(Interval::unbounded()); n],
    )
    .unwrap();
    let hier = GridHierarchy::single_level(&s);
    let cfg = SolveConfig {
        linear: LinearSolverConfig {
            kind: LinearSolverKind::DensePseudoInverse,
            ..LinearSolverConfig::default()
        },
        ..SolveConfig::default()
    };
    let u0 = BlockVector::zeros(&s);
    let g0 = f.gradient(&u0).unwrap().norm();
    let (u1, _) = tnnmg_step(&f, &u0, &hier, &cfg).unwrap();
    let g1 = f.gradient(&u1).unwrap().norm();
    assert!(g1 <= 1e-10 * g0);
}

#[test]
fn truncated_hessian_keeps_norm_curvature() {
    // Active (sliding) friction blocks contribute their analytic norm
    // Hessian to the truncated operator.
    let p = build_friction_norm_1d(3, 0.3).unwrap();
    let (u, _) = solve_problem(&p, &family_config(&p)).unwrap();
    let pattern = build_pattern(&p.functional, &u, 1e-10, 1e8).unwrap();
    let h_truncated = truncated_hessian(&p.functional, &u, &pattern).unwrap();
    let h_smooth = p.functional.hessian(&u).unwrap();
    let mut saw_curvature = false;
    for k in 0..p.functional.structure().num_blocks() {
        if pattern.block_pattern(k).is_full() {
            let x = u.block(k);
            let nx = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if nx > 1e-8 {
                let mut diff = h_truncated.diag_block(k).clone();
                diff.add_scaled(-1.0, h_smooth.diag_block(k));
                // omega/(|x|) (I - xx^T/|x|^2) has trace omega/|x|.
                let trace = diff.get(0, 0) + diff.get(1, 1);
                assert!((trace - 0.3 / nx).abs() <= 1e-10 * (1.0 + trace.abs()));
                saw_curvature = true;
            }
        }
    }
    assert!(saw_curvature, "no sliding blocks in the friction test");
}

#[test]
fn truncated_gradient_carries_norm_slope() {
    // Finite differences of the full energy along in-pattern directions see
    // the omega * x/|x| contribution of active norm blocks.
    let p = build_friction_norm_1d(3, 0.3).unwrap();
    let f = &p.functional;
    let (u, _) = solve_problem(&p, &family_config(&p)).unwrap();
    let pattern = build_pattern(f, &u, 1e-10, 1e8).unwrap();
    let g = truncated_gradient(f, &u, &pattern).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(305);
    let n = f.structure().total_dim();
    for _ in 0..20 {
        let raw = BlockVector::from_vec(
            f.structure(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let d = pattern.project(&raw);
        if d.norm() < 1e-12 {
            continue;
        }
        let h = 1e-6;
        let jp = f.evaluate(&u.add_scaled(h, &d)).unwrap().finite().unwrap();
        let jm = f.evaluate(&u.add_scaled(-h, &d)).unwrap().finite().unwrap();
        let fd = (jp - jm) / (2.0 * h);
        assert!(
            (fd - g.dot(&d)).abs() <= 1e-6 * (1.0 + fd.abs()) * (1.0 + d.norm()),
            "directional derivative {fd} vs truncated gradient {}",
            g.dot(&d)
        );
    }
}

#[test]
fn pseudoinverse_reproduces_range_components_of_rank_deficient_matrices() {
    use tnnmg::linsolve::dense_pseudoinverse_solve;
    let mut rng = ChaCha8Rng::seed_from_u64(307);
    let n = 20;
    let rank = 15;
    let s = BlockStructure::scalar(n);
    // A = sum of `rank` outer products: PSD with known range.
    let factors: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut builder = BlockSparseMatrix::builder(&s);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for f in &factors {
                v += f[i] * f[j];
            }
            builder.add_scalar(i, j, v);
        }
    }
    let a = builder.build().unwrap();
    // r in range(A) by construction.
    let y = BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let r = a.apply(&y).unwrap();
    let v = dense_pseudoinverse_solve(&a, &r, 1e-12, 2000).unwrap();
    let recovered = a.apply(&v).unwrap();
    assert!(
        recovered.sub(&r).norm() <= 1e-10 * (1.0 + r.norm()),
        "A A^+ r missed r by {}",
        recovered.sub(&r).norm()
    );
}

#[test]
fn whole_vector_projection_equals_blockwise_simplex_projection() {
    // The domain is a product of per-block sets, so the global Euclidean
    // projection decomposes; cross-check each block against the
    // enumeration oracle on an n = 12 instance.
    use tnnmg::oracle::oracle_simplex_projection_enum;
    let p = build_phasefield_simplex_1d(2, 4, 9).unwrap(); // 3 nodes x L=4
    let f = &p.functional;
    assert_eq!(f.structure().total_dim(), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(309);
    let u = p.initial.clone();
    let v = BlockVector::from_vec(
        f.structure(),
        (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let vt = project_into_domain(f, &u, &v).unwrap();
    for k in 0..f.structure().num_blocks() {
        let target: Vec<f64> = u
            .block(k)
            .iter()
            .zip(v.block(k))
            .map(|(a, b)| a + b)
            .collect();
        let expected = oracle_simplex_projection_enum(&target).unwrap();
        for (got, want) in vt
            .block(k)
            .iter()
            .zip(u.block(k))
            .map(|(d, base)| d + base)
            .zip(&expected)
        {
            assert!((got - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn oracle_descent_matches_enumeration_on_small_obstacle() {
    let p = build_obstacle_1d(3, Interval::new(-0.15, 0.15).unwrap(), -10.0).unwrap();
    let oracle = oracle_coordinate_descent(&p.functional, &p.initial, 1e-13).unwrap();
    let (a, b) = match p.functional.smooth() {
        SmoothPart::Quadratic(q) => (q.matrix(), q.linear()),
        _ => unreachable!(),
    };
    let exact = oracle_box_qp_enumeration(a, b, &[Interval::new(-0.15, 0.15).unwrap(); 7]).unwrap();
    assert!(oracle.point.sub(&exact).inf_norm() <= 1e-10);
}

#[test]
fn entropy_barrier_problem_solves_end_to_end() {
    // Quadratic part plus per-block entropy sums: components pushed hard
    // toward zero exercise the curvature-cap truncation, and the barrier
    // keeps every component strictly positive.
    use tnnmg::functional::ScalarFn;
    use tnnmg::nonsmooth::ActiveConstraint;

    let m = 9;
    let s = BlockStructure::uniform(m, 2);
    let mut builder = BlockSparseMatrix::builder(&s);
    let diag = DenseBlock::from_row_major(2, 2, vec![4.0, 0.5, 0.5, 4.0]);
    let off = DenseBlock::scaled_identity(2, -1.0);
    for i in 0..m {
        builder.add_block(i, i, diag.clone());
        if i + 1 < m {
            builder.add_block(i, i + 1, off.clone());
            builder.add_block(i + 1, i, off.clone());
        }
    }
    let a = builder.build().unwrap();
    // First components pulled up, second components pushed far below zero,
    // so their minimizers sit at exp-small positive values.
    let mut load = Vec::new();
    for i in 0..m {
        load.push(1.5 + 0.1 * i as f64);
        load.push(-25.0);
    }
    let b = BlockVector::from_vec(&s, load).unwrap();
    let f = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b).unwrap()),
        vec![NonsmoothTerm::smooth_singular_sum(vec![ScalarFn::entropy(); 2]).unwrap(); m],
    )
    .unwrap();
    let hier = GridHierarchy::single_level(&s);
    let u0 = BlockVector::from_vec(&s, vec![0.5; 2 * m]).unwrap();
    let cfg = SolveConfig {
        linear: LinearSolverConfig {
            kind: LinearSolverKind::DensePseudoInverse,
            ..LinearSolverConfig::default()
        },
        ..SolveConfig::default()
    };
    let (u, report) = solve(&f, &u0, &hier, &cfg).unwrap();
    assert!(report.converged, "entropy problem did not converge");
    // Monotone energy history.
    let mut prev = f64::INFINITY;
    for r in &report.records {
        assert!(r.energy <= prev + 1e-12 * (1.0 + r.energy.abs()));
        prev = r.energy;
    }
    // Strict positivity and a wide scale split between the components.
    for k in 0..m {
        assert!(u.block(k)[0] > 0.1, "first component collapsed");
        assert!(u.block(k)[1] > 0.0, "barrier violated");
        assert!(u.block(k)[1] < 1e-8, "second component did not approach 0");
    }
    // The curvature cap truncates the near-singular components.
    let pattern = build_pattern(&f, &u, 1e-10, 1e8).unwrap();
    let capped = pattern
        .active_sets()
        .iter()
        .flat_map(|a| a.constraints.iter())
        .filter(|c| {
            matches!(
                c,
                ActiveConstraint::CurvatureCap(_) | ActiveConstraint::AtLower(_)
            )
        })
        .count();
    assert!(capped >= m, "expected near-singular components to truncate");
    // The truncated Hessian sees the entropy curvature on free components.
    let h = truncated_hessian(&f, &u, &pattern).unwrap();
    let h0_smooth = f.hessian(&u).unwrap().diag_block(0).get(0, 0);
    let h0 = h.diag_block(0).get(0, 0);
    let expected = h0_smooth + 1.0 / u.block(0)[0];
    assert!(
        (h0 - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
        "entropy curvature missing: {h0} vs {expected}"
    );
    // Independent optimum.
    let oracle = oracle_coordinate_descent(&f, &u0, 1e-13).unwrap();
    assert!(
        (report.final_energy - oracle.energy).abs() <= 1e-8,
        "energy gap {:.3e}",
        (report.final_energy - oracle.energy).abs()
    );
}
