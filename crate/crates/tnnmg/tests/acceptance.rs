//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Run with `cargo test -p tnnmg --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tnnmg::blocks::{BlockStructure, BlockVector};
use tnnmg::driver::{nested_solve, solve_problem, tnnmg_step, SolveConfig};
use tnnmg::functional::{QuadraticPart, SeparableFunctional, SmoothPart};
use tnnmg::linsolve::{
    dense_pseudoinverse_solve, solve_correction, vcycle, GridHierarchy, LinearSolverConfig,
    LinearSolverKind,
};
use tnnmg::matrix::{BlockSparseMatrix, DenseBlock};
use tnnmg::nonsmooth::{simplex_project, Interval, NonsmoothTerm};
use tnnmg::oracle::{
    oracle_box_qp_enumeration, oracle_coordinate_descent, oracle_simplex_projection_enum,
};
use tnnmg::problems::{build_obstacle_1d, ProblemFamily};
use tnnmg::smoother::SmootherConfig;
use tnnmg::truncation::{build_pattern, truncated_gradient, truncated_hessian, TruncationPattern};

fn family_config(p: &tnnmg::problems::ProblemInstance) -> SolveConfig {
    SolveConfig {
        smoother: SmootherConfig {
            kind: p.default_smoother,
            ..SmootherConfig::default()
        },
        ..SolveConfig::default()
    }
}

#[test]
fn acceptance_01_monotone_energy() {
    // Every shipped problem, every level up to 6: the energy never rises
    // across smoothing or post-processing in any iteration. Per-block
    // monotonicity inside the smoother is enforced by the solver itself
    // (violations abort the solve with an internal error).
    for family in ProblemFamily::all() {
        for level in 1..=6usize {
            let p = family.build(level, 0).unwrap();
            let mut cfg = family_config(&p);
            cfg.max_iterations = 40;
            let (_, report) = solve_problem(&p, &cfg).unwrap();
            let mut prev = f64::INFINITY;
            for (i, r) in report.records.iter().enumerate() {
                let slack = 1e-12 * (1.0 + r.energy.abs());
                assert!(
                    r.energy <= prev + slack,
                    "{}: J(u^{i}) rose above the previous iterate",
                    p.name
                );
                assert!(
                    r.energy_after_smoothing <= r.energy + slack,
                    "{}: smoothing raised the energy at iteration {i}",
                    p.name
                );
                prev = r.energy_after_smoothing;
            }
            assert!(report.final_energy <= prev + 1e-12 * (1.0 + prev.abs()));
        }
    }
    println!("criterion 01 (monotone energy, all problems, levels <= 6): PASS");
}

#[test]
fn acceptance_02_oracle_equivalence() {
    let cases = [
        (ProblemFamily::Obstacle1d, 6usize), // n = 63
        (ProblemFamily::Minsurf1d, 5),       // n = 31
        (ProblemFamily::Phasefield1d, 5),    // L = 3, 31 nodes
        (ProblemFamily::Friction1d, 5),      // 31 nodes
    ];
    for (family, level) in cases {
        let p = family.build(level, 0).unwrap();
        let (_, report) = solve_problem(&p, &family_config(&p)).unwrap();
        assert!(report.converged, "{} did not converge", p.name);
        let oracle = oracle_coordinate_descent(&p.functional, &p.initial, 1e-13).unwrap();
        assert!(oracle.converged);
        let gap = (report.final_energy - oracle.energy).abs();
        assert!(gap <= 1e-8, "{}: energy gap {gap:.3e}", p.name);
    }
    // Small obstacle additionally matches the activity-pattern enumeration
    // iterate in the operator norm.
    let p = build_obstacle_1d(3, Interval::new(-0.15, 0.15).unwrap(), -10.0).unwrap();
    let (u, _) = solve_problem(&p, &family_config(&p)).unwrap();
    let (a, b) = match p.functional.smooth() {
        SmoothPart::Quadratic(q) => (q.matrix(), q.linear()),
        _ => unreachable!(),
    };
    let exact = oracle_box_qp_enumeration(a, b, &[Interval::new(-0.15, 0.15).unwrap(); 7]).unwrap();
    let diff = u.sub(&exact);
    assert!(a.quadratic_form(&diff).sqrt() <= 1e-8);
    println!("criterion 02 (oracle equivalence at desk scale): PASS");
}

#[test]
fn acceptance_03_quadratic_newton_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let n = 20;
    let s = BlockStructure::scalar(n);
    let mut builder = BlockSparseMatrix::builder(&s);
    let m: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let mut v = if i == j { 1.0 } else { 0.0 };
            for row in &m {
                v += row[i] * row[j];
            }
            builder.add_scalar(i, j, v);
        }
    }
    let a = builder.build().unwrap();
    let b = BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
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
    let u0 = BlockVector::from_vec(&s, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let g0 = f.gradient(&u0).unwrap().norm();
    let (u1, _) = tnnmg_step(&f, &u0, &hier, &cfg).unwrap();
    let g1 = f.gradient(&u1).unwrap().norm();
    assert!(
        g1 * 1e10 <= g0,
        "gradient norm reduced only by {:.3e}",
        g0 / g1.max(f64::MIN_POSITIVE)
    );
    println!("criterion 03 (one-step Newton exactness on quadratics): PASS");
}

#[test]
fn acceptance_04_simplex_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    let mut max_dev = 0.0f64;
    let mut max_kkt = 0.0f64;
    for _ in 0..1000 {
        let l = rng.gen_range(2..=4usize);
        let r: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z = simplex_project(&r);
        let z_enum = oracle_simplex_projection_enum(&r).unwrap();
        for (a, b) in z.iter().zip(&z_enum) {
            max_dev = max_dev.max((a - b).abs());
        }
        // KKT residual: r_i - z_i constant on the support, not larger off it.
        let mu = z
            .iter()
            .zip(&r)
            .filter(|(z, _)| **z > 0.0)
            .map(|(z, r)| r - z)
            .next()
            .expect("support is nonempty");
        for (&zi, &ri) in z.iter().zip(&r) {
            if zi > 0.0 {
                max_kkt = max_kkt.max((ri - zi - mu).abs());
            } else {
                max_kkt = max_kkt.max((ri - mu).max(0.0));
            }
        }
        let sum: f64 = z.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-14);
        assert!(z.iter().all(|&v| v >= 0.0));
    }
    assert!(max_dev <= 1e-12, "max deviation {max_dev:.3e}");
    assert!(max_kkt <= 1e-10, "max KKT residual {max_kkt:.3e}");
    println!("criterion 04 (simplex projection vs enumeration, KKT): PASS");
}

#[test]
fn acceptance_05_dominating_models() {
    use tnnmg::localsolve::{
        curvature_bound, solve_dominating_model, FirstOrderModel, ModelCurvature, ShiftedTerm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(405);

    // One random local problem per shipped model family.
    let spd = |rng: &mut ChaCha8Rng, n: usize| -> DenseBlock {
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut q = DenseBlock::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut v = if i == j { 0.3 } else { 0.0 };
                for row in &m {
                    v += row[i] * row[j];
                }
                q.set(i, j, v);
            }
        }
        q
    };
    let families: Vec<(NonsmoothTerm, usize)> = vec![
        (
            NonsmoothTerm::box_indicator(vec![Interval::new(-0.8, 0.8).unwrap(); 2]).unwrap(),
            2,
        ),
        (NonsmoothTerm::weighted_norm(0.6).unwrap(), 2),
        (NonsmoothTerm::simplex(3).unwrap(), 3),
    ];
    let mut descents = 0;
    for round in 0..1000 {
        for (term, n) in &families {
            let s = BlockStructure::uniform(1, *n);
            let mut builder = BlockSparseMatrix::builder(&s);
            builder.add_block(0, 0, spd(&mut rng, *n));
            let a = builder.build().unwrap();
            let b = BlockVector::from_vec(&s, (0..*n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let f = SeparableFunctional::new(
                SmoothPart::Quadratic(QuadraticPart::new(a, b).unwrap()),
                vec![term.clone()],
            )
            .unwrap();
            let w = match term {
                NonsmoothTerm::Simplex(_) => {
                    let raw: Vec<f64> = (0..*n).map(|_| rng.gen_range(0.0..1.0)).collect();
                    BlockVector::from_vec(&s, simplex_project(&raw)).unwrap()
                }
                _ => f.project_feasible(
                    &BlockVector::from_vec(&s, (0..*n).map(|_| rng.gen_range(-0.8..0.8)).collect())
                        .unwrap(),
                ),
            };
            let cache = f.smooth().make_cache(&w);
            let mut gradient = vec![0.0; *n];
            f.smooth().block_gradient(&cache, 0, &mut gradient);
            let bound = curvature_bound(f.smooth(), 0);
            let curvature = match term {
                NonsmoothTerm::WeightedNorm(_) | NonsmoothTerm::Simplex(_) => {
                    ModelCurvature::ScaledIdentity(bound.gershgorin_max())
                }
                _ => ModelCurvature::Dense(bound),
            };
            let model = FirstOrderModel {
                constant: 0.0,
                gradient,
                curvature,
                psi: ShiftedTerm {
                    term: term.clone(),
                    base: w.block(0).to_vec(),
                },
            };
            let local = |v: &[f64]| -> tnnmg::functional::Energy {
                let shifted: Vec<f64> = w.block(0).iter().zip(v).map(|(a, b)| a + b).collect();
                f.term(0)
                    .value(&shifted)
                    .plus(tnnmg::functional::Energy::Finite(
                        f.smooth().delta_value(&cache, 0, v),
                    ))
            };
            // M(0) = f(0) exactly.
            assert_eq!(model.value(&vec![0.0; *n]), local(&vec![0.0; *n]));
            // Domination on a random sample.
            let v: Vec<f64> = (0..*n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let (tnnmg::functional::Energy::Finite(fv), tnnmg::functional::Energy::Finite(mv)) =
                (local(&v), model.value(&v))
            {
                assert!(
                    mv >= fv - 1e-10 * (1.0 + fv.abs()),
                    "round {round}: model below functional"
                );
            }
            // Strict descent whenever the oracle certifies non-minimality.
            if round < 170 {
                let oracle = oracle_coordinate_descent(&f, &w, 1e-13).unwrap();
                let jw = f.evaluate(&w).unwrap().finite().unwrap();
                if jw - oracle.energy > 1e-12 * (1.0 + jw.abs()) {
                    let step = solve_dominating_model(&model).unwrap();
                    let f_new = local(&step).finite().expect("model step feasible");
                    let f_old = local(&vec![0.0; *n]).finite().unwrap();
                    assert!(
                        f_new < f_old - 1e-14 * (1.0 + f_old.abs()),
                        "round {round}: no strict descent"
                    );
                    descents += 1;
                }
            }
        }
    }
    assert!(
        descents >= 500,
        "only {descents} certified descents sampled"
    );
    println!("criterion 05 (dominating first-order models): PASS");
}

#[test]
fn acceptance_06_truncation_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(407);
    for family in ProblemFamily::all() {
        let p = family.build(3, 0).unwrap();
        let f = &p.functional;
        let n = f.structure().total_dim();
        let raw = BlockVector::from_vec(
            f.structure(),
            (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect(),
        )
        .unwrap();
        let u = f.project_feasible(&raw);
        let pattern = build_pattern(f, &u, 1e-10, 1e8).unwrap();
        for k in 0..f.structure().num_blocks() {
            let pb = pattern.projection_block(k);
            assert!(pb.symmetry_defect() <= 1e-12);
            let sq = pb.sandwich(&DenseBlock::identity(pb.nrows()), pb);
            let mut diff = sq;
            diff.add_scaled(-1.0, pb);
            assert!(
                diff.max_abs() <= 1e-12,
                "{}: projection not idempotent",
                p.name
            );
        }
        let g = truncated_gradient(f, &u, &pattern).unwrap();
        assert!(pattern.project(&g).sub(&g).norm() <= 1e-12 * (1.0 + g.norm()));
        let h = truncated_hessian(f, &u, &pattern).unwrap();
        // The full operator seen through the projection: smooth Hessian plus
        // the nonsmooth curvature on the pattern subspaces.
        let mut builder = BlockSparseMatrix::builder(f.structure());
        for (i, j, block) in f.hessian(&u).unwrap().entries() {
            let mut blk = block.clone();
            if i == j {
                if let Some(c) = f
                    .term(i)
                    .hessian_contribution(u.block(i), pattern.block_pattern(i))
                {
                    blk.add_scaled(1.0, &c);
                }
            }
            builder.add_block(i, j, blk);
        }
        let full = builder.build().unwrap();
        for _ in 0..100 {
            let x = BlockVector::from_vec(
                f.structure(),
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let px = pattern.project(&x);
            let lhs = h.quadratic_form(&x);
            let rhs = full.quadratic_form(&px);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()),
                "{}: quadratic form identity",
                p.name
            );
        }
    }
    println!("criterion 06 (truncation algebra): PASS");
}

#[test]
fn acceptance_07_multigrid_health() {
    // Galerkin identity on the two coarsest levels of every hierarchy.
    for family in ProblemFamily::all() {
        let p = family.build(4, 0).unwrap();
        let h = p.functional.hessian(&p.initial).unwrap();
        let mats = p.hierarchy.galerkin_matrices(&h).unwrap();
        let levels = mats.len();
        for level in 1..levels.min(3) {
            let pd = p.hierarchy.prolongation(level - 1).to_dense();
            let expected = pd.transpose() * mats[level].to_dense() * pd;
            let defect = (mats[level - 1].to_dense() - &expected).norm() / (1.0 + expected.norm());
            assert!(defect <= 1e-12, "{}: galerkin defect {defect:.3e}", p.name);
        }
    }

    // V(1,1) contraction on the untruncated 1D Laplacian with 63 unknowns.
    let p = build_obstacle_1d(6, Interval::unbounded(), -10.0).unwrap();
    let a = p.functional.hessian(&p.initial).unwrap();
    let r = BlockVector::from_vec(
        a.structure(),
        (0..63).map(|i| (0.37 * (i as f64 + 1.0)).sin()).collect(),
    )
    .unwrap();
    let exact = dense_pseudoinverse_solve(&a, &r, 1e-14, 2000).unwrap();
    let pattern = TruncationPattern::full(a.structure());
    let cfg = LinearSolverConfig::default();
    let mut v = BlockVector::zeros(a.structure());
    let mut last = a.quadratic_form(&exact.sub(&v)).sqrt();
    for cycle in 0..4 {
        let mut res = r.clone();
        res.axpy(-1.0, &a.apply(&v).unwrap());
        v.axpy(
            1.0,
            &vcycle(&p.hierarchy, &a, &res, &pattern, &cfg).unwrap(),
        );
        let err = a.quadratic_form(&exact.sub(&v)).sqrt();
        assert!(
            err <= 0.25 * last,
            "cycle {cycle}: contraction {:.3} above 0.25",
            err / last
        );
        last = err;
    }

    // Kernel invariance of every solver on a truncated system.
    let p = ProblemFamily::Obstacle1d.build(5, 0).unwrap();
    let cfg_prob = family_config(&p);
    let (u_star, _) = solve_problem(&p, &cfg_prob).unwrap();
    let u_half = tnnmg::smoother::smooth(&p.functional, &u_star, &cfg_prob.smoother).unwrap();
    let pattern = build_pattern(&p.functional, &u_half, 1e-10, 1e8).unwrap();
    assert!(pattern.truncated_fraction() > 0.0);
    let g = truncated_gradient(&p.functional, &u_half, &pattern).unwrap();
    let h = truncated_hessian(&p.functional, &u_half, &pattern).unwrap();
    for kind in [
        LinearSolverKind::VCycle,
        LinearSolverKind::Cg,
        LinearSolverKind::DensePseudoInverse,
    ] {
        let lin = LinearSolverConfig {
            kind,
            ..LinearSolverConfig::default()
        };
        let v = solve_correction(&p.hierarchy, &h, &g, &pattern, &lin).unwrap();
        assert!(pattern.project(&v).sub(&v).norm() <= 1e-12 * (1.0 + v.norm()));
    }
    println!("criterion 07 (multigrid health): PASS");
}

#[test]
fn acceptance_08_mesh_robustness() {
    // Nested iteration on the obstacle problem: the finest-level iteration
    // count to increment < 1e-10 must not grow by more than 2x from level 5
    // to level 8.
    let cfg = SolveConfig::default();
    let mut counts = Vec::new();
    for finest in [5usize, 6, 7, 8] {
        let (_, reports) =
            nested_solve(|l| ProblemFamily::Obstacle1d.build(l, 0), 1, finest, &cfg).unwrap();
        let finest_report = &reports.last().unwrap().1;
        assert!(finest_report.converged, "level {finest} did not converge");
        let count = finest_report
            .iterations_to_increment(1e-10)
            .expect("increment tolerance reached");
        counts.push((finest, count));
    }
    let base = counts[0].1;
    let finest = counts.last().unwrap().1;
    assert!(
        finest <= 2 * base,
        "level 8 needs {finest} iterations vs {base} at level 5"
    );
    println!("criterion 08 (mesh robustness under nested iteration, counts {counts:?}): PASS");
}

#[test]
fn acceptance_09_derivative_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(409);
    for family in ProblemFamily::all() {
        let p = family.build(3, 0).unwrap();
        let f = &p.functional;
        let n = f.structure().total_dim();
        for _ in 0..20 {
            let raw = BlockVector::from_vec(
                f.structure(),
                (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect(),
            )
            .unwrap();
            let v = f.project_feasible(&raw);
            let j0 = f.smooth().value(&v);
            let g = f.gradient(&v).unwrap();
            let hess = f.hessian(&v).unwrap();
            for _ in 0..5 {
                let d = BlockVector::from_vec(
                    f.structure(),
                    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let h = 1e-6;
                let fd = (f.smooth().value(&v.add_scaled(h, &d))
                    - f.smooth().value(&v.add_scaled(-h, &d)))
                    / (2.0 * h);
                assert!(
                    (fd - g.dot(&d)).abs() <= 1e-6 * (1.0 + j0.abs()) * (1.0 + d.norm()),
                    "{}: gradient check",
                    p.name
                );
                let hstep = 1e-5;
                let gp = f.gradient(&v.add_scaled(hstep, &d)).unwrap();
                let gm = f.gradient(&v.add_scaled(-hstep, &d)).unwrap();
                let mut fd2 = gp.sub(&gm);
                fd2.scale(1.0 / (2.0 * hstep));
                let hv = hess.apply(&d).unwrap();
                assert!(
                    fd2.sub(&hv).norm() <= 1e-5 * (1.0 + hv.norm()),
                    "{}: hessian check",
                    p.name
                );
            }
        }
    }
    println!("criterion 09 (finite-difference derivative consistency): PASS");
}

#[test]
fn acceptance_10_regularization_sensitivity() {
    let mut energies = Vec::new();
    for alpha in [1e-14, 1e-10, 1e-8] {
        let p = ProblemFamily::Obstacle1d.build(5, 0).unwrap();
        let cfg = SolveConfig {
            linear: LinearSolverConfig {
                alpha,
                ..LinearSolverConfig::default()
            },
            ..family_config(&p)
        };
        let (_, report) = solve_problem(&p, &cfg).unwrap();
        assert!(report.converged, "alpha {alpha:.0e} failed on obstacle1d");
        let p2 = ProblemFamily::Phasefield1d.build(4, 0).unwrap();
        let cfg2 = SolveConfig {
            linear: LinearSolverConfig {
                alpha,
                ..LinearSolverConfig::default()
            },
            ..family_config(&p2)
        };
        let (_, report2) = solve_problem(&p2, &cfg2).unwrap();
        assert!(
            report2.converged,
            "alpha {alpha:.0e} failed on phasefield1d"
        );
        energies.push((report.final_energy, report2.final_energy));
    }
    let (first, last) = (energies[0], energies[energies.len() - 1]);
    assert!(
        (first.0 - last.0).abs() <= 1e-9 * (1.0 + first.0.abs()),
        "obstacle energies differ: {:.3e}",
        (first.0 - last.0).abs()
    );
    assert!(
        (first.1 - last.1).abs() <= 1e-9 * (1.0 + first.1.abs()),
        "phasefield energies differ: {:.3e}",
        (first.1 - last.1).abs()
    );
    println!("criterion 10 (smoother regularization sensitivity): PASS");
}
