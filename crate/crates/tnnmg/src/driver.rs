//! The full solver iteration: nonlinear pre-smoothing, truncated Newton
//! correction, projection, damping, and convergence monitoring.

use crate::blocks::BlockVector;
use crate::error::{Error, Result};
use crate::functional::SeparableFunctional;
use crate::linsolve::{solve_correction, GridHierarchy, LinearSolverConfig};
use crate::postprocess::{damp, project_into_domain};
use crate::problems::ProblemInstance;
use crate::smoother::{smooth, SmootherConfig};
use crate::truncation::{build_pattern, truncated_gradient, truncated_hessian};

/// Consecutive zero-damping steps with a nonzero correction before a
/// diagnostic warning is recorded.
const ZERO_DAMPING_STREAK: usize = 3;

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub max_iterations: usize,
    /// Stopping tolerance on the iterate increment norm.
    pub increment_tol: f64,
    /// Stopping tolerance on the relative per-iteration energy decrease.
    pub stagnation_tol: f64,
    /// Activity tolerance of the truncation.
    pub truncation_eps: f64,
    /// Curvature cap of the truncation (singular-sum terms only).
    pub curvature_cap: f64,
    pub smoother: SmootherConfig,
    pub linear: LinearSolverConfig,
    /// Upper end of the damping search interval.
    pub rho_max: f64,
    /// Project an infeasible initial iterate instead of rejecting it.
    pub project_initial: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iterations: 100,
            increment_tol: 1e-10,
            stagnation_tol: 1e-12,
            truncation_eps: 1e-10,
            curvature_cap: 1e8,
            smoother: SmootherConfig::default(),
            linear: LinearSolverConfig::default(),
            rho_max: 4.0,
            project_initial: true,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.increment_tol <= 0.0 || self.stagnation_tol <= 0.0 {
            return Err(Error::usage("stopping tolerances must be positive"));
        }
        if self.truncation_eps < 0.0 || self.curvature_cap <= 0.0 {
            return Err(Error::usage("truncation parameters must be nonnegative"));
        }
        Ok(())
    }
}

/// One row of the convergence history.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    /// Energy at the start of the iteration.
    pub energy: f64,
    pub energy_after_smoothing: f64,
    /// Norm of the projected correction.
    pub correction_norm: f64,
    pub damping: f64,
    /// Fraction of coefficients removed from the correction space.
    pub truncated_fraction: f64,
    /// Norm of the full iterate update.
    pub increment: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// True when the initial iterate had to be projected into the domain.
    pub projected_initial: bool,
    pub final_energy: f64,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Iterations until the increment first dropped below `tol`.
    pub fn iterations_to_increment(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.increment < tol)
            .map(|i| i + 1)
    }

    /// Geometric mean of the increment contraction over the last `window`
    /// iteration pairs.
    pub fn mean_rate(&self, window: usize) -> Option<f64> {
        let incs: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.increment)
            .filter(|&x| x > 0.0)
            .collect();
        if incs.len() < 2 {
            return None;
        }
        let k = window.min(incs.len() - 1);
        let first = incs[incs.len() - 1 - k];
        let last = incs[incs.len() - 1];
        Some((last / first).powf(1.0 / k as f64))
    }
}

/// One iteration: smoothing, truncated linear correction, projection,
/// damping. The energy is monotonically non-increasing across every stage.
pub fn tnnmg_step(
    f: &SeparableFunctional,
    u: &BlockVector,
    hierarchy: &GridHierarchy,
    cfg: &SolveConfig,
) -> Result<(BlockVector, IterationRecord)> {
    let energy = f
        .evaluate(u)?
        .expect_finite("tnnmg_step: infeasible iterate")?;

    let u_half = smooth(f, u, &cfg.smoother)?;
    let energy_half = f
        .evaluate(&u_half)?
        .expect_finite("tnnmg_step: smoother left the domain")?;
    let slack = 1e-12 * (1.0 + energy.abs());
    if energy_half > energy + slack {
        return Err(Error::internal(format!(
            "smoothing stage increased the energy by {:.3e}",
            energy_half - energy
        )));
    }

    let pattern = build_pattern(f, &u_half, cfg.truncation_eps, cfg.curvature_cap)?;
    let g = truncated_gradient(f, &u_half, &pattern)?;
    let h = truncated_hessian(f, &u_half, &pattern)?;
    let v = solve_correction(hierarchy, &h, &g, &pattern, &cfg.linear)?;

    let v_tilde = project_into_domain(f, &u_half, &v)?;
    let rho = damp(f, &u_half, &v_tilde, cfg.rho_max)?;
    let u_next = u_half.add_scaled(rho, &v_tilde);

    let energy_next = f
        .evaluate(&u_next)?
        .expect_finite("tnnmg_step: post-processing left the domain")?;
    if energy_next > energy_half + 1e-12 * (1.0 + energy_half.abs()) {
        return Err(Error::internal(format!(
            "post-processing stage increased the energy by {:.3e}",
            energy_next - energy_half
        )));
    }

    let record = IterationRecord {
        energy,
        energy_after_smoothing: energy_half,
        correction_norm: v_tilde.norm(),
        damping: rho,
        truncated_fraction: pattern.truncated_fraction(),
        increment: u_next.sub(u).norm(),
    };
    Ok((u_next, record))
}

/// Iterate until both the increment and the energy decrease stay below their
/// tolerances for two consecutive iterations (an exactly stationary iterate
/// stops immediately). Hitting the iteration cap returns with
/// `converged = false`, not an error.
pub fn solve(
    f: &SeparableFunctional,
    u0: &BlockVector,
    hierarchy: &GridHierarchy,
    cfg: &SolveConfig,
) -> Result<(BlockVector, SolveReport)> {
    cfg.validate()?;
    let mut warnings = cfg.linear.warnings();
    let mut projected_initial = false;
    let mut u = u0.clone();
    if !f.is_feasible(&u) {
        if !cfg.project_initial {
            return Err(Error::usage("solve: infeasible initial iterate"));
        }
        u = f.project_feasible(&u);
        projected_initial = true;
    }

    let mut records = Vec::new();
    let mut converged = false;
    let mut criterion_streak = 0usize;
    let mut zero_rho_streak = 0usize;
    let mut zero_rho_warned = false;

    for _ in 0..cfg.max_iterations {
        let (u_next, record) = tnnmg_step(f, &u, hierarchy, cfg)?;
        let energy_next = f
            .evaluate(&u_next)?
            .expect_finite("solve: iterate energy")?;
        let energy_drop = record.energy - energy_next;
        u = u_next;
        records.push(record);

        // Rejected corrections of meaningful size suggest a mis-tuned
        // truncation tolerance; noise-level rejections near convergence are
        // normal and stay silent.
        if record.damping == 0.0 && record.correction_norm > cfg.increment_tol.sqrt() {
            zero_rho_streak += 1;
            if zero_rho_streak >= ZERO_DAMPING_STREAK && !zero_rho_warned {
                warnings.push(format!(
                    "{zero_rho_streak} consecutive rejected corrections (rho = 0); \
                     the truncation tolerance may be mis-tuned"
                ));
                zero_rho_warned = true;
            }
        } else {
            zero_rho_streak = 0;
        }

        let stagnated = energy_drop.abs() <= cfg.stagnation_tol * (1.0 + energy_next.abs());
        if record.increment <= cfg.increment_tol && stagnated {
            criterion_streak += 1;
            if criterion_streak >= 2 || record.increment == 0.0 {
                converged = true;
                break;
            }
        } else {
            criterion_streak = 0;
        }
    }

    let final_energy = f.evaluate(&u)?.expect_finite("solve: final energy")?;
    Ok((
        u,
        SolveReport {
            records,
            converged,
            projected_initial,
            final_energy,
            warnings,
        },
    ))
}

/// Solve a problem instance with the family's default smoother unless the
/// config overrides it.
pub fn solve_problem(
    problem: &ProblemInstance,
    cfg: &SolveConfig,
) -> Result<(BlockVector, SolveReport)> {
    solve(
        &problem.functional,
        &problem.initial,
        &problem.hierarchy,
        cfg,
    )
}

/// Nested iteration: solve the coarsest level, prolong each solution to the
/// next level (projecting back into the domain), and continue to the finest
/// level. Returns the finest iterate and one report per level.
pub fn nested_solve(
    build: impl Fn(usize) -> Result<ProblemInstance>,
    coarsest: usize,
    finest: usize,
    cfg: &SolveConfig,
) -> Result<(BlockVector, Vec<(usize, SolveReport)>)> {
    if coarsest == 0 || coarsest > finest {
        return Err(Error::usage("nested_solve: invalid level range"));
    }
    let mut reports = Vec::new();
    let mut carried: Option<BlockVector> = None;
    for level in coarsest..=finest {
        let problem = build(level)?;
        let u0 = match carried {
            None => problem.initial.clone(),
            Some(coarse_solution) => {
                let levels = problem.hierarchy.num_levels();
                let p = problem.hierarchy.prolongation(levels - 2);
                let prolonged = p.prolong(&coarse_solution)?;
                // Prolongation may leave the domain (simplex components can
                // go slightly negative); project back.
                problem.functional.project_feasible(&prolonged)
            }
        };
        let (u, report) = solve(&problem.functional, &u0, &problem.hierarchy, cfg)?;
        reports.push((level, report));
        carried = Some(u);
    }
    Ok((carried.expect("at least one level solved"), reports))
}
