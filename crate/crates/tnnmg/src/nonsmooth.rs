//! Per-block convex nonsmooth terms and their local geometry.
//!
//! Each term exposes its value, the Euclidean projection onto its domain, the
//! subspace on which it is locally `C²` (used to build truncated Newton
//! corrections), and one-sided directional derivatives (used by the monotone
//! line search).

use crate::error::{Error, Result};
use crate::functional::{Energy, ScalarFn};
use crate::matrix::DenseBlock;

/// Slack for the simplex sum constraint; iterates drift from repeated
/// floating-point updates along edge directions.
const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Slack below zero tolerated for simplex components.
const SIMPLEX_NEG_TOL: f64 = 1e-12;

/// Closed interval with optionally infinite endpoints.
///
/// Endpoints enter comparisons and clamps only, never arithmetic, so the IEEE
/// infinities are safe here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lower: f64,
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() {
            return Err(Error::usage("interval bound is NaN"));
        }
        if lower > upper {
            return Err(Error::usage(format!(
                "interval lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        Ok(Interval { lower, upper })
    }

    pub fn unbounded() -> Self {
        Interval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lower).min(self.upper)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// Containment up to a few ulps, the slack needed because convex
    /// combinations `u + rho*(p - u)` of feasible points can overshoot a
    /// bound by one rounding error.
    pub fn contains_approx(&self, x: f64) -> bool {
        let lo_ok = !self.lower.is_finite()
            || x >= self.lower - 4.0 * f64::EPSILON * (1.0 + self.lower.abs());
        let hi_ok = !self.upper.is_finite()
            || x <= self.upper + 4.0 * f64::EPSILON * (1.0 + self.upper.abs());
        lo_ok && hi_ok
    }

    /// Shift by `-s`, the feasible set for a displacement from `s`.
    pub fn shifted(&self, s: f64) -> Interval {
        Interval {
            lower: if self.lower.is_finite() {
                self.lower - s
            } else {
                self.lower
            },
            upper: if self.upper.is_finite() {
                self.upper - s
            } else {
                self.upper
            },
        }
    }
}

/// Scalar constraints of a block that are active at a given point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveConstraint {
    AtLower(usize),
    AtUpper(usize),
    /// Simplex component at zero.
    SimplexZero(usize),
    /// Norm term at its kink (block at the origin).
    NormKink,
    /// Component disabled because its second derivative exceeds the cap.
    CurvatureCap(usize),
}

/// Active constraints of block `k`; deterministic in `(term, point, eps, cap)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub block: usize,
    pub constraints: Vec<ActiveConstraint>,
}

/// Subspace of a block on which the nonsmooth term is locally `C²`.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockPattern {
    /// The whole block.
    Full,
    /// The zero subspace.
    Empty,
    /// Span of the canonical directions flagged `true`.
    Mask(Vec<bool>),
    /// Span of the simplex edges `e_i - e_j` between components flagged
    /// `true` (the inactive components). Constructed only with at least two
    /// inactive components.
    SimplexEdges(Vec<bool>),
}

impl BlockPattern {
    pub fn is_full(&self) -> bool {
        matches!(self, BlockPattern::Full)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, BlockPattern::Empty)
    }

    /// Dimension of the subspace inside a block of size `n`.
    pub fn free_dim(&self, n: usize) -> usize {
        match self {
            BlockPattern::Full => n,
            BlockPattern::Empty => 0,
            BlockPattern::Mask(mask) => mask.iter().filter(|&&f| f).count(),
            BlockPattern::SimplexEdges(inactive) => {
                let q = inactive.iter().filter(|&&f| f).count();
                q.saturating_sub(1)
            }
        }
    }

    /// Dense orthogonal projection onto the subspace.
    pub fn projection(&self, n: usize) -> DenseBlock {
        match self {
            BlockPattern::Full => DenseBlock::identity(n),
            BlockPattern::Empty => DenseBlock::zeros(n, n),
            BlockPattern::Mask(mask) => {
                debug_assert_eq!(mask.len(), n);
                let mut p = DenseBlock::zeros(n, n);
                for (i, &free) in mask.iter().enumerate() {
                    if free {
                        p.set(i, i, 1.0);
                    }
                }
                p
            }
            BlockPattern::SimplexEdges(inactive) => {
                // Orthogonal projection onto {z : z_i = 0 for active i,
                // sum over inactive z_i = 0}: delta_ij - 1/q on the inactive
                // square, zero elsewhere.
                debug_assert_eq!(inactive.len(), n);
                let q = inactive.iter().filter(|&&f| f).count();
                let mut p = DenseBlock::zeros(n, n);
                if q < 2 {
                    return p;
                }
                let c = 1.0 / q as f64;
                for i in 0..n {
                    if !inactive[i] {
                        continue;
                    }
                    for j in 0..n {
                        if !inactive[j] {
                            continue;
                        }
                        let v = if i == j { 1.0 - c } else { -c };
                        p.set(i, j, v);
                    }
                }
                p
            }
        }
    }
}

/// Convex nonsmooth term acting on one block.
#[derive(Debug, Clone)]
pub enum NonsmoothTerm {
    /// Indicator of a closed interval; scalar blocks.
    Interval(Interval),
    /// Indicator of a box, one interval per component.
    Box(Vec<Interval>),
    /// Indicator of the Gibbs simplex `{z : sum z_i = 1, z_i >= 0}`.
    Simplex(usize),
    /// `omega * ||x||_2`; `omega = 0` degenerates to the zero term.
    WeightedNorm(f64),
    /// Sum of convex scalar functions on `[0, inf)` whose derivatives become
    /// singular at zero.
    SmoothSingularSum(Vec<ScalarFn>),
}

impl NonsmoothTerm {
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Ok(NonsmoothTerm::Interval(Interval::new(lower, upper)?))
    }

    pub fn box_indicator(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::usage("box indicator needs at least one interval"));
        }
        Ok(NonsmoothTerm::Box(intervals))
    }

    pub fn simplex(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::usage("simplex dimension must be at least 2"));
        }
        Ok(NonsmoothTerm::Simplex(l))
    }

    pub fn weighted_norm(omega: f64) -> Result<Self> {
        if !omega.is_finite() || omega < 0.0 {
            return Err(Error::usage("norm weight must be finite and nonnegative"));
        }
        Ok(NonsmoothTerm::WeightedNorm(omega))
    }

    pub fn smooth_singular_sum(components: Vec<ScalarFn>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::usage("singular sum needs at least one component"));
        }
        Ok(NonsmoothTerm::SmoothSingularSum(components))
    }

    /// Required block size, or `None` when the term works on any size.
    pub fn dim(&self) -> Option<usize> {
        match self {
            NonsmoothTerm::Interval(_) => Some(1),
            NonsmoothTerm::Box(ivs) => Some(ivs.len()),
            NonsmoothTerm::Simplex(l) => Some(*l),
            NonsmoothTerm::WeightedNorm(_) => None,
            NonsmoothTerm::SmoothSingularSum(fs) => Some(fs.len()),
        }
    }

    /// `phi(x)`, infinite outside the domain.
    pub fn value(&self, x: &[f64]) -> Energy {
        match self {
            NonsmoothTerm::Interval(iv) => {
                debug_assert_eq!(x.len(), 1);
                if iv.contains_approx(x[0]) {
                    Energy::Finite(0.0)
                } else {
                    Energy::Infinite
                }
            }
            NonsmoothTerm::Box(ivs) => {
                debug_assert_eq!(x.len(), ivs.len());
                if ivs.iter().zip(x).all(|(iv, &xi)| iv.contains_approx(xi)) {
                    Energy::Finite(0.0)
                } else {
                    Energy::Infinite
                }
            }
            NonsmoothTerm::Simplex(l) => {
                debug_assert_eq!(x.len(), *l);
                let sum: f64 = x.iter().sum();
                if (sum - 1.0).abs() <= SIMPLEX_SUM_TOL
                    && x.iter().all(|&xi| xi >= -SIMPLEX_NEG_TOL)
                {
                    Energy::Finite(0.0)
                } else {
                    Energy::Infinite
                }
            }
            NonsmoothTerm::WeightedNorm(omega) => Energy::Finite(omega * norm2(x)),
            NonsmoothTerm::SmoothSingularSum(fs) => {
                debug_assert_eq!(x.len(), fs.len());
                let mut acc = 0.0;
                for (f, &xi) in fs.iter().zip(x) {
                    if xi < -4.0 * f64::EPSILON {
                        return Energy::Infinite;
                    }
                    let v = (f.value)(xi.max(0.0));
                    if !v.is_finite() {
                        return Energy::Infinite;
                    }
                    acc += v;
                }
                Energy::Finite(acc)
            }
        }
    }

    /// Euclidean projection of `x` onto the closure of `dom phi`.
    pub fn domain_project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            NonsmoothTerm::Interval(iv) => vec![iv.clamp(x[0])],
            NonsmoothTerm::Box(ivs) => ivs.iter().zip(x).map(|(iv, &xi)| iv.clamp(xi)).collect(),
            NonsmoothTerm::Simplex(_) => simplex_project(x),
            NonsmoothTerm::WeightedNorm(_) => x.to_vec(),
            NonsmoothTerm::SmoothSingularSum(_) => x.iter().map(|&xi| xi.max(0.0)).collect(),
        }
    }

    /// Largest implemented subspace on which `phi(x + .)` is `C²` near zero,
    /// with activity decided up to the tolerance `eps` and, for singular
    /// sums, second derivatives capped at `cap`.
    pub fn truncation_pattern(&self, x: &[f64], eps: f64, cap: f64) -> Result<BlockPattern> {
        Ok(self.pattern_and_constraints(x, eps, cap)?.0)
    }

    /// The scalar constraints active at `x` under the same rules.
    pub fn active_constraints(
        &self,
        x: &[f64],
        eps: f64,
        cap: f64,
    ) -> Result<Vec<ActiveConstraint>> {
        Ok(self.pattern_and_constraints(x, eps, cap)?.1)
    }

    fn pattern_and_constraints(
        &self,
        x: &[f64],
        eps: f64,
        cap: f64,
    ) -> Result<(BlockPattern, Vec<ActiveConstraint>)> {
        if !self.value(x).is_finite() {
            return Err(Error::usage(
                "truncation pattern requested at an infeasible point",
            ));
        }
        let mut constraints = Vec::new();
        let pattern = match self {
            NonsmoothTerm::Interval(iv) => {
                interval_activity(iv, x[0], eps, 0, &mut constraints);
                if constraints.is_empty() {
                    BlockPattern::Full
                } else {
                    BlockPattern::Empty
                }
            }
            NonsmoothTerm::Box(ivs) => {
                let mut mask = vec![true; ivs.len()];
                for (j, (iv, &xi)) in ivs.iter().zip(x).enumerate() {
                    let before = constraints.len();
                    interval_activity(iv, xi, eps, j, &mut constraints);
                    if constraints.len() > before {
                        mask[j] = false;
                    }
                }
                mask_pattern(mask)
            }
            NonsmoothTerm::Simplex(l) => {
                let mut inactive = vec![true; *l];
                for (j, &xi) in x.iter().enumerate() {
                    if xi <= eps {
                        inactive[j] = false;
                        constraints.push(ActiveConstraint::SimplexZero(j));
                    }
                }
                if inactive.iter().filter(|&&f| f).count() < 2 {
                    BlockPattern::Empty
                } else {
                    BlockPattern::SimplexEdges(inactive)
                }
            }
            NonsmoothTerm::WeightedNorm(omega) => {
                if *omega == 0.0 || norm2(x) > eps {
                    BlockPattern::Full
                } else {
                    constraints.push(ActiveConstraint::NormKink);
                    BlockPattern::Empty
                }
            }
            NonsmoothTerm::SmoothSingularSum(fs) => {
                let mut mask = vec![true; fs.len()];
                for (j, (f, &xi)) in fs.iter().zip(x).enumerate() {
                    if xi <= eps {
                        mask[j] = false;
                        constraints.push(ActiveConstraint::AtLower(j));
                    } else if (f.second)(xi) > cap {
                        mask[j] = false;
                        constraints.push(ActiveConstraint::CurvatureCap(j));
                    }
                }
                mask_pattern(mask)
            }
        };
        Ok((pattern, constraints))
    }

    /// One-sided derivative of `t -> phi(x + t d)` at `t = 0+`.
    ///
    /// Returns `+inf` when the direction immediately leaves the domain and
    /// may return `-inf` for singular sums; infinities feed sign tests only.
    pub fn directional_derivative(&self, x: &[f64], d: &[f64]) -> f64 {
        match self {
            NonsmoothTerm::Interval(iv) => interval_dirderiv(iv, x[0], d[0]),
            NonsmoothTerm::Box(ivs) => {
                for (iv, (&xi, &di)) in ivs.iter().zip(x.iter().zip(d)) {
                    if interval_dirderiv(iv, xi, di) == f64::INFINITY {
                        return f64::INFINITY;
                    }
                }
                0.0
            }
            NonsmoothTerm::Simplex(_) => {
                let dscale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let dsum: f64 = d.iter().sum();
                if dsum.abs() > 1e-12 * (1.0 + dscale) {
                    return f64::INFINITY;
                }
                for (&xi, &di) in x.iter().zip(d) {
                    if xi <= SIMPLEX_NEG_TOL.max(1e-14) && di < 0.0 {
                        return f64::INFINITY;
                    }
                }
                0.0
            }
            NonsmoothTerm::WeightedNorm(omega) => {
                let nx = norm2(x);
                if nx == 0.0 {
                    omega * norm2(d)
                } else {
                    omega * dot(x, d) / nx
                }
            }
            NonsmoothTerm::SmoothSingularSum(fs) => {
                let mut acc = 0.0;
                let mut minus_inf = false;
                for (f, (&xi, &di)) in fs.iter().zip(x.iter().zip(d)) {
                    if xi <= 0.0 {
                        if di < 0.0 {
                            return f64::INFINITY;
                        }
                        if di > 0.0 {
                            let g = (f.deriv)(0.0);
                            if g == f64::NEG_INFINITY || g.is_nan() {
                                minus_inf = true;
                            } else {
                                acc += g * di;
                            }
                        }
                    } else {
                        acc += (f.deriv)(xi) * di;
                    }
                }
                if minus_inf {
                    f64::NEG_INFINITY
                } else {
                    acc
                }
            }
        }
    }

    /// Gradient of `phi` on the pattern subspace, written over the block
    /// coordinates; `None` when the restriction has zero gradient
    /// (indicators on their flat pieces).
    pub fn gradient_contribution(&self, x: &[f64], pattern: &BlockPattern) -> Option<Vec<f64>> {
        match self {
            NonsmoothTerm::WeightedNorm(omega) => {
                if *omega == 0.0 || !pattern.is_full() {
                    return None;
                }
                let nx = norm2(x);
                if nx == 0.0 {
                    return None;
                }
                Some(x.iter().map(|&xi| omega * xi / nx).collect())
            }
            NonsmoothTerm::SmoothSingularSum(fs) => {
                let mut g = vec![0.0; fs.len()];
                let mut any = false;
                for (j, (f, &xi)) in fs.iter().zip(x).enumerate() {
                    if pattern_component_free(pattern, j) {
                        g[j] = (f.deriv)(xi);
                        any = true;
                    }
                }
                any.then_some(g)
            }
            _ => None,
        }
    }

    /// Hessian of `phi` on the pattern subspace; `None` when the restriction
    /// has zero curvature.
    pub fn hessian_contribution(&self, x: &[f64], pattern: &BlockPattern) -> Option<DenseBlock> {
        match self {
            NonsmoothTerm::WeightedNorm(omega) => {
                if *omega == 0.0 || !pattern.is_full() {
                    return None;
                }
                let nx = norm2(x);
                if nx == 0.0 {
                    return None;
                }
                // omega * (I - x x^T / |x|^2) / |x|
                let n = x.len();
                let mut h = DenseBlock::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut v = -x[i] * x[j] / (nx * nx);
                        if i == j {
                            v += 1.0;
                        }
                        h.set(i, j, omega * v / nx);
                    }
                }
                Some(h)
            }
            NonsmoothTerm::SmoothSingularSum(fs) => {
                let n = fs.len();
                let mut h = DenseBlock::zeros(n, n);
                let mut any = false;
                for (j, (f, &xi)) in fs.iter().zip(x).enumerate() {
                    if pattern_component_free(pattern, j) {
                        h.set(j, j, (f.second)(xi));
                        any = true;
                    }
                }
                any.then_some(h)
            }
            _ => None,
        }
    }
}

fn pattern_component_free(pattern: &BlockPattern, j: usize) -> bool {
    match pattern {
        BlockPattern::Full => true,
        BlockPattern::Empty => false,
        BlockPattern::Mask(mask) => mask[j],
        BlockPattern::SimplexEdges(inactive) => inactive[j],
    }
}

fn mask_pattern(mask: Vec<bool>) -> BlockPattern {
    if mask.iter().all(|&f| f) {
        BlockPattern::Full
    } else if mask.iter().all(|&f| !f) {
        BlockPattern::Empty
    } else {
        BlockPattern::Mask(mask)
    }
}

fn interval_activity(
    iv: &Interval,
    x: f64,
    eps: f64,
    component: usize,
    out: &mut Vec<ActiveConstraint>,
) {
    if iv.lower().is_finite() && x - iv.lower() <= eps {
        out.push(ActiveConstraint::AtLower(component));
    }
    if iv.upper().is_finite() && iv.upper() - x <= eps {
        out.push(ActiveConstraint::AtUpper(component));
    }
}

fn interval_dirderiv(iv: &Interval, x: f64, d: f64) -> f64 {
    if iv.lower().is_finite() && x <= iv.lower() && d < 0.0 {
        return f64::INFINITY;
    }
    if iv.upper().is_finite() && x >= iv.upper() && d > 0.0 {
        return f64::INFINITY;
    }
    0.0
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean projection onto the Gibbs simplex by sorting and thresholding.
///
/// Sorts the input descending, finds the largest `k` such that
/// `u_k > (sum_{i<=k} u_i - 1) / k`, subtracts that threshold and clamps at
/// zero. Runs in `O(L log L)`.
pub fn simplex_project(r: &[f64]) -> Vec<f64> {
    debug_assert!(r.len() >= 2);
    let mut sorted = r.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("no NaN in projection input"));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - 1.0) / (k + 1) as f64;
        if u > t {
            tau = t;
        } else {
            break;
        }
    }
    r.iter().map(|&ri| (ri - tau).max(0.0)).collect()
}
