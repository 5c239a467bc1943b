//! Dense convex quadratic programming, sized for coefficient problems.
//!
//! Two solvers share the same problem type. [`solve_small`] targets the
//! pooling coefficient problems: a handful of variables, lower bounds,
//! optionally upper bounds and a sum constraint. Below an enumeration
//! budget it visits every active-set candidate and keeps the feasible one
//! with the smallest objective, which is exact for a strictly convex
//! problem: the candidate generated by the true active set solves the
//! problem, and every other feasible candidate can only do worse. Larger
//! instances fall back to a primal active-set iteration. [`solve_box_eq`]
//! targets the box-constrained minimum-variance portfolio: hundreds of
//! variables, finite boxes, and a budget equality; it runs an accelerated
//! projected gradient method with exact line search and finishes with an
//! active-set polish.
//!
//! Both solvers require a (numerically) positive definite quadratic form.
//! Nearly singular or indefinite-from-round-off matrices get one shot of
//! Tikhonov damping, `1e-12 tr(B)/d` on the diagonal, reported through the
//! `damped` flag; anything still not positive definite after that is an
//! error. When damping was applied, objectives are reported against the
//! damped matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Constraint on the coordinate sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumConstraint {
    /// No constraint on the sum.
    None,
    /// `sum(x) = 1`.
    EqualsOne,
    /// `sum(x) <= 1`.
    AtMostOne,
}

/// `minimize 0.5 x^T B x - c^T x` subject to `lower <= x <= upper` and an
/// optional sum constraint. Bounds may be infinite; `upper = None` means no
/// upper bounds at all.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub quad: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: Option<DVector<f64>>,
    pub sum: SumConstraint,
}

impl QpProblem {
    /// Problem with no constraints at all.
    pub fn new(quad: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let d = linear.len();
        Self {
            quad,
            linear,
            lower: DVector::from_element(d, f64::NEG_INFINITY),
            upper: None,
            sum: SumConstraint::None,
        }
    }

    pub fn with_lower(mut self, lower: DVector<f64>) -> Self {
        self.lower = lower;
        self
    }

    pub fn with_upper(mut self, upper: DVector<f64>) -> Self {
        self.upper = Some(upper);
        self
    }

    pub fn with_sum(mut self, sum: SumConstraint) -> Self {
        self.sum = sum;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    fn upper_at(&self, i: usize) -> f64 {
        self.upper.as_ref().map_or(f64::INFINITY, |u| u[i])
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("empty problem".into()));
        }
        if self.quad.nrows() != d || self.quad.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "quadratic term is {}x{} but the problem has {d} variables",
                self.quad.nrows(),
                self.quad.ncols()
            )));
        }
        if self.lower.len() != d || self.upper.as_ref().is_some_and(|u| u.len() != d) {
            return Err(Error::DimensionMismatch("bound vectors must match the dimension".into()));
        }
        if self.quad.iter().any(|x| !x.is_finite()) || self.linear.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("problem data must be finite".into()));
        }
        if !linalg::is_hermitian(&self.quad, 1e-8) {
            return Err(Error::InvalidInput("quadratic term must be symmetric".into()));
        }
        let mut lower_sum = 0.0;
        let mut upper_sum = 0.0;
        for i in 0..d {
            let (lb, ub) = (self.lower[i], self.upper_at(i));
            if lb.is_nan() || ub.is_nan() || lb == f64::INFINITY || ub == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("bounds on variable {i} are unusable")));
            }
            if lb > ub {
                return Err(Error::Infeasible(format!(
                    "variable {i} has lower bound {lb} above upper bound {ub}"
                )));
            }
            lower_sum += lb.max(f64::NEG_INFINITY.max(lb));
            upper_sum += ub;
        }
        match self.sum {
            SumConstraint::EqualsOne => {
                if lower_sum > 1.0 + 1e-12 || upper_sum < 1.0 - 1e-12 {
                    return Err(Error::Infeasible(format!(
                        "bounds admit sums in [{lower_sum}, {upper_sum}], which excludes 1"
                    )));
                }
            }
            SumConstraint::AtMostOne => {
                if lower_sum > 1.0 + 1e-12 {
                    return Err(Error::Infeasible(format!(
                        "lower bounds already sum to {lower_sum} > 1"
                    )));
                }
            }
            SumConstraint::None => {}
        }
        Ok(())
    }
}

/// Solver output: the minimizer plus enough structure to audit it.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `0.5 x^T B x - c^T x`, against the damped matrix if damping fired.
    pub objective: f64,
    pub active_lower: Vec<bool>,
    pub active_upper: Vec<bool>,
    /// Whether the sum constraint was enforced with equality.
    pub sum_active: bool,
    /// Multiplier of the sum constraint (0 when inactive).
    pub sum_multiplier: f64,
    /// The quadratic term needed Tikhonov damping.
    pub damped: bool,
    /// Worst violation across stationarity, dual signs, and primal
    /// feasibility; small values certify optimality for a strictly convex
    /// problem.
    pub kkt_residual: f64,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-9;
const ENUM_BUDGET: f64 = 2e5;

/// Exact solver for small problems (`dim <= 24`).
pub fn solve_small(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let d = problem.dim();
    if d > 24 {
        return Err(Error::InvalidInput(format!(
            "solve_small handles up to 24 variables, got {d}; use solve_box_eq"
        )));
    }
    let (b, damped) = prepare_quadratic(&problem.quad)?;

    // Size of the full active-set enumeration: each variable contributes
    // free plus one state per finite bound.
    let mut combos = 1.0f64;
    for i in 0..d {
        let mut states = 1.0;
        if problem.lower[i].is_finite() {
            states += 1.0;
        }
        if problem.upper_at(i).is_finite() {
            states += 1.0;
        }
        combos *= states;
    }
    let mut sol = if combos <= ENUM_BUDGET {
        enumerate_solve(&b, problem)?
    } else {
        active_set_solve(&b, problem)?
    };
    sol.damped = damped;
    Ok(sol)
}

/// Marks the quadratic term usable or applies one round of damping.
fn prepare_quadratic(quad: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let d = quad.nrows();
    let mut b = quad.clone();
    linalg::hermitianize(&mut b);
    let eig = b.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min > 0.0 && max / min <= 1e12 {
        return Ok((b, false));
    }
    let trace = b.trace();
    if trace <= 0.0 {
        return Err(Error::NotPositiveDefinite(
            "quadratic term has nonpositive trace; damping cannot rescue it".into(),
        ));
    }
    let tau = 1e-12 * trace / d as f64;
    for i in 0..d {
        b[(i, i)] += tau;
    }
    if min + tau <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {min:.3e} stays nonpositive after damping"
        )));
    }
    Ok((b, true))
}

fn objective_value(b: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * (b * x).dot(x) - c.dot(x)
}

/// Per-variable state in an active-set candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
}

/// Minimizes over the affine set given by pinned variables and optionally
/// the sum row. Returns the full point and the sum multiplier, or None when
/// the reduced system is singular (skipped as a candidate).
fn solve_restricted(
    b: &DMatrix<f64>,
    c: &DVector<f64>,
    pins: &[Option<f64>],
    with_sum: bool,
) -> Option<(DVector<f64>, f64)> {
    let d = pins.len();
    let free: Vec<usize> = (0..d).filter(|&i| pins[i].is_none()).collect();
    let nf = free.len();
    let pinned_sum: f64 = pins.iter().flatten().sum();
    let mut x = DVector::zeros(d);
    for i in 0..d {
        if let Some(v) = pins[i] {
            x[i] = v;
        }
    }
    if nf == 0 {
        if with_sum && (pinned_sum - 1.0).abs() > FEAS_TOL {
            return None;
        }
        return Some((x, 0.0));
    }
    // Right-hand side: c_F minus the coupling with the pinned block.
    let mut rhs = DVector::zeros(nf + usize::from(with_sum));
    for (r, &i) in free.iter().enumerate() {
        let mut v = c[i];
        for j in 0..d {
            if let Some(pj) = pins[j] {
                v -= b[(i, j)] * pj;
            }
        }
        rhs[r] = v;
    }
    if with_sum {
        // Bordered system [[B_FF, 1], [1^T, 0]] for the equality multiplier.
        let mut a = DMatrix::zeros(nf + 1, nf + 1);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                a[(r, s)] = b[(i, j)];
            }
            a[(r, nf)] = 1.0;
            a[(nf, r)] = 1.0;
        }
        rhs[nf] = 1.0 - pinned_sum;
        let sol = a.lu().solve(&rhs)?;
        for (r, &i) in free.iter().enumerate() {
            x[i] = sol[r];
        }
        Some((x, sol[nf]))
    } else {
        let mut a = DMatrix::zeros(nf, nf);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                a[(r, s)] = b[(i, j)];
            }
        }
        let sol = match a.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => a.lu().solve(&rhs)?,
        };
        for (r, &i) in free.iter().enumerate() {
            x[i] = sol[r];
        }
        Some((x, 0.0))
    }
}

fn is_primal_feasible(problem: &QpProblem, x: &DVector<f64>, enforce_sum: bool) -> bool {
    let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = FEAS_TOL * scale;
    for i in 0..problem.dim() {
        if x[i] < problem.lower[i] - tol || x[i] > problem.upper_at(i) + tol {
            return false;
        }
    }
    let total: f64 = x.sum();
    match (problem.sum, enforce_sum) {
        (SumConstraint::None, _) => true,
        (SumConstraint::EqualsOne, _) => (total - 1.0).abs() <= tol,
        (SumConstraint::AtMostOne, true) => (total - 1.0).abs() <= tol,
        (SumConstraint::AtMostOne, false) => total <= 1.0 + tol,
    }
}

/// Exhaustive candidate enumeration; exact up to round-off.
fn enumerate_solve(b: &DMatrix<f64>, problem: &QpProblem) -> Result<QpSolution> {
    let d = problem.dim();
    let c = &problem.linear;

    // Mixed-radix counter over the admissible states of each variable.
    let mut state_options: Vec<Vec<VarState>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut opts = vec![VarState::Free];
        if problem.lower[i].is_finite() {
            opts.push(VarState::AtLower);
        }
        if problem.upper_at(i).is_finite() {
            opts.push(VarState::AtUpper);
        }
        state_options.push(opts);
    }
    let sum_arms: &[bool] = match problem.sum {
        SumConstraint::None => &[false],
        SumConstraint::EqualsOne => &[true],
        SumConstraint::AtMostOne => &[false, true],
    };

    let mut best: Option<(f64, Vec<VarState>, bool, DVector<f64>, f64)> = None;
    let mut counters = vec![0usize; d];
    let mut pins: Vec<Option<f64>> = vec![None; d];
    let mut states = vec![VarState::Free; d];
    loop {
        for i in 0..d {
            states[i] = state_options[i][counters[i]];
            pins[i] = match states[i] {
                VarState::Free => None,
                VarState::AtLower => Some(problem.lower[i]),
                VarState::AtUpper => Some(problem.upper_at(i)),
            };
        }
        for &with_sum in sum_arms {
            if let Some((x, lambda)) = solve_restricted(b, c, &pins, with_sum) {
                if is_primal_feasible(problem, &x, with_sum) {
                    let obj = objective_value(b, c, &x);
                    let better = match &best {
                        None => true,
                        Some((best_obj, best_states, best_sum, _, _)) => {
                            let tie = 1e-12 * (1.0 + best_obj.abs());
                            if obj < best_obj - tie {
                                true
                            } else if obj > best_obj + tie {
                                false
                            } else {
                                // Deterministic tie-break: fewer pins, then
                                // lexicographic state order, then no sum.
                                let na = states.iter().filter(|s| **s != VarState::Free).count();
                                let nb =
                                    best_states.iter().filter(|s| **s != VarState::Free).count();
                                (na, &states, with_sum) < (nb, best_states, *best_sum)
                            }
                        }
                    };
                    if better {
                        best = Some((obj, states.clone(), with_sum, x, lambda));
                    }
                }
            }
        }
        // Advance the counter.
        let mut pos = 0;
        loop {
            if pos == d {
                break;
            }
            counters[pos] += 1;
            if counters[pos] < state_options[pos].len() {
                break;
            }
            counters[pos] = 0;
            pos += 1;
        }
        if pos == d {
            break;
        }
    }

    let (obj, states, sum_active, x, lambda) = best.ok_or_else(|| {
        Error::Infeasible("no active-set candidate satisfies the constraints".into())
    })?;
    let active_lower: Vec<bool> = states.iter().map(|s| *s == VarState::AtLower).collect();
    let active_upper: Vec<bool> = states.iter().map(|s| *s == VarState::AtUpper).collect();
    let kkt = kkt_residual(b, c, problem, &x, &active_lower, &active_upper, sum_active, lambda);
    Ok(QpSolution {
        x,
        objective: obj,
        active_lower,
        active_upper,
        sum_active,
        sum_multiplier: if sum_active { lambda } else { 0.0 },
        damped: false,
        kkt_residual: kkt,
        iterations: 1,
    })
}

/// Worst violation of the first-order optimality system.
#[allow(clippy::too_many_arguments)]
fn kkt_residual(
    b: &DMatrix<f64>,
    c: &DVector<f64>,
    problem: &QpProblem,
    x: &DVector<f64>,
    active_lower: &[bool],
    active_upper: &[bool],
    sum_active: bool,
    lambda: f64,
) -> f64 {
    let d = x.len();
    let g = b * x - c;
    let lam = if sum_active { lambda } else { 0.0 };
    let scale = 1.0 + g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..d {
        let r = g[i] + lam;
        if active_lower[i] {
            worst = worst.max((-r).max(0.0)); // dual of a lower bound must be >= 0
            worst = worst.max((x[i] - problem.lower[i]).abs());
        } else if active_upper[i] {
            worst = worst.max(r.max(0.0));
            worst = worst.max((x[i] - problem.upper_at(i)).abs());
        } else {
            worst = worst.max(r.abs());
        }
        worst = worst.max((problem.lower[i] - x[i]).max(0.0));
        worst = worst.max((x[i] - problem.upper_at(i)).max(0.0));
    }
    let total: f64 = x.sum();
    match problem.sum {
        SumConstraint::None => {}
        SumConstraint::EqualsOne => worst = worst.max((total - 1.0).abs()),
        SumConstraint::AtMostOne => {
            worst = worst.max((total - 1.0).max(0.0));
            if sum_active {
                worst = worst.max((-lam).max(0.0));
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    worst / scale
}

/// Primal active-set iteration for the sizes the enumeration budget
/// excludes. Strict convexity plus a lowest-index tie-break keeps the
/// iteration finite; the KKT residual in the result certifies the outcome.
fn active_set_solve(b: &DMatrix<f64>, problem: &QpProblem) -> Result<QpSolution> {
    let d = problem.dim();
    let c = &problem.linear;

    // Feasible start: clamp the unconstrained minimizer, then restore the
    // sum constraint if one is (or becomes) binding.
    let unconstrained = b
        .clone()
        .cholesky()
        .map(|ch| ch.solve(c))
        .unwrap_or_else(|| DVector::zeros(d));
    let mut x = DVector::from_fn(d, |i, _| {
        unconstrained[i].clamp(problem.lower[i], problem.upper_at(i))
    });
    match problem.sum {
        SumConstraint::EqualsOne => {
            x = project_box_simplex(&x, &problem.lower, problem.upper.as_ref(), 1.0);
        }
        SumConstraint::AtMostOne => {
            if x.sum() > 1.0 {
                x = project_box_simplex(&x, &problem.lower, problem.upper.as_ref(), 1.0);
            }
        }
        SumConstraint::None => {}
    }

    let bound_tol = 1e-12;
    let mut states: Vec<VarState> = (0..d)
        .map(|i| {
            if (x[i] - problem.lower[i]).abs() <= bound_tol {
                VarState::AtLower
            } else if (x[i] - problem.upper_at(i)).abs() <= bound_tol {
                VarState::AtUpper
            } else {
                VarState::Free
            }
        })
        .collect();
    let mut sum_in_working = match problem.sum {
        SumConstraint::EqualsOne => true,
        SumConstraint::AtMostOne => (x.sum() - 1.0).abs() <= bound_tol,
        SumConstraint::None => false,
    };

    let max_iter = 200 * d.max(4);
    for iter in 0..max_iter {
        let pins: Vec<Option<f64>> = (0..d)
            .map(|i| match states[i] {
                VarState::Free => None,
                VarState::AtLower => Some(problem.lower[i]),
                VarState::AtUpper => Some(problem.upper_at(i)),
            })
            .collect();
        let Some((target, lambda)) = solve_restricted(b, c, &pins, sum_in_working) else {
            return Err(Error::Numerical(
                "singular reduced system in the active-set iteration".into(),
            ));
        };
        let delta = &target - &x;
        let step_scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if delta.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e-13 * step_scale {
            // At the restricted optimum: check the duals.
            let g = b * &x - c;
            let lam_eff = if sum_in_working { lambda } else { 0.0 };
            let mut worst = -f64::INFINITY;
            let mut drop: Option<usize> = None;
            let mut drop_sum = false;
            for i in 0..d {
                let r = g[i] + lam_eff;
                let dual = match states[i] {
                    VarState::AtLower => r,
                    VarState::AtUpper => -r,
                    VarState::Free => continue,
                };
                // Most negative dual wins.
                if dual < -1e-11 * step_scale && (drop.is_none() || dual < worst) {
                    worst = dual;
                    drop = Some(i);
                    drop_sum = false;
                }
            }
            if problem.sum == SumConstraint::AtMostOne && sum_in_working {
                let dual = lambda;
                if dual < -1e-11 * step_scale && (drop.is_none() || dual < worst) {
                    drop = Some(usize::MAX);
                    drop_sum = true;
                }
            }
            match (drop, drop_sum) {
                (None, _) => {
                    // Optimal.
                    let active_lower: Vec<bool> =
                        states.iter().map(|s| *s == VarState::AtLower).collect();
                    let active_upper: Vec<bool> =
                        states.iter().map(|s| *s == VarState::AtUpper).collect();
                    let kkt = kkt_residual(
                        b,
                        c,
                        problem,
                        &x,
                        &active_lower,
                        &active_upper,
                        sum_in_working,
                        lambda,
                    );
                    return Ok(QpSolution {
                        objective: objective_value(b, c, &x),
                        x,
                        active_lower,
                        active_upper,
                        sum_active: sum_in_working,
                        sum_multiplier: if sum_in_working { lambda } else { 0.0 },
                        damped: false,
                        kkt_residual: kkt,
                        iterations: iter + 1,
                    });
                }
                (Some(_), true) => {
                    sum_in_working = false;
                }
                (Some(i), false) => {
                    states[i] = VarState::Free;
                }
            }
            continue;
        }

        // Step toward the restricted optimum until a new constraint blocks.
        let mut alpha = 1.0f64;
        let mut blocker: Option<(usize, VarState)> = None;
        let mut block_sum = false;
        for i in 0..d {
            if states[i] != VarState::Free {
                continue;
            }
            if delta[i] < 0.0 && problem.lower[i].is_finite() {
                let a = (problem.lower[i] - x[i]) / delta[i];
                if a < alpha - 1e-15 {
                    alpha = a.max(0.0);
                    blocker = Some((i, VarState::AtLower));
                    block_sum = false;
                }
            } else if delta[i] > 0.0 && problem.upper_at(i).is_finite() {
                let a = (problem.upper_at(i) - x[i]) / delta[i];
                if a < alpha - 1e-15 {
                    alpha = a.max(0.0);
                    blocker = Some((i, VarState::AtUpper));
                    block_sum = false;
                }
            }
        }
        if problem.sum == SumConstraint::AtMostOne && !sum_in_working {
            let dsum: f64 = delta.sum();
            if dsum > 1e-15 {
                let a = (1.0 - x.sum()) / dsum;
                if a < alpha - 1e-15 {
                    alpha = a.max(0.0);
                    blocker = None;
                    block_sum = true;
                }
            }
        }
        x.axpy(alpha, &delta, 1.0);
        if block_sum {
            sum_in_working = true;
        } else if let Some((i, s)) = blocker {
            states[i] = s;
            x[i] = match s {
                VarState::AtLower => problem.lower[i],
                VarState::AtUpper => problem.upper_at(i),
                VarState::Free => unreachable!(),
            };
        }
    }
    Err(Error::Numerical(format!(
        "active-set iteration did not settle within {max_iter} steps"
    )))
}

/// Euclidean projection onto `{x : lower <= x <= upper, sum(x) = total}`.
///
/// Solves `sum_i clamp(v_i - theta, l_i, u_i) = total` for the threshold
/// `theta` by sweeping the sorted breakpoints where coordinates switch
/// between clamped and linear behavior, then corrects the residual
/// round-off by spreading it over the interior coordinates. The caller must
/// have checked that the box intersects the hyperplane.
pub(crate) fn project_box_simplex(
    v: &DVector<f64>,
    lower: &DVector<f64>,
    upper: Option<&DVector<f64>>,
    total: f64,
) -> DVector<f64> {
    let d = v.len();
    let ub = |i: usize| upper.map_or(f64::INFINITY, |u| u[i]);

    // State at theta = -inf: every coordinate with a finite upper bound sits
    // on it; the rest vary linearly.
    let mut sum_const = 0.0;
    let mut sum_v = 0.0;
    let mut count_lin = 0usize;
    #[derive(Clone, Copy)]
    enum Event {
        LeaveUpper(usize),
        HitLower(usize),
    }
    let mut events: Vec<(f64, Event)> = Vec::with_capacity(2 * d);
    for i in 0..d {
        let u = ub(i);
        if u.is_finite() {
            sum_const += u;
            events.push((v[i] - u, Event::LeaveUpper(i)));
        } else {
            sum_v += v[i];
            count_lin += 1;
        }
        if lower[i].is_finite() {
            events.push((v[i] - lower[i], Event::HitLower(i)));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut theta = f64::NEG_INFINITY;
    let mut found = false;
    for &(ev_theta, ev) in &events {
        // Value of the sum at the end of the current segment.
        let g_end = sum_const + sum_v - count_lin as f64 * ev_theta;
        if g_end <= total && count_lin > 0 {
            theta = (sum_const + sum_v - total) / count_lin as f64;
            found = true;
            break;
        }
        if g_end <= total {
            // Constant segment that already matches (within round-off).
            theta = ev_theta;
            found = true;
            break;
        }
        match ev {
            Event::LeaveUpper(i) => {
                sum_const -= ub(i);
                sum_v += v[i];
                count_lin += 1;
            }
            Event::HitLower(i) => {
                sum_v -= v[i];
                count_lin -= 1;
                sum_const += lower[i];
            }
        }
    }
    if !found {
        if count_lin > 0 {
            theta = (sum_const + sum_v - total) / count_lin as f64;
        } else {
            // Everything pinned at its lower bound; feasibility was the
            // caller's responsibility, so this is the projection.
            theta = f64::INFINITY;
        }
    }

    let mut x = DVector::from_fn(d, |i, _| (v[i] - theta).clamp(lower[i], ub(i)));
    // Distribute the residual round-off over the strictly interior
    // coordinates so the sum holds to near machine precision.
    let residual = total - x.sum();
    if residual != 0.0 {
        let interior: Vec<usize> = (0..d)
            .filter(|&i| x[i] > lower[i] + 1e-12 && x[i] < ub(i) - 1e-12)
            .collect();
        if !interior.is_empty() {
            let bump = residual / interior.len() as f64;
            for &i in &interior {
                x[i] = (x[i] + bump).clamp(lower[i], ub(i));
            }
        }
    }
    x
}

/// Accelerated projected gradient solver for
/// `minimize 0.5 x^T B x - c^T x` over a box intersected with the
/// `sum(x) = 1` hyperplane.
///
/// Nesterov momentum with a gradient-based restart, exact line search along
/// each projected-gradient direction, and a final active-set polish that
/// solves the reduced KKT system on the detected support. The polished
/// point is kept only when it passes feasibility and dual-sign checks.
pub fn solve_box_eq(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    if problem.sum != SumConstraint::EqualsOne {
        return Err(Error::InvalidInput(
            "solve_box_eq requires the equality sum constraint".into(),
        ));
    }
    let d = problem.dim();
    let c = &problem.linear;
    let mut damped = false;
    let b = {
        let mut b = problem.quad.clone();
        linalg::hermitianize(&mut b);
        if b.clone().cholesky().is_none() {
            let trace = b.trace();
            if trace <= 0.0 {
                return Err(Error::NotPositiveDefinite(
                    "quadratic term has nonpositive trace".into(),
                ));
            }
            let tau = 1e-12 * trace / d as f64;
            for i in 0..d {
                b[(i, i)] += tau;
            }
            if b.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(
                    "quadratic term is not positive definite even after damping".into(),
                ));
            }
            damped = true;
        }
        b
    };

    // Lipschitz constant of the gradient: the top eigenvalue, by power
    // iteration (deterministic start).
    let lip = {
        let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        v[0] += 1e-3;
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..100 {
            let w = &b * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            lambda = v.dot(&w);
            v = w / norm;
        }
        lambda.max(1e-300) * 1.01
    };
    let step = 1.0 / lip;

    let project = |v: &DVector<f64>| -> DVector<f64> {
        project_box_simplex(v, &problem.lower, problem.upper.as_ref(), 1.0)
    };

    // Start from the projected unconstrained minimizer.
    let start = b
        .clone()
        .cholesky()
        .map(|ch| ch.solve(c))
        .unwrap_or_else(|| DVector::zeros(d));
    let mut x = project(&start);
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let max_iter = 50_000;
    let mut iterations = 0;
    for iter in 0..max_iter {
        iterations = iter + 1;
        // Momentum candidate, kept feasible so the line search stays inside
        // the constraint set.
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let mut y = &x + (&x - &x_prev) * beta;
        if beta != 0.0 {
            y = project(&y);
        }
        let g = &b * &y - c;
        let z = project(&(&y - &g * step));
        let dir = &z - &y;
        // Exact line search along the feasible segment [y, z].
        let curv = (&b * &dir).dot(&dir);
        let slope = g.dot(&dir);
        let alpha = if curv > 0.0 { (-slope / curv).clamp(0.0, 1.0) } else { 1.0 };
        let x_next = &y + &dir * alpha;

        // Gradient-based adaptive restart.
        if (&y - &x_next).dot(&(&x_next - &x)) > 0.0 {
            t = 1.0;
        } else {
            t = t_next;
        }
        x_prev = std::mem::replace(&mut x, x_next);

        if iter % 8 == 0 {
            let g = &b * &x - c;
            let fixed_point = project(&(&x - &g));
            let res = (&fixed_point - &x).amax();
            let scale = 1.0 + g.amax();
            if res <= 1e-8 * scale {
                break;
            }
        }
    }
    // A non-converged iteration falls through to the polish with whatever
    // it reached; the KKT residual in the result tells the caller how good
    // the point is.

    // Active-set polish: pin the detected support and solve exactly.
    let atol = |bound: f64| 1e-7 * (1.0 + bound.abs());
    let pins: Vec<Option<f64>> = (0..d)
        .map(|i| {
            let (lb, ub) = (problem.lower[i], problem.upper_at(i));
            if lb.is_finite() && x[i] - lb <= atol(lb) {
                Some(lb)
            } else if ub.is_finite() && ub - x[i] <= atol(ub) {
                Some(ub)
            } else {
                None
            }
        })
        .collect();
    let mut lambda = 0.0;
    if let Some((polished, lam)) = solve_restricted(&b, c, &pins, true) {
        let feas_ok = (0..d).all(|i| {
            polished[i] >= problem.lower[i] - 1e-11 && polished[i] <= problem.upper_at(i) + 1e-11
        });
        let gp = &b * &polished - c;
        let scale = 1.0 + gp.amax();
        let duals_ok = (0..d).all(|i| match pins[i] {
            None => true,
            Some(v) if v == problem.lower[i] => gp[i] + lam >= -1e-9 * scale,
            Some(_) => gp[i] + lam <= 1e-9 * scale,
        });
        if feas_ok && duals_ok {
            let mut clamped = polished;
            for i in 0..d {
                clamped[i] = clamped[i].clamp(problem.lower[i], problem.upper_at(i));
            }
            x = clamped;
            lambda = lam;
        }
    }

    let active_lower: Vec<bool> = (0..d)
        .map(|i| problem.lower[i].is_finite() && x[i] - problem.lower[i] <= 1e-10 * (1.0 + problem.lower[i].abs()))
        .collect();
    let active_upper: Vec<bool> = (0..d)
        .map(|i| {
            let ub = problem.upper_at(i);
            ub.is_finite() && ub - x[i] <= 1e-10 * (1.0 + ub.abs()) && !active_lower[i]
        })
        .collect();
    let kkt = kkt_residual(&b, c, problem, &x, &active_lower, &active_upper, true, lambda);
    Ok(QpSolution {
        objective: objective_value(&b, c, &x),
        x,
        active_lower,
        active_upper,
        sum_active: true,
        sum_multiplier: lambda,
        damped,
        kkt_residual: kkt,
        iterations,
    })
}
