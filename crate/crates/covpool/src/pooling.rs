//! Linear pooling of sample covariance matrices with MSE-optimal weights.
//!
//! The pooled estimate of class k's covariance matrix is
//!
//! ```text
//! M_hat_k = sum_j a_jk S_j  (+ a_Ik I)
//! ```
//!
//! and the per-class MSE is an explicit quadratic in the weight vector,
//! built from the pooled statistics: with `B = D + C` (or its identity-
//! augmented version), `MSE_k(a) = p (a^T B a - 2 c_k^T a + c_kk)`. Each
//! class therefore gets its own small strictly convex problem over the same
//! quadratic form.
//!
//! The solve follows a fast path first: the unconstrained minimizer comes
//! from one linear system covering all classes at once. Only classes whose
//! unconstrained weights violate the constraints (negative weights, or an
//! identity weight below its floor) fall back to the quadratic program.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{pooling_statistics, ClassCollection, EstimationOptions, PoolingStatistics};
use crate::qp::{solve_small, QpProblem, SumConstraint};
use crate::scalar::Scalar;

/// Which constraint set the coefficients are optimized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolingVariant {
    /// No constraints, no identity target: `A = (D + C)^{-1} C`.
    Unconstrained,
    /// No constraints, identity target adjoined to the linear system.
    UnconstrainedWithIdentity,
    /// Nonnegative weights over the sample covariances only.
    NonnegativeQp,
    /// Nonnegative weights plus an identity target with a floored weight;
    /// the default, and the only variants that guarantee positive definite
    /// estimates are this and the convex one.
    #[default]
    NonnegativeQpWithIdentity,
    /// Like the default but with the weights (identity included) summing to
    /// one, so the estimate is a convex combination.
    ConvexCombination,
}

impl PoolingVariant {
    pub fn includes_identity(self) -> bool {
        matches!(
            self,
            Self::UnconstrainedWithIdentity
                | Self::NonnegativeQpWithIdentity
                | Self::ConvexCombination
        )
    }

    fn is_constrained(self) -> bool {
        !matches!(self, Self::Unconstrained | Self::UnconstrainedWithIdentity)
    }
}

/// Floor for the identity weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdentityBound {
    /// The same absolute floor for every class.
    Fixed(f64),
    /// `fraction * eta_k`: a floor proportional to the scale of the target
    /// class, with the fraction in `[0, 1]`.
    ScaleFraction(f64),
}

impl Default for IdentityBound {
    fn default() -> Self {
        Self::Fixed(1e-8)
    }
}

impl IdentityBound {
    fn validate(self) -> Result<()> {
        match self {
            Self::Fixed(v) if v.is_finite() && v >= 0.0 => Ok(()),
            Self::Fixed(v) => Err(Error::InvalidInput(format!(
                "identity floor must be finite and nonnegative, got {v}"
            ))),
            Self::ScaleFraction(a) if (0.0..=1.0).contains(&a) => Ok(()),
            Self::ScaleFraction(a) => Err(Error::InvalidInput(format!(
                "identity floor fraction must be in [0, 1], got {a}"
            ))),
        }
    }

    /// Resolves the floor for target class `k`.
    pub fn floor_for(self, stats: &PoolingStatistics, k: usize) -> f64 {
        match self {
            Self::Fixed(v) => v,
            Self::ScaleFraction(a) => a * stats.f()[k],
        }
    }
}

/// Full configuration of a pooling run.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolingConfig {
    pub variant: PoolingVariant,
    pub identity_bound: IdentityBound,
    pub estimation: EstimationOptions,
}

/// Weights of every class's pooled estimator, column k for target class k.
/// When the identity target participates, its weight is the last row.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    weights: DMatrix<f64>,
    includes_identity: bool,
    used_fallback: Vec<bool>,
    damped: Vec<bool>,
}

impl CoefficientSet {
    /// Number of target classes.
    pub fn num_targets(&self) -> usize {
        self.weights.ncols()
    }

    /// Number of pooled sources: K, plus one when the identity target is in.
    pub fn num_sources(&self) -> usize {
        self.weights.nrows()
    }

    pub fn includes_identity(&self) -> bool {
        self.includes_identity
    }

    /// All weights, sources by targets.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight vector of target class `k` (identity weight last if present).
    pub fn target_weights(&self, k: usize) -> DVector<f64> {
        self.weights.column(k).into_owned()
    }

    /// Identity weight of target class `k`, if the variant has one.
    pub fn identity_weight(&self, k: usize) -> Option<f64> {
        self.includes_identity.then(|| self.weights[(self.num_sources() - 1, k)])
    }

    /// Whether class `k` needed the quadratic program instead of the
    /// unconstrained fast path.
    pub fn used_fallback(&self, k: usize) -> bool {
        self.used_fallback[k]
    }

    /// Whether the quadratic form needed damping (a small diagonal
    /// inflation restoring positive definiteness) while solving for class
    /// `k`.
    pub fn damped(&self, k: usize) -> bool {
        self.damped[k]
    }
}

/// Quadratic form and per-class linear terms for a variant.
fn system_for(stats: &PoolingStatistics, with_identity: bool) -> DMatrix<f64> {
    if with_identity {
        stats.augmented_matrix()
    } else {
        stats.base_matrix()
    }
}

/// The quadratic form, made numerically positive definite if necessary.
///
/// For population statistics the form is provably positive definite, but
/// plug-in statistics can lose that in hard regimes (dimension several
/// times the sample count with light tails), because the corrected
/// sphericity shrinks the diagonal of the estimated inner-product matrix
/// below its raw value. A minimal diagonal inflation restores strict
/// convexity; the returned flag reports whether it was applied, and shows
/// up as `damped` on the coefficient set.
fn conditioned_system(
    stats: &PoolingStatistics,
    with_identity: bool,
) -> Result<(DMatrix<f64>, bool)> {
    let mut b = system_for(stats, with_identity);
    let dim = b.nrows();
    let scale = b.diagonal().amax().max(f64::MIN_POSITIVE);
    let min_eig = b
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min_eig.is_finite() {
        return Err(Error::Numerical(
            "the pooled quadratic form has non-finite eigenvalues".into(),
        ));
    }
    let floor = 1e-10 * scale;
    if min_eig >= floor {
        return Ok((b, false));
    }
    let ridge = floor - min_eig;
    for i in 0..dim {
        b[(i, i)] += ridge;
    }
    Ok((b, true))
}

fn rhs_for(stats: &PoolingStatistics, with_identity: bool, k: usize) -> DVector<f64> {
    if with_identity {
        stats.augmented_rhs(k)
    } else {
        stats.rhs(k)
    }
}

/// Unconstrained minimizers of every class at once: one linear solve with K
/// right-hand sides. With the identity target the system is the augmented
/// `(K+1) x (K+1)` form; rows are sources, columns are target classes.
/// Degenerate plug-in statistics get the conditioning described on
/// [`conditioned_system`] before the solve.
pub fn solve_unconstrained(stats: &PoolingStatistics, with_identity: bool) -> Result<DMatrix<f64>> {
    let (b, _) = conditioned_system(stats, with_identity)?;
    unconstrained_from(&b, stats, with_identity)
}

fn unconstrained_from(
    b: &DMatrix<f64>,
    stats: &PoolingStatistics,
    with_identity: bool,
) -> Result<DMatrix<f64>> {
    let k = stats.k();
    let dim = b.nrows();
    let mut rhs = DMatrix::zeros(dim, k);
    for target in 0..k {
        rhs.set_column(target, &rhs_for(stats, with_identity, target));
    }
    let chol = b.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(
            "the pooled quadratic form is not positive definite even after conditioning".into(),
        )
    })?;
    let mut solution = chol.solve(&rhs);
    // One step of iterative refinement. The factored solve divides by the
    // Cholesky factor twice, which can lose the last bit even on perfectly
    // conditioned systems; the refined solution is correctly rounded for
    // the well-conditioned forms pooling produces, which keeps boundary
    // comparisons downstream (feasibility of the fast path) sharp.
    let residual = &rhs - b * &solution;
    solution += chol.solve(&residual);
    Ok(solution)
}

/// Estimated MSE of the pooled estimator with weights `a` for target class
/// `k`: `p (a^T B a - 2 c_k^T a + c_kk)` with `B`, `c_k` picked by the
/// length of `a` (K entries for the class-only form, K+1 with the identity
/// weight last).
pub fn mse_objective(stats: &PoolingStatistics, a: &DVector<f64>, k: usize) -> Result<f64> {
    let klass = stats.k();
    if k >= klass {
        return Err(Error::InvalidInput(format!(
            "target class {k} out of range for {klass} classes"
        )));
    }
    let with_identity = if a.len() == klass {
        false
    } else if a.len() == klass + 1 {
        true
    } else {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries; expected {klass} or {}",
            a.len(),
            klass + 1
        )));
    };
    let b = system_for(stats, with_identity);
    let c = rhs_for(stats, with_identity, k);
    let quad = (&b * a).dot(a);
    let constant = stats.c()[(k, k)];
    Ok(stats.p() as f64 * (quad - 2.0 * c.dot(a) + constant))
}

/// Optimizes the coefficients of every class under the configured variant.
///
/// Constrained variants try the shared unconstrained solve first and only
/// run the quadratic program for classes whose unconstrained weights break
/// a constraint by more than `1e-12`; accepted fast-path weights get tiny
/// violations snapped onto the bounds.
pub fn solve_constrained(
    stats: &PoolingStatistics,
    config: &PoolingConfig,
) -> Result<CoefficientSet> {
    config.identity_bound.validate()?;
    let k = stats.k();
    let variant = config.variant;
    let with_identity = variant.includes_identity();
    let dim = k + usize::from(with_identity);

    let (b, was_damped) = conditioned_system(stats, with_identity)?;
    let unconstrained = unconstrained_from(&b, stats, with_identity)?;
    if !variant.is_constrained() {
        return Ok(CoefficientSet {
            weights: unconstrained,
            includes_identity: with_identity,
            used_fallback: vec![false; k],
            damped: vec![was_damped; k],
        });
    }

    let convex = variant == PoolingVariant::ConvexCombination;
    let mut weights = DMatrix::zeros(dim, k);
    let mut used_fallback = vec![false; k];
    let mut damped = vec![was_damped; k];

    // For the convex variant the analog of the unconstrained minimizer is
    // the equality-restricted one; compute it for all classes at once via
    // the bordered system.
    let equality_minimizers = if convex {
        let mut a = DMatrix::zeros(dim + 1, dim + 1);
        a.view_mut((0, 0), (dim, dim)).copy_from(&b);
        for i in 0..dim {
            a[(i, dim)] = 1.0;
            a[(dim, i)] = 1.0;
        }
        let lu = a.lu();
        let mut out = DMatrix::zeros(dim, k);
        for target in 0..k {
            let mut rhs = DVector::zeros(dim + 1);
            rhs.rows_mut(0, dim).copy_from(&rhs_for(stats, with_identity, target));
            rhs[dim] = 1.0;
            let sol = lu.solve(&rhs).ok_or_else(|| {
                Error::NotPositiveDefinite("singular bordered pooling system".into())
            })?;
            out.set_column(target, &sol.rows(0, dim).into_owned());
        }
        Some(out)
    } else {
        None
    };

    const VIOLATION_TOL: f64 = 1e-12;
    for target in 0..k {
        let floor = if with_identity { config.identity_bound.floor_for(stats, target) } else { 0.0 };
        let candidate = match &equality_minimizers {
            Some(eq) => eq.column(target).into_owned(),
            None => unconstrained.column(target).into_owned(),
        };
        let mut feasible = true;
        for j in 0..k {
            if candidate[j] < -VIOLATION_TOL {
                feasible = false;
                break;
            }
        }
        if with_identity && candidate[k] < floor - VIOLATION_TOL {
            feasible = false;
        }
        if feasible {
            let mut snapped = candidate;
            for j in 0..k {
                if snapped[j] < 0.0 {
                    snapped[j] = 0.0;
                }
            }
            if with_identity && snapped[k] < floor {
                snapped[k] = floor;
            }
            weights.set_column(target, &snapped);
            continue;
        }

        // Quadratic program for this class.
        let mut lower = DVector::zeros(dim);
        if with_identity {
            lower[k] = floor;
        }
        let mut problem = QpProblem::new(b.clone(), rhs_for(stats, with_identity, target))
            .with_lower(lower);
        if convex {
            problem = problem.with_sum(SumConstraint::EqualsOne);
        }
        let sol = solve_small(&problem)?;
        weights.set_column(target, &sol.x);
        used_fallback[target] = true;
        damped[target] = damped[target] || sol.damped;
    }

    Ok(CoefficientSet {
        weights,
        includes_identity: with_identity,
        used_fallback,
        damped,
    })
}

/// `sum_j a_j S_j (+ a_I I)` for one weight vector. The identity weight, if
/// any, is the entry after the last matrix weight.
pub fn combine<T: Scalar>(
    scms: &[DMatrix<T>],
    weights: &DVector<f64>,
    includes_identity: bool,
) -> Result<DMatrix<T>> {
    let expected = scms.len() + usize::from(includes_identity);
    if weights.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} matrices (identity: {includes_identity})",
            weights.len(),
            scms.len()
        )));
    }
    let p = scms
        .first()
        .map(|s| s.nrows())
        .ok_or_else(|| Error::InvalidInput("no matrices to combine".into()))?;
    for (j, s) in scms.iter().enumerate() {
        if s.nrows() != p || s.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "matrix {j} is {}x{}, expected {p}x{p}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    Ok(combine_one(scms, weights, includes_identity, p))
}

fn combine_one<T: Scalar>(
    scms: &[DMatrix<T>],
    weights: &DVector<f64>,
    includes_identity: bool,
    p: usize,
) -> DMatrix<T> {
    let mut out = DMatrix::<T>::zeros(p, p);
    for (j, s) in scms.iter().enumerate() {
        let w = weights[j];
        if w != 0.0 {
            let wt = T::from_real(w);
            for (o, si) in out.iter_mut().zip(s.iter()) {
                *o += *si * wt;
            }
        }
    }
    if includes_identity {
        let a_i = T::from_real(weights[scms.len()]);
        for i in 0..p {
            out[(i, i)] += a_i;
        }
    }
    out
}

/// A full pooling run: the estimates, the weights behind them, and the
/// statistics behind the weights.
#[derive(Debug, Clone)]
pub struct PoolResult<T: Scalar> {
    /// Pooled covariance estimate per target class.
    pub estimates: Vec<DMatrix<T>>,
    pub coefficients: CoefficientSet,
    pub statistics: PoolingStatistics,
}

/// Pools the sample covariance matrices of `classes` with estimated
/// statistics.
pub fn pool<T: Scalar>(classes: &ClassCollection<T>, config: &PoolingConfig) -> Result<PoolResult<T>> {
    let stats = classes.class_statistics(config.estimation)?;
    let pooled_stats = pooling_statistics(&stats)?;
    let scms: Vec<DMatrix<T>> = stats.into_iter().map(|s| s.scm).collect();
    pool_with_statistics(&scms, &pooled_stats, config)
}

/// Pools externally supplied sample covariance matrices with externally
/// supplied statistics; the oracle studies inject population values here.
pub fn pool_with_statistics<T: Scalar>(
    scms: &[DMatrix<T>],
    stats: &PoolingStatistics,
    config: &PoolingConfig,
) -> Result<PoolResult<T>> {
    let k = stats.k();
    let p = stats.p();
    if scms.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} covariance matrices for {k} classes",
            scms.len()
        )));
    }
    for (j, s) in scms.iter().enumerate() {
        if s.nrows() != p || s.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "covariance {j} is {}x{}, expected {p}x{p}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    let coefficients = solve_constrained(stats, config)?;
    let estimates = (0..k)
        .map(|target| {
            combine_one(
                scms,
                &coefficients.target_weights(target),
                coefficients.includes_identity(),
                p,
            )
        })
        .collect();
    Ok(PoolResult { estimates, coefficients, statistics: stats.clone() })
}
