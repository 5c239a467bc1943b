//! Single-class shrinkage towards arbitrary target matrices.
//!
//! The pooling machinery needs classes, not targets, so each target matrix
//! `T_m` gets a synthetic class: `L` zero-mean Gaussian draws with
//! covariance `T_m`. The surrogate sample covariances concentrate around
//! their targets at rate `1/L`, and pooling the real class with them (plus
//! the identity) yields a multi-target shrinkage estimator whose weights
//! come out of the same MSE criterion as the multi-class case.
//!
//! The convex baseline estimator ([`bartz_estimate`]) skips surrogates and
//! plugs empirical moments into the classical multi-target loss directly.
//!
//! This module is real-valued: the targets are constructs of financial
//! return data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{
    class_statistics, pooling_statistics, ClassStatistics, Dataset,
};
use crate::linalg;
use crate::pooling::{combine, solve_constrained, CoefficientSet, PoolingConfig};
use crate::qp::{solve_small, QpProblem, SumConstraint};
use crate::scalar::Scalar;

/// Default number of surrogate draws per target.
pub const DEFAULT_SURROGATE_SAMPLES: usize = 1000;

/// How a target matrix is built from the data.
#[derive(Debug, Clone)]
pub enum TargetKind {
    /// Sample variances on the diagonal, and every off-diagonal entry set
    /// to the average sample correlation scaled back by the variances.
    ConstantCorrelation,
    /// One-factor model against the equal-weighted market proxy: factor
    /// loadings times the proxy variance off the diagonal, sample variances
    /// on it.
    SingleFactorMarket,
    /// `eta_hat * I`, the scaled identity.
    Identity,
    /// A user-supplied symmetric positive semidefinite matrix.
    Explicit(DMatrix<f64>),
}

impl TargetKind {
    fn name(&self) -> &'static str {
        match self {
            Self::ConstantCorrelation => "constant-correlation",
            Self::SingleFactorMarket => "single-factor-market",
            Self::Identity => "identity",
            Self::Explicit(_) => "explicit",
        }
    }
}

/// A target matrix recipe plus the surrogate sample size used when pooling
/// against it.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub surrogate_samples: usize,
}

impl TargetSpec {
    pub fn new(kind: TargetKind) -> Self {
        Self { kind, surrogate_samples: DEFAULT_SURROGATE_SAMPLES }
    }

    pub fn with_samples(mut self, l: usize) -> Self {
        self.surrogate_samples = l;
        self
    }
}

/// Builds the target matrix of `spec` from the data. The result is
/// symmetric positive semidefinite (exactly in structure, up to roundoff in
/// the entries).
pub fn build_target(data: &Dataset<f64>, spec: &TargetSpec) -> Result<DMatrix<f64>> {
    if data.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "target construction needs n >= 2, got n = {}",
            data.n()
        )));
    }
    match &spec.kind {
        TargetKind::ConstantCorrelation => constant_correlation_target(data),
        TargetKind::SingleFactorMarket => single_factor_target(data),
        TargetKind::Identity => {
            let eta = crate::estimators::scale_estimate(data)?;
            Ok(DMatrix::identity(data.p(), data.p()) * eta)
        }
        TargetKind::Explicit(t) => {
            validate_psd_target(t, data.p())?;
            let mut out = t.clone();
            linalg::hermitianize(&mut out);
            Ok(out)
        }
    }
}

fn validate_psd_target(t: &DMatrix<f64>, p: usize) -> Result<()> {
    if t.nrows() != p || t.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "explicit target is {}x{} but the data has dimension {p}",
            t.nrows(),
            t.ncols()
        )));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("explicit target has non-finite entries".into()));
    }
    if !linalg::is_hermitian(t, 1e-10) {
        return Err(Error::InvalidInput("explicit target must be symmetric".into()));
    }
    let eigs = t.clone().symmetric_eigenvalues();
    let max = eigs.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let min = eigs.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    if min < -1e-10 * max.max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "explicit target has eigenvalue {min}, not positive semidefinite"
        )));
    }
    Ok(())
}

/// Constant correlation: `T_ij = r_bar sqrt(s_ii s_jj)` off the diagonal
/// and `T_ii = s_ii`, with `r_bar` the average off-diagonal sample
/// correlation. Pairs with a nonpositive variance product are skipped in
/// the average (their target entries are zero anyway). With p = 1 the
/// target degenerates to the sample variance itself.
fn constant_correlation_target(data: &Dataset<f64>) -> Result<DMatrix<f64>> {
    let s = crate::estimators::sample_covariance(data)?;
    let p = data.p();
    if p == 1 {
        return Ok(s);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..p {
        for i in 0..j {
            let denom = s[(i, i)] * s[(j, j)];
            if denom > 0.0 {
                sum += s[(i, j)] / denom.sqrt();
                count += 1;
            }
        }
    }
    let r_bar = if count > 0 { sum / count as f64 } else { 0.0 };
    let mut t = DMatrix::zeros(p, p);
    for j in 0..p {
        t[(j, j)] = s[(j, j)];
        for i in 0..j {
            let denom = s[(i, i)] * s[(j, j)];
            let v = if denom > 0.0 { r_bar * denom.sqrt() } else { 0.0 };
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    Ok(t)
}

/// One-factor market model: the proxy is the equal-weighted average across
/// assets per observation; loadings are the sample regression slopes on the
/// proxy. Off the diagonal `T_ij = b_i b_j var(m)`, on the diagonal the
/// sample variances, which makes the implied residual variances exactly the
/// regression residual variances (nonnegative), so T is positive
/// semidefinite.
fn single_factor_target(data: &Dataset<f64>) -> Result<DMatrix<f64>> {
    let x = data.observations();
    let (n, p) = (data.n(), data.p());
    let nf = n as f64;
    let mean = data.sample_mean();
    let mut market = DVector::zeros(n);
    for i in 0..n {
        market[i] = x.row(i).sum() / p as f64;
    }
    let market_mean = market.sum() / nf;
    market.add_scalar_mut(-market_mean);
    let var_m = market.norm_squared() / (nf - 1.0);
    if var_m <= 0.0 {
        return Err(Error::Numerical(
            "market proxy has zero variance; single-factor target undefined".into(),
        ));
    }
    let mut cov_xm = DVector::zeros(p);
    for j in 0..p {
        let mut acc = 0.0;
        for i in 0..n {
            acc += (x[(i, j)] - mean[j]) * market[i];
        }
        cov_xm[j] = acc / (nf - 1.0);
    }
    let s = crate::estimators::sample_covariance(data)?;
    let mut t = DMatrix::zeros(p, p);
    for j in 0..p {
        t[(j, j)] = s[(j, j)];
        for i in 0..j {
            let v = cov_xm[i] * cov_xm[j] / var_m;
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    Ok(t)
}

/// Draws `l` zero-mean Gaussian observations with covariance `t`. Rank
/// deficiency is fine: zero eigendirections simply never receive mass.
fn surrogate_dataset<R: Rng + ?Sized>(
    t: &DMatrix<f64>,
    l: usize,
    rng: &mut R,
) -> Result<Dataset<f64>> {
    let p = t.nrows();
    let sqrt_t = linalg::hermitian_sqrt(t)?;
    let z = DMatrix::from_fn(l, p, |_, _| f64::standard_entry(rng));
    let y = z * sqrt_t;
    Dataset::with_known_mean(y, DVector::zeros(p))
}

/// Everything a multi-target shrinkage run produces.
#[derive(Debug, Clone)]
pub struct MultiTargetResult {
    /// The shrinkage estimate for the real data class.
    pub estimate: DMatrix<f64>,
    /// Weight vector of the real class: its own SCM first, then one weight
    /// per target, then the identity weight if the variant has one.
    pub weights: DVector<f64>,
    pub includes_identity: bool,
    /// Whether the real class needed the constrained program.
    pub used_fallback: bool,
    /// The materialized target matrices, in input order.
    pub targets: Vec<DMatrix<f64>>,
    /// Coefficients of every class in the augmented collection, real class
    /// first.
    pub coefficients: CoefficientSet,
}

/// Multi-target shrinkage via pooling: builds each target, draws its
/// surrogate class, and optimizes the pooled weights of the real class.
///
/// The caller supplies the RNG, which keeps the surrogate draws on a stream
/// independent of anything data-derived and makes runs reproducible.
/// Surrogate sample counts below 4 are rejected: the kurtosis estimator
/// needs at least that much.
pub fn multitarget_pool<R: Rng + ?Sized>(
    data: &Dataset<f64>,
    targets: &[TargetSpec],
    config: &PoolingConfig,
    rng: &mut R,
) -> Result<MultiTargetResult> {
    if data.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "multi-target shrinkage needs n >= 2, got n = {}",
            data.n()
        )));
    }
    for spec in targets {
        if spec.surrogate_samples < 4 {
            return Err(Error::InvalidInput(format!(
                "target {} asks for {} surrogate samples; at least 4 are needed",
                spec.kind.name(),
                spec.surrogate_samples
            )));
        }
    }

    let built: Vec<DMatrix<f64>> = targets
        .iter()
        .map(|spec| build_target(data, spec))
        .collect::<Result<_>>()?;

    let mut stats: Vec<ClassStatistics<f64>> =
        vec![class_statistics(data, config.estimation)?];
    for (t, spec) in built.iter().zip(targets) {
        let surrogate = surrogate_dataset(t, spec.surrogate_samples, rng)?;
        stats.push(class_statistics(&surrogate, config.estimation)?);
    }

    let pooled = pooling_statistics(&stats)?;
    let coefficients = solve_constrained(&pooled, config)?;
    let scms: Vec<DMatrix<f64>> = stats.into_iter().map(|s| s.scm).collect();
    let weights = coefficients.target_weights(0);
    let estimate = combine(&scms, &weights, coefficients.includes_identity())?;
    Ok(MultiTargetResult {
        estimate,
        weights,
        includes_identity: coefficients.includes_identity(),
        used_fallback: coefficients.used_fallback(0),
        targets: built,
        coefficients,
    })
}

/// The convex multi-target baseline's output.
#[derive(Debug, Clone)]
pub struct BartzResult {
    pub estimate: DMatrix<f64>,
    /// Target weights `a_1..a_M` (all nonnegative, summing to at most one).
    pub weights: DVector<f64>,
    /// The SCM's weight `1 - sum(a)`.
    pub scm_weight: f64,
}

/// Convex combination baseline: `a_0 S + sum_m a_m T_m` with the weights
/// minimizing the plug-in MSE loss `a' Q a - 2 b 1'a` over the simplex
/// `a >= 0, 1'a <= 1`, where `Q_ij = tr((T_i - S)(T_j - S))` and `b` is the
/// summed empirical variance of the SCM entries.
///
/// The data is centered by its sample mean before forming the inner
/// products, matching the construction this baseline comes from, whether or
/// not a known mean is attached.
pub fn bartz_estimate(data: &Dataset<f64>, targets: &[DMatrix<f64>]) -> Result<BartzResult> {
    let (n, p) = (data.n(), data.p());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "the convex baseline needs n >= 2, got n = {n}"
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("at least one target matrix is needed".into()));
    }
    for t in targets {
        validate_psd_target(t, p)?;
    }
    let m = targets.len();

    let mean = data.sample_mean();
    let centered = data.centered(&mean);
    // Unbiased SCM in the quadratic form, biased inner products in the
    // variance estimate, as the construction prescribes.
    let s = crate::estimators::scaled_outer_sum(&centered, 1.0 / (n as f64 - 1.0));
    let w_biased = crate::estimators::scaled_outer_sum(&centered, 1.0 / n as f64);

    let diffs: Vec<DMatrix<f64>> = targets.iter().map(|t| t - &s).collect();
    let mut q = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let v = linalg::hermitian_product_trace(&diffs[i], &diffs[j]);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }

    let mut b_hat = 0.0;
    for i in 0..n {
        let row = centered.row(i);
        let outer = row.transpose() * row;
        b_hat += linalg::frobenius_distance_sq(&outer, &w_biased);
    }
    b_hat /= n as f64 * (n as f64 - 1.0);

    // Q is a Gram matrix and can be singular, most plainly when a target
    // coincides with the SCM (a zero row). A ridge far below the loss scale
    // keeps the program strictly convex without moving the minimizer
    // meaningfully; degenerate directions then resolve towards the targets,
    // which is the behavior the loss's linear term asks for.
    let scale = (q.trace() / m as f64).max(b_hat.abs()).max(1.0);
    let mut q_reg = q * 2.0;
    for i in 0..m {
        q_reg[(i, i)] += 2e-12 * scale;
    }
    let problem = QpProblem::new(q_reg, DVector::from_element(m, 2.0 * b_hat))
        .with_lower(DVector::zeros(m))
        .with_sum(SumConstraint::AtMostOne);
    let sol = solve_small(&problem)?;
    let weights = sol.x;
    let scm_weight = 1.0 - weights.sum();

    let mut estimate = s * scm_weight;
    for (a, t) in weights.iter().zip(targets) {
        if *a != 0.0 {
            for (e, ti) in estimate.iter_mut().zip(t.iter()) {
                *e += ti * a;
            }
        }
    }
    Ok(BartzResult { estimate, weights, scm_weight })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CovarianceModel, DistributionFamily, EllipticalLaw};
    use crate::pooling::pool;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gaussian_data(model: CovarianceModel<f64>, n: usize, seed: u64) -> Dataset<f64> {
        let law = EllipticalLaw::centered(DistributionFamily::Gaussian, model).unwrap();
        law.sample(n, &mut ChaCha12Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn constant_correlation_equals_scm_for_perfectly_correlated_assets() {
        // Second asset is exactly twice the first: every sample correlation
        // is one, so the target reproduces the SCM.
        let z = [0.3, -1.2, 0.7, 2.1, -0.4, 0.9];
        let rows: Vec<f64> = z.iter().flat_map(|&v| [v, 2.0 * v]).collect();
        let data = Dataset::new(DMatrix::from_row_slice(6, 2, &rows)).unwrap();
        let t = build_target(&data, &TargetSpec::new(TargetKind::ConstantCorrelation)).unwrap();
        let s = crate::estimators::sample_covariance(&data).unwrap();
        assert!((t - s).norm() < 1e-12);
    }

    #[test]
    fn constant_correlation_is_diagonal_for_orthogonal_columns() {
        // Columns with exactly zero pairwise sample covariance: r_bar = 0
        // and the target is the diagonal of the SCM.
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 1.0, //
                -1.0, 1.0, -1.0, //
                1.0, -1.0, -1.0, //
                -1.0, -1.0, 1.0,
            ],
        );
        let data = Dataset::new(x).unwrap();
        let t = build_target(&data, &TargetSpec::new(TargetKind::ConstantCorrelation)).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                if i != j {
                    assert_eq!(t[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_correlation_handles_p_equals_one() {
        let data = Dataset::new(DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]))
            .unwrap();
        let t = build_target(&data, &TargetSpec::new(TargetKind::ConstantCorrelation)).unwrap();
        let s = crate::estimators::sample_covariance(&data).unwrap();
        assert_relative_eq!(t[(0, 0)], s[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn constant_correlation_skips_constant_columns() {
        // A zero-variance column cannot contribute a correlation; its
        // target row stays zero off the diagonal.
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 5.0, 2.0, //
                -1.0, 5.0, 1.0, //
                2.0, 5.0, 3.0, //
                -2.0, 5.0, 0.5,
            ],
        );
        let data = Dataset::new(x).unwrap();
        let t = build_target(&data, &TargetSpec::new(TargetKind::ConstantCorrelation)).unwrap();
        assert_eq!(t[(0, 1)], 0.0);
        assert_eq!(t[(1, 2)], 0.0);
        assert_eq!(t[(1, 1)], 0.0);
        assert!(t[(0, 2)].abs() > 0.0);
    }

    #[test]
    fn single_factor_target_recovers_a_factor_model() {
        // x = beta m + eps with diagonal residuals. The equal-weighted
        // proxy is close to m when residuals are small relative to the
        // factor, so the target should approach beta beta' var(m) off the
        // diagonal. Monte Carlo tolerances are loose but the bias of the
        // proxy (~sigma_eps^2/p) is an order of magnitude below them.
        let p = 6;
        let n = 60_000;
        let beta = [0.8, 0.9, 1.0, 1.1, 1.2, 1.05];
        let sigma_eps = 0.2;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let m = f64::standard_entry(&mut rng);
            for j in 0..p {
                x[(i, j)] = beta[j] * m + sigma_eps * f64::standard_entry(&mut rng);
            }
        }
        let data = Dataset::new(x).unwrap();
        let t = build_target(&data, &TargetSpec::new(TargetKind::SingleFactorMarket)).unwrap();
        for j in 0..p {
            assert_relative_eq!(
                t[(j, j)],
                beta[j] * beta[j] + sigma_eps * sigma_eps,
                epsilon = 0.05
            );
            for i in 0..j {
                assert_relative_eq!(t[(i, j)], beta[i] * beta[j], epsilon = 0.05);
            }
        }
        // The implied residual variances are nonnegative, so the target is
        // positive semidefinite by construction.
        let eigs = t.symmetric_eigenvalues();
        assert!(eigs.iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn identity_target_scales_with_the_data() {
        let data = gaussian_data(
            CovarianceModel::Explicit { matrix: DMatrix::identity(4, 4) * 3.0 },
            4000,
            11,
        );
        let t = build_target(&data, &TargetSpec::new(TargetKind::Identity)).unwrap();
        assert_relative_eq!(t[(0, 0)], 3.0, epsilon = 0.15);
        assert_relative_eq!(t[(0, 0)], t[(3, 3)], epsilon = 1e-14);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn explicit_target_is_validated() {
        let data = gaussian_data(
            CovarianceModel::Ar1 { p: 3, sigma2: 1.0, rho: 0.5 },
            10,
            13,
        );
        let bad_dim = DMatrix::identity(4, 4);
        assert!(build_target(&data, &TargetSpec::new(TargetKind::Explicit(bad_dim))).is_err());
        let asym = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.2, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(build_target(&data, &TargetSpec::new(TargetKind::Explicit(asym))).is_err());
        let indefinite = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(build_target(&data, &TargetSpec::new(TargetKind::Explicit(indefinite))).is_err());
        let ok = DMatrix::identity(3, 3) * 2.0;
        assert!(build_target(&data, &TargetSpec::new(TargetKind::Explicit(ok))).is_ok());
    }

    #[test]
    fn true_covariance_target_with_many_surrogates_dominates_the_scm() {
        // With the exact covariance as an explicit target and a huge
        // surrogate sample, the target class is nearly noiseless, so its
        // weight should exceed the SCM's at small n.
        let p = 50;
        let model = CovarianceModel::Ar1 { p, sigma2: 1.0, rho: 0.5 };
        let truth = model.materialize().unwrap();
        let data = gaussian_data(model, 20, 17);
        let spec = TargetSpec::new(TargetKind::Explicit(truth)).with_samples(100_000);
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let result =
            multitarget_pool(&data, &[spec], &PoolingConfig::default(), &mut rng).unwrap();
        let scm_weight = result.weights[0];
        let target_weight = result.weights[1];
        assert!(
            target_weight > scm_weight,
            "target weight {target_weight} should beat SCM weight {scm_weight}"
        );
    }

    #[test]
    fn no_targets_reduces_to_single_class_pooling() {
        let data = gaussian_data(CovarianceModel::Ar1 { p: 8, sigma2: 2.0, rho: 0.4 }, 25, 19);
        let config = PoolingConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let via_multitarget = multitarget_pool(&data, &[], &config, &mut rng).unwrap();
        let collection =
            crate::estimators::ClassCollection::new(vec![data.clone()]).unwrap();
        let via_pool = pool(&collection, &config).unwrap();
        assert!((via_multitarget.estimate - &via_pool.estimates[0]).norm() < 1e-12);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let data = gaussian_data(CovarianceModel::Ar1 { p: 6, sigma2: 1.0, rho: 0.3 }, 15, 21);
        let targets = [
            TargetSpec::new(TargetKind::Identity).with_samples(200),
            TargetSpec::new(TargetKind::ConstantCorrelation).with_samples(200),
        ];
        let config = PoolingConfig::default();
        let run = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            multitarget_pool(&data, &targets, &config, &mut rng).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.weights, b.weights);
        let c = run(6);
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn surrogate_noise_shrinks_with_more_samples() {
        // The estimate for a fixed data set varies only through the
        // surrogate draws; more draws must mean a more stable estimate.
        // (Individual weights are the wrong thing to watch: an identity
        // target duplicates the identity column as the surrogate count
        // grows, so only their combined effect is identified.) Compare the
        // spread of the estimate's norm across seeds at L = 250 vs 4000.
        let data = gaussian_data(CovarianceModel::Ar1 { p: 10, sigma2: 1.0, rho: 0.5 }, 20, 23);
        let config = PoolingConfig::default();
        let spread = |l: usize| {
            let norms: Vec<f64> = (0..200)
                .map(|seed| {
                    let spec = TargetSpec::new(TargetKind::Identity).with_samples(l);
                    let mut rng = ChaCha12Rng::seed_from_u64(1000 + seed);
                    multitarget_pool(&data, &[spec], &config, &mut rng).unwrap().estimate.norm()
                })
                .collect();
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            (norms.iter().map(|w| (w - mean).powi(2)).sum::<f64>()
                / (norms.len() as f64 - 1.0))
                .sqrt()
        };
        let coarse = spread(250);
        let fine = spread(4000);
        assert!(
            fine < coarse,
            "estimate spread should fall with more surrogates: {fine} at 4000 vs {coarse} at 250"
        );
    }

    #[test]
    fn multitarget_estimate_keeps_the_identity_floor() {
        let data = gaussian_data(CovarianceModel::Ar1 { p: 12, sigma2: 1.0, rho: 0.6 }, 10, 29);
        let spec = TargetSpec::new(TargetKind::ConstantCorrelation).with_samples(100);
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        let result =
            multitarget_pool(&data, &[spec], &PoolingConfig::default(), &mut rng).unwrap();
        assert!(result.includes_identity);
        let eigs = result.estimate.symmetric_eigenvalues();
        assert!(eigs.iter().all(|&e| e >= 1e-8 - 1e-12));
    }

    #[test]
    fn rank_deficient_target_is_sampled_in_its_subspace() {
        // A rank-one explicit target still works: the surrogate draws stay
        // in the target's column space.
        let p = 5;
        let v = DVector::from_fn(p, |i, _| (i + 1) as f64);
        let rank_one = &v * v.transpose();
        let data = gaussian_data(CovarianceModel::Ar1 { p, sigma2: 1.0, rho: 0.2 }, 30, 31);
        let spec = TargetSpec::new(TargetKind::Explicit(rank_one)).with_samples(500);
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        let result = multitarget_pool(&data, &[spec], &PoolingConfig::default(), &mut rng);
        assert!(result.is_ok());
    }

    #[test]
    fn bartz_with_scm_as_target_returns_the_scm() {
        let data = gaussian_data(CovarianceModel::Ar1 { p: 4, sigma2: 1.0, rho: 0.3 }, 40, 33);
        let mean = data.sample_mean();
        let centered = data.centered(&mean);
        let s = crate::estimators::scaled_outer_sum(&centered, 1.0 / (data.n() as f64 - 1.0));
        let result = bartz_estimate(&data, &[s.clone()]).unwrap();
        assert!((result.estimate - s).norm() < 1e-8);
    }

    #[test]
    fn bartz_weights_stay_in_the_simplex() {
        for trial in 0..20 {
            let n = 8 + (trial % 5) * 7;
            let data = gaussian_data(
                CovarianceModel::Ar1 { p: 6, sigma2: 1.0, rho: 0.1 + 0.04 * trial as f64 },
                n,
                35 + trial as u64,
            );
            let eta = crate::estimators::scale_estimate(&data).unwrap();
            let targets = [
                DMatrix::identity(6, 6) * eta,
                build_target(&data, &TargetSpec::new(TargetKind::ConstantCorrelation)).unwrap(),
            ];
            let result = bartz_estimate(&data, &targets).unwrap();
            assert!(result.weights.iter().all(|&a| a >= -1e-12));
            assert!(result.weights.sum() <= 1.0 + 1e-10);
            assert_relative_eq!(
                result.scm_weight,
                1.0 - result.weights.sum(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bartz_shrinks_spherical_data_towards_identity() {
        // Tiny n, spherical truth: the identity target must pick up weight.
        let data = gaussian_data(
            CovarianceModel::Explicit { matrix: DMatrix::identity(50, 50) },
            10,
            36,
        );
        let eta = crate::estimators::scale_estimate(&data).unwrap();
        let result = bartz_estimate(&data, &[DMatrix::identity(50, 50) * eta]).unwrap();
        assert!(
            result.weights[0] > 0.1,
            "identity weight {} should be substantial",
            result.weights[0]
        );
    }

    #[test]
    fn surrogate_sample_floor_is_enforced() {
        let data = gaussian_data(CovarianceModel::Ar1 { p: 4, sigma2: 1.0, rho: 0.3 }, 10, 37);
        let spec = TargetSpec::new(TargetKind::Identity).with_samples(3);
        let mut rng = ChaCha12Rng::seed_from_u64(38);
        let err = multitarget_pool(&data, &[spec], &PoolingConfig::default(), &mut rng);
        assert!(err.is_err());
    }
}
