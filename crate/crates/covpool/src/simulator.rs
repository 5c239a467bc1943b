//! Monte Carlo harnesses: NMSE studies over multiclass elliptical setups,
//! and diagnostics of the sign covariance shape estimator.
//!
//! Reproducibility contract: every trial owns RNG stream `trial + 1` of a
//! counter-based generator seeded by the experiment seed (stream 0 is
//! reserved for setup draws such as fixed class means). Within a trial the
//! consumption order is fixed: per-trial correlations first (class order),
//! then per-trial means (class order), then the class samples (class
//! order); estimation itself draws nothing. Results are reduced in trial
//! order with compensated sums, so parallel and serial execution produce
//! identical tables.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    class_statistics, delta_estimate, pooling_statistics, ClassStatistics, Dataset,
    EstimationOptions, PoolingStatistics,
};
use crate::linalg::{frobenius_distance_sq, hermitian_product_trace, neumaier_sum};
use crate::models::{CovarianceModel, EllipticalLaw, Sampler};
use crate::pooling::{combine, solve_constrained, PoolingConfig, PoolingVariant};
use crate::scalar::Scalar;

/// Where the class means come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanMode {
    /// Use each law's mean as given, every trial.
    #[default]
    AsGiven,
    /// Draw standard normal means once (setup stream) and keep them fixed
    /// across trials.
    FixedAcrossTrials,
    /// Draw fresh standard normal means each trial.
    ResampledPerTrial,
}

/// Where the correlation parameters come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    /// Use each law's covariance model as given.
    AsGiven,
    /// Redraw each class's correlation uniformly from `[lo, hi)` per trial,
    /// optionally keeping the first class as given.
    UniformPerTrial { lo: f64, hi: f64, skip_first: bool },
}

impl Default for RhoMode {
    fn default() -> Self {
        Self::AsGiven
    }
}

/// Estimators the NMSE runner can score.
#[derive(Debug, Clone)]
pub enum SimEstimator {
    /// Plain per-class sample covariance.
    SampleCovariance,
    /// The true covariance, as a zero-error control.
    TrueCovariance,
    /// Pooled estimation with statistics estimated from the data.
    Linpool(PoolingConfig),
    /// Pooled estimation with population statistics but estimated sample
    /// covariances: isolates the cost of estimating the coefficients.
    LinpoolOracleStats(PoolingConfig),
}

impl SimEstimator {
    pub fn label(&self) -> String {
        match self {
            Self::SampleCovariance => "scm".into(),
            Self::TrueCovariance => "truth".into(),
            Self::Linpool(cfg) => variant_label(cfg.variant).into(),
            Self::LinpoolOracleStats(cfg) => format!("oracle-{}", variant_label(cfg.variant)),
        }
    }

    fn needs_class_statistics(&self) -> bool {
        matches!(self, Self::Linpool(_))
    }
}

fn variant_label(variant: PoolingVariant) -> &'static str {
    match variant {
        PoolingVariant::Unconstrained => "linpool-u",
        PoolingVariant::UnconstrainedWithIdentity => "linpool-ui",
        PoolingVariant::NonnegativeQp => "linpool-nn",
        PoolingVariant::NonnegativeQpWithIdentity => "linpool",
        PoolingVariant::ConvexCombination => "linpool-c",
    }
}

/// A full NMSE experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec<T: Scalar> {
    pub class_laws: Vec<EllipticalLaw<T>>,
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub estimators: Vec<SimEstimator>,
    pub mean_mode: MeanMode,
    pub rho_mode: RhoMode,
    pub estimation: EstimationOptions,
    pub seed: u64,
}

impl<T: Scalar> ExperimentSpec<T> {
    fn validate(&self) -> Result<()> {
        let k = self.class_laws.len();
        if k == 0 {
            return Err(Error::InvalidInput("at least one class law is needed".into()));
        }
        if self.sample_sizes.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} sample sizes for {k} classes",
                self.sample_sizes.len()
            )));
        }
        let p = self.class_laws[0].p();
        for (i, law) in self.class_laws.iter().enumerate() {
            if law.p() != p {
                return Err(Error::DimensionMismatch(format!(
                    "class {i} has dimension {} but class 0 has {p}",
                    law.p()
                )));
            }
        }
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::InsufficientData("every class needs n >= 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("at least one trial is needed".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("at least one estimator is needed".into()));
        }
        if let RhoMode::UniformPerTrial { lo, hi, skip_first } = self.rho_mode {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "correlation range [{lo}, {hi}) is not a valid interval"
                )));
            }
            // Fail fast if an endpoint is outside a class's admissible
            // correlation range.
            for (i, law) in self.class_laws.iter().enumerate() {
                if skip_first && i == 0 {
                    continue;
                }
                law.covariance.with_correlation(lo)?;
                law.covariance.with_correlation(hi)?;
            }
        }
        Ok(())
    }
}

/// NMSE table: per-class and total mean/std per estimator.
#[derive(Debug, Clone)]
pub struct NmseReport {
    pub estimator_labels: Vec<String>,
    pub k: usize,
    pub trials_requested: usize,
    pub trials_completed: usize,
    /// Aborted trials with their causes, in trial order.
    pub aborted: Vec<(usize, String)>,
    /// Mean NMSE, estimators by classes.
    pub class_mean: DMatrix<f64>,
    /// Standard deviation across trials, estimators by classes.
    pub class_std: DMatrix<f64>,
    /// Mean of the per-trial total (sum over classes) per estimator.
    pub total_mean: DVector<f64>,
    pub total_std: DVector<f64>,
}

impl NmseReport {
    /// Long format for plotting: one row per estimator and class, with the
    /// totals as a final pseudo-class.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("estimator,class,nmse_mean,nmse_std\n");
        for (e, label) in self.estimator_labels.iter().enumerate() {
            for kk in 0..self.k {
                out.push_str(&format!(
                    "{label},{},{},{}\n",
                    kk + 1,
                    self.class_mean[(e, kk)],
                    self.class_std[(e, kk)]
                ));
            }
            out.push_str(&format!("{label},total,{},{}\n", self.total_mean[e], self.total_std[e]));
        }
        out
    }

    /// Wide format mirroring the usual class-columns-plus-total layout.
    pub fn to_table_csv(&self) -> String {
        let mut out = String::from("estimator");
        for kk in 0..self.k {
            out.push_str(&format!(",class{}_mean,class{}_std", kk + 1, kk + 1));
        }
        out.push_str(",total_mean,total_std\n");
        for (e, label) in self.estimator_labels.iter().enumerate() {
            out.push_str(label);
            for kk in 0..self.k {
                out.push_str(&format!(",{},{}", self.class_mean[(e, kk)], self.class_std[(e, kk)]));
            }
            out.push_str(&format!(",{},{}\n", self.total_mean[e], self.total_std[e]));
        }
        out
    }

    /// Mean total NMSE of the estimator with the given label.
    pub fn total_for(&self, label: &str) -> Option<f64> {
        self.estimator_labels.iter().position(|l| l == label).map(|e| self.total_mean[e])
    }
}

/// Per-class sampling state for one trial.
struct TrialClass<T: Scalar> {
    sampler: Sampler<T>,
    truth: DMatrix<T>,
    truth_norm_sq: f64,
}

/// Squared Frobenius norm of a Hermitian matrix.
fn norm_sq<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.iter().map(|x| x.modulus_squared()).sum()
}

fn add_mean<T: Scalar>(x: &mut DMatrix<T>, mean: &DVector<T>) {
    for j in 0..x.ncols() {
        let m = mean[j];
        if m != T::zero() {
            x.column_mut(j).add_scalar_mut(m);
        }
    }
}

/// Runs the NMSE experiment: per trial, sample every class, run every
/// estimator, and score `||estimate - truth||_F^2 / ||truth||_F^2` per
/// class. An estimator failure aborts the whole trial (recorded with its
/// cause); the averages run over completed trials.
pub fn run_nmse<T: Scalar>(spec: &ExperimentSpec<T>) -> Result<NmseReport> {
    spec.validate()?;
    let k = spec.class_laws.len();
    let p = spec.class_laws[0].p();
    let n_estimators = spec.estimators.len();
    let needs_stats = spec.estimators.iter().any(SimEstimator::needs_class_statistics);
    let needs_oracle = spec
        .estimators
        .iter()
        .any(|e| matches!(e, SimEstimator::LinpoolOracleStats(_)));

    // Fixed means come from the setup stream, drawn in class order.
    let fixed_means: Option<Vec<DVector<T>>> = match spec.mean_mode {
        MeanMode::FixedAcrossTrials => {
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            rng.set_stream(0);
            Some(
                (0..k)
                    .map(|_| DVector::from_fn(p, |_, _| T::standard_entry(&mut rng)))
                    .collect(),
            )
        }
        _ => None,
    };

    // Classes whose covariance never changes get their sampler and truth
    // precomputed once.
    let fixed_class = |i: usize| match spec.rho_mode {
        RhoMode::AsGiven => true,
        RhoMode::UniformPerTrial { skip_first, .. } => skip_first && i == 0,
    };
    let mut precomputed: Vec<Option<TrialClass<T>>> = Vec::with_capacity(k);
    for (i, law) in spec.class_laws.iter().enumerate() {
        if fixed_class(i) {
            let centered = EllipticalLaw::centered(law.family, law.covariance.clone())?;
            let truth = law.covariance.materialize()?;
            let truth_norm_sq = norm_sq(&truth);
            precomputed.push(Some(TrialClass { sampler: centered.sampler()?, truth, truth_norm_sq }));
        } else {
            precomputed.push(None);
        }
    }

    let run_trial = |trial: usize| -> std::result::Result<DMatrix<f64>, String> {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(trial as u64 + 1);

        // Correlations first, in class order.
        let mut classes: Vec<TrialClass<T>> = Vec::with_capacity(k);
        for (i, law) in spec.class_laws.iter().enumerate() {
            if let Some(pre) = &precomputed[i] {
                classes.push(TrialClass {
                    sampler: pre.sampler.clone(),
                    truth: pre.truth.clone(),
                    truth_norm_sq: pre.truth_norm_sq,
                });
            } else {
                let RhoMode::UniformPerTrial { lo, hi, .. } = spec.rho_mode else {
                    unreachable!("non-precomputed class implies per-trial correlations");
                };
                let rho = if lo == hi { lo } else { rng.random_range(lo..hi) };
                let model =
                    law.covariance.with_correlation(rho).map_err(|e| e.to_string())?;
                let centered = EllipticalLaw::centered(law.family, model.clone())
                    .map_err(|e| e.to_string())?;
                let truth = model.materialize().map_err(|e| e.to_string())?;
                let truth_norm_sq = norm_sq(&truth);
                classes.push(TrialClass {
                    sampler: centered.sampler().map_err(|e| e.to_string())?,
                    truth,
                    truth_norm_sq,
                });
            }
        }

        // Means second, in class order.
        let means: Vec<DVector<T>> = match spec.mean_mode {
            MeanMode::AsGiven => spec.class_laws.iter().map(|l| l.mean.clone()).collect(),
            MeanMode::FixedAcrossTrials => fixed_means.clone().expect("precomputed above"),
            MeanMode::ResampledPerTrial => (0..k)
                .map(|_| DVector::from_fn(p, |_, _| T::standard_entry(&mut rng)))
                .collect(),
        };

        // Class samples third.
        let mut datasets: Vec<Dataset<T>> = Vec::with_capacity(k);
        for (i, class) in classes.iter().enumerate() {
            let mut x = class
                .sampler
                .draw_matrix(spec.sample_sizes[i], &mut rng)
                .map_err(|e| e.to_string())?;
            add_mean(&mut x, &means[i]);
            datasets.push(Dataset::new(x).map_err(|e| e.to_string())?);
        }

        // Shared estimation work.
        let stats: Option<Vec<ClassStatistics<T>>> = if needs_stats {
            Some(
                datasets
                    .iter()
                    .map(|d| class_statistics(d, spec.estimation))
                    .collect::<Result<_>>()
                    .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        let scms: Vec<DMatrix<T>> = match &stats {
            Some(s) => s.iter().map(|cs| cs.scm.clone()).collect(),
            None => datasets
                .iter()
                .map(crate::estimators::sample_covariance)
                .collect::<Result<_>>()
                .map_err(|e| e.to_string())?,
        };
        let pooled: Option<PoolingStatistics> = match &stats {
            Some(s) => Some(pooling_statistics(s).map_err(|e| e.to_string())?),
            None => None,
        };
        let oracle_pooled: Option<PoolingStatistics> = if needs_oracle {
            Some(oracle_statistics(&classes, &spec.class_laws, &spec.sample_sizes).map_err(|e| e.to_string())?)
        } else {
            None
        };

        let mut outcome = DMatrix::zeros(n_estimators, k + 1);
        for (e, estimator) in spec.estimators.iter().enumerate() {
            let estimates: Vec<DMatrix<T>> = match estimator {
                SimEstimator::SampleCovariance => scms.clone(),
                SimEstimator::TrueCovariance => classes.iter().map(|c| c.truth.clone()).collect(),
                SimEstimator::Linpool(cfg) => {
                    let pooled = pooled.as_ref().expect("stats computed for linpool");
                    pooled_estimates(&scms, pooled, cfg).map_err(|e| e.to_string())?
                }
                SimEstimator::LinpoolOracleStats(cfg) => {
                    let pooled = oracle_pooled.as_ref().expect("oracle stats computed");
                    pooled_estimates(&scms, pooled, cfg).map_err(|e| e.to_string())?
                }
            };
            let mut total = 0.0;
            for (i, est) in estimates.iter().enumerate() {
                let nmse = frobenius_distance_sq(est, &classes[i].truth) / classes[i].truth_norm_sq;
                outcome[(e, i)] = nmse;
                total += nmse;
            }
            outcome[(e, k)] = total;
        }
        Ok(outcome)
    };

    let outcomes: Vec<std::result::Result<DMatrix<f64>, String>> =
        (0..spec.trials).into_par_iter().map(run_trial).collect();

    let mut aborted = Vec::new();
    let mut completed = Vec::new();
    for (trial, res) in outcomes.into_iter().enumerate() {
        match res {
            Ok(outcome) => completed.push(outcome),
            Err(cause) => aborted.push((trial, cause)),
        }
    }
    if completed.is_empty() {
        let cause = aborted
            .first()
            .map(|(t, c)| format!("trial {t}: {c}"))
            .unwrap_or_else(|| "no trials ran".into());
        return Err(Error::Numerical(format!("all trials aborted; first cause: {cause}")));
    }

    let m = completed.len();
    let mut class_mean = DMatrix::zeros(n_estimators, k);
    let mut class_std = DMatrix::zeros(n_estimators, k);
    let mut total_mean = DVector::zeros(n_estimators);
    let mut total_std = DVector::zeros(n_estimators);
    let reduce = |values: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let collected: Vec<f64> = values.collect();
        let mean = neumaier_sum(collected.iter().copied()) / m as f64;
        let std = if m > 1 {
            (neumaier_sum(collected.iter().map(|v| (v - mean) * (v - mean)))
                / (m as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        (mean, std)
    };
    for e in 0..n_estimators {
        for kk in 0..k {
            let (mean, std) = reduce(&mut completed.iter().map(|o| o[(e, kk)]));
            class_mean[(e, kk)] = mean;
            class_std[(e, kk)] = std;
        }
        let (mean, std) = reduce(&mut completed.iter().map(|o| o[(e, k)]));
        total_mean[e] = mean;
        total_std[e] = std;
    }

    Ok(NmseReport {
        estimator_labels: spec.estimators.iter().map(SimEstimator::label).collect(),
        k,
        trials_requested: spec.trials,
        trials_completed: m,
        aborted,
        class_mean,
        class_std,
        total_mean,
        total_std,
    })
}

/// Population pooling statistics of the trial's true covariances: exact
/// inner products, exact scales and sphericities, and the closed-form
/// scaled MSEs from the family kurtosis.
fn oracle_statistics<T: Scalar>(
    classes: &[TrialClass<T>],
    laws: &[EllipticalLaw<T>],
    sample_sizes: &[usize],
) -> Result<PoolingStatistics> {
    let k = classes.len();
    let p = classes[0].truth.nrows();
    let pf = p as f64;
    let mut c = DMatrix::zeros(k, k);
    for j in 0..k {
        for i in 0..=j {
            let v = hermitian_product_trace(&classes[i].truth, &classes[j].truth) / pf;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let mut d = DVector::zeros(k);
    let mut f = DVector::zeros(k);
    for i in 0..k {
        let truth = &classes[i].truth;
        let eta = truth.diagonal().iter().map(|x| x.real()).sum::<f64>() / pf;
        let gamma = c[(i, i)] / (eta * eta);
        let kappa = laws[i].family.elliptical_kurtosis();
        d[i] = delta_estimate(eta, kappa, gamma, sample_sizes[i], p, T::FIELD)?;
        f[i] = eta;
    }
    PoolingStatistics::new(c, d, f, sample_sizes.to_vec(), p)
}

fn pooled_estimates<T: Scalar>(
    scms: &[DMatrix<T>],
    pooled: &PoolingStatistics,
    config: &PoolingConfig,
) -> Result<Vec<DMatrix<T>>> {
    let set = solve_constrained(pooled, config)?;
    (0..pooled.k())
        .map(|target| combine(scms, &set.target_weights(target), set.includes_identity()))
        .collect()
}

/// Specification of the shape-bias sweep: per dimension, `trials`
/// independent shape estimates from `draws_per_trial` known-mean
/// observations each.
#[derive(Debug, Clone)]
pub struct SscmBiasSpec {
    pub p_values: Vec<usize>,
    pub draws_per_trial: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

/// One point of the bias sweep.
#[derive(Debug, Clone, Copy)]
pub struct SscmBiasPoint {
    pub p: usize,
    pub n: usize,
    /// `||mean(shape estimate) - shape||_F / ||shape||_F`.
    pub relative_bias: f64,
}

/// Estimates the bias of the sign covariance shape estimator across
/// dimensions: the sign covariance converges to a shape that differs from
/// the true one, and the sweep measures that distance shrinking as `p`
/// grows. Sampling is zero-mean Gaussian (the sign vectors are
/// distribution-free over elliptical laws with a known mean).
pub fn run_sscm_bias<F>(model_at: F, spec: &SscmBiasSpec) -> Result<Vec<SscmBiasPoint>>
where
    F: Fn(usize) -> Result<CovarianceModel<f64>>,
{
    if spec.p_values.len() != spec.draws_per_trial.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} dimensions but {} draw counts",
            spec.p_values.len(),
            spec.draws_per_trial.len()
        )));
    }
    if spec.trials == 0 {
        return Err(Error::InvalidInput("at least one trial is needed".into()));
    }
    let mut out = Vec::with_capacity(spec.p_values.len());
    for (&p, &n) in spec.p_values.iter().zip(&spec.draws_per_trial) {
        if n == 0 {
            return Err(Error::InvalidInput("draws per trial must be positive".into()));
        }
        let model = model_at(p)?;
        if model.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "model built for the sweep has dimension {} at requested {p}",
                model.p()
            )));
        }
        model.validate()?;
        let m = model.materialize()?;
        let trace = m.diagonal().sum();
        let shape = &m * (p as f64 / trace);
        let shape_norm = norm_sq(&shape).sqrt();

        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut used_rows = 0usize;
        for trial in 0..spec.trials {
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            rng.set_stream(trial as u64 + 1);
            let x = draw_gaussian_rows(&model, n, &mut rng)?;
            let (signs, kept) = normalize_rows(x);
            used_rows += kept;
            gram.gemm_tr(1.0, &signs, &signs, 1.0);
        }
        if used_rows == 0 {
            return Err(Error::Numerical("every draw had zero norm".into()));
        }
        let mean_shape = gram * (p as f64 / used_rows as f64);
        let bias = frobenius_distance_sq(&mean_shape, &shape).sqrt() / shape_norm;
        out.push(SscmBiasPoint { p, n, relative_bias: bias });
    }
    Ok(out)
}

/// Specification of the shape-versus-scaled-covariance distance check.
#[derive(Debug, Clone, Copy)]
pub struct ScmDistanceSpec {
    pub p: usize,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Monte Carlo mean of
/// `||shape estimate - scaled known-mean covariance estimate||_F^2 /
/// ||shape||_F^2` under zero-mean Gaussian sampling; the scaled estimate is
/// `eta^{-1} (1/n) sum x x^T` with the population scale `eta`. For growing
/// `p` this approaches `2/n`.
pub fn run_sscm_scm_distance(model: &CovarianceModel<f64>, spec: &ScmDistanceSpec) -> Result<f64> {
    if spec.trials == 0 || spec.n == 0 {
        return Err(Error::InvalidInput("trials and draws must be positive".into()));
    }
    model.validate()?;
    let p = model.p();
    if p != spec.p {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {p} but spec says {}",
            spec.p
        )));
    }
    let m = model.materialize()?;
    let trace = m.diagonal().sum();
    let eta = trace / p as f64;
    let shape = &m * (1.0 / eta);
    let shape_norm_sq = norm_sq(&shape);

    let mut distances = Vec::with_capacity(spec.trials);
    for trial in 0..spec.trials {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(trial as u64 + 1);
        let x = draw_gaussian_rows(model, spec.n, &mut rng)?;
        let (signs, kept) = normalize_rows(x.clone());
        if kept == 0 {
            return Err(Error::Numerical("every draw had zero norm".into()));
        }
        let mut shape_est = DMatrix::<f64>::zeros(p, p);
        shape_est.gemm_tr(p as f64 / kept as f64, &signs, &signs, 0.0);
        let mut scm_scaled = DMatrix::<f64>::zeros(p, p);
        scm_scaled.gemm_tr(1.0 / (spec.n as f64 * eta), &x, &x, 0.0);
        distances.push(frobenius_distance_sq(&shape_est, &scm_scaled) / shape_norm_sq);
    }
    Ok(neumaier_sum(distances.iter().copied()) / spec.trials as f64)
}

/// Zero-mean Gaussian rows under the model. First-order autoregressive
/// models use the O(p)-per-row stationary recursion; everything else goes
/// through the dense square root.
fn draw_gaussian_rows<R: Rng + ?Sized>(
    model: &CovarianceModel<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if let CovarianceModel::Ar1 { p, sigma2, rho } = model {
        let (p, sigma, rho) = (*p, sigma2.sqrt(), *rho);
        let innovation = sigma * (1.0 - rho * rho).sqrt();
        // Standard normals in the same column-major order as the generic
        // sampler, then the in-place recursion along each row:
        // x_0 = sigma z_0, x_j = rho x_{j-1} + sigma sqrt(1 - rho^2) z_j
        // reproduces the exact stationary autoregressive covariance.
        let mut x = DMatrix::from_fn(n, p, |_, _| f64::standard_entry(rng));
        x.column_mut(0).scale_mut(sigma);
        for j in 1..p {
            for i in 0..n {
                x[(i, j)] = rho * x[(i, j - 1)] + innovation * x[(i, j)];
            }
        }
        return Ok(x);
    }
    let law = EllipticalLaw::centered(crate::models::DistributionFamily::Gaussian, model.clone())?;
    law.sampler()?.draw_matrix(n, rng)
}

/// Normalizes each row to unit length, dropping rows with negligible norm;
/// returns the sign matrix and the number of rows kept (dropped rows are
/// zeroed, contributing nothing to gram accumulations).
fn normalize_rows(mut x: DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut max_norm = 0.0f64;
    let norms: Vec<f64> = (0..x.nrows()).map(|i| x.row(i).norm()).collect();
    for &nrm in &norms {
        max_norm = max_norm.max(nrm);
    }
    let tol = 1e-14 * max_norm;
    let mut kept = 0usize;
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > tol && nrm > 0.0 {
            x.row_mut(i).scale_mut(1.0 / nrm);
            kept += 1;
        } else {
            x.row_mut(i).fill(0.0);
        }
    }
    (x, kept)
}
