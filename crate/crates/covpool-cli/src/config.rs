//! TOML configuration schemas for every subcommand.
//!
//! All tables reject unknown keys, so a typo in a config file fails fast
//! with a message naming the offending key instead of silently running with
//! a default. Paths inside a config file (explicit covariance matrices,
//! explicit shrinkage targets) are resolved relative to the directory the
//! config file lives in.

use std::fs;
use std::path::{Path, PathBuf};

use covpool::estimators::EstimationOptions;
use covpool::models::{CovarianceModel, DistributionFamily, EllipticalLaw};
use covpool::multitarget::{TargetKind, TargetSpec, DEFAULT_SURROGATE_SAMPLES};
use covpool::pooling::{IdentityBound, PoolingConfig, PoolingVariant};
use covpool::portfolio::{BacktestConfig, EstimatorSpec};
use covpool::simulator::{
    ExperimentSpec, MeanMode, RhoMode, ScmDistanceSpec, SimEstimator, SscmBiasSpec,
};
use covpool::{Complex64, Scalar};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::matio;
use crate::CliError;

/// Reads and parses a TOML config file into `T`.
///
/// Read failures and parse failures are both config errors; the parse error
/// text from the TOML layer names unknown keys and type mismatches.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("failed to read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Directory that relative paths inside the config are resolved against.
pub fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Scalar field the experiment runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    #[default]
    Real,
    Complex,
}

/// One covariance model table. The `family` key picks the structure and
/// decides which of the other keys are required; the builder validates the
/// combination explicitly so the error can say exactly what is missing or
/// out of place.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    pub p: Option<usize>,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
    /// Imaginary part of the correlation; only meaningful for complex-field
    /// ar1 and banded1 models.
    pub rho_im: Option<f64>,
    /// CSV file holding an explicit covariance matrix.
    pub matrix: Option<PathBuf>,
}

impl ModelConfig {
    fn parametric(&self) -> Result<(usize, f64, f64), CliError> {
        let p = self.p.ok_or_else(|| {
            CliError::Config(format!("model family {} requires `p`", self.family))
        })?;
        let sigma2 = self.sigma2.ok_or_else(|| {
            CliError::Config(format!("model family {} requires `sigma2`", self.family))
        })?;
        let rho = self.rho.ok_or_else(|| {
            CliError::Config(format!("model family {} requires `rho`", self.family))
        })?;
        if self.matrix.is_some() {
            return Err(CliError::Config(format!(
                "model family {} does not take a `matrix` file",
                self.family
            )));
        }
        Ok((p, sigma2, rho))
    }

    fn reject_rho_im(&self, why: &str) -> Result<(), CliError> {
        if self.rho_im.is_some() {
            return Err(CliError::Config(format!("`rho_im` is not allowed {why}")));
        }
        Ok(())
    }

    /// Builds the real-field model.
    pub fn build_real(&self, base: &Path) -> Result<CovarianceModel<f64>, CliError> {
        self.reject_rho_im("for real-field models")?;
        let model = match self.family.as_str() {
            "ar1" => {
                let (p, sigma2, rho) = self.parametric()?;
                CovarianceModel::Ar1 { p, sigma2, rho }
            }
            "compound-symmetry" => {
                let (p, sigma2, rho) = self.parametric()?;
                CovarianceModel::CompoundSymmetry { p, sigma2, rho }
            }
            "banded1" => {
                let (p, sigma2, rho) = self.parametric()?;
                CovarianceModel::Banded1 { p, sigma2, rho }
            }
            "explicit" => CovarianceModel::Explicit { matrix: self.explicit_real(base)? },
            other => return Err(unknown_family(other)),
        };
        model.validate().map_err(CliError::lift)?;
        Ok(model)
    }

    /// Builds the complex-field model. `rho_im` defaults to zero.
    pub fn build_complex(&self, base: &Path) -> Result<CovarianceModel<Complex64>, CliError> {
        let model = match self.family.as_str() {
            "ar1" => {
                let (p, sigma2, rho) = self.parametric()?;
                let rho = Complex64::new(rho, self.rho_im.unwrap_or(0.0));
                CovarianceModel::Ar1 { p, sigma2, rho }
            }
            "compound-symmetry" => {
                self.reject_rho_im("for compound-symmetry models (the correlation is real)")?;
                let (p, sigma2, rho) = self.parametric()?;
                CovarianceModel::CompoundSymmetry { p, sigma2, rho }
            }
            "banded1" => {
                let (p, sigma2, rho) = self.parametric()?;
                let rho = Complex64::new(rho, self.rho_im.unwrap_or(0.0));
                CovarianceModel::Banded1 { p, sigma2, rho }
            }
            "explicit" => {
                self.reject_rho_im("for explicit models")?;
                CovarianceModel::Explicit { matrix: self.explicit_complex(base)? }
            }
            other => return Err(unknown_family(other)),
        };
        model.validate().map_err(CliError::lift)?;
        Ok(model)
    }

    fn explicit_path(&self, base: &Path) -> Result<PathBuf, CliError> {
        for (key, set) in [
            ("p", self.p.is_some()),
            ("sigma2", self.sigma2.is_some()),
            ("rho", self.rho.is_some()),
        ] {
            if set {
                return Err(CliError::Config(format!(
                    "explicit models take only a `matrix` file, not `{key}`"
                )));
            }
        }
        let path = self.matrix.as_ref().ok_or_else(|| {
            CliError::Config("explicit models require a `matrix` CSV path".into())
        })?;
        Ok(resolve(base, path))
    }

    fn explicit_real(&self, base: &Path) -> Result<nalgebra::DMatrix<f64>, CliError> {
        matio::read_real_matrix(&self.explicit_path(base)?)
    }

    fn explicit_complex(&self, base: &Path) -> Result<nalgebra::DMatrix<Complex64>, CliError> {
        Ok(matio::read_matrix(&self.explicit_path(base)?)?.into_complex())
    }
}

fn unknown_family(name: &str) -> CliError {
    CliError::Config(format!(
        "unknown model family {name:?}; expected ar1, compound-symmetry, banded1, or explicit"
    ))
}

/// Identity-weight and estimation knobs shared by everything that pools.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingKnobs {
    /// Absolute lower bound for the identity weight.
    pub identity_floor: Option<f64>,
    /// Lower bound as a fraction of the target class scale; mutually
    /// exclusive with `identity_floor`.
    pub identity_scale_fraction: Option<f64>,
    /// Use the closed-form approximation of the location correction instead
    /// of the exact inverse-norm moments.
    pub approximate_location_correction: bool,
}

impl PoolingKnobs {
    pub fn identity_bound(&self) -> Result<IdentityBound, CliError> {
        match (self.identity_floor, self.identity_scale_fraction) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "set either `identity_floor` or `identity_scale_fraction`, not both".into(),
            )),
            (Some(v), None) => Ok(IdentityBound::Fixed(v)),
            (None, Some(a)) => Ok(IdentityBound::ScaleFraction(a)),
            (None, None) => Ok(IdentityBound::default()),
        }
    }

    pub fn estimation(&self) -> EstimationOptions {
        EstimationOptions {
            approximate_location_correction: self.approximate_location_correction,
        }
    }

    pub fn pooling_config(&self, variant: PoolingVariant) -> Result<PoolingConfig, CliError> {
        Ok(PoolingConfig {
            variant,
            identity_bound: self.identity_bound()?,
            estimation: self.estimation(),
        })
    }
}

/// Parses a pooling variant label.
pub fn parse_variant(label: &str) -> Result<PoolingVariant, CliError> {
    Ok(match label {
        "linpool-u" => PoolingVariant::Unconstrained,
        "linpool-ui" => PoolingVariant::UnconstrainedWithIdentity,
        "linpool-nn" => PoolingVariant::NonnegativeQp,
        "linpool" => PoolingVariant::NonnegativeQpWithIdentity,
        "linpool-c" => PoolingVariant::ConvexCombination,
        other => {
            return Err(CliError::Config(format!(
                "unknown pooling variant {other:?}; expected linpool, linpool-c, linpool-u, \
                 linpool-ui, or linpool-nn"
            )))
        }
    })
}

/// Parses an estimator label for the simulator.
pub fn parse_estimator(label: &str, knobs: &PoolingKnobs) -> Result<SimEstimator, CliError> {
    let (oracle, base) = match label.strip_prefix("oracle-") {
        Some(rest) => (true, rest),
        None => (false, label),
    };
    if !oracle {
        match base {
            "scm" => return Ok(SimEstimator::SampleCovariance),
            "truth" => return Ok(SimEstimator::TrueCovariance),
            _ => {}
        }
    }
    let variant = parse_variant(base).map_err(|_| {
        CliError::Config(format!(
            "unknown estimator {label:?}; expected scm, truth, a pooling variant (linpool, \
             linpool-c, linpool-u, linpool-ui, linpool-nn), or oracle-<variant>"
        ))
    })?;
    let config = knobs.pooling_config(variant)?;
    Ok(if oracle { SimEstimator::LinpoolOracleStats(config) } else { SimEstimator::Linpool(config) })
}

/// Where class means come from in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanModeConfig {
    /// Zero means every trial.
    #[default]
    AsGiven,
    /// Standard normal means drawn once and reused across trials.
    Fixed,
    /// Fresh standard normal means each trial.
    Resampled,
}

impl From<MeanModeConfig> for MeanMode {
    fn from(m: MeanModeConfig) -> Self {
        match m {
            MeanModeConfig::AsGiven => MeanMode::AsGiven,
            MeanModeConfig::Fixed => MeanMode::FixedAcrossTrials,
            MeanModeConfig::Resampled => MeanMode::ResampledPerTrial,
        }
    }
}

/// Per-trial redraw of the correlation parameters.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoModeConfig {
    pub lo: f64,
    pub hi: f64,
    /// Keep the first class's correlation as given.
    #[serde(default)]
    pub skip_first: bool,
}

/// One simulated class: sampling law plus sample size.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub n: usize,
    /// Student-t degrees of freedom; Gaussian when absent.
    pub nu: Option<f64>,
    pub model: ModelConfig,
}

impl ClassConfig {
    fn family(&self) -> DistributionFamily {
        match self.nu {
            Some(nu) => DistributionFamily::StudentT { nu },
            None => DistributionFamily::Gaussian,
        }
    }
}

/// Config for `covpool simulate`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub field: FieldKind,
    #[serde(default)]
    pub seed: u64,
    pub trials: usize,
    /// Estimator labels: scm, truth, linpool, linpool-c, linpool-u,
    /// linpool-ui, linpool-nn, or oracle-<variant>.
    pub estimators: Vec<String>,
    #[serde(default)]
    pub mean_mode: MeanModeConfig,
    pub rho_mode: Option<RhoModeConfig>,
    #[serde(default)]
    pub pooling: PoolingKnobs,
    pub class: Vec<ClassConfig>,
}

impl SimulateConfig {
    fn common<T: Scalar>(
        &self,
        laws: Vec<EllipticalLaw<T>>,
    ) -> Result<ExperimentSpec<T>, CliError> {
        let estimators = self
            .estimators
            .iter()
            .map(|label| parse_estimator(label, &self.pooling))
            .collect::<Result<Vec<_>, _>>()?;
        let rho_mode = match self.rho_mode {
            None => RhoMode::AsGiven,
            Some(RhoModeConfig { lo, hi, skip_first }) => {
                RhoMode::UniformPerTrial { lo, hi, skip_first }
            }
        };
        Ok(ExperimentSpec {
            class_laws: laws,
            sample_sizes: self.class.iter().map(|c| c.n).collect(),
            trials: self.trials,
            estimators,
            mean_mode: self.mean_mode.into(),
            rho_mode,
            estimation: self.pooling.estimation(),
            seed: self.seed,
        })
    }

    pub fn to_real_spec(&self, base: &Path) -> Result<ExperimentSpec<f64>, CliError> {
        let laws = self
            .class
            .iter()
            .map(|c| {
                let model = c.model.build_real(base)?;
                EllipticalLaw::centered(c.family(), model).map_err(CliError::lift)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.common(laws)
    }

    pub fn to_complex_spec(&self, base: &Path) -> Result<ExperimentSpec<Complex64>, CliError> {
        let laws = self
            .class
            .iter()
            .map(|c| {
                let model = c.model.build_complex(base)?;
                EllipticalLaw::centered(c.family(), model).map_err(CliError::lift)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.common(laws)
    }
}

/// Config for `covpool pool`. Every key has a default, so the command also
/// runs without a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolCmdConfig {
    /// Pooling variant label; defaults to the nonnegative variant with the
    /// identity target.
    pub variant: Option<String>,
    /// Treat every input as having known zero mean instead of estimating
    /// the mean from the rows.
    pub known_zero_mean: bool,
    pub pooling: PoolingKnobs,
}

impl PoolCmdConfig {
    pub fn pooling_config(&self) -> Result<PoolingConfig, CliError> {
        let variant = match &self.variant {
            Some(label) => parse_variant(label)?,
            None => PoolingVariant::default(),
        };
        self.pooling.pooling_config(variant)
    }
}

/// One shrinkage target table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// identity, constant-correlation, single-factor-market, or explicit.
    pub kind: String,
    /// CSV file for an explicit target.
    pub matrix: Option<PathBuf>,
    /// Per-target surrogate sample count override.
    pub surrogate_samples: Option<usize>,
}

impl TargetConfig {
    pub fn build_kind(&self, base: &Path) -> Result<TargetKind, CliError> {
        let kind = match self.kind.as_str() {
            "identity" => TargetKind::Identity,
            "constant-correlation" => TargetKind::ConstantCorrelation,
            "single-factor-market" => TargetKind::SingleFactorMarket,
            "explicit" => {
                let path = self.matrix.as_ref().ok_or_else(|| {
                    CliError::Config("explicit targets require a `matrix` CSV path".into())
                })?;
                TargetKind::Explicit(matio::read_real_matrix(&resolve(base, path))?)
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown target kind {other:?}; expected identity, constant-correlation, \
                     single-factor-market, or explicit"
                )))
            }
        };
        if !matches!(kind, TargetKind::Explicit(_)) && self.matrix.is_some() {
            return Err(CliError::Config(format!(
                "target kind {} does not take a `matrix` file",
                self.kind
            )));
        }
        Ok(kind)
    }

    fn spec(&self, base: &Path, default_samples: usize) -> Result<TargetSpec, CliError> {
        let kind = self.build_kind(base)?;
        Ok(TargetSpec::new(kind).with_samples(self.surrogate_samples.unwrap_or(default_samples)))
    }
}

/// Shrinkage method for `covpool shrink`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkMethod {
    /// Multi-target shrinkage by pooling against surrogate classes.
    #[default]
    LinpoolMt,
    /// Convex combination baseline on the same targets.
    Bartz,
}

/// Config for `covpool shrink`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkConfig {
    #[serde(default)]
    pub method: ShrinkMethod,
    #[serde(default)]
    pub seed: u64,
    /// Default surrogate sample count per target.
    pub surrogate_samples: Option<usize>,
    /// Pooling variant label for the pooling method.
    pub variant: Option<String>,
    #[serde(default)]
    pub pooling: PoolingKnobs,
    pub target: Vec<TargetConfig>,
}

impl ShrinkConfig {
    pub fn target_specs(&self, base: &Path) -> Result<Vec<TargetSpec>, CliError> {
        if self.target.is_empty() {
            return Err(CliError::Config("at least one [[target]] table is needed".into()));
        }
        let default_samples = self.surrogate_samples.unwrap_or(DEFAULT_SURROGATE_SAMPLES);
        self.target.iter().map(|t| t.spec(base, default_samples)).collect()
    }

    pub fn pooling_config(&self) -> Result<PoolingConfig, CliError> {
        let variant = match &self.variant {
            Some(label) => parse_variant(label)?,
            None => PoolingVariant::default(),
        };
        self.pooling.pooling_config(variant)
    }

    /// Row labels for the weights report, in weight-vector order.
    pub fn weight_labels(&self, includes_identity: bool) -> Vec<String> {
        let mut labels = vec!["scm".to_string()];
        for (i, t) in self.target.iter().enumerate() {
            labels.push(format!("target_{}_{}", i + 1, t.kind));
        }
        if includes_identity {
            labels.push("identity".to_string());
        }
        labels
    }
}

/// Config for `covpool backtest`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestCmdConfig {
    pub window_length: usize,
    #[serde(default = "default_rebalance")]
    pub rebalance_period: usize,
    /// scm, linpool-mt, or bartz.
    pub estimator: String,
    /// Targets for the multi-target estimators.
    #[serde(default)]
    pub target: Vec<TargetConfig>,
    /// Trailing days the targets are built from; defaults to the window.
    pub target_window: Option<usize>,
    pub surrogate_samples: Option<usize>,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default = "default_max_weight")]
    pub max_weight: f64,
    /// Annualization multiplier for the reported risk; defaults to the
    /// square root of 250 trading days.
    pub annualization_factor: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Pooling variant label for linpool-mt.
    pub variant: Option<String>,
    #[serde(default)]
    pub pooling: PoolingKnobs,
}

fn default_rebalance() -> usize {
    20
}

fn default_max_weight() -> f64 {
    0.1
}

impl BacktestCmdConfig {
    fn target_kinds(&self, base: &Path) -> Result<Vec<TargetKind>, CliError> {
        if self.target.is_empty() {
            return Err(CliError::Config(format!(
                "estimator {} needs at least one [[target]] table",
                self.estimator
            )));
        }
        self.target.iter().map(|t| t.build_kind(base)).collect()
    }

    pub fn to_backtest_config(&self, base: &Path) -> Result<BacktestConfig, CliError> {
        let target_window = self.target_window.unwrap_or(self.window_length);
        let estimator = match self.estimator.as_str() {
            "scm" => EstimatorSpec::SampleCovariance,
            "linpool-mt" => EstimatorSpec::LinpoolMultiTarget {
                targets: self.target_kinds(base)?,
                surrogate_samples: self.surrogate_samples.unwrap_or(DEFAULT_SURROGATE_SAMPLES),
                target_window,
            },
            "bartz" => EstimatorSpec::Bartz { targets: self.target_kinds(base)?, target_window },
            other => {
                return Err(CliError::Config(format!(
                    "unknown estimator {other:?}; expected scm, linpool-mt, or bartz"
                )))
            }
        };
        let variant = match &self.variant {
            Some(label) => parse_variant(label)?,
            None => PoolingVariant::default(),
        };
        let mut config = BacktestConfig::new(self.window_length, estimator);
        config.rebalance_period = self.rebalance_period;
        config.constrained = self.constrained;
        config.max_weight = self.max_weight;
        if let Some(a) = self.annualization_factor {
            config.annualization_factor = a;
        }
        config.seed = self.seed;
        config.pooling = self.pooling.pooling_config(variant)?;
        Ok(config)
    }
}

/// Diagnostic mode for `covpool sscm-diag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagMode {
    /// Sweep the relative bias of the sign covariance shape across
    /// dimensions.
    Bias,
    /// Mean squared relative distance between the shape estimate and the
    /// scaled known-mean covariance estimate at one (p, n).
    Distance,
}

/// Config for `covpool sscm-diag`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagConfig {
    pub mode: DiagMode,
    #[serde(default)]
    pub seed: u64,
    pub trials: usize,
    /// Parametric family the draws come from. For the bias sweep the
    /// model's `p` is ignored; the sweep substitutes each `p_values` entry.
    pub model: ModelConfig,
    /// Bias mode: dimensions to sweep.
    pub p_values: Option<Vec<usize>>,
    /// Bias mode: draws per trial for each dimension.
    pub draws: Option<Vec<usize>>,
    /// Distance mode: dimension.
    pub p: Option<usize>,
    /// Distance mode: draws per trial.
    pub n: Option<usize>,
}

impl DiagConfig {
    pub fn bias_spec(&self) -> Result<SscmBiasSpec, CliError> {
        self.reject_model_dimension()?;
        let p_values = self
            .p_values
            .clone()
            .ok_or_else(|| CliError::Config("bias mode requires `p_values`".into()))?;
        let draws = self
            .draws
            .clone()
            .ok_or_else(|| CliError::Config("bias mode requires `draws`".into()))?;
        for (key, set) in [("p", self.p.is_some()), ("n", self.n.is_some())] {
            if set {
                return Err(CliError::Config(format!("`{key}` is a distance-mode key")));
            }
        }
        Ok(SscmBiasSpec { p_values, draws_per_trial: draws, trials: self.trials, seed: self.seed })
    }

    /// The diagnostic dimension comes from the mode keys, so a `p` inside
    /// the model table could only contradict it.
    fn reject_model_dimension(&self) -> Result<(), CliError> {
        if self.model.p.is_some() {
            return Err(CliError::Config(
                "set the dimension with `p` or `p_values`, not inside the [model] table".into(),
            ));
        }
        Ok(())
    }

    /// Model builder for the bias sweep, substituting the swept dimension.
    pub fn model_at(&self, p: usize) -> Result<CovarianceModel<f64>, CliError> {
        let mut resized = self.model.clone();
        if resized.family == "explicit" {
            return Err(CliError::Config(
                "the bias sweep needs a parametric family (ar1, compound-symmetry, or banded1), \
                 not an explicit matrix"
                    .into(),
            ));
        }
        resized.p = Some(p);
        resized.build_real(Path::new("."))
    }

    pub fn distance_spec(
        &self,
        base: &Path,
    ) -> Result<(CovarianceModel<f64>, ScmDistanceSpec), CliError> {
        for (key, set) in
            [("p_values", self.p_values.is_some()), ("draws", self.draws.is_some())]
        {
            if set {
                return Err(CliError::Config(format!("`{key}` is a bias-mode key")));
            }
        }
        self.reject_model_dimension()?;
        let n = self
            .n
            .ok_or_else(|| CliError::Config("distance mode requires `n`".into()))?;
        let model = if self.model.family == "explicit" {
            self.model.build_real(base)?
        } else {
            let p = self
                .p
                .ok_or_else(|| CliError::Config("distance mode requires `p`".into()))?;
            let mut sized = self.model.clone();
            sized.p = Some(p);
            sized.build_real(base)?
        };
        let p = model.p();
        if let Some(requested) = self.p {
            if requested != p {
                return Err(CliError::Config(format!(
                    "`p` = {requested} but the explicit matrix has dimension {p}"
                )));
            }
        }
        Ok((model, ScmDistanceSpec { p, n, trials: self.trials, seed: self.seed }))
    }
}
