//! Command-line front end for pooled covariance estimation.
//!
//! Five subcommands cover the workflows the library supports: `simulate`
//! runs Monte Carlo NMSE studies, `pool` combines sample covariances across
//! data files, `shrink` runs single-class multi-target shrinkage, `backtest`
//! rolls a minimum-variance portfolio over a daily price panel, and
//! `sscm-diag` measures the sign covariance shape asymptotics.
//!
//! Every command is deterministic given its inputs, config, and seed. Exit
//! codes distinguish what went wrong: 2 for configuration problems, 3 for
//! data problems, 4 for numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covpool::estimators::{ClassCollection, Dataset};
use covpool::multitarget::{bartz_estimate, build_target, multitarget_pool};
use covpool::pooling::{pool, CoefficientSet, PoolResult};
use covpool::portfolio::{backtest, ingest_prices};
use covpool::simulator::{run_nmse, run_sscm_bias, run_sscm_scm_distance, NmseReport};
use covpool::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

mod config;
mod matio;

use config::{
    base_dir, load, BacktestCmdConfig, DiagConfig, DiagMode, FieldKind, PoolCmdConfig,
    ShrinkConfig, ShrinkMethod, SimulateConfig,
};

/// Errors the CLI reports, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or command-line usage: exit code 2.
    Config(String),
    /// Unreadable or malformed input data: exit code 3.
    Data(String),
    /// The computation itself failed: exit code 4.
    Numerical(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Numerical(m) => m,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    /// Maps library errors onto exit-code groups.
    pub fn lift(err: covpool::Error) -> Self {
        use covpool::Error as E;
        let text = err.to_string();
        match err {
            E::InvalidModel(_) | E::InvalidInput(_) | E::UnsupportedClosedForm(_) => {
                Self::Config(text)
            }
            E::Io { .. } | E::DimensionMismatch(_) | E::InsufficientData(_) => Self::Data(text),
            E::NotPositiveDefinite(_) | E::Infeasible(_) | E::Numerical(_) => {
                Self::Numerical(text)
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "covpool",
    version,
    about = "Pooled covariance estimation: simulation, pooling, shrinkage, backtesting",
    propagate_version = true
)]
struct Cli {
    /// Cap the number of worker threads the Monte Carlo runners may use.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo NMSE study described by a config file.
    Simulate {
        /// TOML experiment description.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Write the wide NMSE table here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Also write the long-format table here.
        #[arg(long, value_name = "FILE")]
        long: Option<PathBuf>,
    },
    /// Pool the sample covariances of several observation files.
    Pool {
        /// Optional TOML config (variant and identity-weight knobs).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Observation CSVs, one per class; rows are observations. Complex
        /// data uses paired `name_re,name_im` columns.
        #[arg(long = "data", value_name = "FILE", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Directory the pooled estimates and the coefficient report go to.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Shrink one class's sample covariance toward data-driven targets.
    Shrink {
        /// TOML shrinkage description (targets, method, seed).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Observation CSV; rows are observations.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Write the estimate here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write the weight report here.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Backtest a minimum-variance portfolio over a daily price panel.
    Backtest {
        /// TOML backtest description.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Price CSV: a date column followed by one column per asset.
        #[arg(long, value_name = "FILE")]
        prices: PathBuf,
        /// Write the risk report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write the out-of-sample daily portfolio returns here.
        #[arg(long, value_name = "FILE")]
        daily: Option<PathBuf>,
    },
    /// Sign covariance shape diagnostics (bias sweep or distance check).
    SscmDiag {
        /// TOML diagnostic description.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Write the result table here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("warning: could not resize the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, out, long } => {
            run_simulate(&config, out.as_deref(), long.as_deref())
        }
        Command::Pool { config, data, out_dir } => run_pool(config.as_deref(), &data, &out_dir),
        Command::Shrink { config, data, out, report } => {
            run_shrink(&config, &data, out.as_deref(), report.as_deref())
        }
        Command::Backtest { config, prices, out, daily } => {
            run_backtest(&config, &prices, out.as_deref(), daily.as_deref())
        }
        Command::SscmDiag { config, out } => run_diag(&config, out.as_deref()),
    }
}

/// Writes `text` to `out`, or to stdout when no path was given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => matio::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_simulate(
    config_path: &Path,
    out: Option<&Path>,
    long: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: SimulateConfig = load(config_path)?;
    let base = base_dir(config_path);
    let report: NmseReport = match cfg.field {
        FieldKind::Real => run_nmse(&cfg.to_real_spec(&base)?).map_err(CliError::lift)?,
        FieldKind::Complex => run_nmse(&cfg.to_complex_spec(&base)?).map_err(CliError::lift)?,
    };
    if !report.aborted.is_empty() {
        let (first_trial, cause) = &report.aborted[0];
        eprintln!(
            "warning: {} of {} trials aborted (first: trial {first_trial}: {cause})",
            report.aborted.len(),
            report.trials_requested
        );
    }
    emit(out, &report.to_table_csv())?;
    if let Some(path) = long {
        matio::write_text(path, &report.to_long_csv())?;
    }
    Ok(())
}

/// Reads every class file, insisting on one field and one dimension.
fn read_classes(paths: &[PathBuf]) -> Result<Vec<matio::MatrixData>, CliError> {
    let mats: Vec<matio::MatrixData> =
        paths.iter().map(|p| matio::read_matrix(p)).collect::<Result<_, _>>()?;
    for (path, m) in paths.iter().zip(&mats).skip(1) {
        let (first, first_path) = (&mats[0], &paths[0]);
        if m.field_name() != first.field_name() {
            return Err(CliError::Data(format!(
                "{} holds {} data but {} holds {} data",
                first_path.display(),
                first.field_name(),
                path.display(),
                m.field_name()
            )));
        }
        if m.ncols() != first.ncols() {
            return Err(CliError::Data(format!(
                "{} has dimension {} but {} has dimension {}",
                first_path.display(),
                first.ncols(),
                path.display(),
                m.ncols()
            )));
        }
    }
    Ok(mats)
}

fn pool_classes<T: Scalar>(
    matrices: Vec<DMatrix<T>>,
    cfg: &PoolCmdConfig,
) -> Result<PoolResult<T>, CliError> {
    let datasets: Vec<Dataset<T>> = matrices
        .into_iter()
        .map(|m| {
            if cfg.known_zero_mean {
                let p = m.ncols();
                Dataset::with_known_mean(m, DVector::zeros(p))
            } else {
                Dataset::new(m)
            }
        })
        .collect::<covpool::Result<_>>()
        .map_err(CliError::lift)?;
    let collection = ClassCollection::new(datasets).map_err(CliError::lift)?;
    pool(&collection, &cfg.pooling_config()?).map_err(CliError::lift)
}

/// Long-format coefficient report: one row per (target, source) pair.
fn coefficients_csv(coef: &CoefficientSet, class_paths: &[PathBuf]) -> String {
    let mut labels: Vec<String> =
        (1..=class_paths.len()).map(|k| format!("class_{k}")).collect();
    if coef.includes_identity() {
        labels.push("identity".to_string());
    }
    let mut out = String::from("target,source,weight,used_fallback,damped\n");
    for k in 0..coef.num_targets() {
        let w = coef.target_weights(k);
        for (s, label) in labels.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k + 1,
                label,
                w[s],
                coef.used_fallback(k),
                coef.damped(k)
            ));
        }
    }
    out
}

fn run_pool(config: Option<&Path>, data: &[PathBuf], out_dir: &Path) -> Result<(), CliError> {
    let cfg: PoolCmdConfig = match config {
        Some(path) => load(path)?,
        None => PoolCmdConfig::default(),
    };
    let mats = read_classes(data)?;
    if !out_dir.is_dir() {
        return Err(CliError::Data(format!(
            "output directory {} does not exist",
            out_dir.display()
        )));
    }

    let first_field = mats[0].field_name();
    let (estimate_texts, coef): (Vec<String>, CoefficientSet) = match &mats[0] {
        matio::MatrixData::Real(_) => {
            let matrices = mats
                .into_iter()
                .map(|m| match m {
                    matio::MatrixData::Real(m) => m,
                    matio::MatrixData::Complex(_) => unreachable!("fields checked above"),
                })
                .collect();
            let result = pool_classes(matrices, &cfg)?;
            (result.estimates.iter().map(matio::real_matrix_csv).collect(), result.coefficients)
        }
        matio::MatrixData::Complex(_) => {
            let matrices = mats.into_iter().map(matio::MatrixData::into_complex).collect();
            let result = pool_classes(matrices, &cfg)?;
            (
                result.estimates.iter().map(matio::complex_matrix_csv).collect(),
                result.coefficients,
            )
        }
    };

    for (k, text) in estimate_texts.iter().enumerate() {
        matio::write_text(&out_dir.join(format!("pooled_class_{}.csv", k + 1)), text)?;
    }
    let coef_path = out_dir.join("coefficients.csv");
    matio::write_text(&coef_path, &coefficients_csv(&coef, data))?;

    println!(
        "pooled {} {} class(es) into {}",
        coef.num_targets(),
        first_field,
        out_dir.display()
    );
    for k in 0..coef.num_targets() {
        let w = coef.target_weights(k);
        let rendered: Vec<String> = w.iter().map(|v| format!("{v:.6}")).collect();
        println!("class {}: weights [{}]", k + 1, rendered.join(", "));
    }
    Ok(())
}

fn run_shrink(
    config_path: &Path,
    data_path: &Path,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: ShrinkConfig = load(config_path)?;
    let base = base_dir(config_path);
    let specs = cfg.target_specs(&base)?;
    let m = matio::read_real_matrix(data_path)?;
    let data = Dataset::new(m).map_err(CliError::lift)?;

    let (estimate, labels, weights): (DMatrix<f64>, Vec<String>, Vec<f64>) = match cfg.method {
        ShrinkMethod::LinpoolMt => {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            let result = multitarget_pool(&data, &specs, &cfg.pooling_config()?, &mut rng)
                .map_err(CliError::lift)?;
            let labels = cfg.weight_labels(result.includes_identity);
            let weights = result.weights.iter().copied().collect();
            (result.estimate, labels, weights)
        }
        ShrinkMethod::Bartz => {
            let built: Vec<DMatrix<f64>> = specs
                .iter()
                .map(|spec| build_target(&data, spec))
                .collect::<covpool::Result<_>>()
                .map_err(CliError::lift)?;
            let result = bartz_estimate(&data, &built).map_err(CliError::lift)?;
            let mut labels = vec!["scm".to_string()];
            let mut weights = vec![result.scm_weight];
            for (i, t) in cfg.target.iter().enumerate() {
                labels.push(format!("target_{}_{}", i + 1, t.kind));
                weights.push(result.weights[i]);
            }
            (result.estimate, labels, weights)
        }
    };

    if let Some(path) = report {
        let mut text = String::from("source,weight\n");
        for (label, w) in labels.iter().zip(&weights) {
            text.push_str(&format!("{label},{w}\n"));
        }
        matio::write_text(path, &text)?;
    }
    if out.is_some() {
        for (label, w) in labels.iter().zip(&weights) {
            println!("{label}: {w:.6}");
        }
    }
    emit(out, &matio::real_matrix_csv(&estimate))
}

fn run_backtest(
    config_path: &Path,
    prices: &Path,
    out: Option<&Path>,
    daily: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: BacktestCmdConfig = load(config_path)?;
    let base = base_dir(config_path);
    let bt_config = cfg.to_backtest_config(&base)?;

    let ingest = ingest_prices(prices).map_err(CliError::lift)?;
    if ingest.dropped_rows > 0 {
        let shown: Vec<&str> =
            ingest.dropped_dates.iter().take(3).map(String::as_str).collect();
        eprintln!(
            "warning: dropped {} price row(s) with missing or invalid cells (first: {})",
            ingest.dropped_rows,
            shown.join(", ")
        );
    }

    let report = backtest(&ingest.panel, &bt_config).map_err(CliError::lift)?;
    emit(out, &report.to_csv_string())?;
    if let Some(path) = daily {
        let dates = &ingest.panel.dates()[bt_config.window_length..];
        matio::write_text(path, &report.daily_returns_csv(dates))?;
    }
    Ok(())
}

fn run_diag(config_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg: DiagConfig = load(config_path)?;
    let base = base_dir(config_path);
    match cfg.mode {
        DiagMode::Bias => {
            let spec = cfg.bias_spec()?;
            // Build every swept model up front so bad configs fail as
            // config errors before any sampling runs.
            let models: Vec<covpool::models::CovarianceModel<f64>> = spec
                .p_values
                .iter()
                .map(|&p| cfg.model_at(p))
                .collect::<Result<_, _>>()?;
            let points = run_sscm_bias(
                |p| {
                    models.iter().find(|m| m.p() == p).cloned().ok_or_else(|| {
                        covpool::Error::InvalidInput(format!("no model prepared for p = {p}"))
                    })
                },
                &spec,
            )
            .map_err(CliError::lift)?;
            let mut text = String::from("p,n,relative_bias\n");
            for point in points {
                text.push_str(&format!("{},{},{}\n", point.p, point.n, point.relative_bias));
            }
            emit(out, &text)
        }
        DiagMode::Distance => {
            let (model, spec) = cfg.distance_spec(&base)?;
            let value = run_sscm_scm_distance(&model, &spec).map_err(CliError::lift)?;
            let text = format!(
                "p,n,trials,mean_relative_distance_sq\n{},{},{},{}\n",
                spec.p, spec.n, spec.trials, value
            );
            emit(out, &text)
        }
    }
}
