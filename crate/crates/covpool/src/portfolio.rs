//! Global minimum variance portfolios and a sliding-window backtester.
//!
//! The portfolio layer turns a covariance estimate into weights (closed
//! form, or box-constrained through the projected solver), rolls a panel of
//! daily returns through estimate/hold cycles, and reports the realized
//! out-of-sample risk. Returns come in through a small CSV ingestor.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::linalg::neumaier_sum;
use crate::multitarget::{bartz_estimate, build_target, multitarget_pool, TargetKind, TargetSpec};
use crate::pooling::PoolingConfig;
use crate::qp::{solve_box_eq, QpProblem, SumConstraint};

/// Daily net returns for `p` assets over `T` days, with ordered date labels.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    dates: Vec<String>,
    returns: DMatrix<f64>,
    tickers: Vec<String>,
}

impl ReturnsPanel {
    pub fn new(dates: Vec<String>, returns: DMatrix<f64>, tickers: Vec<String>) -> Result<Self> {
        if dates.len() != returns.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} return rows",
                dates.len(),
                returns.nrows()
            )));
        }
        if tickers.len() != returns.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} tickers for {} return columns",
                tickers.len(),
                returns.ncols()
            )));
        }
        if returns.ncols() == 0 || returns.nrows() == 0 {
            return Err(Error::InsufficientData("empty returns panel".into()));
        }
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("returns contain non-finite values".into()));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput(format!(
                    "dates must be strictly increasing, got {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { dates, returns, tickers })
    }

    /// Wraps a bare return matrix with generated date and ticker labels.
    pub fn from_returns(returns: DMatrix<f64>) -> Result<Self> {
        let dates = (0..returns.nrows()).map(|i| format!("day{i:06}")).collect();
        let tickers = (0..returns.ncols()).map(|j| format!("A{j:04}")).collect();
        Self::new(dates, returns, tickers)
    }

    /// Number of days.
    pub fn num_days(&self) -> usize {
        self.returns.nrows()
    }

    /// Number of assets.
    pub fn p(&self) -> usize {
        self.returns.ncols()
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }
}

/// Minimum variance weights for a covariance matrix.
///
/// Unconstrained, the closed form is `w = S^{-1} 1 / (1' S^{-1} 1)`.
/// Constrained, the variance is minimized over `0 <= w_i <= max_weight`
/// with the weights summing to one. Either way the weights sum to one
/// exactly up to roundoff. A covariance without a Cholesky factor is
/// rejected; regularization is the estimator's job, not this function's.
pub fn gmvp_weights(
    cov: &DMatrix<f64>,
    constrained: bool,
    max_weight: f64,
) -> Result<DVector<f64>> {
    let p = cov.nrows();
    if !cov.is_square() || p == 0 {
        return Err(Error::DimensionMismatch("covariance must be square and nonempty".into()));
    }
    if constrained {
        if !(max_weight > 0.0) || !max_weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "max weight must be positive and finite, got {max_weight}"
            )));
        }
        if max_weight * (p as f64) < 1.0 {
            return Err(Error::Infeasible(format!(
                "max weight {max_weight} over {p} assets cannot reach a full allocation"
            )));
        }
        let problem = QpProblem::new(cov.clone(), DVector::zeros(p))
            .with_lower(DVector::zeros(p))
            .with_upper(DVector::from_element(p, max_weight))
            .with_sum(SumConstraint::EqualsOne);
        let sol = solve_box_eq(&problem)?;
        return Ok(sol.x);
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(
            "covariance estimate is not positive definite; cannot invert for weights".into(),
        )
    })?;
    let ones = DVector::from_element(p, 1.0);
    let solved = chol.solve(&ones);
    let total = solved.sum();
    if !total.is_finite() || total == 0.0 {
        return Err(Error::Numerical("degenerate weight normalization".into()));
    }
    Ok(solved / total)
}

/// Which covariance estimator the backtester runs per window.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    /// Sample covariance with an unconditional tiny ridge
    /// (`1e-8 tr(S)/p I`, or `1e-8 I` for an exactly zero SCM) so that the
    /// weights stay computable when the window is singular.
    SampleCovariance,
    /// Multi-target shrinkage by pooling: targets are rebuilt per window
    /// from the most recent `target_window` days.
    LinpoolMultiTarget {
        targets: Vec<TargetKind>,
        surrogate_samples: usize,
        target_window: usize,
    },
    /// The convex multi-target baseline on the same targets.
    Bartz { targets: Vec<TargetKind>, target_window: usize },
}

impl EstimatorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::SampleCovariance => "scm",
            Self::LinpoolMultiTarget { .. } => "linpool-mt",
            Self::Bartz { .. } => "bartz",
        }
    }

    fn target_window(&self) -> Option<usize> {
        match self {
            Self::SampleCovariance => None,
            Self::LinpoolMultiTarget { target_window, .. } | Self::Bartz { target_window, .. } => {
                Some(*target_window)
            }
        }
    }
}

/// Backtest parameters.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Estimation window length in days.
    pub window_length: usize,
    /// Days between re-estimations, and the holding span of each window.
    pub rebalance_period: usize,
    pub estimator: EstimatorSpec,
    pub constrained: bool,
    pub max_weight: f64,
    /// The reported annualized risk is the daily standard deviation times
    /// this; the customary square root of the trading-day count.
    pub annualization_factor: f64,
    /// Seed for the surrogate draws; each window gets its own stream.
    pub seed: u64,
    /// Pooling configuration for the multi-target estimator.
    pub pooling: PoolingConfig,
}

impl BacktestConfig {
    pub fn new(window_length: usize, estimator: EstimatorSpec) -> Self {
        Self {
            window_length,
            rebalance_period: 20,
            estimator,
            constrained: false,
            max_weight: 0.1,
            annualization_factor: 250f64.sqrt(),
            seed: 0,
            pooling: PoolingConfig::default(),
        }
    }

    fn validate(&self, panel: &ReturnsPanel) -> Result<()> {
        if self.window_length < 2 {
            return Err(Error::InvalidInput("window length must be at least 2".into()));
        }
        if self.rebalance_period == 0 {
            return Err(Error::InvalidInput("rebalance period must be positive".into()));
        }
        if !(self.annualization_factor > 0.0) || !self.annualization_factor.is_finite() {
            return Err(Error::InvalidInput("annualization factor must be positive".into()));
        }
        if let Some(tw) = self.estimator.target_window() {
            if tw < 2 || tw > self.window_length {
                return Err(Error::InvalidInput(format!(
                    "target window {tw} must be in [2, window length {}]",
                    self.window_length
                )));
            }
        }
        if panel.num_days() <= self.window_length + self.rebalance_period {
            return Err(Error::InsufficientData(format!(
                "panel has {} days; need more than window {} plus holding period {}",
                panel.num_days(),
                self.window_length,
                self.rebalance_period
            )));
        }
        if self.constrained && self.max_weight * (panel.p() as f64) < 1.0 {
            return Err(Error::Infeasible(format!(
                "max weight {} over {} assets cannot reach a full allocation",
                self.max_weight,
                panel.p()
            )));
        }
        Ok(())
    }
}

/// Diagnostics of one estimate/hold cycle.
#[derive(Debug, Clone)]
pub struct WindowDiagnostics {
    /// First row of the estimation window.
    pub estimation_start: usize,
    /// Holding span as `[start, end)` row indexes.
    pub hold_range: (usize, usize),
    pub min_weight: f64,
    pub max_weight: f64,
    pub weight_sum: f64,
}

/// Realized-risk report of one backtest run.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub estimator: String,
    pub window_length: usize,
    /// Standard deviation (denominator m-1) of the out-of-sample daily
    /// portfolio returns.
    pub realized_risk: f64,
    /// `realized_risk` times the annualization factor.
    pub annualized_risk: f64,
    pub num_windows: usize,
    /// All out-of-sample daily portfolio returns in date order.
    pub daily_returns: Vec<f64>,
    pub windows: Vec<WindowDiagnostics>,
}

impl BacktestReport {
    /// Single-row summary CSV.
    pub fn to_csv_string(&self) -> String {
        format!(
            "estimator,n,realized_risk,annualized_risk,num_windows\n{},{},{},{},{}\n",
            self.estimator,
            self.window_length,
            self.realized_risk,
            self.annualized_risk,
            self.num_windows
        )
    }

    /// Long-format CSV of the out-of-sample daily portfolio returns.
    pub fn daily_returns_csv(&self, dates: &[String]) -> String {
        let mut out = String::from("row,date,portfolio_return\n");
        for (i, r) in self.daily_returns.iter().enumerate() {
            let date = dates.get(i).map(String::as_str).unwrap_or("");
            out.push_str(&format!("{i},{date},{r}\n"));
        }
        out
    }
}

/// Sample standard deviation with denominator `m - 1`, accumulated with
/// compensated sums.
fn sample_std(values: &[f64]) -> Result<f64> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two out-of-sample returns, got {m}"
        )));
    }
    let mean = neumaier_sum(values.iter().copied()) / m as f64;
    let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    Ok((ss / (m as f64 - 1.0)).sqrt())
}

fn scm_with_ridge(window: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let data = Dataset::new(window.clone())?;
    let mut s = crate::estimators::sample_covariance(&data)?;
    let p = s.nrows();
    // An exactly constant window has a zero SCM; fall back to an absolute
    // ridge so the weights are still defined (any valid weights realize the
    // same zero out-of-sample variance there).
    let trace = s.diagonal().sum();
    let ridge = if trace > 0.0 { 1e-8 * trace / p as f64 } else { 1e-8 };
    for i in 0..p {
        s[(i, i)] += ridge;
    }
    Ok(s)
}

fn window_estimate(
    estimator: &EstimatorSpec,
    window: &DMatrix<f64>,
    pooling: &PoolingConfig,
    seed: u64,
    window_index: usize,
) -> Result<DMatrix<f64>> {
    match estimator {
        EstimatorSpec::SampleCovariance => scm_with_ridge(window),
        EstimatorSpec::LinpoolMultiTarget { targets, surrogate_samples, target_window } => {
            let n = window.nrows();
            let target_rows = window.rows(n - target_window, *target_window).into_owned();
            let target_data = Dataset::new(target_rows)?;
            let specs: Vec<TargetSpec> = targets
                .iter()
                .map(|kind| {
                    build_target(&target_data, &TargetSpec::new(kind.clone())).map(|t| {
                        TargetSpec::new(TargetKind::Explicit(t))
                            .with_samples(*surrogate_samples)
                    })
                })
                .collect::<Result<_>>()?;
            let data = Dataset::new(window.clone())?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(window_index as u64 + 1);
            let result = multitarget_pool(&data, &specs, pooling, &mut rng)?;
            Ok(result.estimate)
        }
        EstimatorSpec::Bartz { targets, target_window } => {
            let n = window.nrows();
            let target_rows = window.rows(n - target_window, *target_window).into_owned();
            let target_data = Dataset::new(target_rows)?;
            let built: Vec<DMatrix<f64>> = targets
                .iter()
                .map(|kind| build_target(&target_data, &TargetSpec::new(kind.clone())))
                .collect::<Result<_>>()?;
            let data = Dataset::new(window.clone())?;
            Ok(bartz_estimate(&data, &built)?.estimate)
        }
    }
}

/// Rolls the panel through estimate/hold cycles and reports realized risk.
///
/// Window `w` estimates from rows `[t - n, t)` and holds its weights over
/// rows `[t, t + rebalance)`, with `t` starting at `n` and stepping by the
/// rebalance period; the last holding span is truncated at the end of the
/// panel. The report's realized risk is the sample standard deviation of
/// all held daily returns, in date order.
pub fn backtest(panel: &ReturnsPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate(panel)?;
    let estimator = config.estimator.clone();
    let pooling = config.pooling;
    let seed = config.seed;
    backtest_with(panel, config, estimator.label(), move |window, index| {
        window_estimate(&estimator, window, &pooling, seed, index)
    })
}

/// The backtest engine with a caller-supplied estimator: any function from
/// the estimation window (rows by assets) and the window index to a
/// positive definite matrix plugs in here.
pub fn backtest_with<F>(
    panel: &ReturnsPanel,
    config: &BacktestConfig,
    label: &str,
    mut estimate: F,
) -> Result<BacktestReport>
where
    F: FnMut(&DMatrix<f64>, usize) -> Result<DMatrix<f64>>,
{
    config.validate(panel)?;
    let n = config.window_length;
    let hold = config.rebalance_period;
    let total = panel.num_days();

    let mut daily = Vec::new();
    let mut windows = Vec::new();
    let mut t = n;
    let mut index = 0usize;
    while t < total {
        let window = panel.returns.rows(t - n, n).into_owned();
        let cov = estimate(&window, index)?;
        if cov.nrows() != panel.p() || cov.ncols() != panel.p() {
            return Err(Error::DimensionMismatch(format!(
                "estimator returned a {}x{} matrix for {} assets",
                cov.nrows(),
                cov.ncols(),
                panel.p()
            )));
        }
        let w = gmvp_weights(&cov, config.constrained, config.max_weight)?;
        let end = (t + hold).min(total);
        for row in t..end {
            daily.push(panel.returns.row(row).transpose().dot(&w));
        }
        windows.push(WindowDiagnostics {
            estimation_start: t - n,
            hold_range: (t, end),
            min_weight: w.min(),
            max_weight: w.max(),
            weight_sum: w.sum(),
        });
        t += hold;
        index += 1;
    }

    let realized = sample_std(&daily)?;
    Ok(BacktestReport {
        estimator: label.to_string(),
        window_length: n,
        realized_risk: realized,
        annualized_risk: realized * config.annualization_factor,
        num_windows: windows.len(),
        daily_returns: daily,
        windows,
    })
}

/// What the ingestor produced and what it had to discard.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub panel: ReturnsPanel,
    /// Price rows dropped for missing, non-positive, or non-numeric cells.
    pub dropped_rows: usize,
    /// Dates of the dropped rows.
    pub dropped_dates: Vec<String>,
}

fn parse_iso_date(s: &str) -> Option<(i32, u32, u32)> {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let year: i32 = s[0..4].parse().ok()?;
    let month: u32 = s[5..7].parse().ok()?;
    let day: u32 = s[8..10].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    Some((year, month, day))
}

/// Reads dividend-adjusted closing prices from a CSV with header
/// `date,TICKER1,...,TICKERp` and ISO dates, and converts them to daily net
/// returns `p_t / p_{t-1} - 1`.
///
/// A row with any missing, non-numeric, non-finite, or non-positive price
/// is dropped whole; returns are then taken between surviving consecutive
/// rows, so a dropped day yields one gap-spanning return instead of two.
/// The report carries the drop count for the caller to log.
pub fn ingest_prices(path: &std::path::Path) -> Result<IngestReport> {
    let io_err = |reason: String| Error::Io { path: path.display().to_string(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(e.to_string()))?;

    let headers = reader.headers().map_err(|e| io_err(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(io_err("header must be date,TICKER1,...".into()));
    }
    if !headers.get(0).is_some_and(|h| h.eq_ignore_ascii_case("date")) {
        return Err(io_err(format!(
            "first header column must be 'date', got {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let p = tickers.len();

    let mut kept_dates: Vec<String> = Vec::new();
    let mut kept_keys: Vec<(i32, u32, u32)> = Vec::new();
    let mut kept_prices: Vec<Vec<f64>> = Vec::new();
    let mut dropped_dates = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(e.to_string()))?;
        if record.len() != p + 1 {
            return Err(io_err(format!(
                "row {} has {} fields, expected {}",
                i + 2,
                record.len(),
                p + 1
            )));
        }
        let date = record.get(0).unwrap_or("").to_string();
        let key = parse_iso_date(&date)
            .ok_or_else(|| io_err(format!("row {}: bad ISO date {date:?}", i + 2)))?;
        if let Some(last) = kept_keys.last() {
            if key <= *last {
                return Err(Error::InvalidInput(format!(
                    "dates must be strictly increasing; {date} does not follow {}",
                    kept_dates.last().unwrap()
                )));
            }
        }
        let mut row = Vec::with_capacity(p);
        let mut ok = true;
        for cell in record.iter().skip(1) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            kept_dates.push(date);
            kept_keys.push(key);
            kept_prices.push(row);
        } else {
            dropped_dates.push(date);
        }
    }

    if kept_prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable price rows after dropping {}; need at least 2",
            kept_prices.len(),
            dropped_dates.len()
        )));
    }

    let t = kept_prices.len() - 1;
    let mut returns = DMatrix::zeros(t, p);
    for i in 0..t {
        for j in 0..p {
            returns[(i, j)] = kept_prices[i + 1][j] / kept_prices[i][j] - 1.0;
        }
    }
    let panel = ReturnsPanel::new(kept_dates[1..].to_vec(), returns, tickers)?;
    Ok(IngestReport { panel, dropped_rows: dropped_dates.len(), dropped_dates })
}

/// Synthetic heavy-tailed single-factor return panel for demos and tests:
/// market betas around one, idiosyncratic noise, multivariate t tails.
pub fn synthetic_panel(p: usize, days: usize, seed: u64) -> Result<ReturnsPanel> {
    use crate::models::{CovarianceModel, DistributionFamily, EllipticalLaw};
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let market_vol = 0.01f64;
    let resid_vol = 0.012f64;
    let beta = DVector::from_fn(p, |_, _| {
        use rand::Rng;
        0.5 + rng.random_range(0.0..1.0)
    });
    let mut cov = &beta * beta.transpose() * (market_vol * market_vol);
    for i in 0..p {
        cov[(i, i)] += resid_vol * resid_vol;
    }
    let law = EllipticalLaw::centered(
        DistributionFamily::StudentT { nu: 5.0 },
        CovarianceModel::Explicit { matrix: cov },
    )?;
    let draws = law.sample(days, &mut rng)?;
    ReturnsPanel::from_returns(draws.observations().clone())
}
