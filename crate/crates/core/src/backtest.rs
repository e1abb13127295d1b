//! Rolling-window experiment: fit a network in-sample, compute local
//! assortativity, solve every portfolio configuration and evaluate the
//! weights on the following out-of-sample block.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assortativity::{
    self, AssortativityResult, Measure, Modality, DEFAULT_QUADRATURE_POINTS,
};
use crate::error::{Error, Result};
use crate::marketdata::{
    discretize, log_returns, rolling_windows, PricePanel, ReturnPanel, StateScheme,
};
use crate::mtd::{fit_mtd, LambdaOptions};
use crate::network::{DirectedNetwork, NetworkDocument};
use crate::portfolio::{
    estimate_moments, markowitz_benchmark, optimize, MarketMoments, Objective, PenaltyForm,
    PenaltySpec, PortfolioSolution, SolveStatus, SolverOptions,
};

pub const TRADING_DAYS: f64 = 252.0;

/// Daily mean and standard deviation to annual figures.
pub fn annualize(daily_mean: f64, daily_std: f64) -> (f64, f64) {
    (TRADING_DAYS * daily_mean, TRADING_DAYS.sqrt() * daily_std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Utility,
    Sharpe,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Utility => "utility",
            ObjectiveKind::Sharpe => "sharpe",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "utility" => Ok(Self::Utility),
            "sharpe" => Ok(Self::Sharpe),
            _ => Err(Error::input(format!("unknown objective {s:?}"))),
        }
    }
}

/// Network the modality rows are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkSource {
    Mtd,
    Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub in_len: usize,
    pub out_len: usize,
    pub step: usize,
    pub measures: Vec<Measure>,
    pub modalities: Vec<Modality>,
    /// Adds the absolute-correlation network as an extra variant per measure.
    pub correlation_variant: bool,
    pub network_source: NetworkSource,
    pub forms: Vec<PenaltyForm>,
    pub objectives: Vec<ObjectiveKind>,
    pub delta: f64,
    pub gamma: f64,
    pub scale: f64,
    pub seed: u64,
    pub state_scheme: StateScheme,
    pub num_states: usize,
    pub smoothing: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub quadrature_points: usize,
    pub stdev_denominator: bool,
    pub exact: bool,
    /// Keep per-window networks in the JSON document.
    pub keep_networks: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            in_len: 90,
            out_len: 30,
            step: 30,
            measures: Measure::LOCAL.to_vec(),
            modalities: Modality::ALL.to_vec(),
            correlation_variant: true,
            network_source: NetworkSource::Mtd,
            forms: vec![PenaltyForm::Weighted, PenaltyForm::Simple],
            objectives: vec![ObjectiveKind::Utility, ObjectiveKind::Sharpe],
            delta: 1.0,
            gamma: 0.01,
            scale: 1.0,
            seed: 0,
            state_scheme: StateScheme::Sign,
            num_states: 3,
            smoothing: 1.0,
            max_iters: 5000,
            tol: 1e-7,
            restarts: 3,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            stdev_denominator: false,
            exact: false,
            keep_networks: true,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_len < 2 || self.out_len == 0 || self.step == 0 {
            return Err(Error::input(
                "in_len >= 2, out_len >= 1 and step >= 1 are required",
            ));
        }
        if self.measures.contains(&Measure::Global) {
            return Err(Error::input(
                "the global measure has no per-asset values to penalize",
            ));
        }
        if self.forms.contains(&PenaltyForm::None) {
            return Err(Error::input(
                "penalty form none is the benchmark and is always reported",
            ));
        }
        if self.objectives.is_empty() {
            return Err(Error::input("at least one objective is required"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::input("delta must be positive"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::input("gamma must be positive"));
        }
        if self.gamma > 1.0 {
            return Err(Error::Infeasible(format!(
                "lower bound gamma = {} exceeds the budget",
                self.gamma
            )));
        }
        if !(self.scale >= 0.0) {
            return Err(Error::input("scale must be nonnegative"));
        }
        if self.quadrature_points == 0 {
            return Err(Error::input("quadrature_points must be positive"));
        }
        Ok(())
    }

    fn objective(&self, kind: ObjectiveKind) -> Objective {
        match kind {
            ObjectiveKind::Utility => Objective::utility(self.delta),
            ObjectiveKind::Sharpe => Objective::Sharpe {
                stdev_denominator: self.stdev_denominator,
            },
        }
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            exact: self.exact,
            ..SolverOptions::default()
        }
    }

    fn lambda_options(&self) -> LambdaOptions {
        LambdaOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
        }
    }

    fn variants(&self) -> Vec<Variant> {
        let mut v = Vec::new();
        if self.correlation_variant {
            v.push(Variant::Correlation);
        }
        v.extend(self.modalities.iter().map(|&m| Variant::Modality(m)));
        v
    }

    /// Report order: per form and objective, the benchmark row followed by
    /// every measure and variant.
    pub fn keys(&self) -> Vec<ConfigKey> {
        let mut keys = Vec::new();
        for &form in &self.forms {
            for &objective in &self.objectives {
                keys.push(ConfigKey {
                    measure: None,
                    variant: Variant::Benchmark,
                    objective,
                    form,
                });
                for &measure in &self.measures {
                    for variant in self.variants() {
                        keys.push(ConfigKey {
                            measure: Some(measure),
                            variant,
                            objective,
                            form,
                        });
                    }
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Benchmark,
    Correlation,
    Modality(Modality),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Benchmark => f.write_str("benchmark"),
            Variant::Correlation => f.write_str("correlation"),
            Variant::Modality(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benchmark" => Ok(Variant::Benchmark),
            "correlation" => Ok(Variant::Correlation),
            other => other.parse().map(Variant::Modality),
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One portfolio configuration. `measure` is `None` for the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigKey {
    pub measure: Option<Measure>,
    pub variant: Variant,
    pub objective: ObjectiveKind,
    pub form: PenaltyForm,
}

impl ConfigKey {
    pub fn measure_name(&self) -> &'static str {
        self.measure.map_or("markowitz", Measure::name)
    }
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.measure_name(),
            self.variant,
            self.objective,
            self.form
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: usize,
    pub key: ConfigKey,
    pub solution: PortfolioSolution,
    /// The configuration's assortativity was unavailable and the benchmark was used.
    pub fallback: bool,
    pub oos_returns: Vec<f64>,
    pub is_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssortativityRecord {
    pub window: usize,
    pub measure: Measure,
    pub variant: Variant,
    pub rho_g: f64,
    pub rho_local: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub window: usize,
    pub offset: usize,
    pub lambda_converged: Vec<bool>,
    /// `measure/variant` pairs whose assortativity was degenerate.
    pub degenerate: Vec<String>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub measure: String,
    pub variant: String,
    pub objective: String,
    pub penalty_form: String,
    pub expected_return: f64,
    pub annual_volatility: f64,
    pub sharpe_ratio: f64,
    /// Mean achieved penalty of the chosen portfolios; absent for the benchmark.
    pub assortativity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub measure: Measure,
    pub variant: Variant,
    pub mean_rho_g: f64,
    pub prob_positive: f64,
    pub mean_positive: Option<f64>,
    pub mean_negative: Option<f64>,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackCount {
    pub key: ConfigKey,
    pub solved: usize,
    pub fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowNetwork {
    pub window: usize,
    pub network: NetworkDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub tickers: Vec<String>,
    pub num_windows: usize,
    pub out_of_sample: Vec<ReportRow>,
    pub in_sample: Vec<ReportRow>,
    pub assortativity_stats: Vec<StatsRow>,
    pub fallbacks: Vec<FallbackCount>,
    pub diagnostics: Vec<WindowDiagnostics>,
    pub assortativity: Vec<AssortativityRecord>,
    pub records: Vec<WindowRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub networks: Vec<WindowNetwork>,
}

struct WindowOutput {
    records: Vec<WindowRecord>,
    assortativity: Vec<AssortativityRecord>,
    diagnostics: WindowDiagnostics,
    network: Option<WindowNetwork>,
}

pub fn run_backtest(prices: &PricePanel, config: &BacktestConfig) -> Result<BacktestReport> {
    run_backtest_on_returns(&log_returns(prices)?, config)
}

/// Same as [`run_backtest`] on an already computed return panel; windows
/// count return rows.
pub fn run_backtest_on_returns(
    returns: &ReturnPanel,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    let windows = rolling_windows(
        returns.num_days(),
        config.in_len,
        config.out_len,
        config.step,
    )?;
    let keys = config.keys();
    let run = |(w, pair): (usize, &crate::marketdata::WindowPair)| {
        run_window(returns, config, &keys, w, pair)
    };

    #[cfg(feature = "parallel")]
    let outputs: Vec<WindowOutput> = {
        use rayon::prelude::*;
        windows.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outputs: Vec<WindowOutput> = windows.iter().enumerate().map(run).collect();

    let mut records = Vec::new();
    let mut assort = Vec::new();
    let mut diagnostics = Vec::new();
    let mut networks = Vec::new();
    for out in outputs {
        records.extend(out.records);
        assort.extend(out.assortativity);
        diagnostics.push(out.diagnostics);
        networks.extend(out.network);
    }

    let mut out_of_sample = Vec::with_capacity(keys.len());
    let mut in_sample = Vec::with_capacity(keys.len());
    let mut fallbacks = Vec::with_capacity(keys.len());
    for key in &keys {
        let recs: Vec<&WindowRecord> = records.iter().filter(|r| r.key == *key).collect();
        out_of_sample.push(report_row(key, &recs, |r| &r.oos_returns));
        in_sample.push(report_row(key, &recs, |r| &r.is_returns));
        let fallback = recs.iter().filter(|r| r.fallback).count();
        fallbacks.push(FallbackCount {
            key: *key,
            solved: recs.len() - fallback,
            fallback,
        });
    }

    let mut assortativity_stats = Vec::new();
    for &measure in &config.measures {
        for variant in config.variants() {
            let subset: Vec<&AssortativityRecord> = assort
                .iter()
                .filter(|a| a.measure == measure && a.variant == variant)
                .collect();
            if let Ok(row) = assortativity_statistics(&subset) {
                assortativity_stats.push(row);
            }
        }
    }

    Ok(BacktestReport {
        config: config.clone(),
        tickers: returns.tickers.clone(),
        num_windows: windows.len(),
        out_of_sample,
        in_sample,
        assortativity_stats,
        fallbacks,
        diagnostics,
        assortativity: assort,
        records,
        networks,
    })
}

fn run_window(
    returns: &ReturnPanel,
    config: &BacktestConfig,
    keys: &[ConfigKey],
    window: usize,
    pair: &crate::marketdata::WindowPair,
) -> WindowOutput {
    let in_panel = returns.slice(pair.in_sample.clone());
    let out_panel = returns.slice(pair.out_sample.clone());
    let mut diagnostics = WindowDiagnostics {
        window,
        offset: pair.offset,
        ..Default::default()
    };

    let networks = build_networks(&in_panel, config, &mut diagnostics);
    let network = match (&networks.primary, config.keep_networks) {
        (Some(net), true) => Some(WindowNetwork {
            window,
            network: net.to_document(),
        }),
        _ => None,
    };

    let mut assortativity = Vec::new();
    let mut rho: Vec<((Measure, Variant), Vec<f64>)> = Vec::new();
    for &measure in &config.measures {
        for variant in config.variants() {
            let (net, mode) = match variant {
                Variant::Correlation => (networks.correlation.as_ref(), Modality::OUT_OUT),
                Variant::Modality(m) => (networks.primary.as_ref(), m),
                Variant::Benchmark => unreachable!("benchmark has no assortativity"),
            };
            let Some(net) = net else { continue };
            match local(net, measure, mode, config.quadrature_points) {
                Ok(res) => {
                    assortativity.push(AssortativityRecord {
                        window,
                        measure,
                        variant,
                        rho_g: res.rho_g,
                        rho_local: res.rho_local.clone(),
                    });
                    rho.push(((measure, variant), res.rho_local));
                }
                Err(e) => {
                    if matches!(e, Error::DegenerateAssortativity { .. }) {
                        diagnostics.degenerate.push(format!("{measure}/{variant}"));
                    } else {
                        diagnostics.errors.push(format!("{measure}/{variant}: {e}"));
                    }
                }
            }
        }
    }

    let mut records = Vec::with_capacity(keys.len());
    let moments = match estimate_moments(&in_panel) {
        Ok(m) => m,
        Err(e) => {
            diagnostics.errors.push(format!("moments: {e}"));
            return WindowOutput {
                records,
                assortativity,
                diagnostics,
                network,
            };
        }
    };
    let opts = config.solver_options();
    let mut benchmarks: Vec<(ObjectiveKind, PortfolioSolution)> = Vec::new();
    for &kind in &config.objectives {
        match markowitz_benchmark(&moments, config.objective(kind), config.gamma, &opts) {
            Ok(sol) => benchmarks.push((kind, sol)),
            Err(e) => diagnostics.errors.push(format!("benchmark/{kind}: {e}")),
        }
    }

    for key in keys {
        let Some(bench) = benchmarks
            .iter()
            .find(|(k, _)| *k == key.objective)
            .map(|(_, s)| s)
        else {
            continue;
        };
        let (solution, fallback) = match key.measure {
            None => (bench.clone(), false),
            Some(measure) => {
                let found = rho
                    .iter()
                    .find(|(k, _)| *k == (measure, key.variant))
                    .map(|(_, r)| r);
                solve_penalized(&moments, config, key, found, bench, &opts, &mut diagnostics)
            }
        };
        records.push(WindowRecord {
            window,
            key: *key,
            oos_returns: portfolio_returns(&out_panel, &solution.x),
            is_returns: portfolio_returns(&in_panel, &solution.x),
            solution,
            fallback,
        });
    }
    WindowOutput {
        records,
        assortativity,
        diagnostics,
        network,
    }
}

fn solve_penalized(
    moments: &MarketMoments,
    config: &BacktestConfig,
    key: &ConfigKey,
    rho: Option<&Vec<f64>>,
    bench: &PortfolioSolution,
    opts: &SolverOptions,
    diagnostics: &mut WindowDiagnostics,
) -> (PortfolioSolution, bool) {
    let Some(rho) = rho else {
        return (bench.clone(), true);
    };
    let spec = PenaltySpec {
        rho: rho.clone(),
        form: key.form,
        scale: config.scale,
    };
    match optimize(
        moments,
        &spec,
        config.objective(key.objective),
        config.gamma,
        opts,
    ) {
        Ok(sol) => (sol, false),
        Err(e) => {
            diagnostics.errors.push(format!("{key}: {e}"));
            (bench.clone(), true)
        }
    }
}

struct WindowNetworks {
    primary: Option<DirectedNetwork>,
    correlation: Option<DirectedNetwork>,
}

fn build_networks(
    in_panel: &ReturnPanel,
    config: &BacktestConfig,
    diagnostics: &mut WindowDiagnostics,
) -> WindowNetworks {
    let needs_corr =
        config.correlation_variant || config.network_source == NetworkSource::Correlation;
    let correlation = if needs_corr {
        DirectedNetwork::from_correlation(in_panel)
            .map_err(|e| diagnostics.errors.push(format!("correlation network: {e}")))
            .ok()
    } else {
        None
    };
    let primary = match config.network_source {
        NetworkSource::Correlation => correlation.clone(),
        NetworkSource::Mtd if config.modalities.is_empty() => None,
        NetworkSource::Mtd => {
            let fitted =
                discretize(in_panel, config.state_scheme, config.num_states).and_then(|states| {
                    let (_, lambda) = fit_mtd(&states, config.smoothing, &config.lambda_options())?;
                    diagnostics.lambda_converged = lambda.converged.clone();
                    DirectedNetwork::from_lambda(in_panel.tickers.clone(), &lambda)
                });
            fitted
                .map_err(|e| diagnostics.errors.push(format!("mtd network: {e}")))
                .ok()
        }
    };
    WindowNetworks {
        primary,
        correlation,
    }
}

fn local(
    net: &DirectedNetwork,
    measure: Measure,
    mode: Modality,
    q: usize,
) -> Result<AssortativityResult> {
    match measure {
        Measure::Peel => assortativity::local_peel(net, mode, q),
        m => assortativity::assortativity(net, m, mode),
    }
}

/// Daily portfolio returns with weights held fixed over the block.
pub fn portfolio_returns(panel: &ReturnPanel, x: &[f64]) -> Vec<f64> {
    panel
        .returns
        .iter()
        .map(|row| row.iter().zip(x).map(|(r, w)| r * w).sum())
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn report_row(
    key: &ConfigKey,
    recs: &[&WindowRecord],
    series: impl Fn(&WindowRecord) -> &Vec<f64>,
) -> ReportRow {
    let daily: Vec<f64> = recs
        .iter()
        .flat_map(|r| series(r).iter().copied())
        .collect();
    let (mean, std) = mean_std(&daily);
    let (expected_return, annual_volatility) = annualize(mean, std);
    let sharpe_ratio = if annual_volatility > 0.0 {
        expected_return / annual_volatility
    } else {
        f64::NAN
    };
    let assortativity = key.measure.map(|_| {
        if recs.is_empty() {
            f64::NAN
        } else {
            recs.iter().map(|r| r.solution.penalty).sum::<f64>() / recs.len() as f64
        }
    });
    ReportRow {
        measure: key.measure_name().to_string(),
        variant: key.variant.to_string(),
        objective: key.objective.to_string(),
        penalty_form: key.form.to_string(),
        expected_return,
        annual_volatility,
        sharpe_ratio,
        assortativity,
    }
}

/// Averages over the rolling networks of one measure and variant.
pub fn assortativity_statistics(records: &[&AssortativityRecord]) -> Result<StatsRow> {
    let first = records
        .first()
        .ok_or_else(|| Error::input("no non-degenerate window to summarize"))?;
    let mean_rho_g = records.iter().map(|r| r.rho_g).sum::<f64>() / records.len() as f64;
    let locals: Vec<f64> = records
        .iter()
        .flat_map(|r| r.rho_local.iter().copied())
        .collect();
    let pos: Vec<f64> = locals.iter().copied().filter(|&v| v > 0.0).collect();
    let neg: Vec<f64> = locals.iter().copied().filter(|&v| v < 0.0).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(StatsRow {
        measure: first.measure,
        variant: first.variant,
        mean_rho_g,
        prob_positive: pos.len() as f64 / locals.len().max(1) as f64,
        mean_positive: mean(&pos),
        mean_negative: mean(&neg),
        windows: records.len(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn rows_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "measure",
        "variant",
        "objective",
        "penalty_form",
        "expected_return",
        "annual_volatility",
        "sharpe_ratio",
        "assortativity",
    ])?;
    for r in rows {
        w.write_record([
            r.measure.clone(),
            r.variant.clone(),
            r.objective.clone(),
            r.penalty_form.clone(),
            r.expected_return.to_string(),
            r.annual_volatility.to_string(),
            r.sharpe_ratio.to_string(),
            fmt_opt(r.assortativity),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::input(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::input(format!("csv encoding: {e}")))
}

impl BacktestReport {
    /// Out-of-sample table.
    pub fn to_csv(&self) -> Result<String> {
        rows_csv(&self.out_of_sample)
    }

    pub fn in_sample_csv(&self) -> Result<String> {
        rows_csv(&self.in_sample)
    }

    pub fn stats_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "measure",
            "variant",
            "mean_rho_g",
            "prob_positive",
            "mean_positive",
            "mean_negative",
            "windows",
        ])?;
        for s in &self.assortativity_stats {
            w.write_record([
                s.measure.to_string(),
                s.variant.to_string(),
                s.mean_rho_g.to_string(),
                s.prob_positive.to_string(),
                fmt_opt(s.mean_positive),
                fmt_opt(s.mean_negative),
                s.windows.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Mean weight per asset for one configuration across windows.
    pub fn mean_weights(&self, key: &ConfigKey) -> Vec<f64> {
        let recs: Vec<&WindowRecord> = self.records.iter().filter(|r| r.key == *key).collect();
        let n = self.tickers.len();
        let mut mean = vec![0.0; n];
        for r in &recs {
            mean.iter_mut()
                .zip(&r.solution.x)
                .for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= recs.len().max(1) as f64);
        mean
    }

    pub fn heuristic_solves(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.solution.status == SolveStatus::Heuristic)
            .count()
    }
}

/// Parses an emitted report table.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 8 {
            return Err(Error::input("report rows have 8 columns"));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::input(format!("bad number {:?}", &rec[i])))
        };
        rows.push(ReportRow {
            measure: rec[0].to_string(),
            variant: rec[1].to_string(),
            objective: rec[2].to_string(),
            penalty_form: rec[3].to_string(),
            expected_return: num(4)?,
            annual_volatility: num(5)?,
            sharpe_ratio: num(6)?,
            assortativity: if rec[7].is_empty() {
                None
            } else {
                Some(num(7)?)
            },
        });
    }
    Ok(rows)
}
