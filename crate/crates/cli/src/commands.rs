use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use mtdnet::assortativity::{
    self, local_peel, results_to_csv, AssortativityResult, Measure, Modality,
};
use mtdnet::backtest::{run_backtest, BacktestConfig, BacktestReport, NetworkSource};
use mtdnet::marketdata::{discretize, load_prices_with_min_assets, log_returns, ReturnPanel};
use mtdnet::mtd::{fit_mtd, LambdaOptions, MtdModel};
use mtdnet::network::{DirectedNetwork, NetworkDocument};
use mtdnet::plot::{edge_points, node_points, profile, profiles_to_csv, PlotProfile};
use mtdnet::portfolio::{PortfolioInstance, SolverOptions};
use mtdnet::{Error, Result};
use serde_json::Value;

use crate::config::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    NodeProfile,
    EdgeProfile,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes `contents` under `dir`, creating it, and reports the path on stdout.
fn emit(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn lambda_options(cfg: &BacktestConfig) -> LambdaOptions {
    LambdaOptions {
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        restarts: cfg.restarts,
        seed: cfg.seed,
    }
}

fn load_returns(prices: &Path, min_assets: usize) -> Result<ReturnPanel> {
    log_returns(&load_prices_with_min_assets(prices, min_assets)?)
}

fn fit_model(returns: &ReturnPanel, cfg: &BacktestConfig) -> Result<MtdModel> {
    let states = discretize(returns, cfg.state_scheme, cfg.num_states)?;
    let (tensor, lambda) = fit_mtd(&states, cfg.smoothing, &lambda_options(cfg))?;
    if lambda.converged.iter().any(|c| !c) {
        warn!("some lambda columns hit the iteration cap; best iterates kept");
    }
    Ok(MtdModel::new(
        returns.tickers.clone(),
        &tensor,
        &lambda,
        cfg.smoothing,
    ))
}

pub fn estimate(s: &Settings, prices: &Path, out: &Path) -> Result<()> {
    let model = fit_model(&load_returns(prices, 1)?, &s.backtest)?;
    emit(out, "model.json", &(model.to_json()? + "\n"))?;
    Ok(())
}

fn network_from_prices(prices: &Path, cfg: &BacktestConfig) -> Result<DirectedNetwork> {
    let returns = load_returns(prices, 2)?;
    match cfg.network_source {
        NetworkSource::Mtd => {
            let model = fit_model(&returns, cfg)?;
            DirectedNetwork::from_lambda(model.tickers.clone(), &model.lambda_matrix())
        }
        NetworkSource::Correlation => DirectedNetwork::from_correlation(&returns),
    }
}

enum Artifact {
    Network(DirectedNetwork),
    Report(Box<BacktestReport>),
}

/// Reads an edge-list CSV, a network JSON, a fitted-model JSON or a backtest report JSON.
fn load_artifact(path: &Path) -> Result<Artifact> {
    let text = read(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return Ok(Artifact::Network(DirectedNetwork::from_edge_csv(
            text.as_bytes(),
            None,
        )?));
    }
    let value: Value = serde_json::from_str(&text)?;
    if value.get("records").is_some() {
        return Ok(Artifact::Report(Box::new(serde_json::from_value(value)?)));
    }
    if value.get("weights").is_some() {
        let doc: NetworkDocument = serde_json::from_value(value)?;
        return Ok(Artifact::Network(DirectedNetwork::from_document(doc)?));
    }
    if value.get("lambda").is_some() {
        let model: MtdModel = serde_json::from_value(value)?;
        let net = DirectedNetwork::from_lambda(model.tickers.clone(), &model.lambda_matrix())?;
        return Ok(Artifact::Network(net));
    }
    Err(Error::Input(format!(
        "{}: expected a network, model or backtest report document",
        path.display()
    )))
}

fn load_network(path: &Path) -> Result<DirectedNetwork> {
    match load_artifact(path)? {
        Artifact::Network(net) => Ok(net),
        Artifact::Report(_) => Err(Error::Input(format!(
            "{}: a backtest report holds many networks; pass a single network or model",
            path.display()
        ))),
    }
}

pub fn network(
    s: &Settings,
    prices: Option<&Path>,
    model: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let net = match (prices, model) {
        (_, Some(m)) => load_network(m)?,
        (Some(p), None) => network_from_prices(p, &s.backtest)?,
        (None, None) => return Err(Error::Input("pass --prices or --model".into())),
    };
    emit(out, "network.json", &(net.to_json()? + "\n"))?;
    emit(out, "network_edges.csv", &net.to_edge_csv()?)?;
    Ok(())
}

fn parse_all<T: Copy + std::str::FromStr<Err = Error>>(raw: &str, all: &[T]) -> Result<Vec<T>> {
    if raw.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    raw.split(',').map(|p| p.trim().parse()).collect()
}

fn compute(
    net: &DirectedNetwork,
    measure: Measure,
    mode: Modality,
    q: usize,
) -> Result<AssortativityResult> {
    match measure {
        Measure::Peel => local_peel(net, mode, q),
        m => assortativity::assortativity(net, m, mode),
    }
}

pub fn assort(s: &Settings, input: &Path, measure: &str, modality: &str, out: &Path) -> Result<()> {
    let net = load_network(input)?;
    let measures = parse_all(measure, &Measure::ALL)?;
    let modes = parse_all(modality, &Modality::ALL)?;
    let mut results = Vec::with_capacity(measures.len() * modes.len());
    for &m in &measures {
        for &mode in &modes {
            results.push(compute(&net, m, mode, s.backtest.quadrature_points)?);
        }
    }
    emit(
        out,
        "assortativity.csv",
        &results_to_csv(net.tickers(), &results)?,
    )?;
    Ok(())
}

pub fn optimize(s: &Settings, instance: &Path, out: &Path) -> Result<()> {
    let inst: PortfolioInstance = serde_json::from_str(&read(instance)?)?;
    let opts = SolverOptions {
        exact: s.backtest.exact,
        ..SolverOptions::default()
    };
    let sol = inst.solve(s.backtest.stdev_denominator, &opts)?;
    emit(
        out,
        "solution.json",
        &(serde_json::to_string_pretty(&sol)? + "\n"),
    )?;
    Ok(())
}

pub fn backtest(s: &Settings, prices: &Path, out: &Path) -> Result<()> {
    let panel = load_prices_with_min_assets(prices, 2)?;
    let report = run_backtest(&panel, &s.backtest)?;
    emit(out, "report.csv", &report.to_csv()?)?;
    emit(out, "report_in_sample.csv", &report.in_sample_csv()?)?;
    emit(out, "assortativity_stats.csv", &report.stats_csv()?)?;
    emit(out, "report.json", &(report.to_json()? + "\n"))?;
    Ok(())
}

fn points(
    net: &DirectedNetwork,
    kind: PlotKind,
    measure: Measure,
    mode: Modality,
) -> Result<Vec<(f64, f64)>> {
    match kind {
        PlotKind::NodeProfile => node_points(net, measure, mode),
        PlotKind::EdgeProfile => edge_points(net, mode),
    }
}

/// Pools points over every network; degenerate networks are skipped when pooling.
fn pooled(
    nets: &[DirectedNetwork],
    kind: PlotKind,
    measure: Measure,
    mode: Modality,
) -> Result<Vec<(f64, f64)>> {
    if let [net] = nets {
        return points(net, kind, measure, mode);
    }
    let mut all = Vec::new();
    let mut skipped = 0;
    for net in nets {
        match points(net, kind, measure, mode) {
            Ok(p) => all.extend(p),
            Err(e) if e.exit_code() == 3 => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        warn!(
            "{measure}/{mode}: skipped {skipped} of {} networks as degenerate",
            nets.len()
        );
    }
    Ok(all)
}

pub struct PlotRequest<'a> {
    pub input: &'a Path,
    pub kind: PlotKind,
    pub measure: &'a str,
    pub modality: &'a str,
    pub market: &'a str,
}

pub fn plotdata(s: &Settings, req: &PlotRequest<'_>, out: &Path) -> Result<()> {
    let nets = match load_artifact(req.input)? {
        Artifact::Network(net) => vec![net],
        Artifact::Report(report) => report
            .networks
            .into_iter()
            .map(|w| DirectedNetwork::from_document(w.network))
            .collect::<Result<Vec<_>>>()?,
    };
    if nets.is_empty() {
        return Err(Error::Input(
            "the backtest report holds no networks (rerun with keep_networks = true)".into(),
        ));
    }
    let measures = match req.kind {
        PlotKind::NodeProfile => parse_all(req.measure, &Measure::LOCAL)?,
        // Edge assortativity is the per-edge term of the Sabek decomposition.
        PlotKind::EdgeProfile => vec![Measure::Sabek],
    };
    if measures.contains(&Measure::Global) {
        return Err(Error::Input("node profiles need a local measure".into()));
    }
    let modes = parse_all(req.modality, &Modality::ALL)?;
    let mut profiles: Vec<PlotProfile> = Vec::new();
    for &m in &measures {
        for &mode in &modes {
            let pts = pooled(&nets, req.kind, m, mode)?;
            profiles.push(profile(
                &pts,
                m.name(),
                mode,
                req.market,
                s.span,
                s.grid_points,
            )?);
        }
    }
    let name = match req.kind {
        PlotKind::NodeProfile => "node_profile.csv",
        PlotKind::EdgeProfile => "edge_profile.csv",
    };
    emit(out, name, &profiles_to_csv(&profiles)?)?;
    Ok(())
}
