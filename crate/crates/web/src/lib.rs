//! Browser bindings: simulate and fit an MTD network, score its assortativity,
//! and solve a penalized portfolio. Everything crosses the boundary as JSON.

use mtdnet::assortativity::{self, local_peel, Measure, Modality, DEFAULT_QUADRATURE_POINTS};
use mtdnet::mtd::{fit_mtd, mtd_simulate, LambdaMatrix, LambdaOptions, TransitionTensor};
use mtdnet::network::{DirectedNetwork, NetworkDocument};
use mtdnet::portfolio::{PortfolioInstance, SolverOptions};
use mtdnet::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Market {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub tickers: Vec<String>,
    pub true_lambda: Vec<Vec<f64>>,
    pub fitted_lambda: Vec<Vec<f64>>,
    pub network: NetworkDocument,
    pub market: Market,
}

#[derive(Debug, Serialize)]
pub struct Scores {
    pub tickers: Vec<String>,
    pub measure: Measure,
    pub modality: Modality,
    pub rho_g: f64,
    pub rho_local: Vec<f64>,
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Rows put `sharpness` on one random state and spread the rest evenly.
fn random_tensor(
    rng: &mut ChaCha8Rng,
    n: usize,
    z: usize,
    sharpness: f64,
) -> Result<TransitionTensor> {
    let rest = (1.0 - sharpness) / (z - 1) as f64;
    let nested = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    (0..z)
                        .map(|_| {
                            let peak = rng.gen_range(0..z);
                            (0..z)
                                .map(|k| if k == peak { sharpness } else { rest })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    TransitionTensor::from_matrices(nested)
}

fn random_market(rng: &mut ChaCha8Rng, n: usize) -> Market {
    let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let idio: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.05)).collect();
    let sigma = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| 0.02 * beta[i] * beta[j] + if i == j { idio[i] } else { 0.0 })
                .collect()
        })
        .collect();
    Market {
        mu: (0..n).map(|_| rng.gen_range(0.02..0.12)).collect(),
        sigma,
    }
}

/// Simulates `len` steps of a random `n`-series MTD chain, refits it and
/// returns both mixing matrices, the fitted network and a toy market.
pub fn simulate(n: usize, z: usize, len: usize, sharpness: f64, seed: u64) -> Result<Simulation> {
    if !(2..=20).contains(&n) || !(2..=5).contains(&z) || len < 10 {
        return Err(Error::Input(
            "need 2 <= n <= 20, 2 <= z <= 5 and len >= 10".into(),
        ));
    }
    if !(sharpness > 1.0 / z as f64 && sharpness < 1.0) {
        return Err(Error::Input("sharpness must lie in (1/z, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensor = random_tensor(&mut rng, n, z, sharpness)?;
    let cols: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, n)).collect();
    let truth = LambdaMatrix::from_columns(&cols)?;
    let states = mtd_simulate(&tensor, &truth, len, rng.gen())?;
    let opts = LambdaOptions {
        seed,
        ..LambdaOptions::default()
    };
    let (_, fitted) = fit_mtd(&states, 1.0, &opts)?;
    let net = DirectedNetwork::from_lambda(states.tickers.clone(), &fitted)?;
    Ok(Simulation {
        tickers: states.tickers,
        true_lambda: truth.lambda,
        fitted_lambda: fitted.lambda,
        network: net.to_document(),
        market: random_market(&mut rng, n),
    })
}

pub fn score(network_json: &str, measure: &str, modality: &str) -> Result<Scores> {
    let doc: NetworkDocument = serde_json::from_str(network_json)?;
    let net = DirectedNetwork::from_document(doc)?;
    let measure: Measure = measure.parse()?;
    let modality: Modality = modality.parse()?;
    let res = match measure {
        Measure::Peel => local_peel(&net, modality, DEFAULT_QUADRATURE_POINTS)?,
        m => assortativity::assortativity(&net, m, modality)?,
    };
    Ok(Scores {
        tickers: net.tickers().to_vec(),
        measure,
        modality,
        rho_g: res.rho_g,
        rho_local: res.rho_local,
    })
}

pub fn solve(instance_json: &str) -> Result<String> {
    let inst: PortfolioInstance = serde_json::from_str(instance_json)?;
    let sol = inst.solve(false, &SolverOptions::default())?;
    Ok(serde_json::to_string(&sol)?)
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateNetwork)]
pub fn simulate_network(
    n: usize,
    z: usize,
    len: usize,
    sharpness: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(simulate(n, z, len, sharpness, u64::from(seed)))
}

#[wasm_bindgen(js_name = assortativity)]
pub fn assortativity_scores(
    network_json: &str,
    measure: &str,
    modality: &str,
) -> std::result::Result<String, JsValue> {
    js(score(network_json, measure, modality))
}

#[wasm_bindgen(js_name = optimizePortfolio)]
pub fn optimize_portfolio(instance_json: &str) -> std::result::Result<String, JsValue> {
    solve(instance_json).map_err(|e| JsValue::from_str(&e.to_string()))
}
