#![allow(dead_code)]

use mtdnet::network::DirectedNetwork;
use mtdnet::portfolio::{MarketMoments, Objective, PenaltyForm, PenaltySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random weighted digraph with edge probability `p`, no self loops.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> DirectedNetwork {
    let mut w = vec![vec![0.0; n]; n];
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j && rng.gen::<f64>() < p {
                *v = rng.gen_range(0.05..1.0);
            }
        }
    }
    let tickers = (0..n).map(|i| format!("N{i}")).collect();
    DirectedNetwork::from_weights(tickers, w).unwrap()
}

/// Strongly connected: a directed ring plus random chords.
pub fn strongly_connected_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> DirectedNetwork {
    let mut w = vec![vec![0.0; n]; n];
    for (i, row) in w.iter_mut().enumerate() {
        row[(i + 1) % n] = rng.gen_range(0.05..1.0);
        for (j, v) in row.iter_mut().enumerate() {
            if i != j && *v == 0.0 && rng.gen::<f64>() < p {
                *v = rng.gen_range(0.05..1.0);
            }
        }
    }
    let tickers = (0..n).map(|i| format!("N{i}")).collect();
    DirectedNetwork::from_weights(tickers, w).unwrap()
}

pub struct OracleInstance {
    pub moments: MarketMoments,
    pub spec: PenaltySpec,
    pub objective: Objective,
    pub gamma: f64,
}

/// Instance `k` of the solver oracle suite; cycles through objectives,
/// penalty forms and lower bounds so every combination appears.
pub fn oracle_instance(seed: u64, k: usize) -> OracleInstance {
    let mut rng = rng(seed.wrapping_add(k as u64));
    let n = rng.gen_range(2..=8);
    let gammas = [0.01, 0.1, 0.3];
    let gamma = gammas[k % 3];
    let form = if (k / 3) % 2 == 0 {
        PenaltyForm::Weighted
    } else {
        PenaltyForm::Simple
    };
    let objective = if (k / 6) % 2 == 0 {
        Objective::utility(rng.gen_range(1.0..6.0))
    } else {
        Objective::sharpe()
    };
    let factors = 2;
    let load: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..factors).map(|_| rng.gen_range(-0.2..0.2)).collect())
        .collect();
    let sigma: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let common: f64 = (0..factors).map(|f| load[i][f] * load[j][f]).sum();
                    common + if i == j { rng_diag(seed, k, i) } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.02..0.12)).collect();
    let rho: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let scale = match objective {
        Objective::Utility { .. } => 0.1,
        Objective::Sharpe { .. } => 0.5,
    };
    OracleInstance {
        moments: MarketMoments::new(mu, sigma).unwrap(),
        spec: PenaltySpec { rho, form, scale },
        objective,
        gamma,
    }
}

fn rng_diag(seed: u64, k: usize, i: usize) -> f64 {
    let mut r = rng(seed ^ 0x9e37_79b9 ^ ((k as u64) << 8) ^ i as u64);
    r.gen_range(0.005..0.05)
}
