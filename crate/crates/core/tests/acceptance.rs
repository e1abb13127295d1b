//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Run with `cargo test -p mtdnet --test acceptance -- --nocapture`.

mod common;

use std::time::{Duration, Instant};

use mtdnet::assortativity::{
    global_assortativity, local_peel_alpha, local_piraveenan, local_sabek, personalized_pagerank,
    Modality,
};
use mtdnet::backtest::{annualize, run_backtest, BacktestConfig};
use mtdnet::marketdata::{
    discretize, log_returns, rolling_windows, synthetic_prices, StatePanel, StateScheme,
};
use mtdnet::mtd::{
    estimate_lambda, fit_mtd, mtd_simulate, LambdaMatrix, LambdaOptions, TransitionTensor,
};
use mtdnet::network::DirectedNetwork;
use mtdnet::portfolio::{
    brute_force_search, markowitz_benchmark, optimize, satisfies_constraints, SolverOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.map_or(true, |l| elapsed <= l);
    let pass = out.pass && in_time;
    let budget = limit
        .map(|l| format!(" / limit {:.0}s", l.as_secs_f64()))
        .unwrap_or_default();
    println!(
        "{} {name}: {} [{:.2}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------------------

fn simplex_suite() -> Outcome {
    let mut rng = common::rng(101);
    let mut worst_row: f64 = 0.0;
    let mut worst_col: f64 = 0.0;
    for k in 0..100 {
        let n = rng.gen_range(2..=10);
        let z = if rng.gen_bool(0.5) { 2 } else { 3 };
        let t = rng.gen_range(50..=500);
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1e-4 } else { 3e-5 }).collect())
            .collect();
        let prices = synthetic_prices(&vec![0.0; n], &sigma, t, 1000 + k).unwrap();
        let states = discretize(&log_returns(&prices).unwrap(), StateScheme::Quantile, z).unwrap();
        let (tensor, lambda) = fit_mtd(
            &states,
            1.0,
            &LambdaOptions {
                seed: k,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..n {
            for j in 0..n {
                for h in 0..z {
                    worst_row =
                        worst_row.max((tensor.row(i, j, h).iter().sum::<f64>() - 1.0).abs());
                }
            }
            let col = lambda.column(i);
            worst_col = worst_col.max((col.iter().sum::<f64>() - 1.0).abs());
            if col.iter().any(|&v| v < 0.0) {
                worst_col = f64::INFINITY;
            }
        }
    }
    outcome(
        worst_row <= 1e-12 && worst_col <= 1e-9,
        format!(
            "max |row sum - 1| = {worst_row:.1e}, max |lambda column sum - 1| = {worst_col:.1e}"
        ),
    )
}

/// Sharp transition matrices: mostly a permutation plus uniform noise.
fn known_tensor(n: usize, z: usize) -> TransitionTensor {
    let nested = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..z)
                        .map(|h| {
                            (0..z)
                                .map(|k| {
                                    if k == (h + i + 2 * j) % z {
                                        0.8
                                    } else {
                                        0.2 / (z - 1) as f64
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    TransitionTensor::from_matrices(nested).unwrap()
}

fn lambda_recovery() -> Outcome {
    let (n, z, t) = (3, 3, 5000);
    let cols = vec![
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.5, 0.3],
        vec![0.1, 0.25, 0.65],
    ];
    let truth = LambdaMatrix::from_columns(&cols).unwrap();
    let states = mtd_simulate(&known_tensor(n, z), &truth, t, 2024).unwrap();
    let (_, two) = fit_mtd(&states, 1.0, &LambdaOptions::default()).unwrap();
    let est = estimate_lambda(
        &states,
        &known_tensor(n, z),
        &LambdaOptions {
            restarts: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            err = err.max((est.lambda[i][j] - truth.lambda[i][j]).abs());
        }
    }

    // Series 2 copies series 1 with a one-step lag; series 1 and 3 are noise.
    let mut rng = common::rng(77);
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(t);
    for s in 0..t {
        let a = rng.gen_range(0..z);
        let b = if s == 0 {
            rng.gen_range(0..z)
        } else {
            rows[s - 1][0]
        };
        rows.push(vec![a, b, rng.gen_range(0..z)]);
    }
    let copy =
        StatePanel::from_states(vec!["S1".into(), "S2".into(), "S3".into()], rows, z).unwrap();
    let (_, lam) = fit_mtd(&copy, 1.0, &LambdaOptions::default()).unwrap();
    let l12 = lam.lambda[0][1];
    let two_step = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (two.lambda[i][j] - truth.lambda[i][j]).abs())
        .fold(0.0, f64::max);
    outcome(err <= 0.05 && l12 >= 0.99, format!(
            "max |lambda_hat - lambda| = {err:.4} given generating P ({two_step:.4} with count-estimated P), copy lambda_12 = {l12:.5}"
        ))
}

fn graph_suite() -> Vec<DirectedNetwork> {
    let mut rng = common::rng(303);
    let mut graphs = Vec::new();
    while graphs.len() < 100 {
        let n = rng.gen_range(3..=20);
        let p = rng.gen_range(0.2..0.7);
        let g = common::random_graph(&mut rng, n, p);
        if Modality::ALL
            .iter()
            .all(|&m| global_assortativity(&g, m).is_ok())
        {
            graphs.push(g);
        }
    }
    graphs
}

fn decomposition(graphs: &[DirectedNetwork]) -> Outcome {
    let mut worst: f64 = 0.0;
    for g in graphs {
        for m in Modality::ALL {
            let rho = global_assortativity(g, m).unwrap().rho_g;
            let p: f64 = local_piraveenan(g, m).unwrap().rho_local.iter().sum();
            let s: f64 = local_sabek(g, m).unwrap().rho_local.iter().sum();
            worst = worst.max((p - rho).abs()).max((s - rho).abs());
        }
    }
    outcome(
        worst <= 1e-9,
        format!("100 graphs x 4 modalities, max |sum local - global| = {worst:.1e}"),
    )
}

/// Weighted Pearson correlation, written directly from the definition.
fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for k in 0..x.len() {
        sxy += w[k] * (x[k] - mx) * (y[k] - my);
        sxx += w[k] * (x[k] - mx).powi(2);
        syy += w[k] * (y[k] - my).powi(2);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn global_oracle(graphs: &[DirectedNetwork]) -> Outcome {
    let mut worst: f64 = 0.0;
    for g in graphs {
        let n = g.num_nodes();
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| g.weight(i, j)).collect())
            .collect();
        let s_out: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
        let s_in: Vec<f64> = (0..n).map(|j| w.iter().map(|r| r[j]).sum()).collect();
        for m in Modality::ALL {
            let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for i in 0..n {
                for j in 0..n {
                    if w[i][j] <= 0.0 {
                        continue;
                    }
                    let src = match m.source {
                        mtdnet::network::Direction::Out => s_out[i] - w[i][j],
                        mtdnet::network::Direction::In => s_in[i] - w[j][i],
                    };
                    let dst = match m.target {
                        mtdnet::network::Direction::In => s_in[j] - w[i][j],
                        mtdnet::network::Direction::Out => s_out[j] - w[j][i],
                    };
                    xs.push(src);
                    ys.push(dst);
                    ws.push(w[i][j]);
                }
            }
            let oracle = weighted_pearson(&xs, &ys, &ws);
            let got = global_assortativity(g, m).unwrap().rho_g;
            worst = worst.max((oracle - got).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max |global - weighted Pearson oracle| = {worst:.1e}"),
    )
}

/// Dense solve of `(I - alpha T')pi = (1 - alpha) e_l` with dangling rows sent to `l`.
fn dense_pagerank(g: &DirectedNetwork, l: usize, alpha: f64) -> Vec<f64> {
    let n = g.num_nodes();
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let s: f64 = (0..n).map(|j| g.weight(i, j)).sum();
        if s > 0.0 {
            for j in 0..n {
                t[(i, j)] = g.weight(i, j) / s;
            }
        } else {
            t[(i, l)] = 1.0;
        }
    }
    let a = DMatrix::<f64>::identity(n, n) - t.transpose() * alpha;
    let mut b = DVector::<f64>::zeros(n);
    b[l] = 1.0 - alpha;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

fn pagerank() -> Outcome {
    let mut rng = common::rng(505);
    let mut worst: f64 = 0.0;
    let mut exact_zero = true;
    for _ in 0..20 {
        let n = rng.gen_range(2..=10);
        let g = common::random_graph(&mut rng, n, 0.35);
        for l in 0..n {
            for alpha in [0.1, 0.5, 0.9] {
                let pi = personalized_pagerank(&g, l, alpha, 1e-14, 100_000)
                    .unwrap()
                    .probs;
                let d = dense_pagerank(&g, l, alpha);
                worst = worst.max(pi.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum());
            }
            let pi0 = personalized_pagerank(&g, l, 0.0, 1e-15, 10).unwrap().probs;
            exact_zero &= pi0
                .iter()
                .enumerate()
                .all(|(i, &v)| v == if i == l { 1.0 } else { 0.0 });
        }
    }
    outcome(
        worst <= 1e-10 && exact_zero,
        format!("max L1 vs dense solve = {worst:.1e}, alpha=0 gives e_l exactly: {exact_zero}"),
    )
}

fn peel_anchor_invariance() -> Outcome {
    let mut rng = common::rng(606);
    let mut worst: f64 = 0.0;
    let mut graphs = 0;
    while graphs < 10 {
        let n = rng.gen_range(3..=12);
        let g = common::strongly_connected_graph(&mut rng, n, 0.3);
        if !Modality::ALL
            .iter()
            .all(|&m| global_assortativity(&g, m).is_ok())
        {
            continue;
        }
        graphs += 1;
        for m in Modality::ALL {
            let rho = local_peel_alpha(&g, m, 1.0).unwrap().rho_local;
            let (lo, hi) = rho
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            worst = worst.max(hi - lo);
        }
    }
    outcome(
        worst <= 1e-8,
        format!("10 strongly connected graphs, max spread across anchors = {worst:.1e}"),
    )
}

fn solver_oracle() -> Outcome {
    let opts = SolverOptions::default();
    let mut worst_gap: f64 = 0.0;
    let mut feasible = true;
    for k in 0..50 {
        let inst = common::oracle_instance(11, k);
        let bb = optimize(&inst.moments, &inst.spec, inst.objective, inst.gamma, &opts).unwrap();
        let bf =
            brute_force_search(&inst.moments, &inst.spec, inst.objective, inst.gamma, 50).unwrap();
        worst_gap = worst_gap.max((bb.objective - bf.objective).abs());
        feasible &= satisfies_constraints(&bb, inst.gamma, 1e-9)
            && satisfies_constraints(&bf, inst.gamma, 1e-9);
    }
    outcome(
        worst_gap <= 1e-6 && feasible,
        format!("50 instances, max |bnb - brute force| = {worst_gap:.1e}, constraints within 1e-9: {feasible}"),
    )
}

fn benchmark_coherence() -> Outcome {
    let opts = SolverOptions::default();
    let mut equal = 0;
    for k in 0..50 {
        let inst = common::oracle_instance(11, k);
        let zero = inst.spec.clone().with_scale(0.0);
        let a = optimize(&inst.moments, &zero, inst.objective, inst.gamma, &opts).unwrap();
        let b = markowitz_benchmark(&inst.moments, inst.objective, inst.gamma, &opts).unwrap();
        if a.x == b.x && a.y == b.y {
            equal += 1;
        }
    }
    outcome(
        equal == 50,
        format!("{equal}/50 instances with identical x and y at scale 0"),
    )
}

fn protocol_shape() -> Outcome {
    let n = 6;
    let sigma: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.5e-4 } else { 4e-5 }).collect())
        .collect();
    let mu: Vec<f64> = (0..n).map(|i| 0.0002 * i as f64).collect();
    let prices = synthetic_prices(&mu, &sigma, 5100, 9).unwrap();
    let windows = rolling_windows(5100, 90, 30, 30).unwrap().len();
    let cfg = BacktestConfig::default();
    let a = run_backtest(&prices, &cfg).unwrap();
    let b = run_backtest(&prices, &cfg).unwrap();
    let csv_a = a.to_csv().unwrap();
    let identical = csv_a == b.to_csv().unwrap() && a.to_json().unwrap() == b.to_json().unwrap();
    let header = csv_a.lines().next().unwrap_or_default();
    let schema = header == "measure,variant,objective,penalty_form,expected_return,annual_volatility,sharpe_ratio,assortativity";
    let expected_rows = cfg.forms.len()
        * cfg.objectives.len()
        * (1 + cfg.measures.len() * (cfg.modalities.len() + 1));
    let rows = csv_a.lines().count() - 1;
    let mut keys: Vec<String> = csv_a
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
        .collect();
    keys.sort();
    keys.dedup();
    let unique = keys.len() == rows;
    let benchmark_rows = csv_a
        .lines()
        .filter(|l| l.starts_with("markowitz,benchmark,"))
        .count();
    outcome(
        windows == 167 && a.num_windows == 167 && schema && rows == expected_rows && unique && benchmark_rows == 4 && identical,
        format!(
            "windows {} (expected 167), rows {rows} (expected {expected_rows}, unique keys {unique}, benchmark rows {benchmark_rows}), schema {schema}, byte-identical rerun {identical}",
            a.num_windows
        ),
    )
}

fn end_to_end() -> Outcome {
    let n = 5;
    let mut mu = vec![0.0; n];
    mu[0] = 0.01;
    let sigma: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i != j {
                        0.0
                    } else if i == 0 {
                        1e-4
                    } else {
                        4e-4
                    }
                })
                .collect()
        })
        .collect();
    let prices = synthetic_prices(&mu, &sigma, 1200, 1).unwrap();
    let cfg = BacktestConfig {
        scale: 0.005,
        ..Default::default()
    };
    let rep = run_backtest(&prices, &cfg).unwrap();
    let mut worst = (f64::INFINITY, String::new());
    for key in cfg.keys() {
        let w = rep.mean_weights(&key)[0];
        if w < worst.0 {
            worst = (w, key.to_string());
        }
    }

    // Annualization: undoing the scaling recovers the daily inputs to one ulp.
    let ulps = |a: f64, b: f64| (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs();
    let (r0, _) = annualize(0.0, 0.0);
    let (_, v) = annualize(0.0, 0.01);
    let mut round_trip = r0 == 0.0 && (v - 0.158_745_078_663_875_4).abs() < 1e-15;
    let mut rng = common::rng(808);
    for _ in 0..100_000 {
        let (m, s) = (rng.gen_range(-0.01..0.01), rng.gen_range(0.0..0.05));
        let (ar, av) = annualize(m, s);
        round_trip &= ulps(ar / 252.0, m) <= 1 && ulps(av / 252f64.sqrt(), s) <= 1;
    }
    for (m, s) in [(0.0004, 0.012), (0.001, 0.02), (-0.0003, 0.0075)] {
        let (ar, av) = annualize(m, s);
        round_trip &= ulps(ar / 252.0, m) <= 1 && ulps(av / 252f64.sqrt(), s) <= 1;
    }
    outcome(
        worst.0 >= 0.5 && round_trip,
        format!(
            "{} configurations over {} windows, lowest mean weight on the high-Sharpe asset {:.3} ({}), annualize round trip {round_trip}",
            cfg.keys().len(),
            rep.num_windows,
            worst.0,
            worst.1
        ),
    )
}

#[test]
fn acceptance() {
    let graphs = graph_suite();
    let results = [
        run(
            "simplex/stochasticity suite",
            Some(Duration::from_secs(60)),
            simplex_suite,
        ),
        run(
            "lambda recovery",
            Some(Duration::from_secs(30)),
            lambda_recovery,
        ),
        run(
            "assortativity decomposition",
            Some(Duration::from_secs(30)),
            || decomposition(&graphs),
        ),
        run("global assortativity oracle", None, || {
            global_oracle(&graphs)
        }),
        run("pagerank correctness", None, pagerank),
        run(
            "peel stationary anchor independence",
            None,
            peel_anchor_invariance,
        ),
        run(
            "solver oracle",
            Some(Duration::from_secs(300)),
            solver_oracle,
        ),
        run("benchmark coherence", None, benchmark_coherence),
        run("protocol shape", None, protocol_shape),
        run("end-to-end sanity", None, end_to_end),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
