use mtdnet::assortativity::{global_assortativity, local_piraveenan, local_sabek, Modality};
use mtdnet::marketdata::StatePanel;
use mtdnet::mtd::{fit_mtd, LambdaOptions};
use mtdnet::network::DirectedNetwork;
use mtdnet::portfolio::{
    optimize, satisfies_constraints, MarketMoments, Objective, PenaltyForm, PenaltySpec,
    SolverOptions,
};
use mtdnet::Error;
use proptest::prelude::*;

fn graph() -> impl Strategy<Value = DirectedNetwork> {
    (3usize..9).prop_flat_map(|n| {
        prop::collection::vec(prop::option::weighted(0.5, 0.05f64..1.0), n * n).prop_map(
            move |cells| {
                let w: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                if i == j {
                                    0.0
                                } else {
                                    cells[i * n + j].unwrap_or(0.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                DirectedNetwork::from_weights((0..n).map(|i| format!("N{i}")).collect(), w).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_measures_decompose_global(net in graph(), m in 0usize..4) {
        let mode = Modality::ALL[m];
        match global_assortativity(&net, mode) {
            Ok(g) => {
                prop_assert!(g.rho_g.abs() <= 1.0 + 1e-12);
                let p: f64 = local_piraveenan(&net, mode).unwrap().rho_local.iter().sum();
                let s: f64 = local_sabek(&net, mode).unwrap().rho_local.iter().sum();
                prop_assert!((p - g.rho_g).abs() < 1e-9);
                prop_assert!((s - g.rho_g).abs() < 1e-9);
            }
            Err(e) => {
                let degenerate = matches!(e, Error::DegenerateAssortativity { .. });
                prop_assert!(degenerate);
            }
        }
    }

    #[test]
    fn fitted_mtd_is_stochastic(
        n in 1usize..4,
        z in 2usize..4,
        raw in prop::collection::vec(0usize..16, 60..120),
    ) {
        let t = raw.len() / n;
        prop_assume!(t >= 2);
        let states: Vec<Vec<usize>> = (0..t).map(|r| (0..n).map(|i| raw[r * n + i] % z).collect()).collect();
        let panel = StatePanel::from_states((0..n).map(|i| format!("S{i}")).collect(), states, z).unwrap();
        let (tensor, lambda) = fit_mtd(&panel, 1.0, &LambdaOptions { restarts: 1, ..Default::default() }).unwrap();
        for i in 0..n {
            for j in 0..n {
                for h in 0..z {
                    let row: f64 = tensor.row(i, j, h).iter().sum();
                    prop_assert!((row - 1.0).abs() < 1e-12);
                }
            }
        }
        for j in 0..n {
            let col = lambda.column(j);
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(col.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn solutions_are_feasible(
        mu in prop::collection::vec(-0.05f64..0.1, 2..6),
        vols in prop::collection::vec(0.05f64..0.3, 6),
        rho in prop::collection::vec(-0.5f64..0.5, 6),
        gamma in prop::sample::select(vec![0.01, 0.1, 0.3, 0.5]),
        simple in any::<bool>(),
        sharpe in any::<bool>(),
    ) {
        let n = mu.len();
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { vols[i] * vols[i] } else { 0.3 * vols[i] * vols[j] }).collect())
            .collect();
        let m = MarketMoments::new(mu, sigma).unwrap();
        let spec = PenaltySpec { rho: rho[..n].to_vec(), form: if simple { PenaltyForm::Simple } else { PenaltyForm::Weighted }, scale: 0.1 };
        let obj = if sharpe { Objective::sharpe() } else { Objective::utility(2.0) };
        let sol = optimize(&m, &spec, obj, gamma, &SolverOptions::default()).unwrap();
        prop_assert!(satisfies_constraints(&sol, gamma, 1e-9), "{:?}", sol);
        prop_assert!(sol.support_size() <= (1.0 / gamma + 1e-9).floor() as usize);
    }
}
