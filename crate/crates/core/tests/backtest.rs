use mtdnet::assortativity::{Measure, Modality};
use mtdnet::backtest::{parse_report_csv, run_backtest, BacktestConfig, ObjectiveKind, Variant};
use mtdnet::marketdata::{synthetic_prices, PricePanel};

fn diag(v: &[f64]) -> Vec<Vec<f64>> {
    (0..v.len())
        .map(|i| {
            (0..v.len())
                .map(|j| if i == j { v[i] } else { 0.0 })
                .collect()
        })
        .collect()
}

fn market(days: usize, seed: u64) -> PricePanel {
    synthetic_prices(
        &[0.0005, 0.0003, 0.0, 0.0002],
        &diag(&[1e-4, 2e-4, 1.5e-4, 3e-4]),
        days,
        seed,
    )
    .unwrap()
}

fn small_config() -> BacktestConfig {
    BacktestConfig {
        measures: vec![Measure::Piraveenan, Measure::Sabek],
        modalities: vec![Modality::IN_OUT, Modality::OUT_OUT],
        ..Default::default()
    }
}

#[test]
fn one_hundred_fifty_days_give_two_windows() {
    let rep = run_backtest(&market(150, 1), &small_config()).unwrap();
    assert_eq!(rep.num_windows, 2);
    for f in &rep.fallbacks {
        assert_eq!(f.solved + f.fallback, 2, "{}", f.key);
    }
    for key in small_config().keys() {
        let recs: Vec<_> = rep.records.iter().filter(|r| r.key == key).collect();
        assert_eq!(recs.len(), 2);
        assert!(recs
            .iter()
            .all(|r| r.oos_returns.len() == 30 && r.is_returns.len() == 90));
    }
}

#[test]
fn zero_scale_matches_benchmark_rows() {
    let cfg = BacktestConfig {
        scale: 0.0,
        ..small_config()
    };
    let rep = run_backtest(&market(300, 2), &cfg).unwrap();
    for row in &rep.out_of_sample {
        let bench = rep
            .out_of_sample
            .iter()
            .find(|b| {
                b.variant == "benchmark"
                    && b.objective == row.objective
                    && b.penalty_form == row.penalty_form
            })
            .unwrap();
        assert_eq!(row.expected_return, bench.expected_return);
        assert_eq!(row.annual_volatility, bench.annual_volatility);
    }
}

#[test]
fn utility_volatility_tracks_generator() {
    let var = [1e-4, 2e-4, 1.5e-4, 3e-4];
    let prices = market(1500, 3);
    let cfg = BacktestConfig {
        objectives: vec![ObjectiveKind::Utility],
        measures: vec![],
        modalities: vec![],
        correlation_variant: false,
        ..Default::default()
    };
    let rep = run_backtest(&prices, &cfg).unwrap();
    let key = cfg.keys()[0];
    assert_eq!(key.variant, Variant::Benchmark);
    // Analytic volatility of each window's weights under the generating covariance.
    let recs: Vec<_> = rep.records.iter().filter(|r| r.key == key).collect();
    let mean_var = recs
        .iter()
        .map(|r| {
            r.solution
                .x
                .iter()
                .zip(&var)
                .map(|(x, v)| x * x * v)
                .sum::<f64>()
        })
        .sum::<f64>()
        / recs.len() as f64;
    let analytic = (252.0 * mean_var).sqrt();
    let realized = rep.out_of_sample[0].annual_volatility;
    assert!(
        (realized / analytic - 1.0).abs() < 0.2,
        "{realized} vs {analytic}"
    );
}

#[test]
fn reruns_are_byte_identical() {
    let prices = market(240, 4);
    let a = run_backtest(&prices, &small_config()).unwrap();
    let b = run_backtest(&prices, &small_config()).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn report_csv_round_trips() {
    let rep = run_backtest(&market(200, 5), &small_config()).unwrap();
    let text = rep.to_csv().unwrap();
    let rows = parse_report_csv(&text).unwrap();
    assert_eq!(rows.len(), rep.out_of_sample.len());
    for (a, b) in rows.iter().zip(&rep.out_of_sample) {
        assert_eq!(a.expected_return.to_bits(), b.expected_return.to_bits());
        assert_eq!(a.sharpe_ratio.to_bits(), b.sharpe_ratio.to_bits());
        assert_eq!(
            a.assortativity.map(f64::to_bits),
            b.assortativity.map(f64::to_bits)
        );
    }
    let back = mtdnet::backtest::BacktestReport::from_json(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back.to_csv().unwrap(), text);
}

#[test]
fn utility_only_has_no_sharpe_rows() {
    let cfg = BacktestConfig {
        objectives: vec![ObjectiveKind::Utility],
        ..small_config()
    };
    let rep = run_backtest(&market(150, 6), &cfg).unwrap();
    assert!(rep.out_of_sample.iter().all(|r| r.objective == "utility"));
    let stats = rep.stats_csv().unwrap();
    assert!(stats.starts_with("measure,variant,mean_rho_g,prob_positive"));
}

#[test]
fn sharpe_equals_ratio_of_reported_columns() {
    let rep = run_backtest(&market(200, 7), &small_config()).unwrap();
    for r in &rep.out_of_sample {
        assert!(r.annual_volatility > 0.0);
        assert_eq!(r.sharpe_ratio, r.expected_return / r.annual_volatility);
    }
}
