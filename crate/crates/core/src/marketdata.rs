//! Price panels, log returns, state discretization and rolling windows.
//!
//! All panels are stored row-major: `values[t][i]` is asset `i` on day `t`.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub prices: Vec<Vec<f64>>,
    /// Rows discarded while loading because of a missing or non-positive price.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub states: Vec<Vec<usize>>,
    pub num_states: usize,
    pub scheme: Discretization,
}

/// Requested discretization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateScheme {
    /// Negative / zero / positive, three states.
    Sign,
    /// Equal-mass bins from each asset's empirical quantiles.
    Quantile,
}

/// Fitted discretization, able to map further returns onto the same states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Discretization {
    Sign,
    /// `edges[i]` holds the `z - 1` upper bin edges of asset `i`; a return
    /// lands in the number of edges it strictly exceeds.
    Quantile {
        num_states: usize,
        edges: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPair {
    pub offset: usize,
    pub in_sample: Range<usize>,
    pub out_sample: Range<usize>,
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::input("date and price row counts differ"));
        }
        if prices.iter().any(|row| row.len() != tickers.len()) {
            return Err(Error::input("price row width does not match ticker count"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("dates must be strictly increasing"));
        }
        if prices
            .iter()
            .flatten()
            .any(|p| !(p.is_finite() && *p > 0.0))
        {
            return Err(Error::input("prices must be finite and strictly positive"));
        }
        Ok(Self {
            dates,
            tickers,
            prices,
            dropped_rows: 0,
        })
    }

    pub fn num_days(&self) -> usize {
        self.prices.len()
    }

    pub fn num_assets(&self) -> usize {
        self.tickers.len()
    }
}

impl ReturnPanel {
    pub fn num_days(&self) -> usize {
        self.returns.len()
    }

    pub fn num_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.returns.iter().map(|row| row[i]).collect()
    }

    pub fn slice(&self, rows: Range<usize>) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[rows.clone()].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns[rows].to_vec(),
        }
    }
}

impl StatePanel {
    pub fn num_days(&self) -> usize {
        self.states.len()
    }

    pub fn num_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Builds a panel directly from label rows, mostly for simulation and tests.
    pub fn from_states(
        tickers: Vec<String>,
        states: Vec<Vec<usize>>,
        num_states: usize,
    ) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::input("state space needs at least 2 states"));
        }
        if states.iter().any(|row| row.len() != tickers.len()) {
            return Err(Error::input("state row width does not match ticker count"));
        }
        if states.iter().flatten().any(|&s| s >= num_states) {
            return Err(Error::input("state label outside the state space"));
        }
        let dates = synthetic_dates(states.len());
        Ok(Self {
            dates,
            tickers,
            states,
            num_states,
            scheme: Discretization::Sign,
        })
    }
}

/// Consecutive calendar dates starting 2000-01-03, used for generated panels.
pub fn synthetic_dates(len: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    start.iter_days().take(len).collect()
}

/// Prices driven by i.i.d. Gaussian log returns with mean `mu` and covariance
/// `sigma`, starting at 100. Returns `days` rows of returns (`days + 1` prices).
pub fn synthetic_prices(
    mu: &[f64],
    sigma: &[Vec<f64>],
    days: usize,
    seed: u64,
) -> Result<PricePanel> {
    let n = mu.len();
    if n == 0 || sigma.len() != n || sigma.iter().any(|r| r.len() != n) {
        return Err(Error::input("mu and sigma dimensions differ"));
    }
    let chol = nalgebra::Cholesky::new(nalgebra::DMatrix::from_fn(n, n, |i, j| sigma[i][j]))
        .ok_or_else(|| Error::input("sigma must be positive definite"))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prices = Vec::with_capacity(days + 1);
    let mut last = vec![100.0; n];
    prices.push(last.clone());
    for _ in 0..days {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            let shock: f64 = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
            last[i] *= (mu[i] + shock).exp();
        }
        prices.push(last.clone());
    }
    let tickers = (0..n).map(|i| format!("A{}", i + 1)).collect();
    PricePanel::new(synthetic_dates(days + 1), tickers, prices)
}

pub fn load_prices(path: impl AsRef<Path>) -> Result<PricePanel> {
    load_prices_with_min_assets(path, 2)
}

pub fn load_prices_with_min_assets(
    path: impl AsRef<Path>,
    min_assets: usize,
) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    read_prices(file, min_assets)
}

fn parse_cell(cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || ["na", "nan", "null"].contains(&cell.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    let value: f64 = cell
        .parse()
        .map_err(|_| Error::input(format!("cannot parse price {cell:?}")))?;
    Ok(Some(value))
}

/// Parses `date,TICKER1,TICKER2,...` CSV. Rows with a missing or non-positive
/// price are dropped and counted in `dropped_rows`.
pub fn read_prices<R: Read>(reader: R, min_assets: usize) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::input("empty header"));
    }
    let tickers: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_owned())
        .collect();
    if tickers.len() < min_assets.max(1) {
        return Err(Error::input(format!(
            "need at least {} asset column(s), found {}",
            min_assets.max(1),
            tickers.len()
        )));
    }

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let date_str = record.get(0).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|_| Error::input(format!("bad date {date_str:?}, expected YYYY-MM-DD")))?;
        let mut row = Vec::with_capacity(tickers.len());
        let mut keep = true;
        for cell in record.iter().skip(1) {
            match parse_cell(cell)? {
                Some(p) if p.is_finite() && p > 0.0 => row.push(p),
                _ => keep = false,
            }
        }
        if keep {
            dates.push(date);
            prices.push(row);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing or non-positive prices");
    }
    if prices.len() < 2 {
        return Err(Error::input(format!(
            "need at least 2 complete rows, found {}",
            prices.len()
        )));
    }
    let mut panel = PricePanel::new(dates, tickers, prices)?;
    panel.dropped_rows = dropped;
    Ok(panel)
}

pub fn log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    if panel.num_days() < 2 {
        return Err(Error::input("log returns need at least 2 price rows"));
    }
    let returns = panel
        .prices
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(p, prev)| (p / prev).ln())
                .collect()
        })
        .collect();
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
    })
}

/// Fits the scheme on `panel` and maps it onto states.
pub fn discretize(
    panel: &ReturnPanel,
    scheme: StateScheme,
    num_states: usize,
) -> Result<StatePanel> {
    let fitted = match scheme {
        StateScheme::Sign => Discretization::Sign,
        StateScheme::Quantile => fit_quantile(panel, num_states)?,
    };
    Ok(fitted.apply(panel))
}

fn fit_quantile(panel: &ReturnPanel, z: usize) -> Result<Discretization> {
    if z < 2 {
        return Err(Error::input("quantile scheme needs at least 2 states"));
    }
    let t = panel.num_days();
    if t < z {
        return Err(Error::input(format!(
            "{t} observations cannot fill {z} quantile bins"
        )));
    }
    let mut edges = Vec::with_capacity(panel.num_assets());
    for (i, ticker) in panel.tickers.iter().enumerate() {
        let mut col = panel.column(i);
        col.sort_by(f64::total_cmp);
        if col[0] == col[t - 1] {
            return Err(Error::DegenerateAsset {
                ticker: ticker.clone(),
            });
        }
        // Upper edge of bin k is the order statistic at rank ceil(k T / z).
        let e: Vec<f64> = (1..z).map(|k| col[(k * t).div_ceil(z) - 1]).collect();
        if e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input(format!(
                "asset {ticker} has too few distinct returns for {z} quantile bins"
            )));
        }
        edges.push(e);
    }
    Ok(Discretization::Quantile {
        num_states: z,
        edges,
    })
}

impl Discretization {
    pub fn num_states(&self) -> usize {
        match self {
            Discretization::Sign => 3,
            Discretization::Quantile { num_states, .. } => *num_states,
        }
    }

    pub fn state_of(&self, asset: usize, r: f64) -> usize {
        match self {
            Discretization::Sign => {
                if r < 0.0 {
                    0
                } else if r == 0.0 {
                    1
                } else {
                    2
                }
            }
            Discretization::Quantile { edges, .. } => {
                edges[asset].iter().filter(|&&e| r > e).count()
            }
        }
    }

    pub fn apply(&self, panel: &ReturnPanel) -> StatePanel {
        let states = panel
            .returns
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, &r)| self.state_of(i, r))
                    .collect()
            })
            .collect();
        StatePanel {
            dates: panel.dates.clone(),
            tickers: panel.tickers.clone(),
            states,
            num_states: self.num_states(),
            scheme: self.clone(),
        }
    }
}

pub fn rolling_windows(
    total: usize,
    in_len: usize,
    out_len: usize,
    step: usize,
) -> Result<Vec<WindowPair>> {
    if step == 0 {
        return Err(Error::input("window step must be at least 1"));
    }
    if in_len == 0 || out_len == 0 {
        return Err(Error::input("window lengths must be positive"));
    }
    if total < in_len + out_len {
        return Err(Error::input(format!(
            "{total} rows cannot hold a {in_len}+{out_len} window"
        )));
    }
    let count = (total - in_len - out_len) / step + 1;
    Ok((0..count)
        .map(|k| {
            let offset = k * step;
            WindowPair {
                offset,
                in_sample: offset..offset + in_len,
                out_sample: offset + in_len..offset + in_len + out_len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_from(returns: Vec<Vec<f64>>) -> ReturnPanel {
        let n = returns[0].len();
        ReturnPanel {
            dates: synthetic_dates(returns.len()),
            tickers: (0..n).map(|i| format!("A{i}")).collect(),
            returns,
        }
    }

    #[test]
    fn parses_simple_csv() {
        let csv = "date,AAA,BBB\n2020-01-01,100,10\n2020-01-02,105,11\n2020-01-03,110,12\n";
        let p = read_prices(csv.as_bytes(), 2).unwrap();
        assert_eq!(p.num_days(), 3);
        assert_eq!(p.num_assets(), 2);
        assert_eq!(p.prices[2], vec![110.0, 12.0]);
        assert_eq!(p.dropped_rows, 0);
    }

    #[test]
    fn drops_rows_with_missing_or_zero_prices() {
        let csv = "date,AAA,BBB\n2020-01-01,100,10\n2020-01-02,,11\n2020-01-03,110,12\n2020-01-06,0,12\n2020-01-07,111,13\n";
        let p = read_prices(csv.as_bytes(), 2).unwrap();
        assert_eq!(p.num_days(), 3);
        assert_eq!(p.dropped_rows, 2);
    }

    #[test]
    fn loader_errors() {
        assert!(read_prices("date,AAA\n2020-01-01,1\n2020-01-02,2\n".as_bytes(), 2).is_err());
        assert!(read_prices("date,AAA,BBB\n2020-01-01,1,1\n".as_bytes(), 2).is_err());
        assert!(read_prices(
            "date,AAA,BBB\n2020/01/01,1,1\n2020-01-02,1,1\n".as_bytes(),
            2
        )
        .is_err());
        assert!(read_prices(
            "date,AAA,BBB\n2020-01-02,1,1\n2020-01-01,1,1\n".as_bytes(),
            2
        )
        .is_err());
        assert!(read_prices(
            "date,AAA,BBB\n2020-01-01,x,1\n2020-01-02,1,1\n".as_bytes(),
            2
        )
        .is_err());
        assert!(load_prices("/nonexistent/prices.csv").is_err());
    }

    #[test]
    fn log_return_values() {
        let dates = synthetic_dates(3);
        let p = PricePanel::new(
            dates,
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                vec![100.0, 100.0, 7.0],
                vec![105.0, 50.0, 7.0],
                vec![105.0, 50.0, 7.0],
            ],
        )
        .unwrap();
        let r = log_returns(&p).unwrap();
        assert_eq!(r.num_days(), 2);
        assert!((r.returns[0][0] - 0.048790164169432).abs() < 1e-12);
        assert!((r.returns[0][1] + 0.693147180559945).abs() < 1e-12);
        assert_eq!(r.returns[0][2], 0.0);
        assert_eq!(r.returns[1], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sign_scheme() {
        let s = discretize(
            &panel_from(vec![vec![-0.01], vec![0.0], vec![0.02]]),
            StateScheme::Sign,
            3,
        )
        .unwrap();
        assert_eq!(s.states, vec![vec![0], vec![1], vec![2]]);
        let z = discretize(&panel_from(vec![vec![0.0]; 4]), StateScheme::Sign, 3).unwrap();
        assert!(z.states.iter().all(|r| r[0] == 1));
    }

    #[test]
    fn quantile_bins_have_equal_mass() {
        let panel = panel_from((1..=100).map(|v| vec![v as f64]).collect());
        let s = discretize(&panel, StateScheme::Quantile, 4).unwrap();
        // Oracle: sort the values and cut the sorted list into quarters.
        let mut sorted: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let mut expected = [0usize; 4];
        for (rank, _) in sorted.iter().enumerate() {
            expected[rank * 4 / 100] += 1;
        }
        let mut counts = [0usize; 4];
        for row in &s.states {
            counts[row[0]] += 1;
        }
        assert_eq!(counts, expected);
        assert_eq!(counts, [25; 4]);
    }

    #[test]
    fn quantile_rejects_constant_asset() {
        let panel = panel_from(vec![vec![0.01, 0.2], vec![0.01, 0.3], vec![0.01, 0.1]]);
        assert!(matches!(
            discretize(&panel, StateScheme::Quantile, 2),
            Err(Error::DegenerateAsset { .. })
        ));
    }

    #[test]
    fn window_counts() {
        assert_eq!(rolling_windows(150, 90, 30, 30).unwrap().len(), 2);
        assert_eq!(rolling_windows(120, 90, 30, 30).unwrap().len(), 1);
        // floor((5100 - 120) / 30) + 1
        let expected = (5100 - 90 - 30) / 30 + 1;
        assert_eq!(expected, 167);
        assert_eq!(rolling_windows(5100, 90, 30, 30).unwrap().len(), expected);
        let w = rolling_windows(150, 90, 30, 30).unwrap();
        assert_eq!(w[1].in_sample, 30..120);
        assert_eq!(w[1].out_sample, 120..150);
        assert!(rolling_windows(100, 90, 30, 30).is_err());
        assert!(rolling_windows(200, 90, 30, 0).is_err());
    }
}
