//! Loess smoothing and the node / edge profiles built on it.

use serde::{Deserialize, Serialize};

use crate::assortativity::{self, Measure, Modality};
use crate::error::{Error, Result};
use crate::network::DirectedNetwork;

pub const DEFAULT_SPAN: f64 = 0.75;
pub const DEFAULT_GRID_POINTS: usize = 100;
/// Relative x spread below which the local slope is dropped.
const SPREAD_TOL: f64 = 1e-9;
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotProfile {
    pub measure: String,
    pub modality: String,
    pub market: String,
    pub x: Vec<f64>,
    pub y_smoothed: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoessFit {
    pub value: f64,
    pub se: f64,
}

/// Degree-1 loess with tricube weights.
pub struct Loess {
    x: Vec<f64>,
    y: Vec<f64>,
    q: usize,
    sigma: f64,
}

impl Loess {
    pub fn new(points: &[(f64, f64)], span: f64) -> Result<Self> {
        if !(span > 0.0 && span <= 1.0) {
            return Err(Error::input("span must lie in (0, 1]"));
        }
        let n = points.len();
        if n < 5 || span * (n as f64) < 3.0 {
            return Err(Error::input(format!(
                "loess needs at least 5 points and span * n >= 3, got {n}"
            )));
        }
        if points.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::input("loess points must be finite"));
        }
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let x: Vec<f64> = sorted.iter().map(|p| p.0).collect();
        let y: Vec<f64> = sorted.iter().map(|p| p.1).collect();
        let q = ((span * n as f64).ceil() as usize).clamp(3, n);
        let mut fit = Self {
            x,
            y,
            q,
            sigma: 0.0,
        };
        fit.sigma = fit.residual_scale();
        Ok(fit)
    }

    /// Smoother weights `l` with fitted value `l . y` at `x0`.
    fn smoother_row(&self, x0: f64) -> Vec<f64> {
        let n = self.x.len();
        let dist: Vec<f64> = self.x.iter().map(|xi| (xi - x0).abs()).collect();
        let mut order = dist.clone();
        order.sort_by(f64::total_cmp);
        let h = order[self.q - 1];
        let w: Vec<f64> = if h > 0.0 {
            dist.iter()
                .map(|d| {
                    let u = d / h;
                    if u < 1.0 {
                        (1.0 - u * u * u).powi(3)
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            dist.iter()
                .map(|&d| if d == 0.0 { 1.0 } else { 0.0 })
                .collect()
        };
        // Neighbourhoods where every point sits at the boundary: fall back to uniform weights on the q nearest.
        let w = if w.iter().all(|&v| v == 0.0) {
            dist.iter()
                .map(|&d| if d <= h { 1.0 } else { 0.0 })
                .collect()
        } else {
            w
        };
        let sw: f64 = w.iter().sum();
        let xbar = w.iter().zip(&self.x).map(|(wi, xi)| wi * xi).sum::<f64>() / sw;
        let sxx: f64 = w
            .iter()
            .zip(&self.x)
            .map(|(wi, xi)| wi * (xi - xbar).powi(2))
            .sum();
        let tol = SPREAD_TOL * self.magnitude();
        (0..n)
            .map(|i| {
                let base = w[i] / sw;
                if sxx > sw * tol * tol {
                    base + w[i] * (x0 - xbar) * (self.x[i] - xbar) / sxx
                } else {
                    base
                }
            })
            .collect()
    }

    fn residual_scale(&self) -> f64 {
        let n = self.x.len();
        let rows: Vec<Vec<f64>> = self.x.iter().map(|&xi| self.smoother_row(xi)).collect();
        let rss: f64 = rows
            .iter()
            .zip(&self.y)
            .map(|(l, yi)| (yi - l.iter().zip(&self.y).map(|(a, b)| a * b).sum::<f64>()).powi(2))
            .sum();
        // delta1 = trace((I - L)'(I - L))
        let mut delta1 = 0.0;
        for j in 0..n {
            for (i, row) in rows.iter().enumerate() {
                let v = if i == j { 1.0 } else { 0.0 } - row[j];
                delta1 += v * v;
            }
        }
        if delta1 > 1e-12 {
            (rss / delta1).sqrt()
        } else {
            0.0
        }
    }

    pub fn predict(&self, x0: f64) -> LoessFit {
        let l = self.smoother_row(x0);
        let value = l.iter().zip(&self.y).map(|(a, b)| a * b).sum();
        let norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        LoessFit {
            value,
            se: self.sigma * norm,
        }
    }

    /// Largest |x|, or 1 when every x is zero.
    fn magnitude(&self) -> f64 {
        let m = self.x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    /// True when the x values differ by rounding noise only.
    pub fn is_point_mass(&self) -> bool {
        self.x[self.x.len() - 1] - self.x[0] <= SPREAD_TOL * self.magnitude()
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

/// Loess fit on an evenly spaced grid over the data range, with a 95% band.
/// A zero-width range collapses to a single evaluation point.
pub fn loess_smooth(points: &[(f64, f64)], span: f64, grid_points: usize) -> Result<PlotProfile> {
    if grid_points == 0 {
        return Err(Error::input("grid_points must be positive"));
    }
    let fit = Loess::new(points, span)?;
    let (lo, hi) = fit.x_range();
    let grid: Vec<f64> = if !fit.is_point_mass() && grid_points > 1 {
        (0..grid_points)
            .map(|k| lo + (hi - lo) * k as f64 / (grid_points - 1) as f64)
            .collect()
    } else {
        vec![lo]
    };
    let mut profile = PlotProfile {
        measure: String::new(),
        modality: String::new(),
        market: String::new(),
        x: Vec::with_capacity(grid.len()),
        y_smoothed: Vec::with_capacity(grid.len()),
        band_low: Vec::with_capacity(grid.len()),
        band_high: Vec::with_capacity(grid.len()),
    };
    for x0 in grid {
        let f = fit.predict(x0);
        profile.x.push(x0);
        profile.y_smoothed.push(f.value);
        profile.band_low.push(f.value - Z_95 * f.se);
        profile.band_high.push(f.value + Z_95 * f.se);
    }
    Ok(profile)
}

/// Mean excess out-strength `s_out(i) - w_ij` over the out-edges of each
/// node; zero for nodes without out-edges.
pub fn mean_excess_out_strength(net: &DirectedNetwork) -> Vec<f64> {
    (0..net.num_nodes())
        .map(|i| {
            let succ: Vec<usize> = net.successors(i).collect();
            if succ.is_empty() {
                0.0
            } else {
                let s = net.out_strengths()[i];
                succ.iter().map(|&j| s - net.weight(i, j)).sum::<f64>() / succ.len() as f64
            }
        })
        .collect()
}

/// `(mean excess out-strength, local assortativity)` per node.
pub fn node_points(
    net: &DirectedNetwork,
    measure: Measure,
    mode: Modality,
) -> Result<Vec<(f64, f64)>> {
    let res = assortativity::assortativity(net, measure, mode)?;
    if res.rho_local.is_empty() {
        return Err(Error::input("the global measure has no node values"));
    }
    Ok(mean_excess_out_strength(net)
        .into_iter()
        .zip(res.rho_local)
        .collect())
}

/// `(w_ij, edge assortativity)` per edge.
pub fn edge_points(net: &DirectedNetwork, mode: Modality) -> Result<Vec<(f64, f64)>> {
    Ok(assortativity::edge_assortativities(net, mode)?
        .into_iter()
        .map(|(_, _, w, v)| (w, v))
        .collect())
}

/// Smoothed profile from pooled points with its series key filled in.
pub fn profile(
    points: &[(f64, f64)],
    measure: &str,
    modality: Modality,
    market: &str,
    span: f64,
    grid_points: usize,
) -> Result<PlotProfile> {
    let mut p = loess_smooth(points, span, grid_points)?;
    p.measure = measure.to_string();
    p.modality = modality.to_string();
    p.market = market.to_string();
    Ok(p)
}

/// Long-format CSV `market,measure,modality,x,y_smoothed,band_low,band_high`.
pub fn profiles_to_csv(profiles: &[PlotProfile]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "market",
        "measure",
        "modality",
        "x",
        "y_smoothed",
        "band_low",
        "band_high",
    ])?;
    for p in profiles {
        for k in 0..p.x.len() {
            w.write_record([
                p.market.clone(),
                p.measure.clone(),
                p.modality.clone(),
                p.x[k].to_string(),
                p.y_smoothed[k].to_string(),
                p.band_low[k].to_string(),
                p.band_high[k].to_string(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::input(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::input(format!("csv encoding: {e}")))
}
