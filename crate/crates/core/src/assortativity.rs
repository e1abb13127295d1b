//! Global and local excess-strength assortativity of directed weighted networks.
//!
//! Every measure works on the edge table `(w_ij, es_i^{m1}, es_j^{m2})`: the
//! weight of each directed edge and the excess strengths of its source and
//! target in the requested modes. The global coefficient is the weighted
//! Pearson correlation over that table. The local measures are
//!
//! * `Piraveenan`: the share of the global numerator contributed by the edges
//!   leaving node `i`, over the global denominator;
//! * `Sabek`: the sum of per-edge assortativities over the edges leaving `i`;
//! * `Peel`: every edge reweighted by a multiscale personalized PageRank
//!   distribution anchored at `l`, normalized by the source out-strength.
//!
//! The first two decompose the global value exactly; the third does not.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DirectedNetwork, Direction, EdgeContext, EdgeEnd};

/// Variances at or below this (as standard deviations) are degenerate.
pub const DEGENERATE_SIGMA: f64 = 1e-14;

pub const DEFAULT_QUADRATURE_POINTS: usize = 21;

/// Pair of directions `(m1, m2)` used at the source and target ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Modality {
    pub source: Direction,
    pub target: Direction,
}

impl Modality {
    pub const IN_IN: Modality = Modality {
        source: Direction::In,
        target: Direction::In,
    };
    pub const IN_OUT: Modality = Modality {
        source: Direction::In,
        target: Direction::Out,
    };
    pub const OUT_IN: Modality = Modality {
        source: Direction::Out,
        target: Direction::In,
    };
    pub const OUT_OUT: Modality = Modality {
        source: Direction::Out,
        target: Direction::Out,
    };

    pub const ALL: [Modality; 4] = [Self::IN_IN, Self::IN_OUT, Self::OUT_IN, Self::OUT_OUT];
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::In => "in",
        Direction::Out => "out",
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", dir_name(self.source), dir_name(self.target))
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        let parts: Vec<&str> = norm.split(['-', ',', '_']).collect();
        let dir = |p: &str| match p {
            "in" => Ok(Direction::In),
            "out" => Ok(Direction::Out),
            _ => Err(Error::input(format!(
                "unknown modality {s:?}, expected e.g. in-out"
            ))),
        };
        if parts.len() != 2 {
            return Err(Error::input(format!(
                "unknown modality {s:?}, expected e.g. in-out"
            )));
        }
        Ok(Modality {
            source: dir(parts[0])?,
            target: dir(parts[1])?,
        })
    }
}

impl TryFrom<String> for Modality {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Modality> for String {
    fn from(m: Modality) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Global,
    Piraveenan,
    Sabek,
    Peel,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Global,
        Measure::Piraveenan,
        Measure::Sabek,
        Measure::Peel,
    ];
    pub const LOCAL: [Measure; 3] = [Measure::Piraveenan, Measure::Sabek, Measure::Peel];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Global => "global",
            Measure::Piraveenan => "piraveenan",
            Measure::Sabek => "sabek",
            Measure::Peel => "peel",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::input(format!("unknown measure {s:?}")))
    }
}

/// Weighted moments of the source and target excess strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMoments {
    pub mu_source: f64,
    pub mu_target: f64,
    pub sigma_source: f64,
    pub sigma_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssortativityResult {
    pub measure: Measure,
    pub modality: Modality,
    pub rho_g: f64,
    /// Per-node values; empty for the global measure.
    pub rho_local: Vec<f64>,
    pub aux: EdgeMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistribution {
    pub probs: Vec<f64>,
    pub anchor: usize,
    /// Restart complement, `None` for the multiscale integral.
    pub alpha: Option<f64>,
}

/// The edge table with its weighted moments, shared by every measure.
struct EdgeTable {
    edges: Vec<EdgeContext>,
    omega: f64,
    moments: EdgeMoments,
    /// `sqrt(sum w (x - mu_x)^2) * sqrt(sum w (y - mu_y)^2)`.
    denominator: f64,
}

impl EdgeTable {
    fn new(net: &DirectedNetwork, mode: Modality) -> Result<Self> {
        let edges: Vec<EdgeContext> = net
            .edges()
            .map(|(i, j, w)| EdgeContext {
                source: i,
                target: j,
                weight: w,
                es_source: net.excess_strength_unchecked(i, j, EdgeEnd::Source, mode.source),
                es_target: net.excess_strength_unchecked(i, j, EdgeEnd::Target, mode.target),
            })
            .collect();
        if edges.is_empty() {
            return Err(Error::DegenerateAssortativity {
                modality: mode,
                end: "source",
            });
        }
        let omega: f64 = edges.iter().map(|e| e.weight).sum();
        let mu_source = edges.iter().map(|e| e.weight * e.es_source).sum::<f64>() / omega;
        let mu_target = edges.iter().map(|e| e.weight * e.es_target).sum::<f64>() / omega;
        let ss_source: f64 = edges
            .iter()
            .map(|e| e.weight * (e.es_source - mu_source).powi(2))
            .sum();
        let ss_target: f64 = edges
            .iter()
            .map(|e| e.weight * (e.es_target - mu_target).powi(2))
            .sum();
        let sigma_source = (ss_source / omega).sqrt();
        let sigma_target = (ss_target / omega).sqrt();
        if !(sigma_source > DEGENERATE_SIGMA) {
            return Err(Error::DegenerateAssortativity {
                modality: mode,
                end: "source",
            });
        }
        if !(sigma_target > DEGENERATE_SIGMA) {
            return Err(Error::DegenerateAssortativity {
                modality: mode,
                end: "target",
            });
        }
        Ok(Self {
            edges,
            omega,
            moments: EdgeMoments {
                mu_source,
                mu_target,
                sigma_source,
                sigma_target,
            },
            denominator: ss_source.sqrt() * ss_target.sqrt(),
        })
    }

    fn centered_product(&self, e: &EdgeContext) -> f64 {
        (e.es_source - self.moments.mu_source) * (e.es_target - self.moments.mu_target)
    }

    fn global(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.weight * self.centered_product(e))
            .sum::<f64>()
            / self.denominator
    }

    fn edge_value(&self, e: &EdgeContext) -> f64 {
        e.weight * self.centered_product(e)
            / (self.omega * self.moments.sigma_source * self.moments.sigma_target)
    }
}

fn result(
    measure: Measure,
    modality: Modality,
    table: &EdgeTable,
    rho_local: Vec<f64>,
) -> AssortativityResult {
    AssortativityResult {
        measure,
        modality,
        rho_g: table.global(),
        rho_local,
        aux: table.moments,
    }
}

pub fn global_assortativity(net: &DirectedNetwork, mode: Modality) -> Result<AssortativityResult> {
    let table = EdgeTable::new(net, mode)?;
    Ok(result(Measure::Global, mode, &table, Vec::new()))
}

/// Node `i` keeps the numerator terms of its out-edges:
/// `sum_{j in N(i)} w_ij es_i (es_j - mu_target)`, which equals
/// `sum w es_i es_j - (sum w es_i)(sum_all w es_j) / Omega` restricted to `i`.
pub fn local_piraveenan(net: &DirectedNetwork, mode: Modality) -> Result<AssortativityResult> {
    let table = EdgeTable::new(net, mode)?;
    let mut rho = vec![0.0; net.num_nodes()];
    for e in &table.edges {
        rho[e.source] += e.weight * e.es_source * (e.es_target - table.moments.mu_target);
    }
    rho.iter_mut().for_each(|r| *r /= table.denominator);
    Ok(result(Measure::Piraveenan, mode, &table, rho))
}

pub fn edge_assortativity_sabek(
    net: &DirectedNetwork,
    edge: (usize, usize),
    mode: Modality,
) -> Result<f64> {
    let (i, j) = edge;
    let ctx = net.edge_context(i, j, mode.source, mode.target)?;
    let table = EdgeTable::new(net, mode)?;
    Ok(table.edge_value(&ctx))
}

/// Every existing edge with its assortativity, in row-major edge order.
pub fn edge_assortativities(
    net: &DirectedNetwork,
    mode: Modality,
) -> Result<Vec<(usize, usize, f64, f64)>> {
    let table = EdgeTable::new(net, mode)?;
    Ok(table
        .edges
        .iter()
        .map(|e| (e.source, e.target, e.weight, table.edge_value(e)))
        .collect())
}

pub fn local_sabek(net: &DirectedNetwork, mode: Modality) -> Result<AssortativityResult> {
    let table = EdgeTable::new(net, mode)?;
    let mut rho = vec![0.0; net.num_nodes()];
    for e in &table.edges {
        rho[e.source] += table.edge_value(e);
    }
    Ok(result(Measure::Sabek, mode, &table, rho))
}

/// Random-walk transition matrix without the restart rule; dangling rows are zero.
fn walk_matrix(net: &DirectedNetwork) -> Vec<Vec<f64>> {
    let s_out = net.out_strengths();
    net.weights()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if s_out[i] > 0.0 {
                row.iter().map(|w| w / s_out[i]).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect()
}

fn check_anchor(net: &DirectedNetwork, l: usize) -> Result<()> {
    if l >= net.num_nodes() {
        return Err(Error::input(format!("anchor {l} outside the network")));
    }
    Ok(())
}

/// Power iteration for `pi = (1 - alpha) e_l + alpha pi Q`, where dangling
/// nodes jump back to the anchor.
pub fn personalized_pagerank(
    net: &DirectedNetwork,
    l: usize,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<NodeDistribution> {
    check_anchor(net, l)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input("alpha must lie in [0, 1]"));
    }
    let n = net.num_nodes();
    let q = walk_matrix(net);
    let dangling: Vec<bool> = net.out_strengths().iter().map(|&s| !(s > 0.0)).collect();
    let mut pi = vec![0.0; n];
    pi[l] = 1.0;
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        let mut next = vec![0.0; n];
        next[l] = 1.0 - alpha;
        for i in 0..n {
            let mass = alpha * pi[i];
            if mass == 0.0 {
                continue;
            }
            if dangling[i] {
                next[l] += mass;
            } else {
                for (nj, qij) in next.iter_mut().zip(&q[i]) {
                    *nj += mass * qij;
                }
            }
        }
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if residual <= tol {
            log::trace!("pagerank anchor {l} alpha {alpha} converged in {iter} iterations");
            return Ok(NodeDistribution {
                probs: pi,
                anchor: l,
                alpha: Some(alpha),
            });
        }
    }
    Err(Error::NoConvergence {
        residual,
        iterations: max_iters,
    })
}

/// Personalized PageRank for every anchor at one `alpha < 1`, via the
/// resolvent `(I - alpha Q)^{-1}`: with dangling mass returned to the anchor
/// the solution is row `l` of the resolvent rescaled to unit mass.
pub fn pagerank_all_anchors(net: &DirectedNetwork, alpha: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::input("the resolvent route needs alpha in [0, 1)"));
    }
    let n = net.num_nodes();
    let q = walk_matrix(net);
    let system = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - alpha * q[i][j]);
    let inverse = system
        .try_inverse()
        .ok_or_else(|| Error::input("singular random-walk resolvent"))?;
    Ok((0..n)
        .map(|l| {
            let row: Vec<f64> = inverse.row(l).iter().map(|v| v.max(0.0)).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect())
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(points: usize) -> Vec<(f64, f64)> {
    let m = points;
    let mut out = vec![(0.0, 0.0); m];
    for k in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_m(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for deg in 2..=m {
                let p2 = ((2 * deg - 1) as f64 * x * p1 - (deg - 1) as f64 * p0) / deg as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[k] = ((1.0 - x) / 2.0, w / 2.0);
        out[m - 1 - k] = ((1.0 + x) / 2.0, w / 2.0);
    }
    out
}

/// `w_multi(.; l) = int_0^1 w_alpha(.; l) d alpha` for every anchor, by
/// Gauss-Legendre quadrature; `result[l]` is the distribution for anchor `l`.
pub fn multiscale_weights_all(
    net: &DirectedNetwork,
    quadrature_points: usize,
) -> Result<Vec<Vec<f64>>> {
    if quadrature_points < 2 {
        return Err(Error::input(
            "multiscale quadrature needs at least 2 points",
        ));
    }
    let n = net.num_nodes();
    let mut acc = vec![vec![0.0; n]; n];
    for (alpha, c) in gauss_legendre(quadrature_points) {
        let ppr = pagerank_all_anchors(net, alpha)?;
        for (a, p) in acc.iter_mut().zip(&ppr) {
            a.iter_mut().zip(p).for_each(|(ai, pi)| *ai += c * pi);
        }
    }
    for a in &mut acc {
        let s: f64 = a.iter().sum();
        a.iter_mut().for_each(|v| *v /= s);
    }
    Ok(acc)
}

pub fn multiscale_weights(
    net: &DirectedNetwork,
    l: usize,
    quadrature_points: usize,
) -> Result<NodeDistribution> {
    check_anchor(net, l)?;
    let probs = multiscale_weights_all(net, quadrature_points)?.swap_remove(l);
    Ok(NodeDistribution {
        probs,
        anchor: l,
        alpha: None,
    })
}

/// Stationary distribution of the walk (`alpha = 1`) by a direct solve.
/// Dangling nodes restart at `l`.
pub fn stationary_distribution(net: &DirectedNetwork, l: usize) -> Result<NodeDistribution> {
    check_anchor(net, l)?;
    let n = net.num_nodes();
    let mut q = walk_matrix(net);
    for (i, row) in q.iter_mut().enumerate() {
        if !(net.out_strengths()[i] > 0.0) {
            row[l] = 1.0;
        }
    }
    // pi (I - Q) = 0 with the last equation swapped for sum pi = 1.
    let mut a = DMatrix::from_fn(n, n, |r, c| f64::from(u8::from(r == c)) - q[c][r]);
    let mut b = DVector::zeros(n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::input("random walk has no unique stationary distribution"))?;
    Ok(NodeDistribution {
        probs: pi.iter().copied().collect(),
        anchor: l,
        alpha: Some(1.0),
    })
}

/// Peel-style local assortativity with caller-supplied node distributions,
/// `distributions[l]` being the weights for anchor `l`.
pub fn local_peel_with_distributions(
    net: &DirectedNetwork,
    mode: Modality,
    distributions: &[Vec<f64>],
) -> Result<AssortativityResult> {
    let table = EdgeTable::new(net, mode)?;
    let n = net.num_nodes();
    if distributions.len() != n || distributions.iter().any(|d| d.len() != n) {
        return Err(Error::input("need one length-n distribution per anchor"));
    }
    let s_out = net.out_strengths();
    let scale = table.moments.sigma_source * table.moments.sigma_target;
    // Per-source sum of w_ij (x - mu)(y - mu) / s_i^out; each anchor then mixes these.
    let mut per_source = vec![0.0; n];
    for e in &table.edges {
        per_source[e.source] += e.weight * table.centered_product(e) / (s_out[e.source] * scale);
    }
    let rho = distributions
        .iter()
        .map(|d| d.iter().zip(&per_source).map(|(p, v)| p * v).sum())
        .collect();
    Ok(result(Measure::Peel, mode, &table, rho))
}

pub fn local_peel(
    net: &DirectedNetwork,
    mode: Modality,
    quadrature_points: usize,
) -> Result<AssortativityResult> {
    EdgeTable::new(net, mode)?;
    let w = multiscale_weights_all(net, quadrature_points)?;
    local_peel_with_distributions(net, mode, &w)
}

/// Diagnostic: the Peel measure at a single restart parameter.
pub fn local_peel_alpha(
    net: &DirectedNetwork,
    mode: Modality,
    alpha: f64,
) -> Result<AssortativityResult> {
    EdgeTable::new(net, mode)?;
    let w = if alpha < 1.0 {
        pagerank_all_anchors(net, alpha)?
    } else {
        (0..net.num_nodes())
            .map(|l| stationary_distribution(net, l).map(|d| d.probs))
            .collect::<Result<_>>()?
    };
    local_peel_with_distributions(net, mode, &w)
}

/// Dispatches on `measure`.
pub fn assortativity(
    net: &DirectedNetwork,
    measure: Measure,
    mode: Modality,
) -> Result<AssortativityResult> {
    match measure {
        Measure::Global => global_assortativity(net, mode),
        Measure::Piraveenan => local_piraveenan(net, mode),
        Measure::Sabek => local_sabek(net, mode),
        Measure::Peel => local_peel(net, mode, DEFAULT_QUADRATURE_POINTS),
    }
}

/// CSV `ticker,measure,modality,rho_local` with a trailing `GLOBAL` row per result.
pub fn results_to_csv(tickers: &[String], results: &[AssortativityResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ticker", "measure", "modality", "rho_local"])?;
    for r in results {
        let (measure, modality) = (r.measure.to_string(), r.modality.to_string());
        for (t, v) in tickers.iter().zip(&r.rho_local) {
            w.write_record([t.as_str(), &measure, &modality, &v.to_string()])?;
        }
        w.write_record(["GLOBAL", &measure, &modality, &r.rho_g.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses [`results_to_csv`] output back into `(ticker, measure, modality, value)` rows.
pub fn parse_results_csv(text: &str) -> Result<Vec<(String, Measure, Modality, f64)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let v: f64 = rec[3]
                .parse()
                .map_err(|_| Error::input(format!("bad value {:?}", &rec[3])))?;
            Ok((rec[0].to_owned(), rec[1].parse()?, rec[2].parse()?, v))
        })
        .collect()
}
