//! Directed weighted networks built from a mixing matrix or from correlations.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::ReturnPanel;
use crate::mtd::LambdaMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeEnd {
    Source,
    Target,
}

/// Immutable weighted digraph with cached degrees and strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetwork {
    tickers: Vec<String>,
    weights: Vec<Vec<f64>>,
    s_in: Vec<f64>,
    s_out: Vec<f64>,
    d_in: Vec<usize>,
    d_out: Vec<usize>,
    omega: f64,
}

/// An existing edge together with the end-point excess strengths for a mode pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeContext {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub es_source: f64,
    pub es_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub tickers: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl DirectedNetwork {
    /// Builds the network from a weight matrix; the diagonal is discarded.
    pub fn from_weights(tickers: Vec<String>, mut weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        if tickers.len() != n || weights.iter().any(|r| r.len() != n) {
            return Err(Error::input(
                "weight matrix must be square and match the tickers",
            ));
        }
        if weights
            .iter()
            .flatten()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::input("edge weights must be finite and nonnegative"));
        }
        for (i, row) in weights.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let s_out: Vec<f64> = weights.iter().map(|r| r.iter().sum()).collect();
        let s_in: Vec<f64> = (0..n).map(|i| weights.iter().map(|r| r[i]).sum()).collect();
        let d_out = weights
            .iter()
            .map(|r| r.iter().filter(|&&w| w > 0.0).count())
            .collect();
        let d_in = (0..n)
            .map(|i| weights.iter().filter(|r| r[i] > 0.0).count())
            .collect();
        let omega = weights.iter().flatten().sum();
        Ok(Self {
            tickers,
            weights,
            s_in,
            s_out,
            d_in,
            d_out,
            omega,
        })
    }

    /// `w_ij = lambda_ij` off the diagonal.
    pub fn from_lambda(tickers: Vec<String>, lambda: &LambdaMatrix) -> Result<Self> {
        Self::from_weights(tickers, lambda.lambda.clone())
    }

    /// Absolute Pearson correlation network of the return columns.
    pub fn from_correlation(returns: &ReturnPanel) -> Result<Self> {
        let t = returns.num_days();
        if t < 3 {
            return Err(Error::input(
                "correlation network needs at least 3 observations",
            ));
        }
        let n = returns.num_assets();
        let cols: Vec<Vec<f64>> = (0..n).map(|i| returns.column(i)).collect();
        let centered: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / t as f64;
                c.iter().map(|v| v - m).collect()
            })
            .collect();
        let norms: Vec<f64> = centered
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        for (i, c) in cols.iter().enumerate() {
            if c.iter().all(|&v| v == c[0]) || !(norms[i] > 0.0) {
                return Err(Error::DegenerateAsset {
                    ticker: returns.tickers[i].clone(),
                });
            }
        }
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let c: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let w = (c / (norms[i] * norms[j])).abs().min(1.0);
                weights[i][j] = w;
                weights[j][i] = w;
            }
        }
        Self::from_weights(returns.tickers.clone(), weights)
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weights[i][j] > 0.0
    }

    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        self.weights
            .iter()
            .map(|r| r.iter().map(|&w| u8::from(w > 0.0)).collect())
            .collect()
    }

    pub fn strength(&self, i: usize, dir: Direction) -> f64 {
        match dir {
            Direction::In => self.s_in[i],
            Direction::Out => self.s_out[i],
        }
    }

    pub fn in_strengths(&self) -> &[f64] {
        &self.s_in
    }

    pub fn out_strengths(&self) -> &[f64] {
        &self.s_out
    }

    pub fn in_degrees(&self) -> &[usize] {
        &self.d_in
    }

    pub fn out_degrees(&self) -> &[usize] {
        &self.d_out
    }

    /// Total weight `sum_ij w_ij`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Existing edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().enumerate().flat_map(|(i, r)| {
            r.iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(move |(j, &w)| (i, j, w))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    /// Direct successors of `i`.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.weights[i]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, _)| j)
    }

    /// Excess strength at one end of edge `(i, j)`: the node's strength in
    /// `mode` minus the weight of the edge between the pair in that direction.
    pub fn excess_strength(
        &self,
        i: usize,
        j: usize,
        end: EdgeEnd,
        mode: Direction,
    ) -> Result<f64> {
        if i >= self.num_nodes() || j >= self.num_nodes() || !self.has_edge(i, j) {
            return Err(Error::MissingEdge(i, j));
        }
        Ok(self.excess_strength_unchecked(i, j, end, mode))
    }

    pub(crate) fn excess_strength_unchecked(
        &self,
        i: usize,
        j: usize,
        end: EdgeEnd,
        mode: Direction,
    ) -> f64 {
        match (end, mode) {
            (EdgeEnd::Source, Direction::Out) => self.s_out[i] - self.weights[i][j],
            (EdgeEnd::Source, Direction::In) => self.s_in[i] - self.weights[j][i],
            (EdgeEnd::Target, Direction::In) => self.s_in[j] - self.weights[i][j],
            (EdgeEnd::Target, Direction::Out) => self.s_out[j] - self.weights[j][i],
        }
    }

    pub fn edge_context(
        &self,
        i: usize,
        j: usize,
        m1: Direction,
        m2: Direction,
    ) -> Result<EdgeContext> {
        Ok(EdgeContext {
            source: i,
            target: j,
            weight: self
                .weights
                .get(i)
                .and_then(|r| r.get(j))
                .copied()
                .unwrap_or(0.0),
            es_source: self.excess_strength(i, j, EdgeEnd::Source, m1)?,
            es_target: self.excess_strength(i, j, EdgeEnd::Target, m2)?,
        })
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            tickers: self.tickers.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        Self::from_weights(doc.tickers, doc.weights)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }

    /// Edge list `source,target,weight` with ticker labels.
    pub fn to_edge_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "target", "weight"])?;
        for (i, j, wt) in self.edges() {
            w.write_record([
                self.tickers[i].as_str(),
                self.tickers[j].as_str(),
                &wt.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Reads an edge list; nodes are taken in order of first appearance unless
    /// `tickers` fixes the order.
    pub fn from_edge_csv<R: Read>(reader: R, tickers: Option<Vec<String>>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut names = tickers.clone().unwrap_or_default();
        let mut edges = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::input("edge rows need source,target,weight"));
            }
            let mut node = |name: &str| -> Result<usize> {
                if let Some(k) = names.iter().position(|t| t == name) {
                    return Ok(k);
                }
                if tickers.is_some() {
                    return Err(Error::input(format!("unknown node {name}")));
                }
                names.push(name.to_owned());
                Ok(names.len() - 1)
            };
            let s = node(&rec[0])?;
            let t = node(&rec[1])?;
            let w: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("bad weight {:?}", &rec[2])))?;
            edges.push((s, t, w));
        }
        let n = names.len();
        let mut weights = vec![vec![0.0; n]; n];
        for (s, t, w) in edges {
            weights[s][t] = w;
        }
        Self::from_weights(names, weights)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &(self.to_json()? + "\n"))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}
