//! Multivariate mixture transition distribution (MTD) model.
//!
//! The next-state distribution of series `j` is a convex combination over
//! source series `i` of the cross-transition matrices `P^(i,j)`, weighted by
//! the mixing coefficients `lambda[i][j]`. Each column of the mixing matrix
//! lies on the probability simplex.
//!
//! Estimation is sequential: transition matrices from smoothed cross-transition
//! counts, then each mixing column by maximum likelihood with projected
//! gradient ascent on the simplex.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::StatePanel;
use crate::simplex::{project_simplex, renormalize};

/// Floor applied inside the logarithm of the mixture likelihood.
pub const LOG_FLOOR: f64 = 1e-300;

/// Cross-series transition probabilities `p^(i,j)_{hk} = P(S^j_{t+1} = k | S^i_t = h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    n: usize,
    z: usize,
    probs: Vec<f64>,
    counts: Vec<u64>,
}

impl TransitionTensor {
    fn index(&self, i: usize, j: usize, h: usize, k: usize) -> usize {
        ((i * self.n + j) * self.z + h) * self.z + k
    }

    pub fn num_series(&self) -> usize {
        self.n
    }

    pub fn num_states(&self) -> usize {
        self.z
    }

    pub fn prob(&self, i: usize, j: usize, h: usize, k: usize) -> f64 {
        self.probs[self.index(i, j, h, k)]
    }

    pub fn count(&self, i: usize, j: usize, h: usize, k: usize) -> u64 {
        self.counts[self.index(i, j, h, k)]
    }

    /// Row `h` of `P^(i,j)`.
    pub fn row(&self, i: usize, j: usize, h: usize) -> &[f64] {
        let start = self.index(i, j, h, 0);
        &self.probs[start..start + self.z]
    }

    /// `P^(i,j)` as a dense `z x z` matrix.
    pub fn matrix(&self, i: usize, j: usize) -> Vec<Vec<f64>> {
        (0..self.z).map(|h| self.row(i, j, h).to_vec()).collect()
    }

    /// Builds a tensor from explicit matrices, `matrices[i][j]` being `P^(i,j)`.
    pub fn from_matrices(matrices: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        let n = matrices.len();
        if n == 0 {
            return Err(Error::input("empty transition tensor"));
        }
        let z = matrices[0].first().map_or(0, |m| m.len());
        if z < 2 {
            return Err(Error::input("transition matrices need at least 2 states"));
        }
        let mut probs = Vec::with_capacity(n * n * z * z);
        for row_i in &matrices {
            if row_i.len() != n {
                return Err(Error::input("transition tensor must be n x n matrices"));
            }
            for m in row_i {
                if m.len() != z || m.iter().any(|r| r.len() != z) {
                    return Err(Error::input("transition matrices must all be z x z"));
                }
                for r in m {
                    let s: f64 = r.iter().sum();
                    if r.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || (s - 1.0).abs() > 1e-9 {
                        return Err(Error::input(
                            "transition matrix rows must be probability vectors",
                        ));
                    }
                    probs.extend_from_slice(r);
                }
            }
        }
        Ok(Self {
            n,
            z,
            counts: vec![0; probs.len()],
            probs,
        })
    }

    /// Nested `[i][j][h][k]` representation.
    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.matrix(i, j)).collect())
            .collect()
    }
}

/// Mixing matrix; `lambda[i][j]` is the weight of source `i` for target `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    pub lambda: Vec<Vec<f64>>,
    /// Achieved log-likelihood per target column.
    pub loglik: Vec<f64>,
    /// Whether the projected-gradient norm reached the tolerance, per column.
    pub converged: Vec<bool>,
}

impl LambdaMatrix {
    pub fn num_series(&self) -> usize {
        self.lambda.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.lambda.iter().map(|row| row[j]).collect()
    }

    /// Builds a matrix from explicit columns (`columns[j][i] = lambda_ij`).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        for c in columns {
            if c.len() != n {
                return Err(Error::input("lambda must be square"));
            }
            if c.iter().any(|v| !(*v >= 0.0)) || (c.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::input("lambda columns must lie on the simplex"));
            }
        }
        let lambda = (0..n)
            .map(|i| (0..n).map(|j| columns[j][i]).collect())
            .collect();
        Ok(Self {
            lambda,
            loglik: vec![f64::NAN; n],
            converged: vec![true; n],
        })
    }
}

/// Next-state distribution of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-7,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Counts cross-transitions and row-normalizes `counts + smoothing`.
///
/// Rows with no observations and zero smoothing fall back to uniform.
pub fn estimate_transition_matrices(
    states: &StatePanel,
    smoothing: f64,
) -> Result<TransitionTensor> {
    if states.num_days() < 2 {
        return Err(Error::input(
            "transition estimation needs at least 2 observations",
        ));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::input("smoothing must be a nonnegative pseudo-count"));
    }
    let n = states.num_assets();
    let z = states.num_states;
    let mut tensor = TransitionTensor {
        n,
        z,
        probs: vec![0.0; n * n * z * z],
        counts: vec![0; n * n * z * z],
    };
    for w in states.states.windows(2) {
        let (now, next) = (&w[0], &w[1]);
        for i in 0..n {
            for j in 0..n {
                let idx = tensor.index(i, j, now[i], next[j]);
                tensor.counts[idx] += 1;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for h in 0..z {
                let start = tensor.index(i, j, h, 0);
                let total: f64 = tensor.counts[start..start + z]
                    .iter()
                    .map(|&c| c as f64 + smoothing)
                    .sum();
                for k in 0..z {
                    tensor.probs[start + k] = if total > 0.0 {
                        (tensor.counts[start + k] as f64 + smoothing) / total
                    } else {
                        1.0 / z as f64
                    };
                }
            }
        }
    }
    Ok(tensor)
}

/// `sum_t ln( sum_i lambda_i p^(i,j)_{S^i_t, S^j_{t+1}} )`, floored at [`LOG_FLOOR`].
pub fn mtd_log_likelihood(
    states: &StatePanel,
    tensor: &TransitionTensor,
    lambda_col: &[f64],
    j: usize,
) -> f64 {
    states
        .states
        .windows(2)
        .map(|w| {
            let mix: f64 = lambda_col
                .iter()
                .enumerate()
                .map(|(i, &l)| l * tensor.prob(i, j, w[0][i], w[1][j]))
                .sum();
            mix.max(LOG_FLOOR).ln()
        })
        .sum()
}

/// Per-column likelihood with identical transitions pooled.
struct ColumnLikelihood {
    /// Rows `q_i = p^(i,j)` of each distinct transition pattern.
    patterns: Vec<Vec<f64>>,
    weights: Vec<f64>,
    total: f64,
}

impl ColumnLikelihood {
    fn new(states: &StatePanel, tensor: &TransitionTensor, j: usize) -> Self {
        let mut pooled: BTreeMap<(Vec<usize>, usize), u64> = BTreeMap::new();
        for w in states.states.windows(2) {
            *pooled.entry((w[0].clone(), w[1][j])).or_default() += 1;
        }
        let n = tensor.n;
        let mut patterns = Vec::with_capacity(pooled.len());
        let mut weights = Vec::with_capacity(pooled.len());
        for ((now, next), c) in pooled {
            patterns.push((0..n).map(|i| tensor.prob(i, j, now[i], next)).collect());
            weights.push(c as f64);
        }
        let total = weights.iter().sum::<f64>().max(1.0);
        Self {
            patterns,
            weights,
            total,
        }
    }

    /// Mean log-likelihood per transition.
    fn value(&self, lambda: &[f64]) -> f64 {
        self.patterns
            .iter()
            .zip(&self.weights)
            .map(|(q, c)| c * dot(q, lambda).max(LOG_FLOOR).ln())
            .sum::<f64>()
            / self.total
    }

    fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; lambda.len()];
        for (q, c) in self.patterns.iter().zip(&self.weights) {
            let m = dot(q, lambda);
            if m > LOG_FLOOR {
                let scale = c / (m * self.total);
                g.iter_mut().zip(q).for_each(|(gi, qi)| *gi += scale * qi);
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stationarity(lambda: &[f64], grad: &[f64]) -> f64 {
    let stepped: Vec<f64> = lambda.iter().zip(grad).map(|(l, g)| l + g).collect();
    project_simplex(&stepped)
        .iter()
        .zip(lambda)
        .map(|(p, l)| (p - l).powi(2))
        .sum::<f64>()
        .sqrt()
}

struct Ascent {
    lambda: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Projected gradient ascent with Barzilai-Borwein trial steps and Armijo backtracking.
fn ascend(f: &ColumnLikelihood, start: Vec<f64>, opts: &LambdaOptions) -> Ascent {
    let mut x = start;
    let mut fx = f.value(&x);
    let mut g = f.gradient(&x);
    let mut step = 1.0;
    for _ in 0..opts.max_iters {
        if stationarity(&x, &g) <= opts.tol {
            return Ascent {
                lambda: x,
                value: fx,
                converged: true,
            };
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + s * gi).collect();
            let y = project_simplex(&trial);
            let fy = f.value(&y);
            let predicted: f64 = g
                .iter()
                .zip(y.iter().zip(&x))
                .map(|(gi, (yi, xi))| gi * (yi - xi))
                .sum();
            if fy >= fx + 1e-4 * predicted && fy >= fx {
                accepted = Some((y, fy));
                break;
            }
            s *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let gy = f.gradient(&y);
        let dx: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gy.iter().zip(&g).map(|(a, b)| a - b).collect();
        let curvature = -dot(&dx, &dg);
        step = if curvature > 0.0 {
            (dot(&dx, &dx) / curvature).clamp(1e-10, 1e10)
        } else {
            1e3
        };
        x = y;
        fx = fy;
        g = gy;
    }
    let converged = stationarity(&x, &g) <= opts.tol;
    Ascent {
        lambda: x,
        value: fx,
        converged,
    }
}

fn random_simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    renormalize(&mut x);
    x
}

/// Maximum-likelihood mixing column for target `j`. Returns
/// `(column, loglik, converged)`.
pub fn estimate_lambda_column(
    states: &StatePanel,
    tensor: &TransitionTensor,
    j: usize,
    opts: &LambdaOptions,
) -> (Vec<f64>, f64, bool) {
    let n = tensor.n;
    if n == 1 {
        return (
            vec![1.0],
            mtd_log_likelihood(states, tensor, &[1.0], 0),
            true,
        );
    }
    let f = ColumnLikelihood::new(states, tensor, j);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(j as u64));
    let mut starts = vec![vec![1.0 / n as f64; n]];
    starts.extend((0..opts.restarts).map(|_| random_simplex_point(&mut rng, n)));

    let mut best: Option<Ascent> = None;
    for start in starts {
        let run = ascend(&f, start, opts);
        // Strict improvement keeps the lowest restart index on exact ties.
        if best.as_ref().map_or(true, |b| run.value > b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least the barycenter start");
    let loglik = mtd_log_likelihood(states, tensor, &best.lambda, j);
    (best.lambda, loglik, best.converged)
}

/// Estimates every mixing column independently.
pub fn estimate_lambda(
    states: &StatePanel,
    tensor: &TransitionTensor,
    opts: &LambdaOptions,
) -> Result<LambdaMatrix> {
    if states.num_days() < 2 {
        return Err(Error::input(
            "lambda estimation needs at least 2 observations",
        ));
    }
    let n = tensor.n;
    let fit = |j: usize| estimate_lambda_column(states, tensor, j, opts);
    #[cfg(feature = "parallel")]
    let columns: Vec<_> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<_> = (0..n).map(fit).collect();

    let mut lambda = vec![vec![0.0; n]; n];
    let mut loglik = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    for (j, (col, ll, ok)) in columns.into_iter().enumerate() {
        for i in 0..n {
            lambda[i][j] = col[i];
        }
        loglik.push(ll);
        converged.push(ok);
        if !ok {
            log::debug!("lambda column {j} stopped before reaching the stationarity tolerance");
        }
    }
    Ok(LambdaMatrix {
        lambda,
        loglik,
        converged,
    })
}

/// `D^j(t+1) = sum_i lambda_ij D^i(t) P^(i,j)`.
pub fn one_step_distribution(
    tensor: &TransitionTensor,
    lambda: &LambdaMatrix,
    current: &[Distribution],
) -> Result<Vec<Distribution>> {
    let (n, z) = (tensor.n, tensor.z);
    if current.len() != n || current.iter().any(|d| d.0.len() != z) {
        return Err(Error::input("need one length-z distribution per series"));
    }
    Ok((0..n)
        .map(|j| {
            let mut next = vec![0.0; z];
            for (i, d) in current.iter().enumerate() {
                let l = lambda.lambda[i][j];
                if l == 0.0 {
                    continue;
                }
                for (h, &dh) in d.0.iter().enumerate() {
                    for (k, p) in tensor.row(i, j, h).iter().enumerate() {
                        next[k] += l * dh * p;
                    }
                }
            }
            let s: f64 = next.iter().sum();
            if s > 0.0 && (s - 1.0).abs() <= 1e-12 {
                next.iter_mut().for_each(|v| *v /= s);
            }
            Distribution(next)
        })
        .collect())
}

fn sample_index(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = k;
        }
        if u < acc {
            return k;
        }
    }
    last
}

/// Simulates `len` joint states; the first row is drawn uniformly.
pub fn mtd_simulate(
    tensor: &TransitionTensor,
    lambda: &LambdaMatrix,
    len: usize,
    seed: u64,
) -> Result<StatePanel> {
    let (n, z) = (tensor.n, tensor.z);
    if lambda.num_series() != n {
        return Err(Error::input("lambda and transition tensor sizes differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(len);
    if len > 0 {
        states.push((0..n).map(|_| rng.gen_range(0..z)).collect::<Vec<_>>());
    }
    for _ in 1..len {
        let now: &Vec<usize> = states.last().expect("nonempty");
        let next: Vec<usize> = (0..n)
            .map(|j| {
                let source = sample_index(&mut rng, (0..n).map(|i| lambda.lambda[i][j]));
                sample_index(&mut rng, tensor.row(source, j, now[source]).iter().copied())
            })
            .collect();
        states.push(next);
    }
    let tickers = (0..n).map(|i| format!("S{}", i + 1)).collect();
    StatePanel::from_states(tickers, states, z)
}

/// A fitted model as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtdModel {
    pub tickers: Vec<String>,
    pub num_states: usize,
    pub lambda: Vec<Vec<f64>>,
    pub probs: Vec<Vec<Vec<Vec<f64>>>>,
    pub loglik: Vec<f64>,
    pub smoothing: f64,
}

impl MtdModel {
    pub fn new(
        tickers: Vec<String>,
        tensor: &TransitionTensor,
        lambda: &LambdaMatrix,
        smoothing: f64,
    ) -> Self {
        Self {
            tickers,
            num_states: tensor.z,
            lambda: lambda.lambda.clone(),
            probs: tensor.to_nested(),
            loglik: lambda.loglik.clone(),
            smoothing,
        }
    }

    pub fn lambda_matrix(&self) -> LambdaMatrix {
        LambdaMatrix {
            lambda: self.lambda.clone(),
            loglik: self.loglik.clone(),
            converged: vec![true; self.lambda.len()],
        }
    }

    pub fn tensor(&self) -> Result<TransitionTensor> {
        TransitionTensor::from_matrices(self.probs.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&s)
    }
}

/// Fits transition matrices then mixing weights on one state panel.
pub fn fit_mtd(
    states: &StatePanel,
    smoothing: f64,
    opts: &LambdaOptions,
) -> Result<(TransitionTensor, LambdaMatrix)> {
    let tensor = estimate_transition_matrices(states, smoothing)?;
    let lambda = estimate_lambda(states, &tensor, opts)?;
    Ok((tensor, lambda))
}
