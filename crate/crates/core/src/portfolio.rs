//! Assortativity-penalized portfolio selection.
//!
//! Maximizes either the quadratic utility `mu.x - (delta/2) x'Sx - R` or the
//! ratio `mu.x / x'Sx - R` over long-only, fully invested weights where every
//! held asset carries at least `gamma`. `R` is the portfolio assortativity,
//! weighted (`rho.x`) or simple (`rho.y`, counting selected assets).
//!
//! The exact path is a depth-first branch-and-bound over the selection vector
//! with projected-gradient relaxations; large universes use an iterative
//! support-pruning heuristic. [`brute_force_search`] enumerates supports as a
//! verification oracle.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::ReturnPanel;
use crate::simplex::{project_box_simplex, project_simplex};

/// Smallest eigenvalue enforced on the covariance matrix.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// Objectives closer than this are ties.
const TIE_TOL: f64 = 1e-10;

/// Weights at or below this are treated as zero.
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketMoments {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Ridge added to the diagonal to keep the smallest eigenvalue at
    /// [`MIN_EIGENVALUE`].
    pub jitter: f64,
}

impl MarketMoments {
    /// Validates the inputs and applies the diagonal jitter rule.
    pub fn new(mu: Vec<f64>, mut sigma: Vec<Vec<f64>>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::input("empty universe"));
        }
        if sigma.len() != n || sigma.iter().any(|r| r.len() != n) {
            return Err(Error::input("covariance must be n x n"));
        }
        if mu
            .iter()
            .chain(sigma.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::input("moments must be finite"));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (sigma[i][j], sigma[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::input("covariance must be symmetric"));
                }
                let avg = 0.5 * (a + b);
                sigma[i][j] = avg;
                sigma[j][i] = avg;
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| sigma[i][j]));
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let jitter = (MIN_EIGENVALUE - min_eig).max(0.0);
        if jitter > 0.0 {
            for (i, row) in sigma.iter_mut().enumerate() {
                row[i] += jitter;
            }
        }
        Ok(Self { mu, sigma, jitter })
    }

    pub fn num_assets(&self) -> usize {
        self.mu.len()
    }

    fn quad(&self, x: &[f64]) -> f64 {
        self.sigma
            .iter()
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(s, xj)| s * xj).sum::<f64>())
            .sum()
    }

    fn sigma_times(&self, x: &[f64]) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|row| row.iter().zip(x).map(|(s, xj)| s * xj).sum())
            .collect()
    }
}

/// Column means and sample covariance (denominator `T - 1`) plus jitter.
pub fn estimate_moments(returns: &ReturnPanel) -> Result<MarketMoments> {
    let t = returns.num_days();
    if t < 2 {
        return Err(Error::input(
            "moment estimation needs at least 2 observations",
        ));
    }
    let n = returns.num_assets();
    let mu: Vec<f64> = (0..n)
        .map(|i| returns.returns.iter().map(|r| r[i]).sum::<f64>() / t as f64)
        .collect();
    let mut sigma = vec![vec![0.0; n]; n];
    for row in &returns.returns {
        for i in 0..n {
            let di = row[i] - mu[i];
            for j in 0..=i {
                sigma[i][j] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            sigma[i][j] /= (t - 1) as f64;
            sigma[j][i] = sigma[i][j];
        }
    }
    MarketMoments::new(mu, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyForm {
    Weighted,
    Simple,
    None,
}

impl fmt::Display for PenaltyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyForm::Weighted => "weighted",
            PenaltyForm::Simple => "simple",
            PenaltyForm::None => "none",
        })
    }
}

impl FromStr for PenaltyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weighted" => Ok(Self::Weighted),
            "simple" => Ok(Self::Simple),
            "none" => Ok(Self::None),
            _ => Err(Error::input(format!("unknown penalty form {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub rho: Vec<f64>,
    pub form: PenaltyForm,
    pub scale: f64,
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self {
            rho: Vec::new(),
            form: PenaltyForm::None,
            scale: 1.0,
        }
    }

    pub fn weighted(rho: Vec<f64>) -> Self {
        Self {
            rho,
            form: PenaltyForm::Weighted,
            scale: 1.0,
        }
    }

    pub fn simple(rho: Vec<f64>) -> Self {
        Self {
            rho,
            form: PenaltyForm::Simple,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// False when the penalty is identically zero for every portfolio.
    pub fn is_active(&self) -> bool {
        self.form != PenaltyForm::None && self.scale != 0.0 && self.rho.iter().any(|&r| r != 0.0)
    }
}

/// `R` for a given portfolio.
pub fn portfolio_penalty(spec: &PenaltySpec, x: &[f64], y: &[u8]) -> f64 {
    match spec.form {
        PenaltyForm::None => 0.0,
        PenaltyForm::Weighted => {
            spec.scale * spec.rho.iter().zip(x).map(|(r, xi)| r * xi).sum::<f64>()
        }
        PenaltyForm::Simple => {
            spec.scale
                * spec
                    .rho
                    .iter()
                    .zip(y)
                    .map(|(r, &yi)| r * f64::from(yi))
                    .sum::<f64>()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Objective {
    /// `mu.x - (delta / 2) x'Sx`.
    Utility { delta: f64 },
    /// `mu.x / x'Sx`, or `mu.x / sqrt(x'Sx)` with `stdev_denominator`.
    Sharpe { stdev_denominator: bool },
}

impl Objective {
    pub fn utility(delta: f64) -> Self {
        Objective::Utility { delta }
    }

    pub fn sharpe() -> Self {
        Objective::Sharpe {
            stdev_denominator: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Utility { .. } => "utility",
            Objective::Sharpe { .. } => "sharpe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Heuristic,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub x: Vec<f64>,
    pub y: Vec<u8>,
    pub objective: f64,
    #[serde(rename = "R")]
    pub penalty: f64,
    pub status: SolveStatus,
    /// Ratio objective with no positive expected return available.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl PortfolioSolution {
    pub fn support_size(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Force branch-and-bound regardless of universe size.
    pub exact: bool,
    /// Universes up to this size are solved exactly.
    pub exact_max_assets: usize,
    pub max_nodes: usize,
    /// Relative-to-absolute gap under which the search counts as closed.
    pub gap_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            exact: false,
            exact_max_assets: 30,
            max_nodes: 200_000,
            gap_tol: 1e-7,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Free,
    Zero,
    One,
}

/// One instance of the mixed-integer problem.
struct Problem<'a> {
    m: &'a MarketMoments,
    penalty: &'a PenaltySpec,
    objective: Objective,
    gamma: f64,
    max_iters: usize,
}

/// Smooth part of a relaxation: objective minus a linear penalty, plus a constant.
struct Relaxation<'a> {
    problem: &'a Problem<'a>,
    linear: Vec<f64>,
    constant: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.m.num_assets()
    }

    fn base_value(&self, x: &[f64]) -> f64 {
        let ret: f64 = self.m.mu.iter().zip(x).map(|(a, b)| a * b).sum();
        let var = self.m.quad(x);
        match self.objective {
            Objective::Utility { delta } => ret - 0.5 * delta * var,
            Objective::Sharpe {
                stdev_denominator: false,
            } => ret / var,
            Objective::Sharpe {
                stdev_denominator: true,
            } => ret / var.sqrt(),
        }
    }

    fn base_gradient(&self, x: &[f64]) -> Vec<f64> {
        let sx = self.m.sigma_times(x);
        let ret: f64 = self.m.mu.iter().zip(x).map(|(a, b)| a * b).sum();
        let var: f64 = sx.iter().zip(x).map(|(a, b)| a * b).sum();
        match self.objective {
            Objective::Utility { delta } => self
                .m
                .mu
                .iter()
                .zip(&sx)
                .map(|(mu, s)| mu - delta * s)
                .collect(),
            Objective::Sharpe {
                stdev_denominator: false,
            } => self
                .m
                .mu
                .iter()
                .zip(&sx)
                .map(|(mu, s)| mu / var - 2.0 * ret * s / (var * var))
                .collect(),
            Objective::Sharpe {
                stdev_denominator: true,
            } => {
                let sd = var.sqrt();
                self.m
                    .mu
                    .iter()
                    .zip(&sx)
                    .map(|(mu, s)| mu / sd - ret * s / (var * sd))
                    .collect()
            }
        }
    }

    fn penalty_active(&self) -> bool {
        self.penalty.is_active()
    }

    fn penalty(&self, x: &[f64], y: &[u8]) -> f64 {
        if self.penalty_active() {
            portfolio_penalty(self.penalty, x, y)
        } else {
            0.0
        }
    }

    fn solution(&self, x: Vec<f64>, status: SolveStatus) -> PortfolioSolution {
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.0)).collect();
        let penalty = self.penalty(&x, &y);
        PortfolioSolution {
            objective: self.base_value(&x) - penalty,
            penalty,
            x,
            y,
            status,
            degenerate: self.is_degenerate(),
        }
    }

    fn is_degenerate(&self) -> bool {
        matches!(self.objective, Objective::Sharpe { .. })
            && !self.penalty_active()
            && self.m.mu.iter().all(|&v| v <= 0.0)
    }

    /// Relaxation of a node: `y` relaxed to `[0, 1]`. For the simple form a
    /// free asset with negative `rho` is credited as if selected, which keeps
    /// the bound valid while the objective stays smooth.
    fn relaxation(&self, fix: &[Fix]) -> Option<Relaxation<'_>> {
        let n = self.n();
        let mut linear = vec![0.0; n];
        let mut constant = 0.0;
        if self.penalty_active() {
            let (rho, s) = (&self.penalty.rho, self.penalty.scale);
            for i in 0..n {
                match (self.penalty.form, fix[i]) {
                    (PenaltyForm::Weighted, Fix::Zero) => {}
                    (PenaltyForm::Weighted, _) => linear[i] = s * rho[i],
                    (PenaltyForm::Simple, Fix::One) => constant -= s * rho[i],
                    (PenaltyForm::Simple, Fix::Free) if rho[i] > 0.0 => linear[i] = s * rho[i],
                    (PenaltyForm::Simple, Fix::Free) => constant -= s * rho[i],
                    _ => {}
                }
            }
        }
        let lower: Vec<f64> = fix
            .iter()
            .map(|f| if *f == Fix::One { self.gamma } else { 0.0 })
            .collect();
        let upper: Vec<f64> = fix
            .iter()
            .map(|f| if *f == Fix::Zero { 0.0 } else { 1.0 })
            .collect();
        let lo_sum: f64 = lower.iter().sum();
        if lo_sum > 1.0 + 1e-12 || upper.iter().sum::<f64>() < 1.0 {
            return None;
        }
        Some(Relaxation {
            problem: self,
            linear,
            constant,
            lower,
            upper,
        })
    }
}

impl Relaxation<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.problem.base_value(x) - self.linear.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            + self.constant
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.problem.base_gradient(x);
        g.iter_mut().zip(&self.linear).for_each(|(gi, c)| *gi -= c);
        g
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        project_box_simplex(v, &self.lower, &self.upper)
    }

    fn starts(&self) -> Vec<Vec<f64>> {
        let n = self.lower.len();
        let free: Vec<usize> = (0..n).filter(|&i| self.upper[i] > 0.0).collect();
        let mut bary = vec![0.0; n];
        free.iter().for_each(|&i| bary[i] = 1.0 / free.len() as f64);
        let mut starts = vec![self.project(&bary)];
        if matches!(self.problem.objective, Objective::Sharpe { .. }) {
            // The ratio objective is not concave once penalized: also start
            // from every vertex-like corner of the feasible set.
            for &k in &free {
                let mut corner = vec![0.0; n];
                corner[k] = 2.0;
                starts.push(self.project(&corner));
            }
        }
        starts
    }

    /// Best local maximum over the start set.
    fn maximize(&self) -> (Vec<f64>, f64) {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in self.starts() {
            let (x, v) = self.ascend(start);
            if best.as_ref().map_or(true, |b| v > b.1) {
                best = Some((x, v));
            }
        }
        best.expect("at least one start")
    }

    fn ascend(&self, start: Vec<f64>) -> (Vec<f64>, f64) {
        let mut x = start;
        let mut fx = self.value(&x);
        let mut g = self.gradient(&x);
        let mut step = 1.0 / g.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let mut stall = 0;
        for _ in 0..self.problem.max_iters {
            let full = self.project(&x.iter().zip(&g).map(|(a, b)| a + b).collect::<Vec<_>>());
            let stationarity: f64 = full
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if stationarity <= 1e-13 {
                break;
            }
            let mut accepted = None;
            let mut s = step;
            for _ in 0..80 {
                let y = self.project(&x.iter().zip(&g).map(|(a, b)| a + s * b).collect::<Vec<_>>());
                let fy = self.value(&y);
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
            let gy = self.gradient(&y);
            let dx: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = gy.iter().zip(&g).map(|(a, b)| a - b).collect();
            let dxdx: f64 = dx.iter().map(|v| v * v).sum();
            let curvature: f64 = -dx.iter().zip(&dg).map(|(a, b)| a * b).sum::<f64>();
            step = if curvature > 0.0 {
                (dxdx / curvature).clamp(1e-12, 1e12)
            } else {
                (s * 2.0).min(1e12)
            };
            stall = if fy - fx <= 1e-15 * (1.0 + fx.abs()) {
                stall + 1
            } else {
                0
            };
            let done = dxdx == 0.0 || stall >= 5;
            x = y;
            fx = fy;
            g = gy;
            if done {
                break;
            }
        }
        (x, fx)
    }
}

/// Snaps near-zero weights of free assets and restores the budget.
fn clean_weights(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v <= ZERO_TOL {
            *v = 0.0;
        }
    }
    let s: f64 = x.iter().sum();
    if s > 0.0 && s != 1.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}

/// Tie-aware comparison: higher objective, then smaller support, then
/// lexicographically smaller selection vector.
fn better(a: &PortfolioSolution, b: &PortfolioSolution) -> bool {
    if a.objective > b.objective + TIE_TOL {
        return true;
    }
    if a.objective < b.objective - TIE_TOL {
        return false;
    }
    match a.support_size().cmp(&b.support_size()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.y < b.y,
    }
}

fn check_instance(m: &MarketMoments, spec: &PenaltySpec, gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || gamma.is_nan() {
        return Err(Error::input("gamma must be positive"));
    }
    if gamma > 1.0 {
        return Err(Error::Infeasible(format!(
            "lower bound gamma = {gamma} exceeds the budget"
        )));
    }
    if spec.form != PenaltyForm::None && spec.rho.len() != m.num_assets() {
        return Err(Error::input(
            "assortativity vector length differs from the universe",
        ));
    }
    if !(spec.scale >= 0.0) {
        return Err(Error::input("penalty scale must be nonnegative"));
    }
    Ok(())
}

struct Node {
    fix: Vec<Fix>,
    x: Vec<f64>,
    bound: f64,
}

fn solve_node(problem: &Problem<'_>, fix: Vec<Fix>) -> Option<Node> {
    let relax = problem.relaxation(&fix)?;
    let (x, bound) = relax.maximize();
    Some(Node { fix, x, bound })
}

/// Candidate feasible solution read off a relaxation point, if any.
fn candidate(problem: &Problem<'_>, node: &Node) -> Option<PortfolioSolution> {
    let mut x = node.x.clone();
    for (i, v) in x.iter_mut().enumerate() {
        if node.fix[i] == Fix::Free && *v <= ZERO_TOL {
            *v = 0.0;
        }
    }
    let ok = x
        .iter()
        .zip(&node.fix)
        .all(|(v, f)| *v == 0.0 && *f != Fix::One || *v >= problem.gamma - 1e-12);
    if !ok {
        return None;
    }
    for v in x.iter_mut() {
        if *v > 0.0 {
            *v = v.max(problem.gamma);
        }
    }
    clean_weights(&mut x);
    Some(problem.solution(x, SolveStatus::Optimal))
}

fn branch_variable(problem: &Problem<'_>, node: &Node) -> Option<usize> {
    let gamma = problem.gamma;
    let free = || (0..node.fix.len()).filter(|&i| node.fix[i] == Fix::Free);
    // Most fractional: weight strictly inside (0, gamma), closest to gamma / 2.
    let fractional = free()
        .filter(|&i| node.x[i] > ZERO_TOL && node.x[i] < gamma - 1e-12)
        .max_by(|&a, &b| {
            let score = |i: usize| node.x[i].min(gamma - node.x[i]);
            score(a).total_cmp(&score(b)).then(b.cmp(&a))
        });
    if fractional.is_some() {
        return fractional;
    }
    // Otherwise resolve the optimistic credit given to unselected negative-rho assets.
    let credited = free().find(|&i| {
        problem.penalty_active()
            && problem.penalty.form == PenaltyForm::Simple
            && problem.penalty.rho[i] < 0.0
            && node.x[i] <= ZERO_TOL
    });
    credited.or_else(|| free().next())
}

fn branch_and_bound(problem: &Problem<'_>, opts: &SolverOptions) -> Result<PortfolioSolution> {
    let n = problem.n();
    let root = solve_node(problem, vec![Fix::Free; n])
        .ok_or_else(|| Error::Infeasible("empty feasible set".into()))?;
    let mut incumbent: Option<PortfolioSolution> = None;
    let mut stack = vec![root];
    let mut nodes = 0usize;
    let mut exhausted = true;

    while let Some(node) = stack.pop() {
        nodes += 1;
        if nodes > opts.max_nodes {
            exhausted = false;
            break;
        }
        if let Some(inc) = &incumbent {
            let gap = node.bound - inc.objective;
            let fixed_one = node.fix.iter().filter(|f| **f == Fix::One).count();
            // Near-ties survive only while they could still win the support tie-break.
            if gap < -TIE_TOL || (gap <= TIE_TOL && fixed_one >= inc.support_size()) {
                continue;
            }
        }
        let cand = candidate(problem, &node);
        let closed = cand
            .as_ref()
            .is_some_and(|c| node.bound - c.objective <= TIE_TOL);
        if let Some(c) = cand {
            if incumbent.as_ref().map_or(true, |inc| better(&c, inc)) {
                incumbent = Some(c);
            }
        }
        if closed {
            continue;
        }
        let Some(var) = branch_variable(problem, &node) else {
            continue;
        };
        let mut children = Vec::with_capacity(2);
        for value in [Fix::Zero, Fix::One] {
            let mut fix = node.fix.clone();
            fix[var] = value;
            if let Some(child) = solve_node(problem, fix) {
                children.push(child);
            }
        }
        // Depth-first with the better bound explored first.
        children.sort_by(|a, b| a.bound.total_cmp(&b.bound));
        stack.extend(children);
    }

    log::debug!("branch-and-bound explored {nodes} nodes");
    let mut best =
        incumbent.ok_or_else(|| Error::Infeasible("no feasible selection found".into()))?;
    let open_gap = stack
        .iter()
        .map(|nd| nd.bound - best.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    if !exhausted && open_gap > opts.gap_tol * (1.0 + best.objective.abs()) {
        best.status = SolveStatus::Heuristic;
    }
    Ok(best)
}

/// Solve the relaxation, drop assets under `gamma / 2`, repeat on the
/// survivors, then enforce the lower bounds on the final support.
fn support_heuristic(problem: &Problem<'_>) -> Result<PortfolioSolution> {
    let n = problem.n();
    let mut fix = vec![Fix::Free; n];
    loop {
        let node = solve_node(problem, fix.clone())
            .ok_or_else(|| Error::Infeasible("empty feasible set".into()))?;
        let mut dropped = false;
        for i in 0..n {
            if fix[i] == Fix::Free && node.x[i] < problem.gamma / 2.0 {
                fix[i] = Fix::Zero;
                dropped = true;
            }
        }
        if fix.iter().all(|f| *f == Fix::Zero) {
            // Keep the single best asset from the last relaxation.
            let k = (0..n)
                .max_by(|&a, &b| node.x[a].total_cmp(&node.x[b]))
                .expect("nonempty");
            fix[k] = Fix::Free;
        }
        if !dropped {
            break;
        }
    }
    // Cap the support so the lower bounds fit the budget.
    let cap = (1.0 / problem.gamma + 1e-9).floor() as usize;
    let mut support: Vec<usize> = (0..n).filter(|&i| fix[i] == Fix::Free).collect();
    if support.len() > cap {
        let node = solve_node(problem, fix.clone()).expect("feasible");
        support.sort_by(|&a, &b| node.x[b].total_cmp(&node.x[a]).then(a.cmp(&b)));
        for &i in &support[cap..] {
            fix[i] = Fix::Zero;
        }
    }
    for f in fix.iter_mut() {
        if *f == Fix::Free {
            *f = Fix::One;
        }
    }
    let node = solve_node(problem, fix)
        .ok_or_else(|| Error::Infeasible("support heuristic failed".into()))?;
    let mut x = node.x;
    clean_weights(&mut x);
    Ok(problem.solution(x, SolveStatus::Heuristic))
}

fn solve(
    m: &MarketMoments,
    spec: &PenaltySpec,
    objective: Objective,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<PortfolioSolution> {
    check_instance(m, spec, gamma)?;
    let problem = Problem {
        m,
        penalty: spec,
        objective,
        gamma,
        max_iters: opts.max_iters,
    };
    if m.num_assets() == 1 {
        return Ok(problem.solution(vec![1.0], SolveStatus::Optimal));
    }
    let sol = if opts.exact || m.num_assets() <= opts.exact_max_assets {
        branch_and_bound(&problem, opts)?
    } else {
        support_heuristic(&problem)?
    };
    if sol.degenerate {
        log::warn!("no asset has a positive expected return; ratio objective is degenerate");
    }
    Ok(sol)
}

pub fn max_quadratic_utility(
    m: &MarketMoments,
    spec: &PenaltySpec,
    delta: f64,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<PortfolioSolution> {
    if !(delta > 0.0) {
        return Err(Error::input("risk aversion delta must be positive"));
    }
    solve(m, spec, Objective::utility(delta), gamma, opts)
}

/// Ratio objective with the variance denominator unless `stdev_denominator`.
pub fn max_sharpe(
    m: &MarketMoments,
    spec: &PenaltySpec,
    gamma: f64,
    stdev_denominator: bool,
    opts: &SolverOptions,
) -> Result<PortfolioSolution> {
    solve(
        m,
        spec,
        Objective::Sharpe { stdev_denominator },
        gamma,
        opts,
    )
}

pub fn optimize(
    m: &MarketMoments,
    spec: &PenaltySpec,
    objective: Objective,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<PortfolioSolution> {
    match objective {
        Objective::Utility { delta } => max_quadratic_utility(m, spec, delta, gamma, opts),
        Objective::Sharpe { stdev_denominator } => {
            max_sharpe(m, spec, gamma, stdev_denominator, opts)
        }
    }
}

/// Unpenalized Markowitz benchmark for the same objective and bounds.
pub fn markowitz_benchmark(
    m: &MarketMoments,
    objective: Objective,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<PortfolioSolution> {
    optimize(m, &PenaltySpec::none(), objective, gamma, opts)
}

// ---------------------------------------------------------------------------
// Verification oracle.

pub const BRUTE_FORCE_MAX_ASSETS: usize = 12;

/// Exhaustive search over supports. On each support `S` the weights are
/// written `x = gamma + (1 - |S| gamma) u` with `u` on the simplex, `u` is
/// improved by projected gradient ascent from the barycenter (and, for the
/// ratio objective, from every vertex), then polished by a pairwise transfer
/// search on a lattice of spacing `1 / grid` refined down to `1e-12`.
pub fn brute_force_search(
    m: &MarketMoments,
    spec: &PenaltySpec,
    objective: Objective,
    gamma: f64,
    grid: usize,
) -> Result<PortfolioSolution> {
    check_instance(m, spec, gamma)?;
    let n = m.num_assets();
    if n > BRUTE_FORCE_MAX_ASSETS {
        return Err(Error::input(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_ASSETS} assets"
        )));
    }
    if grid < 50 {
        return Err(Error::input("grid resolution must be at least 50"));
    }
    let problem = Problem {
        m,
        penalty: spec,
        objective,
        gamma,
        max_iters: 0,
    };
    let cap = ((1.0 / gamma) + 1e-9).floor() as usize;

    // Selection vectors in increasing size, lexicographically ascending within a size.
    let mut supports: Vec<Vec<u8>> = (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .map(|i| ((mask >> (n - 1 - i)) & 1) as u8)
                .collect::<Vec<u8>>()
        })
        .filter(|y| (y.iter().map(|&v| v as usize).sum::<usize>()) <= cap)
        .collect();
    supports.sort_by(|a, b| {
        let (sa, sb) = (
            a.iter().filter(|&&v| v == 1).count(),
            b.iter().filter(|&&v| v == 1).count(),
        );
        sa.cmp(&sb).then_with(|| a.cmp(b))
    });

    let mut best: Option<PortfolioSolution> = None;
    for y in supports {
        let idx: Vec<usize> = (0..n).filter(|&i| y[i] == 1).collect();
        let x = oracle_subproblem(&problem, &idx, grid);
        let sol = problem.solution(x, SolveStatus::Optimal);
        if best
            .as_ref()
            .map_or(true, |b| sol.objective > b.objective + TIE_TOL)
        {
            best = Some(sol);
        }
    }
    best.ok_or_else(|| Error::Infeasible("no support fits the lower bound".into()))
}

fn oracle_subproblem(problem: &Problem<'_>, idx: &[usize], grid: usize) -> Vec<f64> {
    let n = problem.n();
    let k = idx.len();
    let free_mass = 1.0 - k as f64 * problem.gamma;
    let embed = |u: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (&i, &ui) in idx.iter().zip(u) {
            x[i] = problem.gamma + free_mass * ui;
        }
        x
    };
    let y: Vec<u8> = (0..n).map(|i| u8::from(idx.contains(&i))).collect();
    let f = |u: &[f64]| {
        let x = embed(u);
        problem.base_value(&x) - problem.penalty(&x, &y)
    };
    if k == 1 || free_mass <= 0.0 {
        return embed(&vec![1.0 / k as f64; k]);
    }

    let grad = |u: &[f64]| -> Vec<f64> {
        let x = embed(u);
        let g = problem.base_gradient(&x);
        idx.iter()
            .map(|&i| {
                let pen =
                    if problem.penalty_active() && problem.penalty.form == PenaltyForm::Weighted {
                        problem.penalty.scale * problem.penalty.rho[i]
                    } else {
                        0.0
                    };
                free_mass * (g[i] - pen)
            })
            .collect()
    };

    let mut starts = vec![vec![1.0 / k as f64; k]];
    if matches!(problem.objective, Objective::Sharpe { .. }) {
        for v in 0..k {
            let mut e = vec![0.0; k];
            e[v] = 1.0;
            starts.push(e);
        }
    }
    let mut best_u = starts[0].clone();
    let mut best_f = f(&best_u);
    for start in starts {
        let mut u = start;
        let mut fu = f(&u);
        let mut step = 1.0;
        for _ in 0..5000 {
            let g = grad(&u);
            let mut moved = false;
            let mut s = step;
            while s > 1e-16 {
                let cand =
                    project_simplex(&u.iter().zip(&g).map(|(a, b)| a + s * b).collect::<Vec<_>>());
                let fc = f(&cand);
                if fc > fu {
                    moved = (fc - fu) > 1e-16 * (1.0 + fu.abs());
                    u = cand;
                    fu = fc;
                    break;
                }
                s *= 0.5;
            }
            step = (s * 4.0).min(1e6);
            if !moved {
                break;
            }
        }
        pairwise_refine(&mut u, &mut fu, &f, grid);
        if fu > best_f {
            best_f = fu;
            best_u = u;
        }
    }
    embed(&best_u)
}

/// Moves mass between pairs of coordinates on a shrinking lattice while it helps.
fn pairwise_refine(u: &mut [f64], fu: &mut f64, f: &dyn Fn(&[f64]) -> f64, grid: usize) {
    let k = u.len();
    let mut h = 1.0 / grid as f64;
    while h > 1e-12 {
        let mut improved = true;
        let mut sweeps = 0;
        while improved && sweeps < 200 {
            improved = false;
            sweeps += 1;
            for a in 0..k {
                for b in 0..k {
                    if a == b {
                        continue;
                    }
                    let amount = h.min(u[a]);
                    if amount <= 0.0 {
                        continue;
                    }
                    let mut trial = u.to_vec();
                    trial[a] -= amount;
                    trial[b] += amount;
                    let ft = f(&trial);
                    if ft > *fu + 1e-15 * (1.0 + fu.abs()) {
                        u.copy_from_slice(&trial);
                        *fu = ft;
                        improved = true;
                    }
                }
            }
        }
        h *= 0.25;
    }
}

/// Problem instance as exchanged on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioInstance {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub rho: Vec<f64>,
    pub form: PenaltyForm,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub gamma: f64,
    /// `utility` or `sharpe`.
    pub objective: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_delta() -> f64 {
    1.0
}

fn default_scale() -> f64 {
    1.0
}

impl PortfolioInstance {
    pub fn solve(
        &self,
        stdev_denominator: bool,
        opts: &SolverOptions,
    ) -> Result<PortfolioSolution> {
        let m = MarketMoments::new(self.mu.clone(), self.sigma.clone())?;
        let spec = PenaltySpec {
            rho: self.rho.clone(),
            form: self.form,
            scale: self.scale,
        };
        let objective = match self.objective.trim().to_ascii_lowercase().as_str() {
            "utility" => Objective::utility(self.delta),
            "sharpe" => Objective::Sharpe { stdev_denominator },
            other => return Err(Error::input(format!("unknown objective {other:?}"))),
        };
        optimize(&m, &spec, objective, self.gamma, opts)
    }
}

/// Checks the budget, long-only and linking constraints within `tol`.
pub fn satisfies_constraints(sol: &PortfolioSolution, gamma: f64, tol: f64) -> bool {
    let budget = (sol.x.iter().sum::<f64>() - 1.0).abs() <= tol;
    let linked = sol.x.iter().zip(&sol.y).all(|(&x, &y)| {
        let y = f64::from(y);
        x >= -tol && gamma * y <= x + tol && x <= y + tol && (x <= tol || y == 1.0)
    });
    budget && linked && sol.y.iter().all(|&y| y <= 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::synthetic_dates;

    fn diag(v: &[f64]) -> Vec<Vec<f64>> {
        (0..v.len())
            .map(|i| {
                (0..v.len())
                    .map(|j| if i == j { v[i] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn moments_of_constant_returns_are_jitter() {
        let panel = ReturnPanel {
            dates: synthetic_dates(4),
            tickers: vec!["A".into(), "B".into()],
            returns: vec![vec![0.01, 0.01]; 4],
        };
        let m = estimate_moments(&panel).unwrap();
        assert_eq!(m.mu, vec![0.01, 0.01]);
        assert!((m.jitter - MIN_EIGENVALUE).abs() < 1e-24);
        assert_eq!(m.sigma, diag(&[m.jitter, m.jitter]));
    }

    #[test]
    fn moments_hand_panel() {
        let panel = ReturnPanel {
            dates: synthetic_dates(3),
            tickers: vec!["A".into(), "B".into()],
            returns: vec![vec![1.0, 2.0], vec![2.0, 0.0], vec![3.0, 1.0]],
        };
        let m = estimate_moments(&panel).unwrap();
        assert_eq!(m.mu, vec![2.0, 1.0]);
        // var A = (1 + 0 + 1)/2 = 1, var B = (1 + 1 + 0)/2 = 1, cov = (-1*1 + 0*-1 + 1*0)/2 = -0.5
        assert!((m.sigma[0][0] - 1.0).abs() < 1e-15);
        assert!((m.sigma[1][1] - 1.0).abs() < 1e-15);
        assert!((m.sigma[0][1] + 0.5).abs() < 1e-15);
        assert_eq!(m.jitter, 0.0);
    }

    #[test]
    fn penalty_forms() {
        let rho = vec![0.1, -0.2, 0.3, 0.4];
        let zero = PenaltySpec::weighted(vec![0.0; 4]);
        assert_eq!(portfolio_penalty(&zero, &[0.25; 4], &[1; 4]), 0.0);
        let simple = PenaltySpec::simple(rho.clone()).with_scale(2.0);
        let r = portfolio_penalty(&simple, &[0.5, 0.25, 0.25, 0.0], &[1, 1, 1, 0]);
        assert!((r - 2.0 * 0.2).abs() < 1e-15);
        let weighted = PenaltySpec::weighted(rho.clone()).with_scale(3.0);
        assert!(
            (portfolio_penalty(&weighted, &[0.0, 0.0, 1.0, 0.0], &[0, 0, 1, 0]) - 0.9).abs()
                < 1e-15
        );
        assert_eq!(portfolio_penalty(&PenaltySpec::none(), &[1.0], &[1]), 0.0);
    }

    #[test]
    fn single_asset_is_fully_invested() {
        let m = MarketMoments::new(vec![-0.3], vec![vec![2.0]]).unwrap();
        let opts = SolverOptions::default();
        let u =
            max_quadratic_utility(&m, &PenaltySpec::weighted(vec![0.7]), 3.0, 0.2, &opts).unwrap();
        assert_eq!((u.x.clone(), u.y.clone()), (vec![1.0], vec![1]));
        let s = max_sharpe(&m, &PenaltySpec::none(), 0.5, false, &opts).unwrap();
        assert_eq!(s.x, vec![1.0]);
        assert!(s.degenerate);
        let b = markowitz_benchmark(&m, Objective::utility(1.0), 1.0, &opts).unwrap();
        assert_eq!(b.x, vec![1.0]);
    }

    #[test]
    fn identical_assets_split_evenly() {
        let n = 4;
        let (mu, var, delta) = (0.05, 0.04, 2.0);
        let m = MarketMoments::new(vec![mu; n], diag(&vec![var; n])).unwrap();
        let opts = SolverOptions::default();
        let u = max_quadratic_utility(&m, &PenaltySpec::none(), delta, 0.01, &opts).unwrap();
        for xi in &u.x {
            assert!((xi - 0.25).abs() < 1e-9);
        }
        assert!((u.objective - (mu - delta * var / (2.0 * n as f64))).abs() < 1e-12);
        assert_eq!(u.status, SolveStatus::Optimal);

        let two = MarketMoments::new(vec![mu; 2], diag(&[var, var])).unwrap();
        let s = max_sharpe(&two, &PenaltySpec::none(), 0.01, false, &opts).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-9 && (s.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gamma_above_one_is_infeasible() {
        let m = MarketMoments::new(vec![0.1, 0.2], diag(&[1.0, 1.0])).unwrap();
        let err = max_quadratic_utility(
            &m,
            &PenaltySpec::none(),
            1.0,
            1.5,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn two_asset_utility_closed_form() {
        // Interior optimum of mu.x - (delta/2) x'Sx on x1 + x2 = 1.
        let (m1, m2, s1, s2, c, delta) = (0.08, 0.05, 0.09, 0.04, 0.01, 3.0);
        let m = MarketMoments::new(vec![m1, m2], vec![vec![s1, c], vec![c, s2]]).unwrap();
        let x1 = ((m1 - m2) / delta + s2 - c) / (s1 + s2 - 2.0 * c);
        let bf = brute_force_search(
            &m,
            &PenaltySpec::none(),
            Objective::utility(delta),
            0.05,
            50,
        )
        .unwrap();
        assert!((bf.x[0] - x1).abs() < 1e-7, "{} vs {x1}", bf.x[0]);
        let bb = max_quadratic_utility(
            &m,
            &PenaltySpec::none(),
            delta,
            0.05,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((bb.x[0] - x1).abs() < 1e-8);
    }

    #[test]
    fn brute_force_respects_cardinality_bound() {
        let m = MarketMoments::new(vec![0.1, 0.1, 0.1], diag(&[0.1, 0.1, 0.1])).unwrap();
        let sol =
            brute_force_search(&m, &PenaltySpec::none(), Objective::utility(5.0), 0.5, 60).unwrap();
        assert!(sol.support_size() <= 2);
        assert!(
            brute_force_search(&m, &PenaltySpec::none(), Objective::utility(5.0), 0.5, 10).is_err()
        );
    }

    #[test]
    fn heuristic_path_is_feasible() {
        let n = 6;
        let mu: Vec<f64> = (0..n).map(|i| 0.01 * i as f64).collect();
        let m = MarketMoments::new(mu, diag(&vec![0.02; n])).unwrap();
        let opts = SolverOptions {
            exact_max_assets: 2,
            ..SolverOptions::default()
        };
        let sol = max_quadratic_utility(&m, &PenaltySpec::weighted(vec![0.01; n]), 1.0, 0.1, &opts)
            .unwrap();
        assert_eq!(sol.status, SolveStatus::Heuristic);
        assert!(satisfies_constraints(&sol, 0.1, 1e-9));
    }

    #[test]
    fn instance_json_round_trip() {
        let text = r#"{"mu":[0.1,0.2],"sigma":[[0.1,0.0],[0.0,0.2]],"rho":[0.3,-0.1],"form":"simple","delta":2.0,"gamma":0.1,"objective":"utility"}"#;
        let inst: PortfolioInstance = serde_json::from_str(text).unwrap();
        let sol = inst.solve(false, &SolverOptions::default()).unwrap();
        let json = serde_json::to_string(&sol).unwrap();
        assert!(json.contains("\"R\""));
        let back: PortfolioSolution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sol);
    }
}
