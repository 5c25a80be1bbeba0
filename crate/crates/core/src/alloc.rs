//! Per-transition water allocation: split a fixed volume among users so the
//! weighted (linear or quadratic) deficit is minimal.

use serde::{Deserialize, Serialize};

use crate::error::SolveError;

/// Default number of release increments for the quadratic formulation.
pub const DEFAULT_NU: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Minimize Σ wᵢ (dᵢ − rᵢ).
    Linear,
    /// Minimize Σ wᵢ (dᵢ − rᵢ)² over releases discretized in ν increments.
    Quadratic,
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Formulation::Linear => f.write_str("linear"),
            Formulation::Quadratic => f.write_str("quadratic"),
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "l" => Ok(Self::Linear),
            "quadratic" | "q" => Ok(Self::Quadratic),
            other => Err(format!("unknown formulation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub available: f64,
    pub demands: Vec<f64>,
    pub weights: Vec<f64>,
    pub formulation: Formulation,
    pub nu: usize,
}

impl AllocationProblem {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidConfig(m.to_string()));
        if self.demands.len() != self.weights.len() {
            return bad("demands and weights differ in length");
        }
        if !(self.available >= 0.0) {
            return bad("available water must be nonnegative");
        }
        if self.demands.iter().chain(&self.weights).any(|x| !(*x >= 0.0)) {
            return bad("demands and weights must be nonnegative");
        }
        if self.nu == 0 {
            return bad("nu must be at least 1");
        }
        Ok(())
    }

    /// Objective value of `releases` under this problem's formulation.
    pub fn objective(&self, releases: &[f64]) -> f64 {
        objective(self.formulation, &self.demands, &self.weights, releases)
    }
}

pub fn objective(formulation: Formulation, demands: &[f64], weights: &[f64], releases: &[f64]) -> f64 {
    demands
        .iter()
        .zip(weights)
        .zip(releases)
        .map(|((d, w), r)| {
            let deficit = (d - r).max(0.0);
            match formulation {
                Formulation::Linear => w * deficit,
                Formulation::Quadratic => w * deficit * deficit,
            }
        })
        .sum()
}

/// Optimal releases for `problem`.
pub fn allocate(problem: &AllocationProblem) -> Vec<f64> {
    let mut out = vec![0.0; problem.demands.len()];
    allocate_into(
        problem.available,
        &problem.demands,
        &problem.weights,
        problem.formulation,
        problem.nu,
        &mut out,
    );
    out
}

/// Allocation without heap use; `out` receives one release per user.
pub fn allocate_into(
    available: f64,
    demands: &[f64],
    weights: &[f64],
    formulation: Formulation,
    nu: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(demands.len(), weights.len());
    debug_assert_eq!(demands.len(), out.len());
    let total: f64 = demands.iter().sum();
    if total <= available {
        out.copy_from_slice(demands);
        return;
    }
    out.iter_mut().for_each(|r| *r = 0.0);
    if available <= 0.0 {
        return;
    }
    match formulation {
        Formulation::Linear => linear_fill(available, demands, weights, out),
        Formulation::Quadratic => quadratic_fill(available, demands, weights, nu.max(1), out),
    }
}

/// Greedy fill in strictly decreasing weight order; equal weights fill in
/// ascending user index. This is the vertex optimum of the LP.
fn linear_fill(available: f64, demands: &[f64], weights: &[f64], out: &mut [f64]) {
    let n = demands.len();
    let mut order = [0usize; 16];
    let mut heap_order;
    let order: &mut [usize] = if n <= order.len() {
        &mut order[..n]
    } else {
        heap_order = vec![0usize; n];
        &mut heap_order
    };
    for (k, o) in order.iter_mut().enumerate() {
        *o = k;
    }
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut left = available;
    for &i in order.iter() {
        if left <= 0.0 {
            break;
        }
        let r = demands[i].min(left);
        out[i] = r;
        left -= r;
    }
}

/// Discrete water-filling: hand out increments of `available / nu` one at a
/// time to the user whose weighted squared deficit drops the most. A user's
/// last increment is trimmed to its remaining demand.
fn quadratic_fill(available: f64, demands: &[f64], weights: &[f64], nu: usize, out: &mut [f64]) {
    let delta = available / nu as f64;
    let eps = 1e-12 * available.max(1.0);
    let mut left = available;
    loop {
        if left <= eps {
            break;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..demands.len() {
            let room = demands[i] - out[i];
            if room <= eps {
                continue;
            }
            let inc = delta.min(room).min(left);
            let after = room - inc;
            let gain = weights[i] * (room * room - after * after);
            if best.is_none_or(|(_, g, _)| gain > g) {
                best = Some((i, gain, inc));
            }
        }
        let Some((i, _, inc)) = best else { break };
        out[i] += inc;
        left -= inc;
    }
}

/// Largest instance the exhaustive oracle accepts.
pub const ORACLE_MAX_USERS: usize = 6;
pub const ORACLE_MAX_NU: usize = 60;

/// Exhaustive search for testing.
///
/// Quadratic: every allocation on the ν-grid, where each user's candidate
/// releases are the multiples of `available / ν` below its demand plus the
/// demand itself. Linear: every vertex of the LP, i.e. a set of fully served
/// users plus at most one user taking what is left. Ties are broken towards
/// the lexicographically largest release vector.
pub fn allocate_oracle(problem: &AllocationProblem) -> Result<Vec<f64>, SolveError> {
    problem.validate()?;
    let n = problem.demands.len();
    if n > ORACLE_MAX_USERS || problem.nu > ORACLE_MAX_NU {
        return Err(SolveError::OracleLimit(format!(
            "n={n} (max {ORACLE_MAX_USERS}), nu={} (max {ORACLE_MAX_NU})",
            problem.nu
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = problem.available;
    if a <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    if problem.formulation == Formulation::Linear {
        return Ok(linear_vertices(problem));
    }
    let delta = a / problem.nu as f64;
    let tol = 1e-9 * a.max(1.0);
    let grids: Vec<Vec<f64>> = problem
        .demands
        .iter()
        .map(|&d| {
            let mut g: Vec<f64> = (0..=problem.nu)
                .map(|k| k as f64 * delta)
                .filter(|&r| r < d - tol)
                .collect();
            g.push(d.min(a));
            g.dedup_by(|x, y| (*x - *y).abs() <= tol);
            g
        })
        .collect();

    struct Search<'a> {
        p: &'a AllocationProblem,
        grids: &'a [Vec<f64>],
        tol: f64,
        current: Vec<f64>,
        best: Option<(f64, Vec<f64>)>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, left: f64) {
            let n = self.grids.len();
            if i + 1 == n {
                // Cost is non-increasing in each release, so the last user
                // takes its largest affordable grid value.
                let r = self.grids[i]
                    .iter()
                    .rev()
                    .copied()
                    .find(|&r| r <= left + self.tol)
                    .unwrap_or(0.0);
                self.current[i] = r;
                let obj = self.p.objective(&self.current);
                let better = match &self.best {
                    None => true,
                    Some((b, v)) => {
                        let scale = 1e-12 * b.abs().max(1.0);
                        obj < b - scale || ((obj - b).abs() <= scale && lex_greater(&self.current, v))
                    }
                };
                if better {
                    self.best = Some((obj, self.current.clone()));
                }
                return;
            }
            for k in 0..self.grids[i].len() {
                let r = self.grids[i][k];
                if r > left + self.tol {
                    break;
                }
                self.current[i] = r;
                self.go(i + 1, left - r);
            }
        }
    }

    let mut s = Search {
        p: problem,
        grids: &grids,
        tol,
        current: vec![0.0; n],
        best: None,
    };
    s.go(0, a);
    Ok(s.best.map(|(_, v)| v).unwrap_or_else(|| vec![0.0; n]))
}

fn linear_vertices(p: &AllocationProblem) -> Vec<f64> {
    let n = p.demands.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for full in 0u32..(1 << n) {
        let used: f64 = (0..n).filter(|i| full >> i & 1 == 1).map(|i| p.demands[i]).sum();
        if used > p.available * (1.0 + 1e-12) {
            continue;
        }
        let left = (p.available - used).max(0.0);
        for frac in (0..n).filter(|i| full >> i & 1 == 0).map(Some).chain([None]) {
            let mut r: Vec<f64> = (0..n)
                .map(|i| if full >> i & 1 == 1 { p.demands[i] } else { 0.0 })
                .collect();
            if let Some(j) = frac {
                r[j] = p.demands[j].min(left);
            }
            let obj = p.objective(&r);
            let better = match &best {
                None => true,
                Some((b, v)) => {
                    let scale = 1e-12 * b.abs().max(1.0);
                    obj < b - scale || ((obj - b).abs() <= scale && lex_greater(&r, v))
                }
            };
            if better {
                best = Some((obj, r));
            }
        }
    }
    best.map(|(_, v)| v).unwrap_or_else(|| vec![0.0; n])
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

/// Largest cost decrease a single grid increment can buy for any user; the
/// tolerance used when comparing the quadratic greedy with the oracle.
pub fn increment_marginal_cost(problem: &AllocationProblem) -> f64 {
    let delta = problem.available / problem.nu.max(1) as f64;
    problem
        .demands
        .iter()
        .zip(&problem.weights)
        .map(|(d, w)| match problem.formulation {
            Formulation::Linear => w * delta.min(*d),
            Formulation::Quadratic => {
                let inc = delta.min(*d);
                w * (d * d - (d - inc) * (d - inc))
            }
        })
        .fold(0.0, f64::max)
}
