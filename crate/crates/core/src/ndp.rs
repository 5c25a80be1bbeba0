//! Nested deterministic DP over a full series with a cyclic boundary, and the
//! aggregated-demand (AWD) two-stage baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::grid::StorageGrid;
use crate::hydro::{transition, StepRecord, SystemSpec, TransitionParams, UserModel};
use crate::simulate::{simulate_policy, OutcomeSeries, Policy};

/// Relative tolerance under which two candidate costs count as equal.
pub(crate) const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpOptions {
    pub gamma: f64,
    pub k_max: usize,
    /// Consecutive unchanged cycles needed to stop.
    pub stable_cycles: usize,
    pub boundary: Boundary,
}

/// What lies beyond the last step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// The last step connects to the first; sweeps repeat until stable.
    #[default]
    Cyclic,
    /// Zero terminal value and a single sweep.
    Free,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            k_max: 10,
            stable_cycles: 1,
            boundary: Boundary::Cyclic,
        }
    }
}

/// Transition costs g(t, i, j); infeasible moves hold `f64::INFINITY`.
#[derive(Debug, Clone)]
pub struct CostTable {
    m: usize,
    data: Vec<f64>,
}

impl CostTable {
    pub fn build(
        spec: &SystemSpec,
        series: &[StepRecord],
        grid: &StorageGrid,
        params: &TransitionParams,
    ) -> Result<Self, SolveError> {
        let m = grid.len();
        let params = TransitionParams {
            ceiling: Some(grid.max()),
            ..*params
        };
        let blocks: Vec<Vec<f64>> = series
            .par_iter()
            .map(|rec| {
                let mut block = vec![f64::INFINITY; m * m];
                for i in 0..m {
                    for j in 0..m {
                        if let Ok(o) = transition(spec, rec, grid.get(i), grid.get(j), &params) {
                            block[i * m + j] = o.cost;
                        }
                    }
                }
                block
            })
            .collect();
        Ok(Self {
            m,
            data: blocks.concat(),
        })
    }

    pub fn steps(&self) -> usize {
        self.data.len() / (self.m * self.m)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.data[(t * self.m + i) * self.m + j]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let a = (t * self.m + i) * self.m;
        &self.data[a..a + self.m]
    }
}

/// Index of the cheapest entry of `cand`, lowest index on ties.
pub(crate) fn argmin_lowest(cand: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in cand.enumerate() {
        if !c.is_finite() {
            continue;
        }
        match best {
            None => best = Some((j, c)),
            Some((_, b)) => {
                if c < b - TIE_RTOL * b.abs().max(c.abs()).max(1e-300) {
                    best = Some((j, c));
                }
            }
        }
    }
    best
}

/// Optimal action and value tables of a converged cyclic DP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub grid: StorageGrid,
    /// actions[t][i]: next-storage index from grid index i at step t.
    pub actions: Vec<Vec<usize>>,
    /// values[t][i] after the final sweep.
    pub values: Vec<Vec<f64>>,
    /// Values used beyond the last step during the final sweep.
    pub terminal: Vec<f64>,
    pub cycles: usize,
    pub gamma: f64,
}

impl DpSolution {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Grid indices visited from `start`, including the start.
    pub fn index_path(&self, start: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.steps() + 1);
        let mut i = start;
        path.push(i);
        for a in &self.actions {
            i = a[i];
            path.push(i);
        }
        path
    }

    pub fn policy(&self) -> DpPolicy<'_> {
        DpPolicy { sol: self }
    }
}

/// Table lookup over the same series the solution was computed on.
#[derive(Debug, Clone, Copy)]
pub struct DpPolicy<'a> {
    sol: &'a DpSolution,
}

impl Policy for DpPolicy<'_> {
    fn next_storage(&self, k: usize, s: f64, _rec: &StepRecord) -> Result<f64, SolveError> {
        let row = self
            .sol
            .actions
            .get(k)
            .ok_or_else(|| SolveError::MissingPolicyEntry(format!("step {k}")))?;
        let i = self.sol.grid.nearest(s);
        Ok(self.sol.grid.get(row[i]))
    }
}

/// Cyclic backward induction over a precomputed cost table.
pub fn solve_table(table: &CostTable, grid: &StorageGrid, opts: &DpOptions) -> Result<DpSolution, SolveError> {
    let steps = table.steps();
    let m = table.m();
    if steps == 0 {
        return Err(SolveError::EmptyInput("series has no steps".into()));
    }
    if opts.k_max == 0 || opts.stable_cycles == 0 {
        return Err(SolveError::InvalidConfig(
            "k_max and stable_cycles must be at least 1".into(),
        ));
    }
    let mut values = vec![vec![0.0; m]; steps];
    let mut actions = vec![vec![0usize; m]; steps];
    let mut prev_actions: Option<Vec<Vec<usize>>> = None;
    let mut terminal = vec![0.0; m];
    let mut stable = 0;
    let mut changed = 0;
    for cycle in 1..=opts.k_max {
        let mut next = terminal.clone();
        for t in (0..steps).rev() {
            for i in 0..m {
                let row = table.row(t, i);
                let (j, v) = argmin_lowest(row.iter().zip(&next).map(|(g, v)| g + opts.gamma * v))
                    .ok_or(SolveError::NoFeasibleAction { t, i })?;
                actions[t][i] = j;
                values[t][i] = v;
            }
            next.clone_from(&values[t]);
        }
        if let Some(prev) = &prev_actions {
            changed = prev
                .iter()
                .zip(&actions)
                .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
                .sum();
            if changed == 0 {
                stable += 1;
            } else {
                stable = 0;
            }
        }
        if stable >= opts.stable_cycles || opts.boundary == Boundary::Free {
            return Ok(DpSolution {
                grid: grid.clone(),
                actions,
                values,
                terminal,
                cycles: cycle,
                gamma: opts.gamma,
            });
        }
        log::debug!("cycle {cycle}: {changed} actions changed");
        prev_actions = Some(actions.clone());
        terminal = values[0].clone();
    }
    Err(SolveError::NotConverged {
        cycles: opts.k_max,
        changed,
    })
}

/// Nested DP: every transition splits water among users optimally.
pub fn ndp_solve(
    spec: &SystemSpec,
    series: &[StepRecord],
    grid: &StorageGrid,
    params: &TransitionParams,
    opts: &DpOptions,
) -> Result<DpSolution, SolveError> {
    let params = params.with_user_model(UserModel::Nested);
    let table = CostTable::build(spec, series, grid, &params)?;
    solve_table(&table, grid, opts)
}

/// AWD baseline, stage 1: DP on levels, one aggregated user and hydropower.
/// Stage 2 is a simulation of the returned table with nested parameters,
/// which splits each stage-1 release among the users without changing it.
pub fn awd_dp_solve(
    spec: &SystemSpec,
    series: &[StepRecord],
    grid: &StorageGrid,
    params: &TransitionParams,
    opts: &DpOptions,
) -> Result<DpSolution, SolveError> {
    let params = params.with_user_model(UserModel::Aggregated);
    let table = CostTable::build(spec, series, grid, &params)?;
    solve_table(&table, grid, opts)
}

/// Start storage whose optimal trajectory returns to itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicStart {
    pub index: usize,
    pub storage: f64,
    /// False when no grid point is a fixed point and the closest one was taken.
    pub exact: bool,
}

/// Lowest grid storage that the policy brings back to itself after the
/// whole series; otherwise the one ending closest to where it started.
pub fn find_cyclic_start(sol: &DpSolution) -> CyclicStart {
    let grid = &sol.grid;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..grid.len() {
        let end = *sol.index_path(i).last().unwrap();
        if end == i {
            return CyclicStart {
                index: i,
                storage: grid.get(i),
                exact: true,
            };
        }
        let gap = (grid.get(end) - grid.get(i)).abs();
        if gap < best.1 {
            best = (i, gap);
        }
    }
    log::warn!("no cyclic start storage on the grid; using the closest one");
    CyclicStart {
        index: best.0,
        storage: grid.get(best.0),
        exact: false,
    }
}

/// Optimal trajectory from the cyclic start, simulated with `params`.
pub fn optimal_trajectory(
    spec: &SystemSpec,
    series: &[StepRecord],
    sol: &DpSolution,
    params: &TransitionParams,
) -> Result<(CyclicStart, OutcomeSeries), SolveError> {
    let start = find_cyclic_start(sol);
    let params = TransitionParams {
        ceiling: Some(sol.grid.max()),
        ..*params
    };
    let out = simulate_policy(spec, series, &sol.policy(), start.storage, &params)?;
    Ok((start, out))
}

/// Largest violation of V(t,i) = min_j g + γ V(t+1,j) over all states.
pub fn bellman_residual(table: &CostTable, sol: &DpSolution) -> f64 {
    let steps = table.steps();
    let mut worst: f64 = 0.0;
    for t in 0..steps {
        let next = if t + 1 < steps {
            &sol.values[t + 1]
        } else {
            &sol.terminal
        };
        for i in 0..table.m() {
            let best = table
                .row(t, i)
                .iter()
                .zip(next)
                .map(|(g, v)| g + sol.gamma * v)
                .fold(f64::INFINITY, f64::min);
            let v = sol.values[t][i];
            worst = worst.max((best - v).abs() / v.abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(m: usize, data: Vec<f64>) -> CostTable {
        CostTable { m, data }
    }

    #[test]
    fn argmin_prefers_lowest_index_on_ties() {
        assert_eq!(argmin_lowest([3.0, 1.0, 1.0].into_iter()), Some((1, 1.0)));
        assert_eq!(argmin_lowest([f64::INFINITY, 2.0].into_iter()), Some((1, 2.0)));
        assert_eq!(argmin_lowest([f64::INFINITY].into_iter()), None);
    }

    #[test]
    fn two_state_cycle() {
        // Staying in state 1 is free, state 0 costs 1 per step.
        let g = StorageGrid::new(vec![1.0, 2.0]).unwrap();
        let t = table(2, vec![1.0, 5.0, 5.0, 0.0, 1.0, 5.0, 5.0, 0.0]);
        let sol = solve_table(&t, &g, &DpOptions::default()).unwrap();
        assert_eq!(sol.actions, vec![vec![0, 1], vec![0, 1]]);
        assert!(bellman_residual(&t, &sol) < 1e-12);
        let c = find_cyclic_start(&sol);
        assert_eq!(c.index, 0);
        assert!(c.exact);
    }

    #[test]
    fn dead_end_is_reported() {
        let g = StorageGrid::new(vec![1.0, 2.0]).unwrap();
        let inf = f64::INFINITY;
        let t = table(2, vec![0.0, 0.0, inf, inf]);
        assert_eq!(
            solve_table(&t, &g, &DpOptions::default()).unwrap_err(),
            SolveError::NoFeasibleAction { t: 0, i: 1 }
        );
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = StorageGrid::new(vec![1.0, 2.0]).unwrap();
        let t = table(2, vec![0.0, 1.0, 1.0, 0.0]);
        let opts = DpOptions {
            k_max: 1,
            ..Default::default()
        };
        assert!(matches!(
            solve_table(&t, &g, &opts),
            Err(SolveError::NotConverged { .. })
        ));
    }
}
