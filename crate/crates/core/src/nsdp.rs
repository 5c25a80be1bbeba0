//! Nested stochastic DP: inflows are clustered into classes, class-to-class
//! transitions are counted per step of the year, and an expected-value
//! Bellman recursion yields a one-year cyclostationary policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::grid::StorageGrid;
use crate::hydro::{transition, StepRecord, SystemSpec, TransitionParams, UserModel};
use crate::ndp::argmin_lowest;
use crate::simulate::Policy;

/// Default number of inflow classes.
pub const DEFAULT_CLASSES: usize = 5;

/// One-dimensional k-medians clustering of inflow values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowClustering {
    /// Ascending cluster centres.
    pub centres: Vec<f64>,
    /// Upper bound of each class interval; the last is five times the top centre.
    pub boundaries: Vec<f64>,
    /// Objective Σ|x − c| after every Lloyd iteration.
    pub objective_history: Vec<f64>,
}

impl InflowClustering {
    pub fn from_centres(mut centres: Vec<f64>) -> Result<Self, SolveError> {
        if centres.is_empty() {
            return Err(SolveError::EmptyInput("no cluster centres".into()));
        }
        centres.sort_by(f64::total_cmp);
        if centres.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolveError::InvalidConfig("cluster centres must be distinct".into()));
        }
        let l = centres.len();
        let mut boundaries: Vec<f64> = centres.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        boundaries.push(centres[l - 1] * 5.0);
        Ok(Self {
            centres,
            boundaries,
            objective_history: Vec::new(),
        })
    }

    pub fn classes(&self) -> usize {
        self.centres.len()
    }

    /// Class of `x`. A value on a boundary belongs to the lower class;
    /// values above the top boundary belong to the top class.
    pub fn classify(&self, x: f64) -> usize {
        let k = self.boundaries.partition_point(|&b| b < x);
        k.min(self.centres.len() - 1)
    }

    pub fn objective(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| (x - self.centres[self.classify(x)]).abs()).sum()
    }
}

/// Lloyd iteration under absolute distance, seeded k-means++ style.
pub fn kmeans_cluster(data: &[f64], classes: usize, seed: u64) -> Result<InflowClustering, SolveError> {
    if data.is_empty() {
        return Err(SolveError::EmptyInput("no data to cluster".into()));
    }
    if data.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(SolveError::InvalidConfig(
            "cluster data must be finite and nonnegative".into(),
        ));
    }
    let mut distinct = data.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if classes == 0 || classes > distinct.len() {
        return Err(SolveError::InvalidConfig(format!(
            "number of classes {classes} must be in 1..={}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = vec![data[rng.gen_range(0..data.len())]];
    while centres.len() < classes {
        let dist: Vec<f64> = data.iter().map(|&x| nearest(&centres, x).1).collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut k = 0;
            while k + 1 < dist.len() && (u >= dist[k] || dist[k] == 0.0) {
                u -= dist[k];
                k += 1;
            }
            k
        } else {
            0
        };
        centres.push(data[pick]);
    }

    let mut assign = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    for _ in 0..1_000 {
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(data) {
            let (c, _) = nearest(&centres, x);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); classes];
        for (&a, &x) in assign.iter().zip(data) {
            members[a].push(x);
        }
        let mut reseeded = false;
        for c in 0..classes {
            if members[c].is_empty() {
                // Move the empty centre onto the worst-served datum.
                let far = data
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| (k, (x - centres[assign[k]]).abs()))
                    .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                centres[c] = data[far];
                assign[far] = c;
                reseeded = true;
            } else {
                centres[c] = median(&mut members[c]);
            }
        }
        let j: f64 = assign.iter().zip(data).map(|(&a, &x)| (x - centres[a]).abs()).sum();
        history.push(j);
        if !changed && !reseeded {
            break;
        }
    }
    let mut out = InflowClustering::from_centres(centres)?;
    out.objective_history = history;
    Ok(out)
}

fn nearest(centres: &[f64], x: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, &c) in centres.iter().enumerate() {
        let d = (x - c).abs();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per step of the year, an L×L row-stochastic matrix of class transitions
/// from step t to step t+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixSet {
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl TransitionMatrixSet {
    pub fn get(&self, t: usize, from: usize, to: usize) -> f64 {
        self.matrices[t][from][to]
    }

    /// Largest |Σ_j P_ij − 1| over all rows.
    pub fn max_row_error(&self) -> f64 {
        self.matrices
            .iter()
            .flatten()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Count class transitions in a class sequence of whole years. The last step
/// of each year leads into the first step of the next; the very last step
/// leads back to the first. A trailing partial year is dropped.
pub fn build_transition_matrices(
    classes_seq: &[usize],
    classes: usize,
    steps_per_year: usize,
) -> Result<TransitionMatrixSet, SolveError> {
    let years = classes_seq.len() / steps_per_year;
    if years == 0 {
        return Err(SolveError::EmptyInput("need at least one full year".into()));
    }
    if !classes_seq.len().is_multiple_of(steps_per_year) {
        log::warn!(
            "dropping {} trailing steps of a partial year",
            classes_seq.len() % steps_per_year
        );
    }
    let n = years * steps_per_year;
    let seq = &classes_seq[..n];
    let mut counts = vec![vec![vec![0usize; classes]; classes]; steps_per_year];
    for k in 0..n {
        let next = seq[(k + 1) % n];
        counts[k % steps_per_year][seq[k]][next] += 1;
    }
    let matrices = counts
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|row| {
                    let total: usize = row.iter().sum();
                    if total == 0 {
                        vec![1.0 / classes as f64; classes]
                    } else {
                        row.into_iter().map(|c| c as f64 / total as f64).collect()
                    }
                })
                .collect()
        })
        .collect();
    Ok(TransitionMatrixSet { matrices })
}

/// Mean that reproduces the common value exactly when all inputs are equal.
fn stable_mean(xs: &[f64]) -> Option<f64> {
    let first = *xs.first()?;
    Some(first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64)
}

/// Stochastic description of the training inflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowModel {
    pub steps_per_year: usize,
    pub clustering_q: InflowClustering,
    pub clustering_qtr: InflowClustering,
    pub tms: TransitionMatrixSet,
    /// Reservoir inflow used for class l at step-of-year t.
    pub q_rep: Vec<Vec<f64>>,
    /// Tributary inflow used for class l at step-of-year t.
    pub qtr_rep: Vec<Vec<f64>>,
}

impl InflowModel {
    /// Cluster q and q_tr with `classes` classes each and build the
    /// per-step transition matrices from q's class sequence.
    pub fn fit(train: &[StepRecord], steps_per_year: usize, classes: usize, seed: u64) -> Result<Self, SolveError> {
        let years = train.len() / steps_per_year;
        if years == 0 {
            return Err(SolveError::EmptyInput("training series shorter than a year".into()));
        }
        let train = &train[..years * steps_per_year];
        let q: Vec<f64> = train.iter().map(|r| r.q).collect();
        let qtr = train
            .iter()
            .map(|r| r.tributary_inflow())
            .collect::<Result<Vec<_>, _>>()?;
        let clustering_q = kmeans_cluster(&q, classes, seed)?;
        let clustering_qtr = kmeans_cluster(&qtr, classes, seed.wrapping_add(1))?;
        let seq: Vec<usize> = q.iter().map(|&x| clustering_q.classify(x)).collect();
        let tms = build_transition_matrices(&seq, classes, steps_per_year)?;

        let mut q_rep = vec![vec![0.0; classes]; steps_per_year];
        let mut qtr_rep = vec![vec![0.0; classes]; steps_per_year];
        for t in 0..steps_per_year {
            for l in 0..classes {
                let idx: Vec<usize> = (t..train.len())
                    .step_by(steps_per_year)
                    .filter(|&k| seq[k] == l)
                    .collect();
                let qs: Vec<f64> = idx.iter().map(|&k| q[k]).collect();
                let trs: Vec<f64> = idx.iter().map(|&k| qtr[k]).collect();
                q_rep[t][l] = stable_mean(&qs).unwrap_or(clustering_q.centres[l]);
                qtr_rep[t][l] = stable_mean(&trs).unwrap_or(clustering_qtr.centres[l]);
            }
        }
        Ok(Self {
            steps_per_year,
            clustering_q,
            clustering_qtr,
            tms,
            q_rep,
            qtr_rep,
        })
    }

    pub fn classes(&self) -> usize {
        self.clustering_q.classes()
    }

    /// Representative record for class `l` at step-of-year `t`, with the
    /// demands of `demand`.
    pub fn representative(&self, demand: &StepRecord, t: usize, l: usize) -> StepRecord {
        let q = self.q_rep[t][l];
        let qtr = self.qtr_rep[t][l];
        StepRecord {
            t,
            q,
            q1: q,
            q2: q,
            q3: q + qtr,
            ..*demand
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpOptions {
    pub gamma: f64,
    pub k_max: usize,
    pub stable_cycles: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            k_max: 50,
            stable_cycles: 3,
        }
    }
}

/// Cyclostationary policy over (step of year, storage index, inflow class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpPolicy {
    pub grid: StorageGrid,
    pub model: InflowModel,
    /// actions[t][i][l]
    pub actions: Vec<Vec<Vec<usize>>>,
    pub values: Vec<Vec<Vec<f64>>>,
    pub terminal: Vec<Vec<f64>>,
    pub cycles: usize,
    pub gamma: f64,
}

impl SdpPolicy {
    /// Next storage for actual inflow `q` at step-of-year `t` from storage `s`.
    pub fn lookup(&self, t: usize, s: f64, q: f64) -> Result<f64, SolveError> {
        let t = t % self.model.steps_per_year;
        let i = self.grid.nearest(s);
        let l = self.model.clustering_q.classify(q);
        let j = self
            .actions
            .get(t)
            .and_then(|a| a.get(i))
            .and_then(|a| a.get(l))
            .ok_or_else(|| SolveError::MissingPolicyEntry(format!("t={t}, i={i}, class={l}")))?;
        Ok(self.grid.get(*j))
    }
}

impl Policy for SdpPolicy {
    fn next_storage(&self, _k: usize, s: f64, rec: &StepRecord) -> Result<f64, SolveError> {
        self.lookup(rec.t, s, rec.q)
    }
}

/// Costs g(t, l, i, j) for the representative inflows.
pub struct SdpCosts {
    m: usize,
    classes: usize,
    data: Vec<f64>,
}

impl SdpCosts {
    pub fn build(
        spec: &SystemSpec,
        demand_year: &[StepRecord],
        model: &InflowModel,
        grid: &StorageGrid,
        params: &TransitionParams,
    ) -> Self {
        let m = grid.len();
        let classes = model.classes();
        let spy = model.steps_per_year;
        let params = TransitionParams {
            ceiling: Some(grid.max()),
            include_hydropower: false,
            user_model: UserModel::Nested,
            ..*params
        };
        let data: Vec<f64> = (0..spy * classes)
            .into_par_iter()
            .flat_map_iter(|tl| {
                let (t, l) = (tl / classes, tl % classes);
                let rec = model.representative(&demand_year[t], t, l);
                let mut block = vec![f64::INFINITY; m * m];
                for i in 0..m {
                    for j in 0..m {
                        if let Ok(o) = transition(spec, &rec, grid.get(i), grid.get(j), &params) {
                            block[i * m + j] = o.cost;
                        }
                    }
                }
                block
            })
            .collect();
        Self { m, classes, data }
    }

    pub fn row(&self, t: usize, l: usize, i: usize) -> &[f64] {
        let a = ((t * self.classes + l) * self.m + i) * self.m;
        &self.data[a..a + self.m]
    }
}

/// Expected-value backward recursion, repeated over the year until the
/// action table stops changing.
///
/// `demand_year` holds one record per step of the year; only its demands and
/// critical levels are used. Hydropower is not part of the objective.
pub fn nsdp_solve(
    spec: &SystemSpec,
    demand_year: &[StepRecord],
    model: &InflowModel,
    grid: &StorageGrid,
    params: &TransitionParams,
    opts: &SdpOptions,
) -> Result<SdpPolicy, SolveError> {
    let spy = model.steps_per_year;
    if demand_year.len() != spy {
        return Err(SolveError::LengthMismatch {
            left: demand_year.len(),
            right: spy,
        });
    }
    if opts.k_max == 0 || opts.stable_cycles == 0 {
        return Err(SolveError::InvalidConfig(
            "k_max and stable_cycles must be at least 1".into(),
        ));
    }
    let costs = SdpCosts::build(spec, demand_year, model, grid, params);
    solve_costs(&costs, model, grid, opts)
}

fn expected(model: &InflowModel, t: usize, l: usize, next: &[Vec<f64>], j: usize) -> f64 {
    let p = &model.tms.matrices[t][l];
    p.iter()
        .zip(&next[j])
        .map(|(p, v)| if *p == 0.0 { 0.0 } else { p * v })
        .sum()
}

fn solve_costs(
    costs: &SdpCosts,
    model: &InflowModel,
    grid: &StorageGrid,
    opts: &SdpOptions,
) -> Result<SdpPolicy, SolveError> {
    let spy = model.steps_per_year;
    let m = grid.len();
    let classes = model.classes();
    let mut values = vec![vec![vec![0.0; classes]; m]; spy];
    let mut actions = vec![vec![vec![0usize; classes]; m]; spy];
    let mut terminal = vec![vec![0.0; classes]; m];
    let mut prev: Option<Vec<Vec<Vec<usize>>>> = None;
    let mut stable = 0;
    let mut changed = 0;
    for cycle in 1..=opts.k_max {
        let mut next = terminal.clone();
        for t in (0..spy).rev() {
            for i in 0..m {
                for l in 0..classes {
                    let row = costs.row(t, l, i);
                    let cand = (0..m).map(|j| {
                        let g = row[j];
                        if g.is_finite() {
                            g + opts.gamma * expected(model, t, l, &next, j)
                        } else {
                            f64::INFINITY
                        }
                    });
                    let (j, v) = argmin_lowest(cand).ok_or(SolveError::NoFeasibleActionClass { t, i, class: l })?;
                    actions[t][i][l] = j;
                    values[t][i][l] = v;
                }
            }
            next.clone_from(&values[t]);
        }
        if let Some(p) = &prev {
            changed = p
                .iter()
                .flatten()
                .zip(actions.iter().flatten())
                .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
                .sum();
            stable = if changed == 0 { stable + 1 } else { 0 };
        }
        if stable >= opts.stable_cycles {
            return Ok(SdpPolicy {
                grid: grid.clone(),
                model: model.clone(),
                actions,
                values,
                terminal,
                cycles: cycle,
                gamma: opts.gamma,
            });
        }
        prev = Some(actions.clone());
        terminal = values[0].clone();
    }
    Err(SolveError::NotConverged {
        cycles: opts.k_max,
        changed,
    })
}

/// Largest relative violation of the expected-value Bellman equation.
pub fn sdp_bellman_residual(costs: &SdpCosts, policy: &SdpPolicy) -> f64 {
    let spy = policy.model.steps_per_year;
    let m = policy.grid.len();
    let mut worst: f64 = 0.0;
    for t in 0..spy {
        let next = if t + 1 < spy {
            &policy.values[t + 1]
        } else {
            &policy.terminal
        };
        for i in 0..m {
            for l in 0..policy.model.classes() {
                let best = (0..m)
                    .map(|j| costs.row(t, l, i)[j] + policy.gamma * expected(&policy.model, t, l, next, j))
                    .fold(f64::INFINITY, f64::min);
                let v = policy.values[t][i][l];
                worst = worst.max((best - v).abs() / v.abs().max(1.0));
            }
        }
    }
    worst
}
