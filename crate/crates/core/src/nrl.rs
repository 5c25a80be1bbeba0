//! Nested Q-learning over (step of year, storage, inflow class, tributary
//! class) states with feasible-only action lists.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::grid::StorageGrid;
use crate::hydro::{release_needed, StepRecord, SystemSpec, TransitionParams, UserModel};
use crate::ndp::CostTable;
use crate::nsdp::InflowClustering;
use crate::simulate::{s_n_benchmark, simulate_policy, OutcomeSeries, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    /// Step of the year.
    pub t: u32,
    /// Storage grid index.
    pub i: u32,
    pub lq: u16,
    pub lqtr: u16,
}

/// Sparse Q table. Absent pairs read as 0.
#[derive(Debug, Clone, Default)]
pub struct QStore {
    map: HashMap<StateKey, Vec<(u32, f64)>>,
}

impl QStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, x: &StateKey, a: usize) -> f64 {
        self.map
            .get(x)
            .and_then(|v| v.iter().find(|(j, _)| *j as usize == a))
            .map_or(0.0, |(_, q)| *q)
    }

    pub fn set(&mut self, x: StateKey, a: usize, q: f64) {
        let v = self.map.entry(x).or_default();
        match v.iter_mut().find(|(j, _)| *j as usize == a) {
            Some(e) => e.1 = q,
            None => v.push((a as u32, q)),
        }
    }

    /// Largest Q over `actions` (0 for an empty list).
    pub fn max_over(&self, x: &StateKey, actions: &[usize]) -> f64 {
        let stored = self.map.get(x);
        let mut best = f64::NEG_INFINITY;
        for &a in actions {
            let q = stored
                .and_then(|v| v.iter().find(|(j, _)| *j as usize == a))
                .map_or(0.0, |(_, q)| *q);
            best = best.max(q);
        }
        if best == f64::NEG_INFINITY {
            0.0
        } else {
            best
        }
    }

    /// Highest-valued action in `actions`; lowest index on ties.
    pub fn argmax(&self, x: &StateKey, actions: &[usize]) -> Option<usize> {
        let stored = self.map.get(x);
        let mut best: Option<(usize, f64)> = None;
        for &a in actions {
            let q = stored
                .and_then(|v| v.iter().find(|(j, _)| *j as usize == a))
                .map_or(0.0, |(_, q)| *q);
            if best.is_none_or(|(b, bq)| q > bq || (q == bq && a < b)) {
                best = Some((a, q));
            }
        }
        best.map(|(a, _)| a)
    }

    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateKey, &Vec<(u32, f64)>)> {
        self.map.iter()
    }
}

/// One Q-learning update; returns |ΔQ|.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    store: &mut QStore,
    x: StateKey,
    a: usize,
    reward: f64,
    next: &StateKey,
    next_actions: &[usize],
    alpha: f64,
    gamma: f64,
) -> f64 {
    let old = store.get(&x, a);
    let target = reward + gamma * store.max_over(next, next_actions);
    let delta = alpha * (target - old);
    store.set(x, a, old + delta);
    delta.abs()
}

/// Grid indices reachable from `s_t` in one step under `rec`.
pub fn feasible_actions(
    spec: &SystemSpec,
    grid: &StorageGrid,
    s_t: f64,
    rec: &StepRecord,
) -> Result<Vec<usize>, SolveError> {
    let cap = spec.release_cap(rec.t);
    let mut out = Vec::new();
    for j in 0..grid.len() {
        let (r, _) = release_needed(spec, rec, s_t, grid.get(j))?;
        let r = if r < 0.0 && r >= -1e-12 * s_t.max(rec.q).max(1.0) {
            0.0
        } else {
            r
        };
        if r < 0.0 {
            continue;
        }
        if spec.release_cap_enforced && r > cap && j != grid.top() {
            continue;
        }
        out.push(j);
    }
    Ok(out)
}

/// What the episode's final step bootstraps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TerminalBootstrap {
    /// The first-step state of the same episode (cyclic year).
    #[default]
    Cyclic,
    Zero,
}

/// Piecewise-constant exploration rate: each breakpoint's value holds from
/// its episode until the next breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule(pub Vec<(usize, f64)>);

impl EpsilonSchedule {
    /// 0.8, 0.4, 0.2, 0.05, 0.0001 from episodes 0, M/4, M/2, 3M/4, 7M/8.
    pub fn scaled(max_episodes: usize) -> Self {
        let m = max_episodes as f64;
        Self(vec![
            (0, 0.8),
            ((m / 4.0) as usize, 0.4),
            ((m / 2.0) as usize, 0.2),
            ((3.0 * m / 4.0) as usize, 0.05),
            ((3.5 * m / 4.0) as usize, 0.0001),
        ])
    }

    pub fn at(&self, episode: usize) -> f64 {
        let mut e = self.0.first().map_or(0.0, |b| b.1);
        for &(n, v) in &self.0 {
            if episode >= n {
                e = v;
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub alpha0: f64,
    pub alpha_min: f64,
    pub gamma: f64,
    /// Breakpoints; defaults to [`EpsilonSchedule::scaled`] of `max_episodes`.
    pub epsilon: Option<EpsilonSchedule>,
    pub max_episodes: usize,
    /// Stop once a full pass over the training years has LR below this.
    pub learning_threshold: f64,
    /// α is recomputed every this many episodes.
    pub alpha_stride: usize,
    pub checkpoint_every: usize,
    pub terminal: TerminalBootstrap,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.8,
            alpha_min: 0.001,
            gamma: 0.5,
            epsilon: None,
            max_episodes: 400_000,
            learning_threshold: 0.0,
            alpha_stride: 500,
            checkpoint_every: 10_000,
            terminal: TerminalBootstrap::Cyclic,
            seed: 1,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidConfig(m.to_string()));
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return bad("alpha0 must be in (0, 1]");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha0) {
            return bad("alpha_min must be in (0, alpha0]");
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in [0, 1]");
        }
        if self.gamma == 1.0 {
            log::warn!("gamma = 1: Q values are not guaranteed to stay bounded");
        }
        if let Some(e) = &self.epsilon {
            if e.0.iter().any(|(_, v)| !(0.0..=1.0).contains(v)) {
                return bad("epsilon values must be in [0, 1]");
            }
        }
        if !(self.learning_threshold >= 0.0) {
            return bad("learning threshold must be nonnegative");
        }
        if self.alpha_stride == 0 {
            return bad("alpha stride must be at least 1");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        self.epsilon
            .clone()
            .unwrap_or_else(|| EpsilonSchedule::scaled(self.max_episodes))
    }

    /// Linear decay from α₀ towards α_min over `max_episodes`, updated every
    /// `alpha_stride` episodes.
    pub fn alpha(&self, episode: usize) -> f64 {
        if self.max_episodes == 0 {
            return self.alpha0;
        }
        let n = (episode / self.alpha_stride) * self.alpha_stride;
        let a = self.alpha0 - (self.alpha0 - self.alpha_min) / self.max_episodes as f64 * n as f64;
        a.max(self.alpha_min)
    }
}

/// How a trained policy answers states it never visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MissingState {
    #[default]
    Error,
    /// Use the closest visited state of the same step: same classes and
    /// nearest storage first, then nearest classes.
    Nearest,
}

/// Greedy action table extracted from a Q store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlPolicy {
    pub grid: StorageGrid,
    pub steps_per_year: usize,
    pub clustering_q: InflowClustering,
    pub clustering_qtr: InflowClustering,
    /// Sorted by state.
    pub entries: Vec<(StateKey, usize)>,
    pub episodes: usize,
    pub final_lr: f64,
    pub missing: MissingState,
}

impl RlPolicy {
    pub fn from_store(
        store: &QStore,
        grid: &StorageGrid,
        steps_per_year: usize,
        clustering_q: &InflowClustering,
        clustering_qtr: &InflowClustering,
        episodes: usize,
        final_lr: f64,
    ) -> Self {
        let mut entries: Vec<(StateKey, usize)> = store
            .states()
            .filter_map(|(x, acts)| {
                acts.iter()
                    .copied()
                    .fold(None::<(u32, f64)>, |b, (a, q)| match b {
                        Some((ba, bq)) if bq > q || (bq == q && ba < a) => Some((ba, bq)),
                        _ => Some((a, q)),
                    })
                    .map(|(a, _)| (*x, a as usize))
            })
            .collect();
        entries.sort();
        Self {
            grid: grid.clone(),
            steps_per_year,
            clustering_q: clustering_q.clone(),
            clustering_qtr: clustering_qtr.clone(),
            entries,
            episodes,
            final_lr,
            missing: MissingState::Error,
        }
    }

    pub fn with_missing(mut self, m: MissingState) -> Self {
        self.missing = m;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn state_of(&self, t: usize, s: f64, q: f64, q_tr: f64) -> StateKey {
        StateKey {
            t: (t % self.steps_per_year) as u32,
            i: self.grid.nearest(s) as u32,
            lq: self.clustering_q.classify(q) as u16,
            lqtr: self.clustering_qtr.classify(q_tr) as u16,
        }
    }

    pub fn action(&self, x: &StateKey) -> Result<usize, SolveError> {
        if let Ok(k) = self.entries.binary_search_by(|(k, _)| k.cmp(x)) {
            return Ok(self.entries[k].1);
        }
        match self.missing {
            MissingState::Error => Err(SolveError::MissingPolicyEntry(format!(
                "t={}, i={}, q class={}, q_tr class={}",
                x.t, x.i, x.lq, x.lqtr
            ))),
            MissingState::Nearest => self
                .entries
                .iter()
                .filter(|(k, _)| k.t == x.t)
                .min_by_key(|(k, _)| {
                    let dc = k.lq.abs_diff(x.lq) as u64 + k.lqtr.abs_diff(x.lqtr) as u64;
                    (dc, k.i.abs_diff(x.i) as u64, k.i)
                })
                .map(|(_, a)| *a)
                .ok_or_else(|| SolveError::MissingPolicyEntry(format!("no visited state at step {}", x.t))),
        }
    }
}

impl Policy for RlPolicy {
    fn next_storage(&self, _k: usize, s: f64, rec: &StepRecord) -> Result<f64, SolveError> {
        let x = self.state_of(rec.t, s, rec.q, rec.tributary_inflow()?);
        Ok(self.grid.get(self.action(&x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    /// Σ|ΔQ| over the most recent full pass over the training years.
    pub lr: f64,
    pub s_n: Option<f64>,
}

/// Storage trajectory the greedy policy is compared against at checkpoints.
pub struct Reference<'a> {
    pub series: &'a [StepRecord],
    pub outcome: &'a OutcomeSeries,
    pub params: TransitionParams,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub policy: RlPolicy,
    pub curve: Vec<Checkpoint>,
    pub store_size: usize,
}

/// Train on whole years of `train`; episode n replays year n mod N.
#[allow(clippy::too_many_arguments)]
pub fn nrl_train(
    spec: &SystemSpec,
    train: &[StepRecord],
    grid: &StorageGrid,
    clustering_q: &InflowClustering,
    clustering_qtr: &InflowClustering,
    params: &TransitionParams,
    cfg: &RlConfig,
    reference: Option<&Reference<'_>>,
) -> Result<RlOutcome, SolveError> {
    cfg.validate()?;
    let spy = spec.steps_per_year;
    let years = train.len() / spy;
    if years == 0 {
        return Err(SolveError::EmptyInput("training series shorter than a year".into()));
    }
    let m = grid.len();
    let params = params.with_user_model(UserModel::Nested);
    let tables: Vec<CostTable> = (0..years)
        .map(|y| CostTable::build(spec, &train[y * spy..(y + 1) * spy], grid, &params))
        .collect::<Result<_, _>>()?;
    let classes: Vec<Vec<(u16, u16)>> = (0..years)
        .map(|y| {
            train[y * spy..(y + 1) * spy]
                .iter()
                .map(|r| {
                    Ok((
                        clustering_q.classify(r.q) as u16,
                        clustering_qtr.classify(r.tributary_inflow()?) as u16,
                    ))
                })
                .collect::<Result<Vec<_>, SolveError>>()
        })
        .collect::<Result<_, _>>()?;
    let feasible = |y: usize, t: usize, i: usize| -> Vec<usize> {
        let row = tables[y].row(t, i);
        (0..m).filter(|&j| row[j].is_finite()).collect()
    };

    let eps = cfg.epsilon_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = QStore::new();
    let mut curve = Vec::new();
    let mut lr_pass = 0.0;
    let mut last_lr = f64::NAN;
    let mut episodes = 0;
    let extract = |store: &QStore, episodes: usize, lr: f64| {
        RlPolicy::from_store(store, grid, spy, clustering_q, clustering_qtr, episodes, lr)
    };

    while episodes < cfg.max_episodes {
        let n = episodes;
        let y = n % years;
        let epsilon = eps.at(n);
        let alpha = cfg.alpha(n);
        let mut i = rng.gen_range(0..m);
        let (lq0, lqtr0) = classes[y][0];
        for t in 0..spy {
            let (lq, lqtr) = classes[y][t];
            let x = StateKey {
                t: t as u32,
                i: i as u32,
                lq,
                lqtr,
            };
            let acts = feasible(y, t, i);
            if acts.is_empty() {
                return Err(SolveError::NoFeasibleAction { t: y * spy + t, i });
            }
            let a = if rng.gen::<f64>() < epsilon {
                acts[rng.gen_range(0..acts.len())]
            } else {
                store.argmax(&x, &acts).expect("nonempty action list")
            };
            let reward = -tables[y].get(t, i, a);
            let (next, next_acts) = if t + 1 < spy {
                let (nq, ntr) = classes[y][t + 1];
                let nx = StateKey {
                    t: (t + 1) as u32,
                    i: a as u32,
                    lq: nq,
                    lqtr: ntr,
                };
                (nx, feasible(y, t + 1, a))
            } else {
                let nx = StateKey {
                    t: 0,
                    i: a as u32,
                    lq: lq0,
                    lqtr: lqtr0,
                };
                match cfg.terminal {
                    TerminalBootstrap::Cyclic => (nx, feasible(y, 0, a)),
                    TerminalBootstrap::Zero => (nx, Vec::new()),
                }
            };
            let d = q_update(&mut store, x, a, reward, &next, &next_acts, alpha, cfg.gamma);
            if !store.get(&x, a).is_finite() {
                return Err(SolveError::NonFiniteQ {
                    episode: n,
                    state: format!("{x:?}"),
                });
            }
            lr_pass += d;
            i = a;
        }
        episodes += 1;
        let pass_done = episodes % years == 0;
        if pass_done {
            last_lr = lr_pass;
            lr_pass = 0.0;
        }
        if cfg.checkpoint_every > 0 && episodes % cfg.checkpoint_every == 0 {
            let s_n = match reference {
                Some(r) => Some(greedy_s_n(spec, &extract(&store, episodes, last_lr), r)?),
                None => None,
            };
            curve.push(Checkpoint {
                episode: episodes,
                lr: last_lr,
                s_n,
            });
        }
        if pass_done && last_lr < cfg.learning_threshold {
            log::info!("learning threshold reached after {episodes} episodes");
            break;
        }
    }
    let store_size = store.len();
    Ok(RlOutcome {
        policy: extract(&store, episodes, last_lr),
        curve,
        store_size,
    })
}

fn greedy_s_n(spec: &SystemSpec, policy: &RlPolicy, r: &Reference<'_>) -> Result<f64, SolveError> {
    let p = policy.clone().with_missing(MissingState::Nearest);
    let out = simulate_policy(spec, r.series, &p, r.outcome.start_storage, &r.params)?;
    s_n_benchmark(r.outcome, &out)
}
