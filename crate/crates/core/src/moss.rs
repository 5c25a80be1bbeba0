//! Multi-objective sweeps: one single-objective solve per weight vector,
//! evaluated on a common series and filtered to the non-dominated set.
//!
//! [`solve`] is also the single-run entry point used by the workbench.

use serde::{Deserialize, Serialize};

use crate::alloc::{Formulation, DEFAULT_NU};
use crate::error::SolveError;
use crate::grid::StorageGrid;
use crate::hydro::{Deviations, StepRecord, SystemSpec, TransitionParams, WeightVector, N_OBJECTIVES};
use crate::ndp::{awd_dp_solve, find_cyclic_start, ndp_solve, optimal_trajectory, DpOptions, DpSolution};
use crate::nrl::{nrl_train, Checkpoint, MissingState, Reference, RlConfig, RlPolicy};
use crate::nsdp::{nsdp_solve, InflowModel, SdpOptions, SdpPolicy, DEFAULT_CLASSES};
use crate::simulate::{simulate_policy, OutcomeSeries};

/// Relative tolerance used when comparing objective sums.
pub const DOMINANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Ndp,
    AwdDp,
    Nsdp,
    Nrl,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ndp => "ndp",
            Self::AwdDp => "awd-dp",
            Self::Nsdp => "nsdp",
            Self::Nrl => "nrl",
        }
    }

    /// Name of the multi-objective variant.
    pub fn mo_label(self) -> &'static str {
        match self {
            Self::Ndp => "MOnDP",
            Self::AwdDp => "MOAWD-DP",
            Self::Nsdp => "MOnSDP",
            Self::Nrl => "MOnRL",
        }
    }

    /// Whether the solver learns from a training split.
    pub fn trains(self) -> bool {
        matches!(self, Self::Nsdp | Self::Nrl)
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ndp" => Ok(Self::Ndp),
            "awd-dp" | "awd" | "awddp" => Ok(Self::AwdDp),
            "nsdp" => Ok(Self::Nsdp),
            "nrl" => Ok(Self::Nrl),
            other => Err(format!("unknown solver '{other}'")),
        }
    }
}

/// Everything a solve needs besides the data, grid and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub formulation: Formulation,
    /// Allocation increments per step.
    pub nu: usize,
    pub dp: DpOptions,
    pub sdp: SdpOptions,
    /// Inflow classes for nSDP and nRL.
    pub classes: usize,
    pub rl: RlConfig,
    pub missing: MissingState,
    /// Simulation start; `None` takes the nDP cyclic start on the evaluation series.
    pub start_storage: Option<f64>,
    /// Seed for clustering; nRL uses `rl.seed`.
    pub seed: u64,
    /// Record Sₙ against the nDP trajectory on the evaluation series at nRL
    /// checkpoints.
    pub reference: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Ndp,
            formulation: Formulation::Quadratic,
            nu: DEFAULT_NU,
            dp: DpOptions::default(),
            sdp: SdpOptions::default(),
            classes: DEFAULT_CLASSES,
            rl: RlConfig::default(),
            missing: MissingState::default(),
            start_storage: None,
            seed: 1,
            reference: false,
        }
    }
}

impl SolverConfig {
    pub fn params(&self, weights: WeightVector) -> TransitionParams {
        TransitionParams::new(weights, self.formulation).with_nu(self.nu)
    }
}

/// Series a solve works on. For nDP and AWD-DP only `eval` is used.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub train: &'a [StepRecord],
    pub eval: &'a [StepRecord],
    /// One record per step of the year supplying demands for nSDP.
    pub demand_year: &'a [StepRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Artifact {
    Dp(DpSolution),
    Sdp(SdpPolicy),
    Rl { policy: RlPolicy, curve: Vec<Checkpoint> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub artifact: Artifact,
    /// Simulation on the evaluation series; `None` when an nRL run learned nothing.
    pub outcome: Option<OutcomeSeries>,
    pub start_storage: f64,
    /// Whether the DP start storage is an exact fixed point of its policy.
    pub cyclic_exact: Option<bool>,
}

/// Solve with one weight vector and simulate on `data.eval`.
pub fn solve(
    spec: &SystemSpec,
    data: &Dataset<'_>,
    grid: &StorageGrid,
    weights: WeightVector,
    cfg: &SolverConfig,
) -> Result<Solved, SolveError> {
    if data.eval.is_empty() {
        return Err(SolveError::EmptyInput("evaluation series is empty".into()));
    }
    let params = cfg.params(weights).with_ceiling(grid.max());
    match cfg.solver {
        SolverKind::Ndp | SolverKind::AwdDp => {
            let sol = if cfg.solver == SolverKind::Ndp {
                ndp_solve(spec, data.eval, grid, &params, &cfg.dp)?
            } else {
                awd_dp_solve(spec, data.eval, grid, &params, &cfg.dp)?
            };
            let (start, outcome) = match cfg.start_storage {
                Some(s0) => {
                    let out = simulate_policy(spec, data.eval, &sol.policy(), s0, &params)?;
                    (s0, out)
                }
                None => {
                    let (c, out) = optimal_trajectory(spec, data.eval, &sol, &params)?;
                    (c.storage, out)
                }
            };
            let exact = cfg.start_storage.is_none().then(|| find_cyclic_start(&sol).exact);
            Ok(Solved {
                artifact: Artifact::Dp(sol),
                outcome: Some(outcome),
                start_storage: start,
                cyclic_exact: exact,
            })
        }
        SolverKind::Nsdp | SolverKind::Nrl => {
            let spy = spec.steps_per_year;
            let needs_dp = cfg.start_storage.is_none() || (cfg.solver == SolverKind::Nrl && cfg.reference);
            let dp = if needs_dp {
                let sol = ndp_solve(spec, data.eval, grid, &params, &cfg.dp)?;
                Some(optimal_trajectory(spec, data.eval, &sol, &params)?)
            } else {
                None
            };
            let start = match (cfg.start_storage, &dp) {
                (Some(s), _) => s,
                (None, Some((c, _))) => c.storage,
                (None, None) => unreachable!("nDP runs whenever no start storage is given"),
            };
            let model = InflowModel::fit(data.train, spy, cfg.classes, cfg.seed)?;
            if cfg.solver == SolverKind::Nsdp {
                let policy = nsdp_solve(spec, data.demand_year, &model, grid, &params, &cfg.sdp)?;
                let outcome = simulate_policy(spec, data.eval, &policy, start, &params)?;
                return Ok(Solved {
                    artifact: Artifact::Sdp(policy),
                    outcome: Some(outcome),
                    start_storage: start,
                    cyclic_exact: None,
                });
            }
            let reference = match (&dp, cfg.reference) {
                (Some((c, out)), true) if c.storage == start => Some(Reference {
                    series: data.eval,
                    outcome: out,
                    params,
                }),
                _ => None,
            };
            let rl = nrl_train(
                spec,
                data.train,
                grid,
                &model.clustering_q,
                &model.clustering_qtr,
                &params,
                &cfg.rl,
                reference.as_ref(),
            )?;
            let policy = rl.policy.with_missing(cfg.missing);
            let outcome = if policy.is_empty() {
                None
            } else {
                Some(simulate_policy(spec, data.eval, &policy, start, &params)?)
            };
            Ok(Solved {
                artifact: Artifact::Rl {
                    policy,
                    curve: rl.curve,
                },
                outcome,
                start_storage: start,
                cyclic_exact: None,
            })
        }
    }
}

/// Seed of sweep entry `index`.
pub fn entry_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &Deviations, b: &Deviations) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        let tol = DOMINANCE_TOL * x.abs().max(y.abs()).max(1.0);
        if *x > y + tol {
            return false;
        }
        if *x < y - tol {
            strict = true;
        }
    }
    strict
}

/// Indices of the vectors no other vector dominates, in input order.
pub fn pareto_filter(sums: &[Deviations]) -> Vec<usize> {
    (0..sums.len())
        .filter(|&a| !sums.iter().any(|b| dominates(b, &sums[a])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MossEntry {
    pub index: usize,
    pub weights: WeightVector,
    pub solver: SolverKind,
    pub label: String,
    pub formulation: Formulation,
    pub seed: u64,
    /// ΣD₁..ΣD₈ on the evaluation series.
    pub sums: Option<Deviations>,
    pub total_cost: Option<f64>,
    pub error: Option<String>,
    pub dominated: bool,
    #[serde(skip)]
    pub solved: Option<Box<Solved>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MossRun {
    pub entries: Vec<MossEntry>,
}

impl MossRun {
    /// Indices of successful, non-dominated entries.
    pub fn front(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.sums.is_some() && !e.dominated)
            .map(|e| e.index)
            .collect()
    }
}

/// Run `cfg.solver` once per weight vector on up to `workers` threads.
///
/// Entry i gets seed [`entry_seed`]`(master_seed, i)` for both clustering and
/// learning. A failed entry keeps its error and takes no part in dominance.
pub fn moss_execute(
    spec: &SystemSpec,
    data: &Dataset<'_>,
    grid: &StorageGrid,
    cfg: &SolverConfig,
    weights: &[WeightVector],
    workers: usize,
    master_seed: u64,
) -> Result<MossRun, SolveError> {
    if weights.is_empty() {
        return Err(SolveError::EmptyInput("no weight vectors".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SolveError::InvalidConfig(format!("thread pool: {e}")))?;
    let run_one = |index: usize| -> MossEntry {
        let w = weights[index];
        let seed = entry_seed(master_seed, index);
        let mut c = cfg.clone();
        c.seed = seed;
        c.rl.seed = seed;
        let res = solve(spec, data, grid, w, &c);
        let mut e = MossEntry {
            index,
            weights: w,
            solver: cfg.solver,
            label: cfg.solver.mo_label().to_string(),
            formulation: cfg.formulation,
            seed,
            sums: None,
            total_cost: None,
            error: None,
            dominated: false,
            solved: None,
        };
        match res {
            Ok(s) => {
                match &s.outcome {
                    Some(o) => {
                        e.sums = Some(o.deviation_sums());
                        e.total_cost = Some(o.total_cost());
                    }
                    None => e.error = Some("policy is empty".into()),
                }
                e.solved = Some(Box::new(s));
            }
            Err(err) => {
                log::warn!("sweep entry {index} failed: {err}");
                e.error = Some(err.to_string());
            }
        }
        e
    };
    let mut entries: Vec<MossEntry> = pool.install(|| {
        use rayon::prelude::*;
        (0..weights.len()).into_par_iter().map(run_one).collect()
    });
    mark_dominated(&mut entries);
    Ok(MossRun { entries })
}

/// Set `dominated` among the entries that have sums.
pub fn mark_dominated(entries: &mut [MossEntry]) {
    let ok: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].sums.is_some()).collect();
    let sums: Vec<Deviations> = ok.iter().map(|&i| entries[i].sums.unwrap()).collect();
    let front = pareto_filter(&sums);
    for (k, &i) in ok.iter().enumerate() {
        entries[i].dominated = !front.contains(&k);
    }
}

/// Aggregate of chosen objectives, e.g. D₃+D₅ for plotting.
pub fn aggregate(sums: &Deviations, objectives: &[usize]) -> f64 {
    objectives.iter().filter(|&&i| i < N_OBJECTIVES).map(|&i| sums[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::split_years;
    use crate::synthetic::{generate, SyntheticConfig};

    fn v(x: &[f64]) -> Deviations {
        let mut d = [0.0; N_OBJECTIVES];
        d[..x.len()].copy_from_slice(x);
        d
    }

    #[test]
    fn identical_vectors_all_kept() {
        let s = vec![v(&[1.0, 2.0]); 4];
        assert_eq!(pareto_filter(&s), vec![0, 1, 2, 3]);
    }

    #[test]
    fn incomparable_kept() {
        let s = vec![v(&[1.0]), v(&[0.0, 1.0])];
        assert_eq!(pareto_filter(&s), vec![0, 1]);
    }

    #[test]
    fn weak_dominance_with_one_strict() {
        let s = vec![v(&[1.0, 1.0]), v(&[1.0, 0.5])];
        assert_eq!(pareto_filter(&s), vec![1]);
        assert!(dominates(&s[1], &s[0]));
        assert!(!dominates(&s[0], &s[0]));
    }

    #[test]
    fn difference_below_tolerance_is_equal() {
        let s = vec![v(&[1e6]), v(&[1e6 * (1.0 - 1e-12)])];
        assert_eq!(pareto_filter(&s), vec![0, 1]);
    }

    #[test]
    fn seeds_differ_per_entry() {
        assert_ne!(entry_seed(5, 0), entry_seed(5, 1));
        assert_eq!(entry_seed(5, 3), entry_seed(5, 3));
    }

    #[test]
    fn labels_and_parsing() {
        assert_eq!(SolverKind::Nrl.mo_label(), "MOnRL");
        assert_eq!("AWD-DP".parse::<SolverKind>().unwrap(), SolverKind::AwdDp);
        assert!("foo".parse::<SolverKind>().is_err());
        assert_eq!(serde_json::to_string(&SolverKind::AwdDp).unwrap(), "\"awd-dp\"");
    }

    fn small() -> (SystemSpec, Vec<StepRecord>) {
        let spec = SystemSpec::knezevo().with_steps_per_year(12);
        let cfg = SyntheticConfig {
            years: 3,
            steps_per_year: 12,
            seed: 3,
            ..Default::default()
        };
        (spec.clone(), generate(&spec, &cfg).unwrap())
    }

    #[test]
    fn single_entry_is_undominated() {
        let (spec, s) = small();
        let grid = StorageGrid::with_step(&spec, 1500.0).unwrap();
        let data = Dataset {
            train: &s,
            eval: &s,
            demand_year: &s[..12],
        };
        let run = moss_execute(
            &spec,
            &data,
            &grid,
            &SolverConfig::default(),
            &[WeightVector::uniform()],
            1,
            9,
        )
        .unwrap();
        assert_eq!(run.entries.len(), 1);
        assert!(run.entries[0].error.is_none(), "{:?}", run.entries[0].error);
        assert_eq!(run.front(), vec![0]);
    }

    #[test]
    fn failures_recorded_per_entry() {
        let (spec, s) = small();
        let grid = StorageGrid::with_step(&spec, 1500.0).unwrap();
        let (train, _) = split_years(&s, 12, 1).unwrap();
        // Too few training values for 5 classes.
        let data = Dataset {
            train: &train[..2],
            eval: &s,
            demand_year: &s[..12],
        };
        let cfg = SolverConfig {
            solver: SolverKind::Nsdp,
            ..Default::default()
        };
        let w = [WeightVector::uniform(); 2];
        let run = moss_execute(&spec, &data, &grid, &cfg, &w, 2, 1).unwrap();
        assert!(run.entries.iter().all(|e| e.error.is_some() && !e.dominated));
        assert!(run.front().is_empty());
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let (spec, s) = small();
        let grid = StorageGrid::with_step(&spec, 1500.0).unwrap();
        let data = Dataset {
            train: &s,
            eval: &s,
            demand_year: &s[..12],
        };
        let cfg = SolverConfig {
            solver: SolverKind::Nrl,
            missing: MissingState::Nearest,
            rl: RlConfig {
                max_episodes: 300,
                ..Default::default()
            },
            ..Default::default()
        };
        let w: Vec<WeightVector> = (1..=3)
            .map(|k| WeightVector::uniform().with(2, k as f64).unwrap())
            .collect();
        let a = moss_execute(&spec, &data, &grid, &cfg, &w, 1, 4).unwrap();
        let b = moss_execute(&spec, &data, &grid, &cfg, &w, 3, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
