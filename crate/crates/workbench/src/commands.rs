//! Command bodies shared by the `oro` binary and its tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use oro_core::hydro::{SystemSpec, N_OBJECTIVES};
use oro_core::series::{demands_of, flows_of, FlowRecord};
use oro_core::simulate::OutcomeSeries;
use oro_core::synthetic::{self, SyntheticConfig};

use crate::config::{FieldError, GridDef, RunConfig, RunSolver};
use crate::ingest;
use crate::runner::{self, CancelSet, ParetoFile, SharedRegistry, Summary};
use crate::store::{Registry, RunRecord};

/// Relative difference allowed between a stored and a replayed trajectory.
pub const REPLAY_TOL: f64 = 1e-9;

/// Default weights of generated configs.
pub const DEFAULT_WEIGHTS: [f64; 8] = [2e6, 2e6, 200.0, 1.0, 200.0, 1.0, 300.0, 1e-8];

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {}: {}", e.field, e.message)).collect::<Vec<_>>().join("\n"))]
    Config(Vec<FieldError>),
    #[error("run {id} failed: {message}")]
    RunFailed { id: String, message: String },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::RunFailed { .. } => 3,
            Self::Other(_) => 1,
        }
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig, CommandError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = RunConfig::from_json(&text).map_err(|e| {
        CommandError::Config(vec![FieldError {
            field: "config".into(),
            message: e.to_string(),
        }])
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    Ok(cfg.resolved(&base))
}

pub fn open_store(store: &Path) -> Result<SharedRegistry> {
    Ok(Arc::new(Mutex::new(Registry::open(store)?)))
}

/// Register and run one config to completion in `store`.
pub fn run_config(cfg: RunConfig, store: &Path) -> Result<(RunRecord, PathBuf), CommandError> {
    let reg = open_store(store)?;
    let rec = runner::submit(&reg, cfg).map_err(CommandError::Config)?;
    let rec = runner::execute(&reg, &CancelSet::default(), &rec.id)?;
    let dir = reg.lock().unwrap_or_else(|e| e.into_inner()).run_dir(&rec.id);
    if rec.status != crate::store::RunStatus::Done {
        return Err(CommandError::RunFailed {
            id: rec.id,
            message: rec.message.unwrap_or_default(),
        });
    }
    Ok((rec, dir))
}

/// Write `series.csv`, `demands.csv` and `config.json` into `out`.
pub fn gen_synthetic(seed: u64, years: usize, out: &Path, toy: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    let spec = SystemSpec::knezevo();
    let spy = spec.steps_per_year;
    let (flows, demands, grid, weights): (Vec<FlowRecord>, _, _, _) = if toy {
        let t = synthetic::toy();
        let one = demands_of(&t.series[..1], 1)[0];
        (
            flows_of(&t.series),
            vec![one; spy],
            GridDef::Levels(t.grid.levels().to_vec()),
            *t.weights.as_array(),
        )
    } else {
        if years == 0 {
            bail!("years must be at least 1");
        }
        let cfg = SyntheticConfig {
            years,
            seed,
            steps_per_year: spy,
            ..SyntheticConfig::default()
        };
        (
            synthetic::flows(&cfg)?,
            synthetic::demand_profile(spy),
            GridDef::Step(300.0),
            DEFAULT_WEIGHTS,
        )
    };
    ingest::write_csv_file(&ingest::series_rows(&flows, 2000, spy), &out.join("series.csv"))?;
    ingest::write_csv_file(&ingest::demand_rows(&demands), &out.join("demands.csv"))?;
    let mut cfg =
        RunConfig::from_json(r#"{"solver":"ndp","series":"series.csv","demands":"demands.csv","grid":{"count":2}}"#)?;
    cfg.grid = grid;
    cfg.weights = Some(weights);
    cfg.seed = seed;
    cfg.solver = RunSolver::Ndp;
    // one-year cyclic problems can need a few dozen sweeps to settle
    cfg.dp.k_max = 100;
    fs::write(out.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
    Ok(())
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Largest relative difference between two trajectories, in storage and cost.
pub fn trajectory_gap(a: &OutcomeSeries, b: &OutcomeSeries) -> Result<f64> {
    if a.len() != b.len() {
        bail!("trajectories differ in length: {} vs {}", a.len(), b.len());
    }
    Ok(a.steps
        .iter()
        .zip(&b.steps)
        .map(|(x, y)| rel_diff(x.s_next, y.s_next).max(rel_diff(x.cost, y.cost)))
        .fold(0.0, f64::max))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    step: usize,
    storage: f64,
    next_storage: f64,
    level: f64,
    release: f64,
    evaporation: f64,
    spill: f64,
    energy_kwh: f64,
    cost: f64,
}

#[derive(Debug, Serialize)]
struct DeficitRow {
    step: usize,
    d1: f64,
    d2: f64,
    d3: f64,
    d4: f64,
    d5: f64,
    d6: f64,
    d7: f64,
    d8: f64,
}

#[derive(Debug, Serialize)]
pub struct ObjectiveRow {
    pub objective: String,
    pub sum: f64,
    pub squared_sum: f64,
}

#[derive(Debug, Serialize)]
struct ParetoCsvRow {
    run_id: String,
    label: String,
    dominated: bool,
    total_cost: Option<f64>,
    d1: Option<f64>,
    d2: Option<f64>,
    d3: Option<f64>,
    d4: Option<f64>,
    d5: Option<f64>,
    d6: Option<f64>,
    d7: Option<f64>,
    d8: Option<f64>,
    error: Option<String>,
}

/// Write report CSVs for a run directory into `out`; returns the summary table.
pub fn report(dir: &Path, out: &Path) -> Result<String> {
    fs::create_dir_all(out)?;
    let summary: Summary = read_json(&dir.join("summary.json"))?;
    let mut table = format!(
        "run {}  solver {}  formulation {:?}\n",
        dir.display(),
        summary.label,
        summary.formulation
    );

    if let (Some(s), Some(s2)) = (summary.sums, summary.squared_sums) {
        let rows: Vec<ObjectiveRow> = (0..N_OBJECTIVES)
            .map(|i| ObjectiveRow {
                objective: format!("D{}", i + 1),
                sum: s[i],
                squared_sum: s2[i],
            })
            .collect();
        table.push_str(&format!("{:<6}{:>20}{:>20}\n", "", "sum", "sum of squares"));
        for r in &rows {
            table.push_str(&format!("{:<6}{:>20.6}{:>20.6e}\n", r.objective, r.sum, r.squared_sum));
        }
        if let Some(c) = summary.total_cost {
            table.push_str(&format!("total cost {c:.6e}\n"));
        }
        ingest::write_csv_file(&rows, &out.join("objectives.csv"))?;
    }
    if summary.empty_policy {
        table.push_str("policy is empty: no state was visited during training\n");
    }

    let outcome_path = dir.join("outcome.json");
    if outcome_path.exists() {
        let o: OutcomeSeries = read_json(&outcome_path)?;
        let traj: Vec<TrajectoryRow> = o
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| TrajectoryRow {
                step: k + 1,
                storage: s.s,
                next_storage: s.s_next,
                level: s.h_next,
                release: s.r_total,
                evaporation: s.evap,
                spill: s.overspill,
                energy_kwh: s.power,
                cost: s.cost,
            })
            .collect();
        ingest::write_csv_file(&traj, &out.join("trajectory.csv"))?;
        let def: Vec<DeficitRow> = o
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let d = s.deviations;
                DeficitRow {
                    step: k + 1,
                    d1: d[0],
                    d2: d[1],
                    d3: d[2],
                    d4: d[3],
                    d5: d[4],
                    d6: d[5],
                    d7: d[6],
                    d8: d[7],
                }
            })
            .collect();
        ingest::write_csv_file(&def, &out.join("deficits.csv"))?;
    }

    let pareto_path = dir.join("pareto.json");
    if pareto_path.exists() {
        let p: ParetoFile = read_json(&pareto_path)?;
        let rows: Vec<ParetoCsvRow> = p
            .entries
            .iter()
            .map(|e| {
                let d = |i: usize| e.sums.map(|s| s[i]);
                ParetoCsvRow {
                    run_id: e.run_id.clone(),
                    label: e.label.clone(),
                    dominated: e.dominated,
                    total_cost: e.total_cost,
                    d1: d(0),
                    d2: d(1),
                    d3: d(2),
                    d4: d(3),
                    d5: d(4),
                    d6: d(5),
                    d7: d(6),
                    d8: d(7),
                    error: e.error.clone(),
                }
            })
            .collect();
        ingest::write_csv_file(&rows, &out.join("pareto.csv"))?;
        table.push_str(&format!(
            "{} entries, {} on the front\n",
            p.entries.len(),
            p.front.len()
        ));
    }
    fs::write(out.join("summary.txt"), &table)?;
    Ok(table)
}

/// Replay a run's policy and write the replayed outcome to `out`.
pub fn simulate(dir: &Path, out: Option<&Path>) -> Result<f64> {
    let (stored, replayed) = runner::replay(dir)?;
    let gap = trajectory_gap(&stored, &replayed)?;
    if let Some(out) = out {
        fs::write(out, serde_json::to_vec_pretty(&replayed)?)?;
    }
    if gap > REPLAY_TOL {
        return Err(anyhow!("replayed trajectory differs from the stored one by {gap}"));
    }
    Ok(gap)
}
