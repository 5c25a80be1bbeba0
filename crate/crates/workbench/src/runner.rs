//! Executes a registered run and writes its artifacts to the run directory.
//!
//! Files per run: `config.json`, `policy.json`, `policy.csv`, `summary.json`,
//! `outcome.json` when a policy was simulated, `learning_curve.csv` for nRL.
//! A sweep writes `pareto.json` and one child run per weight vector.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use oro_core::alloc::Formulation;
use oro_core::hydro::{Deviations, WeightVector};
use oro_core::moss::{moss_execute, solve, Artifact, Dataset, MossEntry, Solved, SolverKind};
use oro_core::policy_table;
use oro_core::simulate::{simulate_policy, OutcomeSeries, Policy};

use crate::config::{FieldError, Prepared, RunConfig, RunSolver};
use crate::ingest;
use crate::store::{Registry, RunRecord, RunStatus};

pub type SharedRegistry = Arc<Mutex<Registry>>;

/// Relative mass-balance tolerance a finished run is checked against.
const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub solver: SolverKind,
    pub label: String,
    pub formulation: Formulation,
    pub weights: Option<WeightVector>,
    pub seed: u64,
    pub train_steps: usize,
    pub eval_steps: usize,
    pub start_storage: Option<f64>,
    pub end_storage: Option<f64>,
    /// ΣD₁..ΣD₈ on the evaluation series.
    pub sums: Option<Deviations>,
    pub squared_sums: Option<Deviations>,
    pub total_cost: Option<f64>,
    pub energy_kwh: Option<f64>,
    pub mass_balance_residual: Option<f64>,
    pub cyclic_exact: Option<bool>,
    /// An nRL run that visited no state.
    pub empty_policy: bool,
    pub cycles: Option<usize>,
    pub episodes: Option<usize>,
    pub final_lr: Option<f64>,
    pub dominated: Option<bool>,
    /// Sweep parents: children on the non-dominated front.
    pub front: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub run_id: String,
    pub index: usize,
    pub label: String,
    pub weights: WeightVector,
    pub seed: u64,
    pub sums: Option<Deviations>,
    pub total_cost: Option<f64>,
    pub dominated: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFile {
    pub entries: Vec<ParetoEntry>,
    /// Run ids of the non-dominated entries.
    pub front: Vec<String>,
}

/// Ids of runs asked to stop while running.
#[derive(Debug, Default)]
pub struct CancelSet(Mutex<HashSet<String>>);

impl CancelSet {
    pub fn request(&self, id: &str) {
        self.0.lock().expect("cancel set").insert(id.to_string());
    }

    fn take(&self, id: &str) -> bool {
        self.0.lock().expect("cancel set").remove(id)
    }
}

fn lock(reg: &SharedRegistry) -> std::sync::MutexGuard<'_, Registry> {
    reg.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn field_errors_text(errs: &[FieldError]) -> String {
    errs.iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let body = serde_json::to_vec_pretty(v)?;
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Dataset views of a prepared run. nSDP takes its demands from the first year.
pub fn dataset(p: &Prepared) -> Dataset<'_> {
    let spy = p.spec.steps_per_year.min(p.records.len());
    Dataset {
        train: p.train(),
        eval: p.eval(),
        demand_year: &p.records[..spy],
    }
}

/// Queue a run. Fails on configs that do not validate.
pub fn submit(reg: &SharedRegistry, config: RunConfig) -> std::result::Result<RunRecord, Vec<FieldError>> {
    config.prepare()?;
    lock(reg).create(config, None).map_err(|e| {
        vec![FieldError {
            field: "store".into(),
            message: e.to_string(),
        }]
    })
}

/// Mark a queued run failed, or flag a running one to stop at its end.
pub fn cancel(reg: &SharedRegistry, cancels: &CancelSet, id: &str) -> Result<RunRecord> {
    let mut r = lock(reg);
    let rec = r.get(id).cloned().ok_or_else(|| anyhow!("unknown run {id}"))?;
    match rec.status {
        RunStatus::Queued => r.update(id, |x| {
            x.status = RunStatus::Failed;
            x.message = Some("cancelled".into());
        }),
        RunStatus::Running => {
            cancels.request(id);
            Ok(rec)
        }
        _ => Ok(rec),
    }
}

/// Run a queued record to completion. Runs no longer queued are left alone.
pub fn execute(reg: &SharedRegistry, cancels: &CancelSet, id: &str) -> Result<RunRecord> {
    let (config, dir) = {
        let mut r = lock(reg);
        let rec = r.get(id).cloned().ok_or_else(|| anyhow!("unknown run {id}"))?;
        if rec.status != RunStatus::Queued {
            return Ok(rec);
        }
        r.update(id, |x| x.status = RunStatus::Running)?;
        (rec.config, r.run_dir(id))
    };
    log::info!("{id}: running {:?}", config.solver);
    let outcome = run_in_dir(reg, id, &config, &dir);
    let cancelled = cancels.take(id);
    let mut r = lock(reg);
    let rec = match outcome {
        Ok((results, summary, children)) => r.update(id, |x| {
            x.results = results;
            x.summary = Some(summary);
            x.children = children;
            if cancelled {
                x.status = RunStatus::Failed;
                x.message = Some("cancelled".into());
            } else {
                x.status = RunStatus::Done;
            }
        })?,
        Err(e) => {
            log::warn!("{id}: {e:#}");
            r.update(id, |x| {
                x.status = RunStatus::Failed;
                x.message = Some(if cancelled {
                    "cancelled".into()
                } else {
                    format!("{e:#}")
                });
            })?
        }
    };
    Ok(rec)
}

type RunResult = (BTreeMap<String, String>, Summary, Vec<String>);

fn run_in_dir(reg: &SharedRegistry, id: &str, config: &RunConfig, dir: &Path) -> Result<RunResult> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;
    let p = config.prepare().map_err(|e| anyhow!(field_errors_text(&e)))?;
    let data = dataset(&p);
    if !p.sweep {
        let w = p.weights[0];
        let solved = solve(&p.spec, &data, &p.grid, w, &p.solver_cfg)?;
        let (mut results, summary) = write_solved(dir, &p, &solved, w, p.solver_cfg.seed)?;
        results.insert("config".into(), "config.json".into());
        return Ok((results, summary, Vec::new()));
    }

    let run = moss_execute(
        &p.spec,
        &data,
        &p.grid,
        &p.solver_cfg,
        &p.weights,
        config.workers,
        config.seed,
    )?;
    let mut children = Vec::new();
    let mut entries = Vec::new();
    for e in &run.entries {
        let child_id = child_run(reg, id, config, &p, e)?;
        entries.push(ParetoEntry {
            run_id: child_id.clone(),
            index: e.index,
            label: e.label.clone(),
            weights: e.weights,
            seed: e.seed,
            sums: e.sums,
            total_cost: e.total_cost,
            dominated: e.dominated,
            error: e.error.clone(),
        });
        children.push(child_id);
    }
    let front: Vec<String> = run.front().iter().map(|&i| children[i].clone()).collect();
    write_json(
        &dir.join("pareto.json"),
        &ParetoFile {
            entries,
            front: front.clone(),
        },
    )?;
    let summary = Summary {
        front: Some(front),
        ..empty_summary(&p, None, config.seed)
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let results = BTreeMap::from([
        ("config".to_string(), "config.json".to_string()),
        ("pareto".to_string(), "pareto.json".to_string()),
        ("summary".to_string(), "summary.json".to_string()),
    ]);
    Ok((results, summary, children))
}

/// Register and fill the child run of one sweep entry.
fn child_run(reg: &SharedRegistry, parent: &str, config: &RunConfig, p: &Prepared, e: &MossEntry) -> Result<String> {
    let mut cfg = config.clone();
    cfg.solver = match e.solver {
        SolverKind::Ndp => RunSolver::Ndp,
        SolverKind::AwdDp => RunSolver::AwdDp,
        SolverKind::Nsdp => RunSolver::Nsdp,
        SolverKind::Nrl => RunSolver::Nrl,
    };
    cfg.weights = Some(*e.weights.as_array());
    cfg.sweep = None;
    cfg.sweep_path = None;
    cfg.seed = e.seed;
    cfg.rl.seed = e.seed;
    let (cid, dir) = {
        let mut r = lock(reg);
        let rec = r.create(cfg.clone(), Some(parent.to_string()))?;
        r.update(&rec.id, |x| x.status = RunStatus::Running)?;
        (rec.id.clone(), r.run_dir(&rec.id))
    };
    write_json(&dir.join("config.json"), &cfg)?;
    let written = match &e.solved {
        Some(s) => write_solved(&dir, p, s, e.weights, e.seed).map(|(mut res, mut sum)| {
            sum.dominated = e.sums.map(|_| e.dominated);
            res.insert("config".into(), "config.json".into());
            write_json(&dir.join("summary.json"), &sum).map(|_| (res, sum))
        }),
        None => Err(anyhow!(e.error.clone().unwrap_or_else(|| "entry failed".into()))),
    };
    let mut r = lock(reg);
    match written.and_then(|x| x) {
        Ok((results, summary)) => r.update(&cid, |x| {
            x.results = results;
            x.summary = Some(summary);
            x.status = RunStatus::Done;
        })?,
        Err(err) => r.update(&cid, |x| {
            x.status = RunStatus::Failed;
            x.message = Some(format!("{err:#}"));
        })?,
    };
    Ok(cid)
}

fn empty_summary(p: &Prepared, weights: Option<WeightVector>, seed: u64) -> Summary {
    let train_steps = if p.solver.trains() { p.train().len() } else { 0 };
    Summary {
        solver: p.solver,
        label: if p.sweep {
            p.solver.mo_label()
        } else {
            p.solver.as_str()
        }
        .to_string(),
        formulation: p.solver_cfg.formulation,
        weights,
        seed,
        train_steps,
        eval_steps: p.eval().len(),
        start_storage: None,
        end_storage: None,
        sums: None,
        squared_sums: None,
        total_cost: None,
        energy_kwh: None,
        mass_balance_residual: None,
        cyclic_exact: None,
        empty_policy: false,
        cycles: None,
        episodes: None,
        final_lr: None,
        dominated: None,
        front: None,
    }
}

/// Write the artifacts of one solved weight vector.
pub fn write_solved(
    dir: &Path,
    p: &Prepared,
    solved: &Solved,
    weights: WeightVector,
    seed: u64,
) -> Result<(BTreeMap<String, String>, Summary)> {
    let mut results = BTreeMap::new();
    let mut summary = empty_summary(p, Some(weights), seed);
    summary.label = p.solver.as_str().to_string();
    summary.start_storage = Some(solved.start_storage);
    summary.cyclic_exact = solved.cyclic_exact;

    write_json(&dir.join("policy.json"), &solved.artifact)?;
    results.insert("policy".into(), "policy.json".into());
    let rows = match &solved.artifact {
        Artifact::Dp(sol) => {
            summary.cycles = Some(sol.cycles);
            policy_table::dp_rows(sol, p.eval())
        }
        Artifact::Sdp(pol) => {
            summary.cycles = Some(pol.cycles);
            policy_table::sdp_rows(pol)
        }
        Artifact::Rl { policy, curve } => {
            summary.episodes = Some(policy.episodes);
            summary.final_lr = Some(policy.final_lr);
            summary.empty_policy = policy.is_empty();
            ingest::write_csv_file(curve, &dir.join("learning_curve.csv"))?;
            results.insert("learning_curve".into(), "learning_curve.csv".into());
            policy_table::rl_rows(policy)
        }
    };
    let f = fs::File::create(dir.join("policy.csv"))?;
    policy_table::write_csv(&rows, std::io::BufWriter::new(f))?;
    results.insert("policy_csv".into(), "policy.csv".into());

    if let Some(out) = &solved.outcome {
        let (res, scale) = out.mass_balance_residual();
        if res.abs() > BALANCE_TOL * scale {
            log::warn!("mass balance residual {res} exceeds tolerance");
        }
        summary.end_storage = Some(out.end_storage());
        summary.sums = Some(out.deviation_sums());
        summary.squared_sums = Some(out.squared_deviation_sums());
        summary.total_cost = Some(out.total_cost());
        summary.energy_kwh = Some(out.steps.iter().map(|s| s.power).sum());
        summary.mass_balance_residual = Some(res);
        write_json(&dir.join("outcome.json"), out)?;
        results.insert("outcome".into(), "outcome.json".into());
    }
    write_json(&dir.join("summary.json"), &summary)?;
    results.insert("summary".into(), "summary.json".into());
    Ok((results, summary))
}

/// Simulate the stored policy of a run directory again.
/// Returns the stored outcome and the replayed one.
pub fn replay(dir: &Path) -> Result<(OutcomeSeries, OutcomeSeries)> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    let summary: Summary = read_json(&dir.join("summary.json"))?;
    let stored: OutcomeSeries = read_json(&dir.join("outcome.json")).context("run has no simulated outcome")?;
    let artifact: Artifact = read_json(&dir.join("policy.json"))?;
    let p = config.prepare().map_err(|e| anyhow!(field_errors_text(&e)))?;
    let w = summary.weights.ok_or_else(|| anyhow!("summary has no weights"))?;
    let start = summary
        .start_storage
        .ok_or_else(|| anyhow!("summary has no start storage"))?;
    let params = p.solver_cfg.params(w).with_ceiling(p.grid.max());
    let dp_policy;
    let policy: &dyn Policy = match &artifact {
        Artifact::Dp(sol) => {
            dp_policy = sol.policy();
            &dp_policy
        }
        Artifact::Sdp(pol) => pol,
        Artifact::Rl { policy, .. } => policy,
    };
    let replayed = simulate_policy(&p.spec, p.eval(), policy, start, &params)?;
    Ok((stored, replayed))
}
