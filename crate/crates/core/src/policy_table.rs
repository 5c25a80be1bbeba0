//! Flat policy tables: one row per state with columns
//! `storage,step,q_class_value,qtr_class_value,next_storage`.
//!
//! Steps are 1-based. nSDP rows carry the class representatives of their
//! step; nRL rows carry the class centres.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::grid::StorageGrid;
use crate::hydro::StepRecord;
use crate::ndp::DpSolution;
use crate::nrl::{RlPolicy, StateKey};
use crate::nsdp::{InflowClustering, InflowModel, SdpPolicy};

/// Absolute tolerance when matching storages read back from text.
const STORAGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub storage: f64,
    pub step: usize,
    pub q_class_value: f64,
    pub qtr_class_value: f64,
    pub next_storage: f64,
}

pub fn sdp_rows(p: &SdpPolicy) -> Vec<PolicyRow> {
    let mut rows = Vec::new();
    for (t, by_i) in p.actions.iter().enumerate() {
        for (i, by_l) in by_i.iter().enumerate() {
            for (l, &j) in by_l.iter().enumerate() {
                rows.push(PolicyRow {
                    storage: p.grid.get(i),
                    step: t + 1,
                    q_class_value: p.model.q_rep[t][l],
                    qtr_class_value: p.model.qtr_rep[t][l],
                    next_storage: p.grid.get(j),
                });
            }
        }
    }
    rows
}

/// Rows of a deterministic policy; the class columns hold the actual
/// reservoir inflow and tributary inflow of each step of `series`.
pub fn dp_rows(sol: &DpSolution, series: &[StepRecord]) -> Vec<PolicyRow> {
    let mut rows = Vec::new();
    for (t, (by_i, rec)) in sol.actions.iter().zip(series).enumerate() {
        for (i, &j) in by_i.iter().enumerate() {
            rows.push(PolicyRow {
                storage: sol.grid.get(i),
                step: t + 1,
                q_class_value: rec.q,
                qtr_class_value: rec.q3 - rec.q,
                next_storage: sol.grid.get(j),
            });
        }
    }
    rows
}

pub fn rl_rows(p: &RlPolicy) -> Vec<PolicyRow> {
    p.entries
        .iter()
        .map(|(x, a)| PolicyRow {
            storage: p.grid.get(x.i as usize),
            step: x.t as usize + 1,
            q_class_value: p.clustering_q.centres[x.lq as usize],
            qtr_class_value: p.clustering_qtr.centres[x.lqtr as usize],
            next_storage: p.grid.get(*a),
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[PolicyRow], w: W) -> Result<(), SolveError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(fmt_err)?;
    }
    wr.flush().map_err(|e| SolveError::PolicyFormat(e.to_string()))
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<PolicyRow>, SolveError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| SolveError::PolicyFormat(format!("line {}: {e}", k + 2))))
        .collect()
}

fn fmt_err(e: csv::Error) -> SolveError {
    SolveError::PolicyFormat(e.to_string())
}

fn grid_index(grid: &StorageGrid, s: f64, line: usize) -> Result<usize, SolveError> {
    grid.index_of(s, STORAGE_TOL)
        .ok_or_else(|| SolveError::PolicyFormat(format!("row {line}: storage {s} is not a grid level")))
}

fn class_of(values: &[f64], x: f64, line: usize) -> Result<usize, SolveError> {
    values
        .iter()
        .position(|v| (v - x).abs() <= 1e-9 * v.abs().max(1.0))
        .ok_or_else(|| SolveError::PolicyFormat(format!("row {line}: {x} is not a class value")))
}

/// Rebuild nSDP actions[t][i][l] for `grid` and `model`. Every state must
/// appear exactly once.
pub fn sdp_actions_from_rows(
    rows: &[PolicyRow],
    grid: &StorageGrid,
    model: &InflowModel,
) -> Result<Vec<Vec<Vec<usize>>>, SolveError> {
    let spy = model.steps_per_year;
    let classes = model.classes();
    let mut actions = vec![vec![vec![None; classes]; grid.len()]; spy];
    for (k, r) in rows.iter().enumerate() {
        if r.step == 0 || r.step > spy {
            return Err(SolveError::PolicyFormat(format!(
                "row {k}: step {} out of range",
                r.step
            )));
        }
        let t = r.step - 1;
        let i = grid_index(grid, r.storage, k)?;
        let l = class_of(&model.q_rep[t], r.q_class_value, k)?;
        let j = grid_index(grid, r.next_storage, k)?;
        let slot = &mut actions[t][i][l];
        if slot.is_some() {
            return Err(SolveError::PolicyFormat(format!("row {k}: duplicate state")));
        }
        *slot = Some(j);
    }
    actions
        .into_iter()
        .enumerate()
        .map(|(t, by_i)| {
            by_i.into_iter()
                .enumerate()
                .map(|(i, by_l)| {
                    by_l.into_iter()
                        .enumerate()
                        .map(|(l, j)| {
                            j.ok_or_else(|| SolveError::MissingPolicyEntry(format!("t={t}, i={i}, class={l}")))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Rebuild sorted nRL entries for `grid` and the two clusterings.
pub fn rl_entries_from_rows(
    rows: &[PolicyRow],
    grid: &StorageGrid,
    clustering_q: &InflowClustering,
    clustering_qtr: &InflowClustering,
) -> Result<Vec<(StateKey, usize)>, SolveError> {
    let mut entries = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if r.step == 0 {
                return Err(SolveError::PolicyFormat(format!("row {k}: step must be at least 1")));
            }
            let x = StateKey {
                t: (r.step - 1) as u32,
                i: grid_index(grid, r.storage, k)? as u32,
                lq: class_of(&clustering_q.centres, r.q_class_value, k)? as u16,
                lqtr: class_of(&clustering_qtr.centres, r.qtr_class_value, k)? as u16,
            };
            Ok((x, grid_index(grid, r.next_storage, k)?))
        })
        .collect::<Result<Vec<_>, SolveError>>()?;
    entries.sort();
    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(SolveError::PolicyFormat("duplicate state".into()));
    }
    Ok(entries)
}
