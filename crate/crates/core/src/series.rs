//! Flow series and demand profiles, and their assembly into step records.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hydro::{StepRecord, SystemSpec};

/// Measured flows of one step, 10³ m³/step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub q: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Demands and critical levels for one step of the year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandRow {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
    pub d7: f64,
    pub d8: f64,
}

/// Combine flows with a one-year demand profile repeated every year.
pub fn assemble(spec: &SystemSpec, flows: &[FlowRecord], demands: &[DemandRow]) -> Result<Vec<StepRecord>, ModelError> {
    if demands.len() != spec.steps_per_year {
        return Err(ModelError::InvalidSpec(format!(
            "demand profile has {} rows, expected {}",
            demands.len(),
            spec.steps_per_year
        )));
    }
    let out: Vec<StepRecord> = flows
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let d = &demands[t % demands.len()];
            StepRecord {
                t,
                q: f.q,
                q1: f.q1,
                q2: f.q2,
                q3: f.q3,
                d1: d.d1,
                d2: d.d2,
                d3: d.d3,
                d4: d.d4,
                d5: d.d5,
                d6: d.d6,
                d7: d.d7,
                d8: d.d8,
            }
        })
        .collect();
    for r in &out {
        r.validate(spec)?;
    }
    Ok(out)
}

/// Flows of a series of records.
pub fn flows_of(series: &[StepRecord]) -> Vec<FlowRecord> {
    series
        .iter()
        .map(|r| FlowRecord {
            q: r.q,
            q1: r.q1,
            q2: r.q2,
            q3: r.q3,
        })
        .collect()
}

/// Demand profile of the first year of a series.
pub fn demands_of(series: &[StepRecord], steps_per_year: usize) -> Vec<DemandRow> {
    series
        .iter()
        .take(steps_per_year)
        .map(|r| DemandRow {
            d1: r.d1,
            d2: r.d2,
            d3: r.d3,
            d4: r.d4,
            d5: r.d5,
            d6: r.d6,
            d7: r.d7,
            d8: r.d8,
        })
        .collect()
}

/// Renumber steps from zero; used after slicing a series into splits that
/// start on a year boundary.
pub fn renumber(series: &[StepRecord]) -> Vec<StepRecord> {
    series.iter().enumerate().map(|(t, r)| StepRecord { t, ..*r }).collect()
}

/// Split at a year boundary into (train, test), both renumbered from zero.
pub fn split_years(
    series: &[StepRecord],
    steps_per_year: usize,
    train_years: usize,
) -> Result<(Vec<StepRecord>, Vec<StepRecord>), ModelError> {
    let cut = train_years * steps_per_year;
    if cut > series.len() {
        return Err(ModelError::InvalidSpec(format!(
            "train split of {train_years} years exceeds series of {} steps",
            series.len()
        )));
    }
    Ok((renumber(&series[..cut]), renumber(&series[cut..])))
}
