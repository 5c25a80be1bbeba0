//! Deterministic model of the reservoir and its downstream hydro system:
//! storage curves, mass balance, evaporation, tributary accounting, the
//! hydropower cascade and the eight-objective deviation / cost system.
//!
//! Volumes are in 10³ m³ (per step for flows), levels in m amsl, areas in
//! km² and energy in kWh. Evaporation depths in mm times areas in km² give
//! 10³ m³ directly.

pub mod calendar;
pub mod curve;
mod power;
mod transition;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub use curve::{CurveKnot, StorageCurve};
pub use power::{hydropower, PlantOutput, PowerOutput};
pub use transition::{
    evaluate_release, evaporation, release_needed, transition, Infeasible, StepOutcome, TransitionParams, UserModel,
};

/// Number of objectives in the scalarized cost.
pub const N_OBJECTIVES: usize = 8;
/// Number of consumptive users (objectives 3..7).
pub const N_USERS: usize = 5;

/// Turbine limit and generation coefficient of one plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Maximum turbined flow, m³/s.
    pub max_flow: f64,
    /// Generation coefficient, kWh per (m³/s · m · h).
    pub gen: f64,
}

/// The five plants of the cascade, keyed by their plant number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plants {
    pub hec0: PlantParams,
    pub hec1: PlantParams,
    pub hec2: PlantParams,
    pub hec3: PlantParams,
    pub hec6: PlantParams,
}

/// Fixed heads of the run-of-river plants and the tailwater of plant 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    /// Tailwater level below the dam plant, m amsl.
    pub tailwater0: f64,
    pub hec1: f64,
    pub hec2: f64,
    pub hec3: f64,
    pub hec6: f64,
}

/// Static description of the hydro system. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub storage_curve: Vec<CurveKnot>,
    /// Dead storage, 10³ m³.
    pub s_dead: f64,
    /// Maximum (normal operating) storage, 10³ m³.
    pub s_max: f64,
    pub h_dead: f64,
    pub h_max: f64,
    pub plants: Plants,
    pub heads: Heads,
    /// Monthly open-water evaporation, mm/month, January first.
    pub evap_rates: [f64; 12],
    /// Reject releases above the dam plant's turbine capacity.
    pub release_cap_enforced: bool,
    /// 12 (monthly) or 52 (weekly).
    pub steps_per_year: usize,
}

impl SystemSpec {
    /// The Knezevo reservoir and Zletovica cascade.
    ///
    /// The published curve ends at 1060 m; a final knot at the normal
    /// operating level (1061.5 m, 23.5·10⁶ m³) is added so that the maximum
    /// storage lies on the curve. Its area continues the last segment's slope.
    pub fn knezevo() -> Self {
        let plant = |max_flow, gen| PlantParams { max_flow, gen };
        Self {
            storage_curve: vec![
                CurveKnot::new(990.0, 0.00, 0.00),
                CurveKnot::new(1000.0, 0.26, 0.05),
                CurveKnot::new(1008.0, 1.00, 0.13),
                CurveKnot::new(1020.0, 3.21, 0.23),
                CurveKnot::new(1030.0, 6.10, 0.34),
                CurveKnot::new(1040.0, 10.12, 0.46),
                CurveKnot::new(1050.0, 15.37, 0.59),
                CurveKnot::new(1060.0, 22.01, 0.74),
                CurveKnot::new(1061.5, 23.50, 0.7625),
            ],
            s_dead: 1_500.0,
            s_max: 23_500.0,
            h_dead: 1015.0,
            h_max: 1061.5,
            plants: Plants {
                hec0: plant(1.5, 8.0),
                hec1: plant(1.5, 8.0),
                hec2: plant(2.1, 8.35),
                hec3: plant(1.8, 8.35),
                hec6: plant(0.14, 8.35),
            },
            heads: Heads {
                tailwater0: 990.0,
                hec1: 170.0,
                hec2: 200.0,
                hec3: 140.0,
                hec6: 200.0,
            },
            evap_rates: [6.3, 9.1, 17.8, 27.5, 38.3, 46.8, 53.2, 47.7, 33.4, 19.8, 9.9, 6.1],
            release_cap_enforced: true,
            steps_per_year: 52,
        }
    }

    pub fn with_steps_per_year(mut self, steps_per_year: usize) -> Self {
        self.steps_per_year = steps_per_year;
        self
    }

    pub fn with_release_cap(mut self, enforced: bool) -> Self {
        self.release_cap_enforced = enforced;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        curve::validate_knots(&self.storage_curve)?;
        let c = self.curve();
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if !(self.s_dead < self.s_max) {
            return bad("s_dead must be below s_max");
        }
        if !(self.h_dead < self.h_max) {
            return bad("h_dead must be below h_max");
        }
        if self.s_dead < c.min_volume() || self.s_max > c.max_volume() {
            return bad("s_dead and s_max must lie inside the storage curve");
        }
        let (hl, hh) = (
            self.storage_curve[0].level,
            self.storage_curve[self.storage_curve.len() - 1].level,
        );
        if self.h_dead < hl || self.h_max > hh {
            return bad("h_dead and h_max must lie inside the storage curve");
        }
        let p = &self.plants;
        for (name, pl) in [
            ("hec0", p.hec0),
            ("hec1", p.hec1),
            ("hec2", p.hec2),
            ("hec3", p.hec3),
            ("hec6", p.hec6),
        ] {
            if !(pl.max_flow > 0.0 && pl.gen > 0.0) {
                return Err(ModelError::InvalidSpec(format!(
                    "{name}: max flow and generation coefficient must be positive"
                )));
            }
        }
        let h = &self.heads;
        if !(h.hec1 > 0.0 && h.hec2 > 0.0 && h.hec3 > 0.0 && h.hec6 > 0.0 && h.tailwater0 > 0.0) {
            return bad("heads must be positive");
        }
        if self.evap_rates.iter().any(|e| !(*e >= 0.0)) {
            return bad("evaporation rates must be nonnegative");
        }
        if self.steps_per_year != 12 && self.steps_per_year != 52 {
            return bad("steps_per_year must be 12 or 52");
        }
        Ok(())
    }

    pub fn curve(&self) -> StorageCurve<'_> {
        StorageCurve::new_unchecked(&self.storage_curve)
    }

    pub fn step_of_year(&self, t: usize) -> usize {
        t % self.steps_per_year
    }

    /// Length of global step `t` in seconds.
    pub fn step_seconds(&self, t: usize) -> f64 {
        calendar::days_in_step(self.steps_per_year, self.step_of_year(t)) * 86_400.0
    }

    pub fn step_hours(&self, t: usize) -> f64 {
        calendar::days_in_step(self.steps_per_year, self.step_of_year(t)) * 24.0
    }

    /// Evaporation depth for step `t`, mm per step.
    pub fn evap_rate(&self, t: usize) -> f64 {
        let k = self.step_of_year(t);
        let m = calendar::month_of_step(self.steps_per_year, k);
        self.evap_rates[m] * calendar::month_fraction(self.steps_per_year, k)
    }

    /// Volume per step (10³ m³) passing at a constant `flow` (m³/s).
    pub fn flow_to_volume(&self, flow: f64, t: usize) -> f64 {
        flow * self.step_seconds(t) / 1000.0
    }

    /// Mean flow (m³/s) of `volume` (10³ m³) released over step `t`.
    pub fn volume_to_flow(&self, volume: f64, t: usize) -> f64 {
        volume * 1000.0 / self.step_seconds(t)
    }

    /// Dam plant capacity expressed as a volume per step.
    pub fn release_cap(&self, t: usize) -> f64 {
        self.flow_to_volume(self.plants.hec0.max_flow, t)
    }
}

/// One time step of hydrological input and demands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global step index, starting at 0 in January of the first year.
    pub t: usize,
    /// Reservoir inflow, 10³ m³/step.
    pub q: f64,
    /// Flow at the intake of plant 2, 10³ m³/step.
    pub q1: f64,
    /// Flow at the intake of plant 3, 10³ m³/step.
    pub q2: f64,
    /// Flow at the most downstream measurement point, 10³ m³/step.
    pub q3: f64,
    /// Minimum critical level, m amsl.
    pub d1: f64,
    /// Maximum critical level, m amsl.
    pub d2: f64,
    /// User demands 3..7, 10³ m³/step.
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
    pub d7: f64,
    /// Hydropower demand, kWh/step.
    pub d8: f64,
}

impl StepRecord {
    pub fn user_demands(&self) -> [f64; N_USERS] {
        [self.d3, self.d4, self.d5, self.d6, self.d7]
    }

    /// Uncontrolled tributary inflow between the dam and the last
    /// measurement point.
    pub fn tributary_inflow(&self) -> Result<f64, ModelError> {
        if self.q3 < self.q {
            return Err(ModelError::InvalidRecord {
                step: self.t,
                reason: format!("downstream flow q3={} below reservoir inflow q={}", self.q3, self.q),
            });
        }
        Ok(self.q3 - self.q)
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::InvalidRecord { step: self.t, reason };
        for (name, v) in [
            ("q", self.q),
            ("q1", self.q1),
            ("q2", self.q2),
            ("q3", self.q3),
            ("d3", self.d3),
            ("d4", self.d4),
            ("d5", self.d5),
            ("d6", self.d6),
            ("d7", self.d7),
            ("d8", self.d8),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(err(format!("{name}={v} must be a nonnegative number")));
            }
        }
        self.tributary_inflow()?;
        if !(self.d1 < self.d2) {
            return Err(err(format!(
                "minimum critical level {} must be below maximum {}",
                self.d1, self.d2
            )));
        }
        if self.d1 < spec.h_dead || self.d2 > spec.h_max {
            return Err(err(format!(
                "critical levels [{}, {}] outside [{}, {}]",
                self.d1, self.d2, spec.h_dead, spec.h_max
            )));
        }
        Ok(())
    }
}

/// Outcome of the tributary sanity check over a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TributaryBalance {
    pub total_tributary: f64,
    pub total_inflow: f64,
    /// Total tributary inflow is within 10% of total reservoir inflow.
    pub comparable: bool,
}

pub fn tributary_balance(series: &[StepRecord]) -> Result<TributaryBalance, ModelError> {
    let mut tr = 0.0;
    let mut q = 0.0;
    for rec in series {
        tr += rec.tributary_inflow()?;
        q += rec.q;
    }
    let comparable = q > 0.0 && ((tr - q) / q).abs() <= 0.1;
    Ok(TributaryBalance {
        total_tributary: tr,
        total_inflow: q,
        comparable,
    })
}

/// Weights of the eight objectives of one scalarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 8]", into = "[f64; 8]")]
pub struct WeightVector([f64; N_OBJECTIVES]);

impl WeightVector {
    pub fn new(w: [f64; N_OBJECTIVES]) -> Result<Self, ModelError> {
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(ModelError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if !w.iter().any(|x| *x > 0.0) {
            return Err(ModelError::InvalidWeights(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(Self(w))
    }

    pub fn uniform() -> Self {
        Self([1.0; N_OBJECTIVES])
    }

    pub fn as_array(&self) -> &[f64; N_OBJECTIVES] {
        &self.0
    }

    /// Weight of objective `i` (1-based, as in w1..w8).
    pub fn w(&self, i: usize) -> f64 {
        self.0[i - 1]
    }

    pub fn user_weights(&self) -> [f64; N_USERS] {
        [self.0[2], self.0[3], self.0[4], self.0[5], self.0[6]]
    }

    pub fn with(mut self, i: usize, value: f64) -> Result<Self, ModelError> {
        self.0[i - 1] = value;
        Self::new(self.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Self, ModelError> {
        Self::new(self.0.map(|w| w * c))
    }
}

impl TryFrom<[f64; 8]> for WeightVector {
    type Error = ModelError;
    fn try_from(w: [f64; 8]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<WeightVector> for [f64; 8] {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Deviations D1..D8 of one step: levels in m, users in 10³ m³, energy in kWh.
pub type Deviations = [f64; N_OBJECTIVES];

/// D1..D8 from the starting level, delivered user volumes and energy.
pub fn deviations(rec: &StepRecord, h_t: f64, user_releases: &[f64; N_USERS], power: f64) -> Deviations {
    let d = rec.user_demands();
    let mut out = [0.0; N_OBJECTIVES];
    out[0] = (rec.d1 - h_t).max(0.0);
    out[1] = (h_t - rec.d2).max(0.0);
    for u in 0..N_USERS {
        out[2 + u] = (d[u] - user_releases[u]).max(0.0);
    }
    out[7] = (rec.d8 - power).max(0.0);
    out
}

/// Weighted sum of squared deviations.
pub fn step_cost(w: &WeightVector, d: &Deviations) -> f64 {
    w.0.iter().zip(d).map(|(w, d)| w * d * d).sum()
}
