use serde::{Deserialize, Serialize};

use super::{deviations, hydropower, step_cost, Deviations, StepRecord, SystemSpec, WeightVector, N_USERS};
use crate::alloc::{allocate_into, Formulation, DEFAULT_NU};
use crate::error::ModelError;

/// How the five consumptive users enter the transition cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UserModel {
    /// Each user is its own objective; water is split by the allocation solver.
    #[default]
    Nested,
    /// All users merged into one demand with the summed weight (AWD stage 1).
    Aggregated,
}

/// Everything a solver fixes when evaluating transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub weights: WeightVector,
    pub formulation: Formulation,
    pub nu: usize,
    /// When false D8 is forced to 0 (nSDP).
    pub include_hydropower: bool,
    /// Highest storage a solver may target. A transition into it may spill
    /// whatever the dam plant cannot pass.
    pub ceiling: Option<f64>,
    pub user_model: UserModel,
}

impl TransitionParams {
    pub fn new(weights: WeightVector, formulation: Formulation) -> Self {
        Self {
            weights,
            formulation,
            nu: DEFAULT_NU,
            include_hydropower: true,
            ceiling: None,
            user_model: UserModel::Nested,
        }
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = Some(ceiling);
        self
    }

    pub fn without_hydropower(mut self) -> Self {
        self.include_hydropower = false;
        self
    }

    pub fn with_user_model(mut self, m: UserModel) -> Self {
        self.user_model = m;
        self
    }

    pub fn with_nu(mut self, nu: usize) -> Self {
        self.nu = nu;
        self
    }
}

/// Why a storage target cannot be reached in one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Infeasible {
    /// Inflow minus evaporation cannot fill up to the target.
    NegativeRelease {
        needed: f64,
    },
    /// The target needs more release than the dam plant can pass.
    AboveCap {
        needed: f64,
        cap: f64,
    },
    Model(ModelError),
}

impl From<ModelError> for Infeasible {
    fn from(e: ModelError) -> Self {
        Infeasible::Model(e)
    }
}

/// Full account of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: usize,
    pub s: f64,
    pub s_next: f64,
    pub r_total: f64,
    /// Delivered volumes to users 3..7 (tributary share plus reservoir share).
    pub releases: [f64; N_USERS],
    pub evap: f64,
    pub overspill: f64,
    pub h: f64,
    pub h_next: f64,
    pub deviations: Deviations,
    /// Cascade energy, kWh.
    pub power: f64,
    pub plant_energy: [f64; 5],
    pub cost: f64,
}

/// Evaporation loss over step `t` between storages `s_t` and `s_next`.
pub fn evaporation(spec: &SystemSpec, s_t: f64, s_next: f64, t: usize) -> Result<f64, ModelError> {
    let c = spec.curve();
    let a0 = c.area(s_t)?;
    let a1 = c.area(s_next)?;
    Ok(spec.evap_rate(t) * (a0 + a1) / 2.0)
}

/// Reservoir release required to land on `s_next`, and the evaporation used.
pub fn release_needed(spec: &SystemSpec, rec: &StepRecord, s_t: f64, s_next: f64) -> Result<(f64, f64), ModelError> {
    let e = evaporation(spec, s_t, s_next, rec.t)?;
    Ok((s_t + rec.q - s_next - e, e))
}

/// Evaluate the move from `s_t` to `s_next` under `params`.
pub fn transition(
    spec: &SystemSpec,
    rec: &StepRecord,
    s_t: f64,
    s_next: f64,
    params: &TransitionParams,
) -> Result<StepOutcome, Infeasible> {
    let (mut needed, evap) = release_needed(spec, rec, s_t, s_next)?;
    if needed < 0.0 {
        // Round-off from the balance of nearly equal volumes.
        if needed >= -1e-12 * s_t.max(rec.q).max(1.0) {
            needed = 0.0;
        } else {
            return Err(Infeasible::NegativeRelease { needed });
        }
    }
    let mut r_total = needed;
    let mut overspill = 0.0;
    if spec.release_cap_enforced {
        let cap = spec.release_cap(rec.t);
        if needed > cap {
            let at_ceiling = params.ceiling.is_some_and(|c| s_next >= c);
            if !at_ceiling {
                return Err(Infeasible::AboveCap { needed, cap });
            }
            r_total = cap;
            overspill = needed - cap;
        }
    }
    Ok(evaluate_release(
        spec, rec, s_t, s_next, r_total, evap, overspill, params,
    )?)
}

/// Evaluate a step whose release, evaporation and spill are already known.
///
/// Tributary inflow is shared among users first; the reservoir release then
/// covers what is left of each demand.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_release(
    spec: &SystemSpec,
    rec: &StepRecord,
    s_t: f64,
    s_next: f64,
    r_total: f64,
    evap: f64,
    overspill: f64,
    params: &TransitionParams,
) -> Result<StepOutcome, ModelError> {
    let curve = spec.curve();
    let h = curve.level(s_t)?;
    let h_next = curve.level(s_next)?;
    let q_tr = rec.tributary_inflow()?;

    let demands = rec.user_demands();
    let weights = params.weights.user_weights();
    let releases = nested_split(q_tr, r_total, &demands, &weights, params.formulation, params.nu);

    let (power, plant_energy) = if params.include_hydropower {
        let p = hydropower(spec, rec, r_total, releases[0], releases[1], releases[4], h, h_next);
        (p.total, p.plants.map(|x| x.energy))
    } else {
        (0.0, [0.0; 5])
    };

    let mut dev = deviations(rec, h, &releases, power);
    if !params.include_hydropower {
        dev[7] = 0.0;
    }
    let cost = match params.user_model {
        UserModel::Nested => step_cost(&params.weights, &dev),
        UserModel::Aggregated => aggregated_cost(&params.weights, &dev, &demands, q_tr + r_total),
    };

    Ok(StepOutcome {
        t: rec.t,
        s: s_t,
        s_next,
        r_total,
        releases,
        evap,
        overspill,
        h,
        h_next,
        deviations: dev,
        power,
        plant_energy,
        cost,
    })
}

fn nested_split(
    q_tr: f64,
    r_total: f64,
    demands: &[f64; N_USERS],
    weights: &[f64; N_USERS],
    formulation: Formulation,
    nu: usize,
) -> [f64; N_USERS] {
    let mut from_tr = [0.0; N_USERS];
    allocate_into(q_tr, demands, weights, formulation, nu, &mut from_tr);
    let mut residual = [0.0; N_USERS];
    for u in 0..N_USERS {
        residual[u] = (demands[u] - from_tr[u]).max(0.0);
    }
    let mut from_res = [0.0; N_USERS];
    allocate_into(r_total, &residual, weights, formulation, nu, &mut from_res);
    let mut out = [0.0; N_USERS];
    for u in 0..N_USERS {
        out[u] = from_tr[u] + from_res[u];
    }
    out
}

/// Level terms, one merged user with the summed weight, and hydropower.
fn aggregated_cost(w: &WeightVector, dev: &Deviations, demands: &[f64; N_USERS], water: f64) -> f64 {
    let d: f64 = demands.iter().sum();
    let wu: f64 = w.user_weights().iter().sum();
    let short = (d - water.min(d)).max(0.0);
    w.w(1) * dev[0] * dev[0] + w.w(2) * dev[1] * dev[1] + wu * short * short + w.w(8) * dev[7] * dev[7]
}
