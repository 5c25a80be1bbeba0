//! Forward simulation of a storage policy over a series.

use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::hydro::{
    evaluate_release, evaporation, transition, Deviations, Infeasible, StepOutcome, StepRecord, SystemSpec,
    TransitionParams, N_OBJECTIVES,
};

/// Anything that picks a next-storage target for a state.
pub trait Policy {
    /// Target storage after step `k` of the simulated series, starting from
    /// storage `s` with inputs `rec`.
    fn next_storage(&self, k: usize, s: f64, rec: &StepRecord) -> Result<f64, SolveError>;
}

/// Per-step record of a simulated or optimized trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSeries {
    pub start_storage: f64,
    /// Reservoir inflow of each step, kept for balance checks.
    pub inflows: Vec<f64>,
    pub steps: Vec<StepOutcome>,
}

impl OutcomeSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Storage after each step.
    pub fn storages(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.s_next).collect()
    }

    pub fn end_storage(&self) -> f64 {
        self.steps.last().map_or(self.start_storage, |s| s.s_next)
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    /// Σ D_i over the horizon, one entry per objective.
    pub fn deviation_sums(&self) -> Deviations {
        let mut out = [0.0; N_OBJECTIVES];
        for s in &self.steps {
            for (o, d) in out.iter_mut().zip(&s.deviations) {
                *o += d;
            }
        }
        out
    }

    /// Σ D_i² over the horizon.
    pub fn squared_deviation_sums(&self) -> Deviations {
        let mut out = [0.0; N_OBJECTIVES];
        for s in &self.steps {
            for (o, d) in out.iter_mut().zip(&s.deviations) {
                *o += d * d;
            }
        }
        out
    }

    /// (Σq − Σr − Σe − Σspill) − (s_end − s_start), and the scale it should
    /// be compared against.
    pub fn mass_balance_residual(&self) -> (f64, f64) {
        let mut net = 0.0;
        let mut scale = self.start_storage.abs();
        for (s, q) in self.steps.iter().zip(&self.inflows) {
            net += q - s.r_total - s.evap - s.overspill;
            scale = scale.max(q.abs()).max(s.r_total.abs()).max(s.s_next.abs());
        }
        (net - (self.end_storage() - self.start_storage), scale.max(1.0))
    }

    pub fn closes_mass_balance(&self, rel_tol: f64) -> bool {
        let (r, scale) = self.mass_balance_residual();
        r.abs() <= rel_tol * scale
    }
}

/// Apply `policy` step by step from `start`.
///
/// Targets that cannot be reached are clamped: if inflow cannot fill up to
/// the target nothing is released; if the dam plant cannot pass the needed
/// release it runs at capacity and anything above s_max spills.
pub fn simulate_policy(
    spec: &SystemSpec,
    series: &[StepRecord],
    policy: &dyn Policy,
    start: f64,
    params: &TransitionParams,
) -> Result<OutcomeSeries, SolveError> {
    let mut s = start;
    let mut steps = Vec::with_capacity(series.len());
    for (k, rec) in series.iter().enumerate() {
        let target = policy.next_storage(k, s, rec)?;
        let out = step_towards(spec, rec, s, target, params)?;
        s = out.s_next;
        steps.push(out);
    }
    Ok(OutcomeSeries {
        start_storage: start,
        inflows: series.iter().map(|r| r.q).collect(),
        steps,
    })
}

/// One simulated step aiming at `target`.
pub fn step_towards(
    spec: &SystemSpec,
    rec: &StepRecord,
    s: f64,
    target: f64,
    params: &TransitionParams,
) -> Result<StepOutcome, SolveError> {
    match transition(spec, rec, s, target, params) {
        Ok(out) => Ok(out),
        Err(Infeasible::Model(e)) => Err(e.into()),
        Err(Infeasible::NegativeRelease { .. }) => clamp(spec, rec, s, 0.0, params),
        Err(Infeasible::AboveCap { cap, .. }) => clamp(spec, rec, s, cap, params),
    }
}

/// Release `r` and let storage settle where mass balance puts it.
fn clamp(
    spec: &SystemSpec,
    rec: &StepRecord,
    s: f64,
    r: f64,
    params: &TransitionParams,
) -> Result<StepOutcome, SolveError> {
    let lo = spec.curve().min_volume();
    let hi = spec.s_max;
    let mut s_next = s;
    let mut evap = evaporation(spec, s, s, rec.t)?;
    // Evaporation depends on the end storage only through the mean area, so
    // the fixed point is reached in a handful of iterations.
    for _ in 0..100 {
        let next = (s + rec.q - r - evap).clamp(lo, hi);
        let converged = (next - s_next).abs() <= 1e-12 * next.abs().max(1.0);
        s_next = next;
        evap = evaporation(spec, s, s_next, rec.t)?;
        if converged {
            break;
        }
    }
    let mut r = r;
    let mut overspill = 0.0;
    let free = s + rec.q - r - evap;
    if free > hi {
        overspill = free - hi;
    } else if free < lo {
        // Not even evaporation can be met; release nothing and lose what remains.
        r = 0.0;
        evap = (s + rec.q - lo).max(0.0).min(evap);
    }
    let s_next = s + rec.q - r - evap - overspill;
    Ok(evaluate_release(spec, rec, s, s_next, r, evap, overspill, params)?)
}

/// Policy that always returns the same target; useful for tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTarget(pub f64);

impl Policy for ConstantTarget {
    fn next_storage(&self, _k: usize, _s: f64, _rec: &StepRecord) -> Result<f64, SolveError> {
        Ok(self.0)
    }
}

/// Storage series benchmark: Σ |s_ref − s_cand| over post-step storages.
pub fn s_n_benchmark(reference: &OutcomeSeries, candidate: &OutcomeSeries) -> Result<f64, SolveError> {
    if reference.len() != candidate.len() {
        return Err(SolveError::LengthMismatch {
            left: reference.len(),
            right: candidate.len(),
        });
    }
    Ok(reference
        .steps
        .iter()
        .zip(&candidate.steps)
        .map(|(a, b)| (a.s_next - b.s_next).abs())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::Formulation;
    use crate::hydro::WeightVector;

    fn rec(t: usize, q: f64) -> StepRecord {
        StepRecord {
            t,
            q,
            q1: q,
            q2: q,
            q3: q,
            d1: 1020.5,
            d2: 1060.0,
            d3: 10.0,
            d4: 0.0,
            d5: 0.0,
            d6: 0.0,
            d7: 0.0,
            d8: 0.0,
        }
    }

    fn params() -> TransitionParams {
        TransitionParams::new(WeightVector::uniform(), Formulation::Quadratic)
    }

    #[test]
    fn clamped_steps_close_mass_balance() {
        let spec = SystemSpec::knezevo();
        let series: Vec<_> = (0..30)
            .map(|t| rec(t, if t % 3 == 0 { 4_000.0 } else { 1.0 }))
            .collect();
        for target in [1_500.0, 12_000.0, 23_500.0] {
            let out = simulate_policy(&spec, &series, &ConstantTarget(target), 10_000.0, &params()).unwrap();
            assert!(out.closes_mass_balance(1e-9), "{:?}", out.mass_balance_residual());
            assert!(out.steps.iter().all(|s| s.s_next <= spec.s_max + 1e-9));
            assert!(out.steps.iter().all(|s| s.r_total <= spec.release_cap(s.t) + 1e-9));
        }
    }

    #[test]
    fn flood_spills_above_s_max() {
        let spec = SystemSpec::knezevo();
        let series = vec![rec(0, 10_000.0)];
        let out = simulate_policy(&spec, &series, &ConstantTarget(20_000.0), 20_000.0, &params()).unwrap();
        let st = &out.steps[0];
        assert_eq!(st.s_next, spec.s_max);
        assert!(st.overspill > 0.0);
        assert!(out.closes_mass_balance(1e-9));
    }

    #[test]
    fn drought_releases_nothing() {
        let spec = SystemSpec::knezevo();
        let series = vec![rec(20, 0.0)];
        let out = simulate_policy(&spec, &series, &ConstantTarget(15_000.0), 10_000.0, &params()).unwrap();
        let st = &out.steps[0];
        assert_eq!(st.r_total, 0.0);
        assert!((st.s_next - (10_000.0 - st.evap)).abs() < 1e-9);
        assert!(st.evap > 0.0);
    }

    #[test]
    fn s_n_examples() {
        let spec = SystemSpec::knezevo().with_release_cap(false);
        let series: Vec<_> = (0..10).map(|t| rec(t, 0.0)).collect();
        let a = simulate_policy(&spec, &series, &ConstantTarget(5_000.0), 5_000.0, &params()).unwrap();
        assert_eq!(s_n_benchmark(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        for s in &mut b.steps {
            s.s_next += 300.0;
        }
        assert!((s_n_benchmark(&a, &b).unwrap() - 3_000.0).abs() < 1e-9);
        b.steps.pop();
        assert!(matches!(s_n_benchmark(&a, &b), Err(SolveError::LengthMismatch { .. })));
    }
}
