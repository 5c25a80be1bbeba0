use serde::{Deserialize, Serialize};

use super::{PlantParams, StepRecord, SystemSpec};

/// Turbined flow (m³/s) and energy (kWh) of one plant over a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantOutput {
    pub flow: f64,
    pub head: f64,
    pub energy: f64,
}

/// Energy of the whole cascade over a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerOutput {
    /// Plants 0, 1, 2, 3 and 6 in that order.
    pub plants: [PlantOutput; 5],
    pub total: f64,
}

/// Energy produced by the cascade for one step.
///
/// `r_total` is the reservoir release through the dam; `r3`, `r4` and `r7`
/// are the volumes delivered to the upper town intake, the upper irrigation
/// zone and the ecological flow (10³ m³/step). `h_t`, `h_next` are the
/// reservoir levels at both ends of the step. Flows are converted to the
/// step-mean rate, negative intermediate flows clamp to zero and every plant
/// is capped at its turbine limit.
#[allow(clippy::too_many_arguments)]
pub fn hydropower(
    spec: &SystemSpec,
    rec: &StepRecord,
    r_total: f64,
    r3: f64,
    r4: f64,
    r7: f64,
    h_t: f64,
    h_next: f64,
) -> PowerOutput {
    let t = rec.t;
    let flow = |v: f64| spec.volume_to_flow(v, t);
    let hours = spec.step_hours(t);
    let p = &spec.plants;
    let h = &spec.heads;

    let run = |plant: &PlantParams, demanded: f64, head: f64| {
        let f = demanded.max(0.0).min(plant.max_flow);
        let head = head.max(0.0);
        PlantOutput {
            flow: f,
            head,
            energy: plant.gen * f * head * hours,
        }
    };

    let head0 = (h_t + h_next) / 2.0 - h.tailwater0;
    let p0 = run(&p.hec0, flow(r_total), head0);
    let p1 = run(&p.hec1, p0.flow - flow(r7), h.hec1);
    let p2 = run(&p.hec2, p1.flow + flow(rec.q1 - rec.q) - flow(r3), h.hec2);
    let p3 = run(&p.hec3, p2.flow + flow(rec.q2 - rec.q1) - flow(r4), h.hec3);
    let p6 = run(&p.hec6, flow(r3), h.hec6);

    let plants = [p0, p1, p2, p3, p6];
    PowerOutput {
        plants,
        total: plants.iter().map(|p| p.energy).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize) -> StepRecord {
        StepRecord {
            t,
            q: 100.0,
            q1: 100.0,
            q2: 100.0,
            q3: 100.0,
            d1: 1020.5,
            d2: 1060.0,
            d3: 0.0,
            d4: 0.0,
            d5: 0.0,
            d6: 0.0,
            d7: 0.0,
            d8: 0.0,
        }
    }

    #[test]
    fn plant_one_thirty_day_month() {
        // April: 30 days. 1 m³/s through plant 1 only: release 1 m³/s with
        // zero head at the dam so plant 0 contributes nothing.
        let spec = SystemSpec::knezevo().with_steps_per_year(12);
        let r = rec(3);
        let vol = spec.flow_to_volume(1.0, 3);
        let out = hydropower(&spec, &r, vol, 0.0, 0.0, 0.0, 990.0, 990.0);
        let expected = 8.0 * 1.0 * 170.0 * 24.0 * 30.0;
        assert!((out.plants[1].energy - 979_200.0).abs() < 1e-6 * expected);
        assert_eq!(out.plants[0].energy, 0.0);
    }

    #[test]
    fn no_flow_no_power() {
        let spec = SystemSpec::knezevo();
        let out = hydropower(&spec, &rec(0), 0.0, 0.0, 0.0, 0.0, 1050.0, 1050.0);
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn dam_plant_is_capped() {
        let spec = SystemSpec::knezevo().with_steps_per_year(12);
        let vol = spec.flow_to_volume(2.0, 0);
        let out = hydropower(&spec, &rec(0), vol, 0.0, 0.0, 0.0, 1050.0, 1050.0);
        assert!((out.plants[0].flow - 1.5).abs() < 1e-12);
        let head = 60.0;
        let hours = 31.0 * 24.0;
        assert!((out.plants[0].energy - 8.0 * 1.5 * head * hours).abs() < 1e-6);
    }

    #[test]
    fn negative_intermediate_flows_clamp() {
        let spec = SystemSpec::knezevo();
        let r = rec(0);
        let out = hydropower(&spec, &r, 50.0, 40.0, 40.0, 100.0, 1050.0, 1050.0);
        assert_eq!(out.plants[1].flow, 0.0);
        assert_eq!(out.plants[2].flow, 0.0);
        assert_eq!(out.plants[3].flow, 0.0);
        assert!(out.plants[4].flow > 0.0);
    }
}
