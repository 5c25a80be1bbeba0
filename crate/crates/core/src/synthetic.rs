//! Seeded synthetic data shaped like the Zletovica system: snow-melt driven
//! lognormal inflows with year-to-year wetness and week-to-week persistence,
//! tributary flows tracking the reservoir inflow, constant town and
//! ecological demands and summer irrigation. Also a tiny fixed toy problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grid::StorageGrid;
use crate::hydro::calendar::{days_in_step, month_of_step};
use crate::hydro::{StepRecord, SystemSpec, WeightVector};
use crate::series::{assemble, DemandRow, FlowRecord};

/// Mean weekly reservoir inflow per calendar month, 10³ m³/week.
const MONTHLY_INFLOW: [f64; 12] = [
    420.0, 520.0, 900.0, 1_600.0, 1_800.0, 900.0, 380.0, 240.0, 230.0, 300.0, 420.0, 450.0,
];

/// Irrigation share of the season peak per calendar month.
const IRRIGATION: [f64; 12] = [0.0, 0.0, 0.0, 0.1, 0.4, 0.8, 1.0, 0.9, 0.4, 0.0, 0.0, 0.0];

/// Hydropower demand per calendar month, kWh/week.
const ENERGY: [f64; 12] = [
    700_000.0, 650_000.0, 600_000.0, 500_000.0, 450_000.0, 450_000.0, 500_000.0, 500_000.0, 450_000.0, 500_000.0,
    600_000.0, 700_000.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub years: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    /// Multiplier on all inflows.
    pub inflow_scale: f64,
    /// Coefficient of variation of step inflows around the seasonal mean.
    pub cv: f64,
    /// Lag-one correlation of log inflow anomalies.
    pub persistence: f64,
    /// Standard deviation of the log annual wetness factor.
    pub year_sigma: f64,
    /// Lower bound on every inflow, 10³ m³/week.
    pub floor: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            years: 25,
            steps_per_year: 52,
            seed: 7,
            inflow_scale: 1.0,
            cv: 0.45,
            persistence: 0.6,
            year_sigma: 0.25,
            floor: 20.0,
        }
    }
}

/// One year of demands and critical levels.
pub fn demand_profile(steps_per_year: usize) -> Vec<DemandRow> {
    (0..steps_per_year)
        .map(|k| {
            let m = month_of_step(steps_per_year, k);
            let weeks = days_in_step(steps_per_year, k) / 7.0;
            DemandRow {
                d1: 1020.5,
                d2: 1060.0,
                d3: 75.0 * weeks,
                d4: 180.0 * IRRIGATION[m] * weeks,
                d5: 318.0 * weeks,
                d6: 260.0 * IRRIGATION[m] * weeks,
                // 100 l/s held all week.
                d7: 60.48 * weeks,
                d8: ENERGY[m] * weeks,
            }
        })
        .collect()
}

/// Flows for `cfg.years` years.
pub fn flows(cfg: &SyntheticConfig) -> Result<Vec<FlowRecord>, ModelError> {
    if cfg.years == 0 {
        return Err(ModelError::InvalidSpec(
            "synthetic series needs at least one year".into(),
        ));
    }
    if !(cfg.cv > 0.0 && cfg.inflow_scale > 0.0 && cfg.persistence.abs() < 1.0 && cfg.year_sigma >= 0.0) {
        return Err(ModelError::InvalidSpec("invalid synthetic generator parameters".into()));
    }
    let spy = cfg.steps_per_year;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma = (1.0 + cfg.cv * cfg.cv).ln().sqrt();
    let rho = cfg.persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let mut z: f64 = std.sample(&mut rng);
    let mut out = Vec::with_capacity(cfg.years * spy);
    for _ in 0..cfg.years {
        let wet = (cfg.year_sigma * std.sample(&mut rng) - cfg.year_sigma * cfg.year_sigma / 2.0).exp();
        for k in 0..spy {
            let m = month_of_step(spy, k);
            let weeks = days_in_step(spy, k) / 7.0;
            z = rho * z + innov * std.sample(&mut rng);
            let mean = MONTHLY_INFLOW[m] * weeks * cfg.inflow_scale * wet;
            let q = (mean * (sigma * z - sigma * sigma / 2.0).exp()).max(cfg.floor * weeks);
            let tr_noise = (0.2 * std.sample(&mut rng) - 0.02).exp();
            let q_tr = q * tr_noise;
            out.push(FlowRecord {
                q,
                q1: q + 0.3 * q_tr,
                q2: q + 0.6 * q_tr,
                q3: q + q_tr,
            });
        }
    }
    Ok(out)
}

/// Flows and tiled demands as step records.
pub fn generate(spec: &SystemSpec, cfg: &SyntheticConfig) -> Result<Vec<StepRecord>, ModelError> {
    if cfg.steps_per_year != spec.steps_per_year {
        return Err(ModelError::InvalidSpec(
            "steps_per_year differs from the system spec".into(),
        ));
    }
    assemble(spec, &flows(cfg)?, &demand_profile(cfg.steps_per_year))
}

/// Small deterministic problem for exhaustive checks: eight weeks, five
/// storage levels, two active users plus level bands and hydropower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toy {
    pub spec: SystemSpec,
    pub series: Vec<StepRecord>,
    pub grid: StorageGrid,
    pub weights: WeightVector,
}

const TOY_INFLOW: [f64; 8] = [300.0, 650.0, 1_100.0, 900.0, 500.0, 250.0, 150.0, 200.0];

/// Toy with `levels` storage levels 500 apart starting at 8000.
pub fn toy_with_levels(levels: usize) -> Toy {
    let spec = SystemSpec::knezevo();
    let series = TOY_INFLOW
        .iter()
        .enumerate()
        .map(|(t, &q)| StepRecord {
            t,
            q,
            q1: 1.06 * q,
            q2: 1.12 * q,
            q3: 1.2 * q,
            d1: 1036.0,
            d2: 1038.5,
            d3: 250.0,
            d4: 0.0,
            d5: 300.0,
            d6: 0.0,
            d7: 0.0,
            d8: 400_000.0,
        })
        .collect();
    let grid = StorageGrid::new((0..levels).map(|k| 8_000.0 + 500.0 * k as f64).collect()).expect("toy grid");
    let weights = WeightVector::new([50.0, 50.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1e-9]).expect("toy weights");
    Toy {
        spec,
        series,
        grid,
        weights,
    }
}

pub fn toy() -> Toy {
    toy_with_levels(5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::tributary_balance;

    #[test]
    fn deterministic_per_seed() {
        let spec = SystemSpec::knezevo();
        let cfg = SyntheticConfig {
            years: 3,
            ..Default::default()
        };
        assert_eq!(generate(&spec, &cfg).unwrap(), generate(&spec, &cfg).unwrap());
        let other = SyntheticConfig { seed: 8, ..cfg };
        assert_ne!(generate(&spec, &cfg).unwrap(), generate(&spec, &other).unwrap());
    }

    #[test]
    fn plausible_magnitudes() {
        let spec = SystemSpec::knezevo();
        let cfg = SyntheticConfig {
            years: 30,
            ..Default::default()
        };
        let s = generate(&spec, &cfg).unwrap();
        assert_eq!(s.len(), 30 * 52);
        let annual: f64 = s.iter().map(|r| r.q).sum::<f64>() / 30.0;
        assert!(annual > 20_000.0 && annual < 60_000.0, "{annual}");
        assert!(s
            .iter()
            .all(|r| r.q >= 20.0 && r.q3 >= r.q && r.q1 <= r.q2 && r.q2 <= r.q3));
        assert!(tributary_balance(&s).unwrap().comparable);
    }

    #[test]
    fn monthly_profile_scales_with_month_length() {
        let p = demand_profile(12);
        assert!((p[0].d5 - 318.0 * 31.0 / 7.0).abs() < 1e-9);
        assert_eq!(p[0].d4, 0.0);
        assert!(p[6].d6 > 0.0);
    }
}
