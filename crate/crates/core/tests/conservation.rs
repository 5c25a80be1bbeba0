use oro_core::alloc::Formulation;
use oro_core::grid::StorageGrid;
use oro_core::hydro::{SystemSpec, WeightVector};
use oro_core::moss::{solve, Dataset, SolverConfig, SolverKind};
use oro_core::nrl::{MissingState, RlConfig};
use oro_core::nsdp::InflowModel;
use oro_core::series::split_years;
use oro_core::synthetic::{generate, SyntheticConfig};

#[test]
fn every_solver_simulation_closes_mass_balance() {
    let spec = SystemSpec::knezevo();
    let s = generate(
        &spec,
        &SyntheticConfig {
            years: 4,
            seed: 17,
            ..Default::default()
        },
    )
    .unwrap();
    let (train, test) = split_years(&s, 52, 3).unwrap();
    let grid = StorageGrid::with_step(&spec, 500.0).unwrap();
    let data = Dataset {
        train: &train,
        eval: &test,
        demand_year: &train[..52],
    };
    let w = WeightVector::new([2e6, 2e6, 200.0, 1.0, 200.0, 1.0, 300.0, 1e-8]).unwrap();
    for solver in [SolverKind::Ndp, SolverKind::AwdDp, SolverKind::Nsdp, SolverKind::Nrl] {
        for formulation in [Formulation::Linear, Formulation::Quadratic] {
            let cfg = SolverConfig {
                solver,
                formulation,
                missing: MissingState::Nearest,
                rl: RlConfig {
                    max_episodes: 3_000,
                    ..Default::default()
                },
                ..Default::default()
            };
            let out = solve(&spec, &data, &grid, w, &cfg).unwrap().outcome.unwrap();
            assert_eq!(out.len(), test.len());
            let (r, scale) = out.mass_balance_residual();
            assert!(r.abs() <= 1e-9 * scale, "{solver} {formulation}: residual {r}");
            for st in &out.steps {
                assert!(st.s_next >= spec.s_dead - 1e-9 && st.s_next <= spec.s_max + 1e-9);
                assert!(st.r_total >= 0.0 && st.evap >= 0.0 && st.overspill >= 0.0);
                assert!(st.deviations.iter().all(|d| *d >= 0.0));
            }
        }
    }
}

#[test]
fn transition_rows_are_stochastic() {
    let spec = SystemSpec::knezevo();
    for seed in 1..=3 {
        let s = generate(
            &spec,
            &SyntheticConfig {
                years: 20,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        for classes in [1, 3, 5, 8] {
            let m = InflowModel::fit(&s, 52, classes, seed).unwrap();
            assert!(m.tms.max_row_error() <= 1e-12);
            for t in 0..52 {
                for l in 0..classes {
                    let sum: f64 = (0..classes).map(|k| m.tms.get(t, l, k)).sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
