//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Built without the test harness so the lines always reach the output:
//! `cargo test -p oro-workbench --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use oro_core::alloc::{allocate, allocate_oracle, increment_marginal_cost, AllocationProblem, Formulation, DEFAULT_NU};
use oro_core::grid::StorageGrid;
use oro_core::hydro::{hydropower, transition, StepRecord, SystemSpec, TransitionParams, WeightVector};
use oro_core::moss::{dominates, pareto_filter, solve, Dataset, SolverConfig, SolverKind};
use oro_core::ndp::{awd_dp_solve, find_cyclic_start, ndp_solve, optimal_trajectory, Boundary, DpOptions};
use oro_core::nrl::{nrl_train, MissingState, Reference, RlConfig};
use oro_core::nsdp::{kmeans_cluster, nsdp_solve, InflowModel, SdpOptions};
use oro_core::series::{renumber, split_years};
use oro_core::simulate::{s_n_benchmark, simulate_policy};
use oro_core::synthetic::{generate, toy, SyntheticConfig};

const ORDERING_WEIGHTS: [f64; 8] = [2e6, 2e6, 200.0, 1.0, 200.0, 1.0, 300.0, 1e-8];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn run(name: &'static str, budget_secs: f64, f: impl FnOnce() -> (bool, String)) -> Check {
    let t = Instant::now();
    let (pass, detail) = f();
    let secs = t.elapsed().as_secs_f64();
    let within = secs <= budget_secs;
    let c = Check {
        name,
        pass: pass && within,
        detail: if within {
            detail
        } else {
            format!("{detail}; took {secs:.1}s, budget {budget_secs}s")
        },
        secs,
    };
    println!(
        "{} {} ({:.1}s): {}",
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.secs,
        c.detail
    );
    c
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn synthetic(years: usize, seed: u64) -> Vec<StepRecord> {
    generate(
        &SystemSpec::knezevo(),
        &SyntheticConfig {
            years,
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn weights() -> WeightVector {
    WeightVector::new(ORDERING_WEIGHTS).unwrap()
}

fn allocation_oracle() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for k in 0..200 {
        let n = rng.gen_range(1..=5);
        let p = AllocationProblem {
            available: rng.gen_range(0.0..800.0),
            demands: (0..n).map(|_| rng.gen_range(0.0..300.0)).collect(),
            weights: (0..n).map(|_| rng.gen_range(0.0..10.0)).collect(),
            formulation: if k % 2 == 0 {
                Formulation::Linear
            } else {
                Formulation::Quadratic
            },
            nu: DEFAULT_NU,
        };
        let (a, b) = (p.objective(&allocate(&p)), p.objective(&allocate_oracle(&p).unwrap()));
        let tol = match p.formulation {
            Formulation::Linear => 1e-9 * b.abs().max(1.0),
            Formulation::Quadratic => increment_marginal_cost(&p) + 1e-9 * b.abs().max(1.0),
        };
        worst = worst.max((a - b).abs() - tol);
        if (a - b).abs() > tol {
            failures += 1;
        }
    }
    (
        failures == 0,
        format!("200 instances, {failures} outside tolerance, worst excess {worst:.3e}"),
    )
}

/// Minimum path cost over every grid path; `cyclic` ties the end to the start.
fn enumerate(spec: &SystemSpec, series: &[StepRecord], grid: &StorageGrid, p: &TransitionParams, cyclic: bool) -> f64 {
    let m = grid.len();
    let steps = series.len();
    let g: Vec<Vec<Vec<f64>>> = series
        .iter()
        .map(|r| {
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| transition(spec, r, grid.get(i), grid.get(j), p).map_or(f64::INFINITY, |o| o.cost))
                        .collect()
                })
                .collect()
        })
        .collect();
    let free = if cyclic { steps - 1 } else { steps };
    let mut path = vec![0usize; steps + 1];
    let mut best = f64::INFINITY;
    for code in 0..m.pow((free + 1) as u32) {
        let mut c = code;
        for slot in path.iter_mut().take(free + 1) {
            *slot = c % m;
            c /= m;
        }
        if cyclic {
            path[steps] = path[0];
        }
        let sum: f64 = (0..steps).map(|t| g[t][path[t]][path[t + 1]]).sum();
        best = best.min(sum);
    }
    best
}

fn ndp_exact() -> (bool, String) {
    let toy = toy();
    let p = TransitionParams::new(toy.weights, Formulation::Quadratic).with_ceiling(toy.grid.max());
    let free = DpOptions {
        boundary: Boundary::Free,
        ..Default::default()
    };
    let sol = ndp_solve(&toy.spec, &toy.series, &toy.grid, &p, &free).unwrap();
    let dp_free = sol.values[0].iter().cloned().fold(f64::INFINITY, f64::min);
    let brute_free = enumerate(&toy.spec, &toy.series, &toy.grid, &p, false);

    let cyc = DpOptions {
        k_max: 50,
        ..Default::default()
    };
    let sol = ndp_solve(&toy.spec, &toy.series, &toy.grid, &p, &cyc).unwrap();
    let brute_cyc = enumerate(&toy.spec, &toy.series, &toy.grid, &p, true);
    let fixed_cost = |i: usize| {
        let path = sol.index_path(i);
        (path.first() == path.last()).then(|| {
            simulate_policy(&toy.spec, &toy.series, &sol.policy(), toy.grid.get(i), &p)
                .unwrap()
                .total_cost()
        })
    };
    let best_fixed = (0..toy.grid.len()).filter_map(fixed_cost).fold(f64::INFINITY, f64::min);
    let start = find_cyclic_start(&sol);
    let (_, chosen) = optimal_trajectory(&toy.spec, &toy.series, &sol, &p).unwrap();
    let pass = close(dp_free, brute_free, 1e-9) && close(best_fixed, brute_cyc, 1e-9);
    (
        pass,
        format!(
            "free boundary nDP {dp_free:.6} vs enumeration {brute_free:.6}; cyclic best fixed point {best_fixed:.6} vs \
             enumeration {brute_cyc:.6}; trajectory from the lowest fixed point (s0 = {}) costs {:.6}",
            start.storage,
            chosen.total_cost()
        ),
    )
}

fn awd_dominance() -> (bool, String) {
    let opts = DpOptions {
        k_max: 50,
        ..Default::default()
    };
    let costs = |spec: &SystemSpec, s: &[StepRecord], grid: &StorageGrid, w: WeightVector| {
        let p = TransitionParams::new(w, Formulation::Quadratic).with_ceiling(grid.max());
        let n = ndp_solve(spec, s, grid, &p, &opts).unwrap();
        let a = awd_dp_solve(spec, s, grid, &p, &opts).unwrap();
        let n = optimal_trajectory(spec, s, &n, &p).unwrap().1.total_cost();
        let a = optimal_trajectory(spec, s, &a, &p).unwrap().1.total_cost();
        (n, a)
    };
    let toy = toy();
    let mut cases = vec![costs(&toy.spec, &toy.series, &toy.grid, toy.weights)];
    let spec = SystemSpec::knezevo();
    let grid = StorageGrid::with_step(&spec, 500.0).unwrap();
    for seed in 1..=5 {
        cases.push(costs(&spec, &synthetic(1, seed), &grid, weights()));
    }
    let ok = cases.iter().all(|(n, a)| *n <= a + 1e-9 * a.abs().max(1.0));
    let worst = cases.iter().map(|(n, a)| n / a.max(1e-300)).fold(0.0, f64::max);
    (
        ok,
        format!("toy + 5 synthetic years, largest nDP/AWD cost ratio {worst:.4}"),
    )
}

fn conservation() -> (bool, String) {
    let spec = SystemSpec::knezevo();
    let s = synthetic(4, 17);
    let (train, test) = split_years(&s, 52, 3).unwrap();
    let grid = StorageGrid::with_step(&spec, 500.0).unwrap();
    let data = Dataset {
        train: &train,
        eval: &test,
        demand_year: &train[..52],
    };
    let mut worst = 0.0f64;
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
            let out = solve(&spec, &data, &grid, weights(), &cfg).unwrap().outcome.unwrap();
            let (r, scale) = out.mass_balance_residual();
            worst = worst.max(r.abs() / scale);
        }
    }
    let mut row_err = 0.0f64;
    for seed in 1..=3 {
        let s = synthetic(20, seed);
        for classes in [1, 3, 5, 8] {
            row_err = row_err.max(InflowModel::fit(&s, 52, classes, seed).unwrap().tms.max_row_error());
        }
    }
    (
        worst <= 1e-9 && row_err <= 1e-12,
        format!("worst relative mass residual {worst:.2e} over 8 runs, worst TM row error {row_err:.2e}"),
    )
}

fn nsdp_degenerate() -> (bool, String) {
    let spec = SystemSpec::knezevo();
    let grid = StorageGrid::with_step(&spec, 500.0).unwrap();
    let mut mismatches = 0;
    let mut states = 0;
    for (seed, formulation) in [(4, Formulation::Quadratic), (9, Formulation::Linear)] {
        let year = synthetic(1, seed);
        let repeated = renumber(&(0..3).flat_map(|_| year.iter().copied()).collect::<Vec<_>>());
        let p = TransitionParams::new(weights(), formulation).with_ceiling(grid.max());
        let model = InflowModel::fit(&repeated, 52, 1, 1).unwrap();
        let sdp = nsdp_solve(&spec, &year, &model, &grid, &p, &SdpOptions::default()).unwrap();
        let opts = DpOptions {
            stable_cycles: 3,
            k_max: 50,
            ..Default::default()
        };
        // nSDP leaves hydropower out, so the deterministic run does too
        let dp = ndp_solve(&spec, &year, &grid, &p.without_hydropower(), &opts).unwrap();
        for t in 0..52 {
            for i in 0..grid.len() {
                states += 1;
                if sdp.actions[t][i][0] != dp.actions[t][i] {
                    mismatches += 1;
                }
            }
        }
    }
    (
        mismatches == 0,
        format!("{states} states over 2 repeated years, {mismatches} differing actions"),
    )
}

fn nrl_toy() -> (bool, String) {
    let spec = SystemSpec::knezevo();
    let s = synthetic(1, 21);
    let grid = StorageGrid::new((0..15).map(|k| 8_000.0 + 500.0 * k as f64).collect()).unwrap();
    let p = TransitionParams::new(weights(), Formulation::Quadratic).with_ceiling(grid.max());
    let sol = ndp_solve(&spec, &s, &grid, &p, &DpOptions::default()).unwrap();
    let (start, dp) = optimal_trajectory(&spec, &s, &sol, &p).unwrap();
    let q: Vec<f64> = s.iter().map(|r| r.q).collect();
    let qtr: Vec<f64> = s.iter().map(|r| r.q3 - r.q).collect();
    let cq = kmeans_cluster(&q, 1, 1).unwrap();
    let ctr = kmeans_cluster(&qtr, 1, 2).unwrap();
    let reference = Reference {
        series: &s,
        outcome: &dp,
        params: p,
    };
    let cfg = RlConfig {
        max_episodes: 50_000,
        ..Default::default()
    };
    let out = nrl_train(&spec, &s, &grid, &cq, &ctr, &p, &cfg, Some(&reference)).unwrap();
    let rl = simulate_policy(&spec, &s, &out.policy, start.storage, &p).unwrap();
    let s_n = s_n_benchmark(&dp, &rl).unwrap();
    let bound = 500.0 * dp.len() as f64;
    let (a, b) = (rl.total_cost(), dp.total_cost());
    (
        a <= 1.05 * b && s_n <= bound,
        format!("m = 15, L = 1, M = 50000: nRL cost {a:.4e} vs nDP {b:.4e}; S_n {s_n:.0} (bound {bound:.0})"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ordering() -> (bool, String) {
    let spec = SystemSpec::knezevo();
    let grid = StorageGrid::with_step(&spec, 300.0).unwrap();
    let p = TransitionParams::new(weights(), Formulation::Quadratic).with_ceiling(grid.max());
    let (mut nd, mut nr, mut ns) = (Vec::new(), Vec::new(), Vec::new());
    let mut strict = true;
    for seed in 1..=5u64 {
        let s = synthetic(25, seed);
        let (train, test) = split_years(&s, 52, 20).unwrap();
        let sol = ndp_solve(&spec, &test, &grid, &p, &DpOptions::default()).unwrap();
        let (start, dp) = optimal_trajectory(&spec, &test, &sol, &p).unwrap();
        let model = InflowModel::fit(&train, 52, 5, seed).unwrap();
        let sdp = nsdp_solve(&spec, &train[..52], &model, &grid, &p, &SdpOptions::default()).unwrap();
        let sd = simulate_policy(&spec, &test, &sdp, start.storage, &p)
            .unwrap()
            .total_cost();
        let cfg = RlConfig {
            max_episodes: 400_000,
            seed,
            ..Default::default()
        };
        let rl = nrl_train(
            &spec,
            &train,
            &grid,
            &model.clustering_q,
            &model.clustering_qtr,
            &p,
            &cfg,
            None,
        )
        .unwrap();
        let policy = rl.policy.with_missing(MissingState::Nearest);
        let r = simulate_policy(&spec, &test, &policy, start.storage, &p)
            .unwrap()
            .total_cost();
        let d = dp.total_cost();
        strict &= d < r && d < sd;
        println!("    ordering seed {seed}: nDP {d:.4e}  nRL {r:.4e}  nSDP {sd:.4e}");
        nd.push(d);
        nr.push(r);
        ns.push(sd);
    }
    let (d, r, s) = (median(nd), median(nr), median(ns));
    (
        strict && d <= r && r <= s,
        format!(
            "5 seeds, 20 train / 5 test years, M = 400000: median nDP {d:.4e}, nRL {r:.4e}, nSDP {s:.4e}; \
             nDP strictly smallest in every trial: {strict}"
        ),
    )
}

fn brute_front(v: &[[f64; 8]]) -> Vec<usize> {
    let tol = |x: f64, y: f64| 1e-9 * x.abs().max(y.abs()).max(1.0);
    (0..v.len())
        .filter(|&a| {
            !(0..v.len()).any(|b| {
                (0..8).all(|i| v[b][i] <= v[a][i] + tol(v[a][i], v[b][i]))
                    && (0..8).any(|i| v[b][i] < v[a][i] - tol(v[a][i], v[b][i]))
            })
        })
        .collect()
}

fn moss_antichain() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(99);
    let v: Vec<[f64; 8]> = (0..100)
        .map(|_| std::array::from_fn(|_| f64::from(rng.gen_range(0u8..5))))
        .collect();
    let front = pareto_filter(&v);
    let antichain = front.iter().all(|&a| front.iter().all(|&b| !dominates(&v[a], &v[b])));
    let matches = front == brute_front(&v);

    let toy = toy();
    let opts = DpOptions {
        k_max: 50,
        ..Default::default()
    };
    let mut monotone = true;
    for obj in 1..=8 {
        let base = toy.weights.w(obj);
        let mut prev = f64::INFINITY;
        for f in [0.1, 0.5, 1.0, 5.0, 25.0] {
            let w = toy.weights.with(obj, base * f).unwrap();
            let p = TransitionParams::new(w, Formulation::Quadratic).with_ceiling(toy.grid.max());
            let sol = ndp_solve(&toy.spec, &toy.series, &toy.grid, &p, &opts).unwrap();
            let d = optimal_trajectory(&toy.spec, &toy.series, &sol, &p)
                .unwrap()
                .1
                .deviation_sums()[obj - 1];
            monotone &= d <= prev + 1e-9 * prev.abs().max(1.0) || prev.is_infinite();
            prev = d;
        }
    }
    (
        matches && antichain && monotone,
        format!(
            "front of {} among 100 vectors, matches oracle: {matches}, antichain: {antichain}; \
             each D_i sum non-increasing in w_i on the toy: {monotone}",
            front.len()
        ),
    )
}

fn hydropower_checks() -> (bool, String) {
    let spec = SystemSpec::knezevo().with_steps_per_year(12);
    let rec = |t| StepRecord {
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
    };
    let mut ok = true;
    // April has 30 days; zero head at the dam leaves plant 1 alone
    let out = hydropower(&spec, &rec(3), spec.flow_to_volume(1.0, 3), 0.0, 0.0, 0.0, 990.0, 990.0);
    ok &= close(out.plants[1].energy, 979_200.0, 1e-6);
    // plant 0: 2.0 m³/s demanded through 60 m of head turbines at the 1.5 cap
    let tw = spec.heads.tailwater0;
    let out = hydropower(
        &spec,
        &rec(3),
        spec.flow_to_volume(2.0, 3),
        0.0,
        0.0,
        0.0,
        tw + 60.0,
        tw + 60.0,
    );
    ok &= close(out.plants[0].flow, 1.5, 1e-12);
    ok &= close(out.plants[0].energy, 8.0 * 1.5 * 60.0 * 720.0, 1e-6);
    // caps and generation coefficients of plants 0, 1, 2, 3, 6
    let table = [(1.5, 8.0), (1.5, 8.0), (2.1, 8.35), (1.8, 8.35), (0.14, 8.35)];
    let pl = &spec.plants;
    let got = [pl.hec0, pl.hec1, pl.hec2, pl.hec3, pl.hec6];
    for ((cap, gen), g) in table.iter().zip(&got) {
        ok &= g.max_flow == *cap && g.gen == *gen;
    }
    // every knot: level m, volume 10⁶ m³, area km²
    let knots = [
        (990.0, 0.00, 0.00),
        (1000.0, 0.26, 0.05),
        (1008.0, 1.00, 0.13),
        (1020.0, 3.21, 0.23),
        (1030.0, 6.10, 0.34),
        (1040.0, 10.12, 0.46),
        (1050.0, 15.37, 0.59),
        (1060.0, 22.01, 0.74),
    ];
    let c = spec.curve();
    let mut knot_err = 0.0f64;
    for (h, v, a) in knots {
        let vol = v * 1000.0;
        knot_err = knot_err
            .max((c.level(vol).unwrap() - h).abs())
            .max((c.area(vol).unwrap() - a).abs())
            .max((c.volume_at_level(h).unwrap() - vol).abs());
    }
    ok &= knot_err == 0.0;
    (
        ok,
        format!("979200 kWh case, plant-0 cap, 5 plant parameters; 8 curve knots, max knot error {knot_err:e}"),
    )
}

fn oro(args: &[&str], cwd: &Path) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_oro"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn cli_pipeline() -> (bool, String) {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let (ok, err) = oro(&["gen-synthetic", "--seed", "6", "--years", "3", "--out", "data"], root);
    if !ok {
        return (false, format!("gen-synthetic: {err}"));
    }
    let base: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("data/config.json")).unwrap()).unwrap();
    let mut done = Vec::new();
    for (k, solver) in ["ndp", "nsdp", "nrl"].iter().enumerate() {
        let mut cfg = base.clone();
        cfg["solver"] = (*solver).into();
        cfg["train_years"] = 2.into();
        cfg["rl"]["max_episodes"] = 20_000.into();
        cfg["missing"] = "nearest".into();
        let file = format!("data/{solver}.json");
        std::fs::write(root.join(&file), serde_json::to_vec(&cfg).unwrap()).unwrap();
        let run_dir = format!("store/runs/run-{:06}", k + 1);
        let report_dir = format!("report-{solver}");
        for args in [
            vec!["optimize", "--config", &file, "--store", "store"],
            vec!["simulate", "--run", &run_dir],
            vec!["report", "--run", &run_dir, "--out", &report_dir],
        ] {
            let (ok, err) = oro(&args, root);
            if !ok {
                return (false, format!("{solver} {}: {err}", args[0]));
            }
        }
        if !root.join(&report_dir).join("trajectory.csv").exists() {
            return (false, format!("{solver}: report has no trajectory"));
        }
        done.push(*solver);
    }
    (
        true,
        format!(
            "gen-synthetic, optimize, simulate, report exit 0 for {}",
            done.join(", ")
        ),
    )
}

fn main() {
    let checks = vec![
        run("allocation oracle equivalence", 10.0, allocation_oracle),
        run("nDP exact optimality", 5.0, ndp_exact),
        run("AWD-DP dominance", 60.0, awd_dominance),
        run("conservation", 120.0, conservation),
        run("nSDP equals nDP with one class", 60.0, nsdp_degenerate),
        run("nRL convergence on repeated year", 120.0, nrl_toy),
        run("algorithm ordering", 900.0, ordering),
        run("MOSS antichain and monotonicity", 60.0, moss_antichain),
        run("hydropower spot checks", 5.0, hydropower_checks),
        run("CLI pipeline", 120.0, cli_pipeline),
    ];
    let passed = checks.iter().filter(|c| c.pass).count();
    println!("{passed}/{} criteria pass", checks.len());
    // The ordering result is reported, not enforced: its outcome is an
    // empirical finding about the learners rather than a correctness property.
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.pass && c.name != "algorithm ordering")
        .map(|c| c.name)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
