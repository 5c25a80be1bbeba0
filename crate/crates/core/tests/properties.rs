use proptest::prelude::*;

use oro_core::alloc::{allocate, allocate_oracle, increment_marginal_cost, AllocationProblem, Formulation, DEFAULT_NU};
use oro_core::hydro::{hydropower, step_cost, StepRecord, SystemSpec, WeightVector, N_OBJECTIVES};
use oro_core::moss::{dominates, pareto_filter};

fn formulation() -> impl Strategy<Value = Formulation> {
    prop_oneof![Just(Formulation::Linear), Just(Formulation::Quadratic)]
}

fn problem() -> impl Strategy<Value = AllocationProblem> {
    (1usize..=5).prop_flat_map(|n| {
        (
            0.0..800.0f64,
            prop::collection::vec(0.0..300.0f64, n),
            prop::collection::vec(0.0..10.0f64, n),
            formulation(),
        )
            .prop_map(|(available, demands, weights, formulation)| AllocationProblem {
                available,
                demands,
                weights,
                formulation,
                nu: DEFAULT_NU,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn allocation_matches_oracle(p in problem()) {
        let r = allocate(&p);
        let o = allocate_oracle(&p).unwrap();
        let total: f64 = r.iter().sum();
        prop_assert!(total <= p.available * (1.0 + 1e-12) + 1e-9);
        prop_assert!(r.iter().zip(&p.demands).all(|(r, d)| *r >= 0.0 && *r <= d + 1e-9));
        let (a, b) = (p.objective(&r), p.objective(&o));
        let tol = match p.formulation {
            Formulation::Linear => 1e-9 * b.abs().max(1.0),
            Formulation::Quadratic => increment_marginal_cost(&p) + 1e-9 * b.abs().max(1.0),
        };
        prop_assert!((a - b).abs() <= tol, "greedy {} oracle {} tol {}", a, b, tol);
    }
}

fn brute_front(v: &[[f64; 8]]) -> Vec<usize> {
    let tol = |x: f64, y: f64| 1e-9 * x.abs().max(y.abs()).max(1.0);
    (0..v.len())
        .filter(|&a| {
            !(0..v.len()).any(|b| {
                let le = (0..8).all(|i| v[b][i] <= v[a][i] + tol(v[a][i], v[b][i]));
                let lt = (0..8).any(|i| v[b][i] < v[a][i] - tol(v[a][i], v[b][i]));
                le && lt
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pareto_filter_matches_pairwise_oracle(
        v in prop::collection::vec(prop::array::uniform8(0u8..6), 1..40)
    ) {
        let v: Vec<[f64; 8]> = v.iter().map(|a| a.map(f64::from)).collect();
        let front = pareto_filter(&v);
        prop_assert_eq!(&front, &brute_front(&v));
        for &a in &front {
            for &b in &front {
                prop_assert!(!dominates(&v[a], &v[b]));
            }
        }
    }

    #[test]
    fn step_cost_scales_and_ignores_sign(
        w in prop::array::uniform8(0.0..100.0f64),
        d in prop::array::uniform8(0.0..50.0f64),
        c in 0.01..100.0f64,
    ) {
        prop_assume!(w.iter().any(|x| *x > 0.0));
        let wv = WeightVector::new(w).unwrap();
        let base = step_cost(&wv, &d);
        let neg = d.map(|x| -x);
        prop_assert!((step_cost(&wv, &neg) - base).abs() <= 1e-12 * base.max(1.0));
        let scaled = step_cost(&wv.scaled(c).unwrap(), &d);
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (c * base).max(1.0));
        let mut sq = 0.0;
        for i in 0..N_OBJECTIVES {
            sq += w[i] * d[i] * d[i];
        }
        prop_assert!((sq - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn curve_is_monotone(a in 0.0..23_500.0f64, b in 0.0..23_500.0f64) {
        let spec = SystemSpec::knezevo();
        let c = spec.curve();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(c.level(lo).unwrap() <= c.level(hi).unwrap());
        prop_assert!(c.area(lo).unwrap() <= c.area(hi).unwrap());
        let back = c.volume_at_level(c.level(a).unwrap()).unwrap();
        prop_assert!((back - a).abs() <= 1e-6 * a.max(1.0));
    }

    #[test]
    fn hydropower_grows_with_release_and_head(
        r in 0.0..2_000.0f64, extra in 0.0..500.0f64, h in 1_016.0..1_060.0f64, dh in 0.0..1.0f64, q in 0.0..2_000.0f64,
    ) {
        let spec = SystemSpec::knezevo();
        let rec = StepRecord {
            t: 10, q, q1: q * 1.1, q2: q * 1.2, q3: q * 1.3,
            d1: 1020.0, d2: 1060.0, d3: 0.0, d4: 0.0, d5: 0.0, d6: 0.0, d7: 0.0, d8: 0.0,
        };
        let a = hydropower(&spec, &rec, r, 0.0, 0.0, 0.0, h, h);
        let b = hydropower(&spec, &rec, r + extra, 0.0, 0.0, 0.0, h, h);
        let c = hydropower(&spec, &rec, r, 0.0, 0.0, 0.0, h + dh, h + dh);
        prop_assert!(b.total + 1e-9 >= a.total);
        prop_assert!(c.total + 1e-9 >= a.total);
        prop_assert!(a.total >= 0.0);
    }
}
