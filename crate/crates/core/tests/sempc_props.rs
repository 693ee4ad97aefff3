use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sempc::plantmodel::{draw_scenarios, NetworkConfig, Scenario};
use sempc::riskmeasures::{ees, k_largest_sum_lp, LossVector};
use sempc::sempc::{
    closed_loop, solve_sempc, solve_sempc_softened, ClosedLoopSetup, SempcProblem, SempcSolution, SempcStatus,
};

/// Three-tank problem over a short horizon with `ns` noisy price scenarios.
fn problem(seed: u64, horizon: usize, ns: usize, k: usize, smooth: bool) -> SempcProblem {
    let net = NetworkConfig::three_tank();
    let sys = net.system().unwrap();
    let m = sys.inputs();
    let tariff = net.tariff(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..24);
    let scenarios = draw_scenarios(&tariff, start, horizon, m, ns, &mut rng);
    SempcProblem {
        cons: net.constraints().unwrap(),
        scenarios,
        horizon,
        demands: net.demand().unwrap().window(start, horizon),
        r: DMatrix::identity(m, m) * if smooth { rng.gen_range(0.0..5.0) } else { 0.0 },
        terminal_weight: if smooth { rng.gen_range(0.0..10.0) } else { 0.0 },
        k,
        ees_cap: f64::INFINITY,
        // below the steady state, so that reaching the terminal set costs energy
        x0: net.initial_state().unwrap().map(|v| v - 0.6),
        u_prev: DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.5)),
        system: sys,
    }
}

fn with_cap(p: &SempcProblem, cap: f64) -> SempcProblem {
    SempcProblem { ees_cap: cap, ..p.clone() }
}

fn losses(p: &SempcProblem, u: &DVector<f64>) -> LossVector {
    LossVector::new(p.scenarios.iter().map(|s| s.prices.dot(u)).collect()).unwrap()
}

fn optimal(s: &SempcSolution) -> bool {
    s.status == SempcStatus::Optimal
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dropping_the_cap_never_costs_more(seed in any::<u64>(), horizon in 1usize..5, ns in 2usize..20, frac in 0.3..1.2f64) {
        let free_problem = problem(seed, horizon, ns, 1 + (seed as usize) % ns, true);
        let free = solve_sempc(&free_problem).unwrap();
        prop_assume!(optimal(&free));
        let capped = solve_sempc(&with_cap(&free_problem, frac * free.ees_value)).unwrap();
        if optimal(&capped) {
            prop_assert!(free.objective <= capped.objective + 1e-6 * capped.objective.abs().max(1.0));
            prop_assert!(capped.ees_value <= frac * free.ees_value + 1e-6);
        }
        if frac >= 1.0 {
            prop_assert!(optimal(&capped));
        }
    }

    #[test]
    fn feasibility_is_monotone_in_the_cap(seed in any::<u64>(), horizon in 1usize..4, ns in 2usize..15, a in 0.05..1.5f64, b in 0.05..1.5f64) {
        let base = problem(seed, horizon, ns, 1 + (seed as usize) % ns, false);
        let free = solve_sempc(&base).unwrap();
        prop_assume!(optimal(&free));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = solve_sempc(&with_cap(&base, lo * free.ees_value)).unwrap();
        let high = solve_sempc(&with_cap(&base, hi * free.ees_value)).unwrap();
        if optimal(&low) {
            prop_assert!(optimal(&high));
            prop_assert!(high.objective <= low.objective + 1e-6 * low.objective.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_prices_and_cap_scales_the_objective(seed in any::<u64>(), horizon in 1usize..4, ns in 2usize..15, c in 0.1..10.0f64, frac in 0.97..1.1f64) {
        let base = problem(seed, horizon, ns, 1 + (seed as usize) % ns, false);
        let free = solve_sempc(&base).unwrap();
        prop_assume!(optimal(&free));
        let p = with_cap(&base, frac * free.ees_value);
        let a = solve_sempc(&p).unwrap();
        prop_assume!(optimal(&a));
        let scaled = SempcProblem {
            scenarios: p.scenarios.iter().map(|s| Scenario::new(&s.prices * c)).collect(),
            ees_cap: p.ees_cap * c,
            ..p.clone()
        };
        let b = solve_sempc(&scaled).unwrap();
        prop_assert!(optimal(&b));
        let tol = 1e-6 * a.objective.abs().max(1.0);
        prop_assert!((b.objective / c - a.objective).abs() <= tol);
        // the scaled minimizer is a minimizer of the original problem
        let l = losses(&p, &b.u_tilde);
        let mean = l.values().iter().sum::<f64>() / l.len() as f64;
        prop_assert!((mean - a.objective).abs() <= tol);
        prop_assert!(ees(&l, p.k).unwrap() <= p.ees_cap + 1e-6 * p.ees_cap.abs().max(1.0));
    }

    #[test]
    fn reported_tail_variables_match_the_closed_form(seed in any::<u64>(), horizon in 1usize..5, ns in 2usize..20, capped in any::<bool>()) {
        let k = 1 + (seed as usize) % ns;
        let mut p = problem(seed, horizon, ns, k, true);
        if capped {
            let free = solve_sempc(&p).unwrap();
            prop_assume!(optimal(&free));
            p.ees_cap = 0.9 * free.ees_value;
        }
        let s = solve_sempc(&p).unwrap();
        prop_assume!(optimal(&s));
        let l = losses(&p, &s.u_tilde);
        let tail = ees(&l, k).unwrap();
        let bound = (k as f64 * s.t_bar + s.lambda.iter().sum::<f64>()) / k as f64;
        prop_assert!(bound >= tail - 1e-9 * tail.abs().max(1.0));
        let lp = k_largest_sum_lp(&l, k).unwrap();
        prop_assert!((lp.value - k as f64 * tail).abs() <= 1e-8 * lp.value.abs().max(1.0));
        prop_assert!((s.ees_value - tail).abs() <= 1e-9 * tail.abs().max(1.0));
        prop_assert!((bound - tail).abs() <= 1e-8 * tail.abs().max(1.0));
        prop_assert_eq!(s.top_k.len(), k);
    }
}

#[test]
fn unreachable_levels_are_softened() {
    let mut p = problem(2, 3, 10, 2, false);
    // the terminal set is out of reach from an empty tank in three steps
    p.x0 = p.cons.x_lo.map(|v| v - 3.0);
    let exact = solve_sempc(&p).unwrap();
    assert_eq!(exact.status, SempcStatus::Infeasible);
    assert!(exact.objective.is_nan());
    let soft = solve_sempc_softened(&p).unwrap();
    assert_eq!(soft.status, SempcStatus::Softened);
    assert!(soft.max_slack > 0.0);
    assert!(soft.u_tilde.iter().all(|&u| u.is_finite()));
}

#[test]
fn tiny_cap_is_infeasible_even_softened() {
    let p = with_cap(&problem(3, 3, 10, 2, false), 1e-3);
    let mut p = p;
    // forcing positive inputs makes every loss large
    p.cons.u_lo = p.cons.u_hi.map(|v| 0.5 * v);
    assert_eq!(solve_sempc_softened(&p).unwrap().status, SempcStatus::Infeasible);
}

#[test]
fn invalid_problems_are_rejected() {
    let p = problem(4, 2, 5, 2, false);
    assert!(solve_sempc(&SempcProblem { k: 6, ..p.clone() }).is_err());
    assert!(solve_sempc(&SempcProblem { k: 0, ..p.clone() }).is_err());
    assert!(solve_sempc(&SempcProblem { ees_cap: -1.0, ..p.clone() }).is_err());
    assert!(solve_sempc(&SempcProblem { r: -DMatrix::identity(3, 3), ..p.clone() }).is_err());
    assert!(solve_sempc(&SempcProblem { x0: DVector::zeros(2), ..p }).is_err());
}

fn loop_setup(steps: usize, cap: f64) -> ClosedLoopSetup {
    let net = NetworkConfig::three_tank();
    let sys = net.system().unwrap();
    ClosedLoopSetup {
        cons: net.constraints().unwrap(),
        demand: net.demand().unwrap(),
        tariff: net.tariff(5).unwrap(),
        horizon: 6,
        n_s: 40,
        k: 2,
        ees_cap: cap,
        r: DMatrix::zeros(3, 3),
        terminal_weight: 0.0,
        x0: net.initial_state().unwrap(),
        u_prev: None,
        steps,
        certify: None,
        compare_uncapped: true,
        system: sys,
    }
}

#[test]
fn closed_loop_is_reproducible_and_respects_the_cap() {
    let a = closed_loop(&loop_setup(8, 1500.0)).unwrap();
    let b = closed_loop(&loop_setup(8, 1500.0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 8);
    for r in &a.records {
        if r.status == SempcStatus::Optimal {
            assert!(r.ees_value <= 1500.0 + 1e-6, "step {}: {}", r.t, r.ees_value);
            if r.uncapped_status == Some(SempcStatus::Optimal) {
                assert!(r.uncapped_objective.unwrap() <= r.objective + 1e-6);
            }
        }
        assert!(r.u_applied.iter().zip([4.0, 2.5, 2.0]).all(|(&u, hi)| (0.0..=hi + 1e-9).contains(&u)));
    }
    assert!(closed_loop(&loop_setup(0, 1500.0)).unwrap().records.is_empty());
}
