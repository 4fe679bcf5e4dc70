use kelly_riskcal::crra::{find_prefix, solve_kelly, solve_unconstrained_crra, PrefixOutcome, SolverParams};
use kelly_riskcal::fairbench::{fair_feasibility, fair_kelly_risk};
use kelly_riskcal::gen;
use kelly_riskcal::logcal::{calibrate, eval_state, inner_residual, inner_solve};
use kelly_riskcal::market::{risk_functional, slater_witness, sort_market, Market};
use kelly_riskcal::oracle::{audit_kkt, brute_force_solve};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn overround(seed: u64, n: usize) -> Market {
    gen::overround_market(&mut gen::rng(seed), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prefix_sums_match_sorted_entries(seed in any::<u64>(), n in 2usize..=8) {
        let sm = sort_market(&overround(seed, n));
        let mut p = 0.0;
        let mut q = 0.0;
        for k in 0..n {
            p += sm.sorted_probabilities()[k];
            q += sm.sorted_prices()[k];
            prop_assert!((sm.prefix_p()[k] - p).abs() < 1e-14);
            prop_assert!((sm.prefix_q()[k] - q).abs() < 1e-14);
            if k + 1 < n {
                prop_assert!(sm.ratios()[k] >= sm.ratios()[k + 1]);
            }
        }
    }

    #[test]
    fn solutions_follow_outcome_permutations(seed in any::<u64>(), n in 2usize..=8, lambda in 0.2f64..8.0) {
        let m = overround(seed, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut gen::rng(seed ^ 0x5eed));
        let shuffled = m.permuted(&order);
        let (a, b) = (sort_market(&m), sort_market(&shuffled));
        match (find_prefix(&a).unwrap(), find_prefix(&b).unwrap()) {
            (PrefixOutcome::Active(sa), PrefixOutcome::Active(sb)) => {
                prop_assert_eq!(sa.k_star, sb.k_star);
                let ca = calibrate(&sa, &a, lambda).unwrap().allocation;
                let cb = calibrate(&sb, &b, lambda).unwrap().allocation;
                prop_assert!((ca.cash - cb.cash).abs() < 1e-12);
                for (k, &i) in order.iter().enumerate() {
                    prop_assert!((cb.wealth[k] - ca.wealth[i]).abs() < 1e-10);
                }
            }
            (PrefixOutcome::AllCash, PrefixOutcome::AllCash) => {}
            _ => prop_assert!(false, "prefix outcome depends on ordering"),
        }
    }

    #[test]
    fn constant_wealth_risk(c in 0.01f64..10.0, lambda in 0.05f64..20.0, seed in any::<u64>(), n in 2usize..=8) {
        let m = overround(seed, n);
        let r = risk_functional(&vec![c; n], m.probabilities(), lambda).unwrap();
        let want = c.powf(-lambda);
        prop_assert!((r - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn slater_point_is_strictly_feasible(seed in any::<u64>(), n in 2usize..=8, lambda in 0.1f64..50.0) {
        let sm = sort_market(&overround(seed, n));
        if let Some(a) = slater_witness(&sm, lambda) {
            prop_assert!(a.risk < 1.0);
            prop_assert!(a.budget_residual().abs() < 1e-12);
        }
    }

    #[test]
    fn unconstrained_support_ignores_gamma(seed in any::<u64>(), n in 2usize..=8, gamma in 0.1f64..10.0) {
        let sm = sort_market(&overround(seed, n));
        if let PrefixOutcome::Active(sel) = find_prefix(&sm).unwrap() {
            let a = solve_unconstrained_crra(&sel, &sm, SolverParams::new(gamma, 1.0).unwrap());
            let mut support = a.support(1e-12);
            support.sort_unstable();
            let mut active = sel.active.clone();
            active.sort_unstable();
            prop_assert_eq!(support, active);
            prop_assert!(a.budget_residual().abs() < 1e-12);
            prop_assert!(audit_kkt(sm.market(), gamma, None, &a).pass);
        }
    }

    #[test]
    fn inner_root_bounds_and_monotone(r in 1.0f64..50.0, lambda in 0.01f64..100.0, s1 in 0.0f64..1e6, s2 in 0.0f64..1e6) {
        prop_assume!(r > 1.0 && s1 != s2);
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        let z_lo = inner_solve(r, lo, lambda).unwrap();
        let z_hi = inner_solve(r, hi, lambda).unwrap();
        let floor = (r.ln() / (lambda + 1.0)).exp();
        prop_assert!(z_hi < z_lo);
        prop_assert!(z_hi > floor && z_lo <= r);
        prop_assert!(inner_residual(r, lo, lambda, z_lo).abs() <= 1e-12);
        prop_assert!(inner_residual(r, hi, lambda, z_hi).abs() <= 1e-12);
    }

    #[test]
    fn outer_risk_decreases(seed in any::<u64>(), n in 2usize..=8, lambda in 0.2f64..8.0, s in 1e-4f64..1e4) {
        let (_, sel) = gen::overround_with_prefix(&mut gen::rng(seed), n);
        let a = eval_state(&sel, lambda, s).unwrap().risk;
        let b = eval_state(&sel, lambda, s * 1.5).unwrap().risk;
        prop_assert!(b < a);
    }

    #[test]
    fn binding_solution_is_feasible_and_dual_consistent(seed in any::<u64>(), n in 2usize..=8, lambda in 1.05f64..10.0) {
        let (sm, sel) = gen::overround_with_prefix(&mut gen::rng(seed), n);
        let cal = calibrate(&sel, &sm, lambda).unwrap();
        let a = &cal.allocation;
        prop_assert!(a.budget_residual().abs() < 1e-10);
        prop_assert!(a.risk <= 1.0 + 1e-10);
        if cal.binding {
            prop_assert!((a.risk - 1.0).abs() < 1e-10);
            prop_assert!(cal.eta_star > 0.0);
        }
        let mut support = a.support(1e-9);
        support.sort_unstable();
        let mut active = sel.active.clone();
        active.sort_unstable();
        prop_assert_eq!(support, active);
        let report = audit_kkt(sm.market(), 1.0, Some(lambda), a);
        prop_assert!(report.max_residual <= 1e-9, "max residual {}", report.max_residual);
        prop_assert!((report.eta - cal.eta_star).abs() <= 1e-8 * (1.0 + cal.eta_star));
        prop_assert!((report.nu - cal.nu_star).abs() <= 1e-8 * (1.0 + cal.nu_star));
    }

    #[test]
    fn kelly_dominates_constrained_objective(seed in any::<u64>(), n in 2usize..=8, lambda in 0.2f64..8.0) {
        let (sm, sel) = gen::overround_with_prefix(&mut gen::rng(seed), n);
        let kelly = solve_kelly(&sel, &sm, lambda);
        let cal = calibrate(&sel, &sm, lambda).unwrap();
        prop_assert!(cal.allocation.objective <= kelly.objective + 1e-14);
        if !cal.binding {
            prop_assert_eq!(cal.allocation.objective, kelly.objective);
        }
    }

    #[test]
    fn fair_kelly_feasible_up_to_lambda_one(seed in any::<u64>(), n in 2usize..=8, lambda in 0.01f64..=1.0) {
        let sm = sort_market(&gen::fair_market(&mut gen::rng(seed), n));
        prop_assert!(fair_feasibility(&sm, lambda).unwrap());
        prop_assert!(fair_kelly_risk(&sm, lambda).unwrap() <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_agrees_with_calibration(seed in any::<u64>(), n in 2usize..=5, lambda in 0.3f64..6.0) {
        let (sm, sel) = gen::overround_with_prefix(&mut gen::rng(seed), n);
        let cal = calibrate(&sel, &sm, lambda).unwrap().allocation;
        let orc = brute_force_solve(sm.market(), 1.0, lambda, 50).unwrap();
        for (a, b) in cal.wealth.iter().zip(&orc.wealth) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
