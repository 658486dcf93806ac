mod common;

use proptest::prelude::*;
use rand::Rng;
use surplus_auctions::analysis::{audit_epir, benchmark_g, expected_surplus};
use surplus_auctions::experiments::{random_instance, random_valuation, trial_rng, RandomClass};
use surplus_auctions::mechanisms::{self, vcg_with_copies, Prob, SubroutineKind};
use surplus_auctions::vcg::{clarke_payment_crosscheck, run_vcg};
use surplus_auctions::{welfare, CopiedItem, Instance, Supply, Valuation};

use common::*;

fn class_strategy() -> impl Strategy<Value = RandomClass> {
    prop_oneof![Just(RandomClass::UnitDemand), Just(RandomClass::MultiUnit), Just(RandomClass::Explicit)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lift_evaluates_through_projection(seed in any::<u64>(), class in class_strategy(), m in 1usize..5, level in 0u32..3) {
        let mut rng = trial_rng(seed, 0);
        let v = random_valuation(class, m, &mut rng).unwrap();
        let lifted = v.lift_to_copies(level).unwrap();
        let copies = 1usize << level;
        let set: Vec<CopiedItem> = (0..rng.random_range(0..=m * copies))
            .map(|_| CopiedItem::new(rng.random_range(0..m), rng.random_range(0..copies)))
            .collect();
        let mut items: Vec<usize> = set.iter().map(|c| c.item.0).collect();
        items.sort_unstable();
        items.dedup();
        prop_assert_eq!(lifted.eval(&set).unwrap(), v.eval_items(&items));
    }

    #[test]
    fn cap_evaluates_at_clipped_point(seed in any::<u64>(), m in 1usize..4, q in 0.05f64..=1.0) {
        let mut rng = trial_rng(seed, 0);
        let v = random_valuation(RandomClass::Divisible, m, &mut rng).unwrap();
        let capped = v.cap(q).unwrap();
        let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let clipped: Vec<f64> = x.iter().map(|xj| xj.min(q)).collect();
        prop_assert!((capped.eval_fractions(&x) - v.eval_fractions(&clipped)).abs() < 1e-9);
    }

    #[test]
    fn solvers_match_oracles(seed in any::<u64>(), n in 1usize..4, m in 1usize..4, copies in 1usize..4) {
        let mut rng = trial_rng(seed, 1);
        let ud = random_instance(RandomClass::UnitDemand, n, m, &mut rng).unwrap();
        let got = welfare::max_welfare_unit_demand(ud.valuations(), copies).unwrap();
        prop_assert!((got.welfare - oracle_sw(&ud, copies, 1.0, None)).abs() < 1e-9);
        prop_assert!(got.allocation.is_feasible(m, copies));
        prop_assert!((got.allocation.welfare(ud.valuations()) - got.welfare).abs() < 1e-9);

        let mu = random_instance(RandomClass::MultiUnit, n, m, &mut rng).unwrap();
        let got = welfare::max_welfare_multiunit(mu.valuations(), m * copies, m).unwrap();
        prop_assert!((got.welfare - oracle_sw(&mu, copies, 1.0, None)).abs() < 1e-9);
    }

    #[test]
    fn welfare_is_monotone_in_copies_and_capacity(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = trial_rng(seed, 2);
        let ud = random_instance(RandomClass::UnitDemand, n, m, &mut rng).unwrap();
        let sw = |c| welfare::max_welfare_unit_demand(ud.valuations(), c).unwrap().welfare;
        prop_assert!(sw(1) <= sw(2) + 1e-9 && sw(2) <= sw(4) + 1e-9);
        let div = random_instance(RandomClass::Divisible, n, m, &mut rng).unwrap();
        let sw = |q| welfare::max_welfare_divisible(div.valuations(), q).unwrap().welfare;
        prop_assert!(sw(0.25) <= sw(0.5) + 1e-9 && sw(0.5) <= sw(1.0) + 1e-9);
    }

    #[test]
    fn vcg_is_individually_rational_and_consistent(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = trial_rng(seed, 3);
        for (class, supply) in [
            (RandomClass::UnitDemand, Supply::Copies(2)),
            (RandomClass::MultiUnit, Supply::Copies(2)),
            (RandomClass::Explicit, Supply::Copies(1)),
            (RandomClass::Divisible, Supply::Capacity(0.5)),
        ] {
            let inst = random_instance(class, n, m, &mut rng).unwrap();
            let out = run_vcg(&inst, supply).unwrap();
            prop_assert!(clarke_payment_crosscheck(&inst, &out));
            for (u, p) in out.utilities(inst.valuations()).iter().zip(&out.payments) {
                prop_assert!(*u >= -1e-9);
                prop_assert!(*p >= 0.0);
            }
        }
    }

    #[test]
    fn copies_mechanism_is_well_formed(seed in any::<u64>(), n in 1usize..5, m in 1usize..4, r in 0u32..4) {
        let mut rng = trial_rng(seed, 4);
        for (class, q, kind) in [
            (RandomClass::UnitDemand, Prob::from_integer(1), SubroutineKind::UnitDemand),
            (RandomClass::MultiUnit, Prob::new(1, 2), SubroutineKind::MultiUnit),
            (RandomClass::MultiUnit, Prob::new(1, 4), SubroutineKind::MultiUnit),
        ] {
            let inst = random_instance(class, n, m, &mut rng).unwrap();
            let dist = vcg_with_copies(&inst, r, q, kind).unwrap();
            prop_assert!(dist.is_well_formed());
            prop_assert!(audit_epir(&dist, &inst));
            let report = expected_surplus(&dist, &inst).unwrap();
            prop_assert!((report.expected_welfare - report.expected_payments - report.expected_surplus).abs() < 1e-9);
            prop_assert!(report.expected_surplus <= report.first_best + 1e-9);
            let oracle = oracle_copies_surplus(&inst, r, mechanisms::prob_to_f64(q));
            prop_assert!((report.expected_surplus - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn restricted_capacity_matches_oracle(seed in any::<u64>(), n in 1usize..4, m in 1usize..3, r in 0u32..3) {
        let mut rng = trial_rng(seed, 5);
        let inst = random_instance(RandomClass::Divisible, n, m, &mut rng).unwrap();
        let dist = mechanisms::restricted_capacity_vcg(&inst, r).unwrap();
        prop_assert!(audit_epir(&dist, &inst));
        let report = expected_surplus(&dist, &inst).unwrap();
        prop_assert!((report.expected_surplus - oracle_capacity_surplus(&inst, r)).abs() < 1e-6);
    }

    #[test]
    fn g_is_scale_covariant(a in 0.0f64..100.0, b in 0.0f64..100.0, c in 0.0f64..10.0) {
        let g = benchmark_g(a, b).unwrap();
        prop_assert!((benchmark_g(c * a, c * b).unwrap() - c * g).abs() < 1e-9 * (1.0 + c * g));
        prop_assert_eq!(benchmark_g(a, a).unwrap(), a);
        prop_assert_eq!(g, g_oracle(a, b));
    }

    #[test]
    fn g_mechanism_hits_four_fifths(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let inst = Instance::single_item(&[a, b]).unwrap();
        let dist = mechanisms::two_agent_g(&inst).unwrap();
        prop_assert!(audit_epir(&dist, &inst));
        let s = expected_surplus(&dist, &inst).unwrap().expected_surplus;
        prop_assert!((s - 0.8 * g_oracle(a, b)).abs() < 1e-9 * (1.0 + a + b));
    }

    #[test]
    fn instance_json_round_trips(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = trial_rng(seed, 6);
        for class in [RandomClass::UnitDemand, RandomClass::MultiUnit, RandomClass::Explicit, RandomClass::Divisible] {
            let inst = random_instance(class, n, m, &mut rng).unwrap();
            let back = Instance::from_json(&inst.to_json(), false).unwrap();
            prop_assert_eq!(&back, &inst);
            prop_assert_eq!(back.digest(), inst.digest());
        }
    }

    #[test]
    fn deterministic_vcg_surplus_never_exceeds_first_best(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = trial_rng(seed, 7);
        let inst = random_instance(RandomClass::Explicit, n, m, &mut rng).unwrap();
        let dist = mechanisms::deterministic_vcg(&inst).unwrap();
        let report = expected_surplus(&dist, &inst).unwrap();
        prop_assert!(report.ratio >= 1.0 - 1e-9 || report.first_best == 0.0);
        prop_assert!((report.expected_welfare - report.first_best).abs() < 1e-9);
    }
}

#[test]
fn scaled_multiunit_reports_stay_valid() {
    let v = Valuation::multi_unit(vec![3.0, 2.0]).unwrap();
    assert!(v.scaled(0.0).unwrap().check_class().is_standard());
}
