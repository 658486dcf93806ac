//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use surplus_auctions::analysis::{
    audit_epir, audit_tie, benchmark_g, binomial_inverse_expectation, expected_surplus, verify_copies_payment_claim,
    verify_divisible_payment_claim, verify_surplus_lower_bound, MechanismFn,
};
use surplus_auctions::experiments::{
    binomial_inverse_mc, draw_value, exp1, monte_carlo, random_instance, trial_rng, Family, GeneratorSpec, RandomClass,
};
use surplus_auctions::mechanisms::{
    self, bayesian_rounds, restricted_capacity_branch, MechanismConfig, MechanismDistribution, MechanismKind, Prob,
    SubroutineKind,
};
use surplus_auctions::vcg::{clarke_payment_crosscheck, run_vcg};
use surplus_auctions::welfare;
use surplus_auctions::{Instance, InstanceKind, Supply};

use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let config = MechanismConfig::new(MechanismKind::RandomAllocation);
    let spec = GeneratorSpec::new(Family::ExpSingleItem, 2, 1, 20240601);
    let report = match monte_carlo(&config, &spec, 100_000) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("monte carlo failed: {e}")),
    };
    let elapsed = start.elapsed();
    let fb = report.mean_welfare();
    let g = report.mean_g().unwrap_or(f64::NAN);
    let s = report.mean_surplus();
    let pass = (fb - 1.5).abs() <= 0.02 && (g - 1.25).abs() <= 0.02 && (s - 1.0).abs() <= 0.02 && elapsed < Duration::from_secs(10);
    verdict(pass, format!("first_best={fb:.4} G={g:.4} random_allocation_surplus={s:.4} in {}", secs(elapsed)))
}

fn criterion_2() -> Verdict {
    let mut rng = trial_rng(2, 0);
    let (mut skewed, mut balanced, mut boundary) = (0, 0, 0);
    let mut worst = 0.0f64;
    for t in 0..10_000 {
        let base = exp1(&mut rng);
        let (v1, v2) = match t % 6 {
            0 | 1 => (exp1(&mut rng), exp1(&mut rng)),
            2 => (3.0 * base, base),
            3 => (base, 3.0 * base),
            4 => (base, base),
            _ => (rng.random_range(0.0..4.0) * base, 0.0),
        };
        let inst = Instance::single_item(&[v1, v2]).unwrap();
        let dist = mechanisms::two_agent_g(&inst).unwrap();
        let surplus = expected_surplus(&dist, &inst).unwrap().expected_surplus;
        let (h, l) = if v1 >= v2 { (v1, v2) } else { (v2, v1) };
        if h > 3.0 * l {
            skewed += 1;
        } else {
            balanced += 1;
        }
        if h == 3.0 * l {
            boundary += 1;
        }
        let g = g_oracle(v1, v2);
        assert!((benchmark_g(v1, v2).unwrap() - g).abs() <= 1e-12);
        worst = worst.max((surplus - 0.8 * g).abs());
    }
    let pass = worst <= 1e-9 && skewed > 0 && balanced > 0 && boundary > 0;
    verdict(pass, format!("max |surplus - 0.8 G| = {worst:.2e} (skewed {skewed}, balanced {balanced}, boundary {boundary})"))
}

fn criterion_3() -> Verdict {
    let mut rng = trial_rng(3, 0);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let m = rng.random_range(1..=3);
        let inst = random_instance(RandomClass::Explicit, 2, m, &mut rng).unwrap();
        let dist = mechanisms::two_agent_grand_bundle(&inst).unwrap();
        let surplus = expected_surplus(&dist, &inst).unwrap().expected_surplus;
        let fb = bf_explicit(inst.valuations(), m, None);
        worst = worst.max((surplus - 2.0 / 3.0 * fb).abs());
    }
    verdict(worst <= 1e-9, format!("500 explicit instances, max |surplus - 2/3 first_best| = {worst:.2e}"))
}

fn criterion_4() -> Verdict {
    let mut rng = trial_rng(4, 0);
    let mut cases = Vec::with_capacity(2000);
    for t in 0..2000 {
        let class = if t < 1000 { RandomClass::UnitDemand } else { RandomClass::MultiUnit };
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let r = rng.random_range(0..=3);
        cases.push((random_instance(class, n, m, &mut rng).unwrap(), r, class));
    }
    let start = Instant::now();
    let mut checks = Vec::with_capacity(cases.len());
    for (inst, r, class) in &cases {
        let (q, kind) = match class {
            RandomClass::UnitDemand => (Prob::from_integer(1), SubroutineKind::UnitDemand),
            _ => (Prob::new(1, 2), SubroutineKind::MultiUnit),
        };
        checks.push(verify_surplus_lower_bound(inst, *r, q, kind).unwrap());
    }
    let elapsed = start.elapsed();
    let failures = checks.iter().filter(|c| !c.pass).count();
    let min_margin = checks.iter().map(|c| c.margin()).fold(f64::INFINITY, f64::min);
    let mut oracle_gap = 0.0f64;
    for ((inst, r, class), c) in cases.iter().zip(&checks) {
        let q = if *class == RandomClass::UnitDemand { 1.0 } else { 0.5 };
        let copies = 1usize << r;
        let rhs = q / (*r as f64 + 1.0) * (oracle_sw(inst, 1, 1.0, None) - oracle_sw(inst, copies, 1.0, None) / copies as f64);
        let lhs = oracle_copies_surplus(inst, *r, q);
        oracle_gap = oracle_gap.max((lhs - c.lhs).abs()).max((rhs - c.rhs).abs());
    }
    let pass = failures == 0 && oracle_gap <= 1e-9 && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!("2000 instances, {failures} violations, min slack {min_margin:.3e}, oracle gap {oracle_gap:.1e}, {}", secs(elapsed)),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = trial_rng(5, 0);
    let (mut copies_fail, mut div_fail) = (0, 0);
    let mut gap = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for t in 0..1000 {
        let class = if t % 2 == 0 { RandomClass::UnitDemand } else { RandomClass::MultiUnit };
        let (n, m, level) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(0..=2));
        let inst = random_instance(class, n, m, &mut rng).unwrap();
        let c = verify_copies_payment_claim(&inst, level).unwrap();
        let k = 1usize << level;
        let lhs = oracle_sw(&inst, 2 * k, 1.0, None) - oracle_sw(&inst, k, 1.0, None);
        let rhs = oracle_total_payments(&inst, 2 * k, 1.0) / 2.0;
        gap = gap.max((lhs - c.lhs).abs()).max((rhs - c.rhs).abs());
        min_margin = min_margin.min(c.margin());
        copies_fail += usize::from(!c.pass);
    }
    for t in 0..1000 {
        let q = if t % 2 == 0 { 0.25 } else { 0.5 };
        let m = rng.random_range(1..=3);
        let inst = random_instance(RandomClass::Divisible, 3, m, &mut rng).unwrap();
        let c = verify_divisible_payment_claim(&inst, q).unwrap();
        let lhs = oracle_sw(&inst, 1, q, None) - oracle_sw(&inst, 1, 2.0 * q, None) / 2.0;
        let rhs = oracle_total_payments(&inst, 1, q) / 2.0;
        gap = gap.max((lhs - c.lhs).abs()).max((rhs - c.rhs).abs());
        min_margin = min_margin.min(c.margin());
        div_fail += usize::from(!c.pass);
    }
    let pass = copies_fail == 0 && div_fail == 0 && gap <= 1e-6;
    verdict(
        pass,
        format!("copies claim {copies_fail}/1000 violations, divisible claim {div_fail}/1000, min slack {min_margin:.3e}, oracle gap {gap:.1e}"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = trial_rng(6, 0);
    let mut failures = 0;
    let mut gap = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for n in [2usize, 4, 8] {
        let r = n.trailing_zeros();
        for t in 0..200 {
            let inst = if t % 2 == 0 {
                random_instance(RandomClass::LinearDivisible, n, rng.random_range(1..=3), &mut rng).unwrap()
            } else {
                let spec = GeneratorSpec::new(Family::AdditiveDivisibleLb, n, 2, 6);
                surplus_auctions::experiments::gen_instance(&spec, t).unwrap().instance
            };
            let dist = mechanisms::restricted_capacity_vcg(&inst, r).unwrap();
            let report = expected_surplus(&dist, &inst).unwrap();
            let slopes: Vec<Vec<f64>> = inst
                .valuations()
                .iter()
                .map(|v| (0..inst.item_count()).map(|j| v.eval_fractions(&unit(inst.item_count(), j))).collect())
                .collect();
            let sw = linear_sw(&slopes, 1, None);
            let oracle = (0..=r)
                .map(|l| {
                    let k = 1usize << l;
                    let full = linear_sw(&slopes, k, None);
                    (0..n).map(|i| full - linear_sw(&slopes, k, Some(i))).sum::<f64>()
                })
                .sum::<f64>()
                / (r as f64 + 1.0);
            gap = gap.max((oracle - report.expected_surplus).abs()).max((sw - report.first_best).abs());
            let bound = sw / (2.0 * (r as f64 + 1.0));
            if report.expected_surplus < bound - 1e-9 {
                failures += 1;
            }
            if sw > 0.0 {
                min_ratio = min_ratio.min(report.expected_surplus / bound);
            }
        }
    }
    verdict(
        failures == 0 && gap <= 1e-9,
        format!("600 instances, {failures} below SW/(2(log2 n + 1)), min surplus/bound {min_ratio:.3}, oracle gap {gap:.1e}"),
    )
}

fn unit(m: usize, j: usize) -> Vec<f64> {
    let mut x = vec![0.0; m];
    x[j] = 1.0;
    x
}

fn criterion_7() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, m) in [(8usize, 2usize), (16, 4)] {
        let spec = GeneratorSpec::new(Family::IidUnitDemand, n, m, 7);
        let report = monte_carlo(&MechanismConfig::bayesian(), &spec, 10_000).unwrap();
        let r = bayesian_rounds(n, m);
        let k = 2.0 * (r as f64 + 1.0);
        let se = (report.surplus.stderr.powi(2) + (report.welfare.stderr / k).powi(2)).sqrt();
        let ok = report.mean_surplus() >= report.mean_welfare() / k - 3.0 * se;
        pass &= ok;
        parts.push(format!(
            "(n={n},m={m},r={r}) surplus {:.4} vs first_best/{k} = {:.4}",
            report.mean_surplus(),
            report.mean_welfare() / k
        ));
    }
    verdict(pass, parts.join("; "))
}

struct AuditTally {
    audits: usize,
    failed: usize,
    max_gain: f64,
    epir_failed: usize,
}

impl AuditTally {
    fn new() -> Self {
        Self { audits: 0, failed: 0, max_gain: f64::NEG_INFINITY, epir_failed: 0 }
    }

    fn run(&mut self, id: &str, mech: &MechanismFn, inst: &Instance, seed: u64) {
        let report = audit_tie(id, mech, inst, 20, seed);
        self.audits += 1;
        self.failed += usize::from(!report.pass || report.deviations == 0);
        self.max_gain = self.max_gain.max(report.max_gain);
        let dist = mech(inst).unwrap();
        self.epir_failed += usize::from(!audit_epir(&dist, inst));
    }
}

fn criterion_8() -> Verdict {
    let mut rng = trial_rng(8, 0);
    let copies = |inst: &Instance| MechanismConfig::new(MechanismKind::VcgCopies).run(inst);
    let capacity = |inst: &Instance| MechanismConfig::new(MechanismKind::RestrictedCapacity).run(inst);
    let mut m1 = AuditTally::new();
    let mut m2 = AuditTally::new();
    let mut m2_branches = AuditTally::new();
    let mut m4 = AuditTally::new();
    let mut control_caught = 0;
    for t in 0..200u64 {
        let ud = random_instance(RandomClass::UnitDemand, rng.random_range(2..=4), rng.random_range(1..=3), &mut rng).unwrap();
        m1.run("vcg_copies/unit_demand", &copies, &ud, t);
        let mu = random_instance(RandomClass::MultiUnit, rng.random_range(2..=4), rng.random_range(1..=3), &mut rng).unwrap();
        m1.run("vcg_copies/multi_unit", &copies, &mu, t);

        let div = random_instance(RandomClass::Divisible, rng.random_range(2..=4), rng.random_range(1..=2), &mut rng).unwrap();
        m2.run("restricted_capacity", &capacity, &div, t);
        let r = mechanisms::capacity_rounds(div.agent_count());
        for level in 0..=r {
            let branch = move |inst: &Instance| -> surplus_auctions::Result<MechanismDistribution> {
                Ok(MechanismDistribution::single("branch", restricted_capacity_branch(inst, level)?))
            };
            m2_branches.run("restricted_capacity/branch", &branch, &div, t);
        }

        let pair = Instance::single_item(&[draw_value(&mut rng), draw_value(&mut rng)]).unwrap();
        m4.run("two_agent_G", &mechanisms::two_agent_g, &pair, t);
        let control = audit_tie("first_price", &mechanisms::first_price_grand_bundle, &pair, 20, t);
        control_caught += usize::from(!control.pass);
    }
    let fixed = Instance::single_item(&[4.0, 1.0]).unwrap();
    let control_fixed = !audit_tie("first_price", &mechanisms::first_price_grand_bundle, &fixed, 20, 0).pass;
    let tallies = [&m1, &m2, &m2_branches, &m4];
    let pass = tallies.iter().all(|t| t.failed == 0 && t.epir_failed == 0) && control_fixed && control_caught > 0;
    let gain = tallies.iter().map(|t| t.max_gain).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        pass,
        format!(
            "{} audits (mech1 {}, mech2 {} + {} branch-wise, mech4 {}), {} TIE failures, {} EPIR failures, max gain {gain:.2e}; first-price control failed on {control_caught}/200",
            tallies.iter().map(|t| t.audits).sum::<usize>(),
            m1.audits,
            m2.audits,
            m2_branches.audits,
            m4.audits,
            tallies.iter().map(|t| t.failed).sum::<usize>(),
            tallies.iter().map(|t| t.epir_failed).sum::<usize>(),
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut rng = trial_rng(9, 0);
    let mut mismatches = Vec::new();
    let mut crosscheck_failures = 0;
    let mut outcomes = 0;
    for t in 0..1000 {
        let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let ud = random_instance(RandomClass::UnitDemand, n, m, &mut rng).unwrap();
        let c = [1usize, 2, 4][t % 3];
        let got = welfare::max_welfare_unit_demand(ud.valuations(), c).unwrap().welfare;
        if (got - oracle_sw(&ud, c, 1.0, None)).abs() > 1e-9 {
            mismatches.push(format!("unit_demand #{t}"));
        }

        let mu = random_instance(RandomClass::MultiUnit, n, m, &mut rng).unwrap();
        let got = welfare::max_welfare_multiunit(mu.valuations(), m * c, m).unwrap().welfare;
        if (got - oracle_sw(&mu, c, 1.0, None)).abs() > 1e-9 {
            mismatches.push(format!("multi_unit #{t}"));
        }

        let ex = random_instance(RandomClass::Explicit, n, m, &mut rng).unwrap();
        let got = welfare::max_welfare_explicit(ex.valuations()).unwrap().welfare;
        if (got - oracle_sw(&ex, 1, 1.0, None)).abs() > 1e-9 {
            mismatches.push(format!("explicit #{t}"));
        }

        let div = random_instance(RandomClass::Divisible, n, m, &mut rng).unwrap();
        let q = [1.0, 0.5, 0.25][t % 3];
        let got = welfare::max_welfare_divisible(div.valuations(), q).unwrap().welfare;
        if (got - oracle_sw(&div, 1, q, None)).abs() > 1e-6 {
            mismatches.push(format!("divisible #{t}"));
        }

        for (inst, supply) in [
            (&ud, Supply::Copies(c)),
            (&mu, Supply::Copies(c)),
            (&ex, Supply::Copies(1)),
            (&div, Supply::Capacity(q)),
        ] {
            let outcome = run_vcg(inst, supply).unwrap();
            outcomes += 1;
            let feasible = match supply {
                Supply::Copies(k) => outcome.allocation.is_feasible(m, k),
                Supply::Capacity(_) => inst.kind() == InstanceKind::Divisible,
            };
            if !clarke_payment_crosscheck(inst, &outcome) || !feasible {
                crosscheck_failures += 1;
            }
        }
    }
    let pass = mismatches.is_empty() && crosscheck_failures == 0;
    let first = mismatches.first().cloned().unwrap_or_default();
    verdict(
        pass,
        format!(
            "4000 solver runs, {} oracle mismatches {first}; clarke crosscheck failed on {crosscheck_failures}/{outcomes} outcomes",
            mismatches.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut outside = Vec::new();
    let mut worst_z = 0.0f64;
    let mut closed_gap = 0.0f64;
    for n in 1..=8u64 {
        for m in 1..=8u64 {
            let closed = binomial_inverse_expectation(n, m).unwrap();
            closed_gap = closed_gap.max((closed - binomial_inverse_sum(n, m)).abs());
            let stats = binomial_inverse_mc(n, m, 1_000_000, 1000 + 8 * n + m).unwrap();
            if stats.stderr > 1e-12 {
                worst_z = worst_z.max((stats.mean - closed).abs() / stats.stderr);
            }
            if !stats.within(closed, 3.0) {
                outside.push(format!("({n},{m})"));
            }
        }
    }
    verdict(
        outside.is_empty() && closed_gap <= 1e-12,
        format!(
            "64 pairs x 10^6 samples, max |z| = {worst_z:.2}, outside 3 se: [{}], closed form vs pmf sum {closed_gap:.1e}",
            outside.join(" ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("two-agent exponential constants", criterion_1),
        ("benchmark-G mechanism surplus = 0.8 G", criterion_2),
        ("two-agent grand-bundle surplus = 2/3 first-best", criterion_3),
        ("copies surplus lower bound", criterion_4),
        ("payment bounds (copies, divisible)", criterion_5),
        ("restricted-capacity surplus bound", criterion_6),
        ("Bayesian unit-demand preset", criterion_7),
        ("truthfulness and EPIR audits", criterion_8),
        ("welfare solvers vs brute force", criterion_9),
        ("binomial inverse expectation", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!("[{}] criterion {:>2}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
