//! Surplus accounting, benchmarks, incentive audits and inequality checks.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::experiments::{random_valuation, trial_rng, with_pool, RandomClass};
use crate::mechanisms::{prob_to_f64, vcg_with_copies, MechanismDistribution, Prob, SubroutineKind};
use crate::valuations::{Instance, InstanceKind, Item, Valuation};
use crate::vcg::{self, Supply};
use crate::{welfare, Error, Result, TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SurplusReport {
    pub expected_welfare: f64,
    pub expected_payments: f64,
    pub expected_surplus: f64,
    pub first_best: f64,
    /// `first_best / expected_surplus`; infinite when the surplus is zero but the first-best is not.
    pub ratio: f64,
}

fn check_agents(dist: &MechanismDistribution, instance: &Instance) -> Result<()> {
    let n = instance.agent_count();
    match dist.branches.iter().find(|b| b.lottery.agent_count() != n) {
        Some(b) => Err(Error::DimensionMismatch { expected: n, got: b.lottery.agent_count() }),
        None => Ok(()),
    }
}

/// Exact expectation over every support triple, valued under the true profile.
pub fn expected_surplus(dist: &MechanismDistribution, true_profile: &Instance) -> Result<SurplusReport> {
    check_agents(dist, true_profile)?;
    let mut expected_welfare = 0.0;
    let mut expected_payments = 0.0;
    for (i, p, entry) in dist.triples() {
        let p = prob_to_f64(p);
        expected_welfare += p * true_profile.valuation(i).eval(&entry.bundle)?;
        expected_payments += p * entry.payment;
    }
    let expected_surplus = expected_welfare - expected_payments;
    let first_best = welfare::first_best(true_profile)?;
    let ratio = if expected_surplus > 0.0 {
        first_best / expected_surplus
    } else if first_best > TOL {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(SurplusReport { expected_welfare, expected_payments, expected_surplus, first_best, ratio })
}

/// Expected utility of `agent` with valuation `v` under `dist`.
pub fn agent_utility(dist: &MechanismDistribution, agent: usize, v: &Valuation) -> Result<f64> {
    let mut total = 0.0;
    for (i, p, entry) in dist.triples() {
        if i == agent {
            total += prob_to_f64(p) * (v.eval(&entry.bundle)? - entry.payment);
        }
    }
    Ok(total)
}

/// `max(v1 - v2, (v1 + v2) / 2)` after ordering the pair.
pub fn benchmark_g(v1: f64, v2: f64) -> Result<f64> {
    for v in [v1, v2] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NegativeValue(v));
        }
    }
    let (high, low) = if v1 >= v2 { (v1, v2) } else { (v2, v1) };
    Ok((high - low).max((high + low) / 2.0))
}

/// A mechanism as a function from reported profiles to exact distributions.
pub type MechanismFn<'a> = dyn Fn(&Instance) -> Result<MechanismDistribution> + Sync + 'a;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub instance: String,
    pub deviations: usize,
    /// Misreports the mechanism rejected; they are skipped.
    pub rejected: usize,
    pub max_gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_deviation: Option<String>,
    pub pass: bool,
}

const SCALINGS: [f64; 5] = [0.0, 0.25, 0.5, 2.0, 4.0];

fn parameter_count(v: &Valuation) -> usize {
    match v {
        Valuation::Explicit { table, .. } => table.len() - 1,
        other => other.item_count(),
    }
}

fn max_parameter(v: &Valuation) -> f64 {
    match v {
        Valuation::UnitDemand { weights } => weights.iter().copied().fold(0.0, f64::max),
        Valuation::MultiUnit { marginals } => marginals.iter().copied().fold(0.0, f64::max),
        Valuation::Explicit { table, .. } => table.iter().copied().fold(0.0, f64::max),
        Valuation::DivisibleSeparable { curves } => {
            curves.iter().flat_map(|c| c.slopes().iter().copied()).fold(0.0, f64::max)
        }
    }
}

/// Scales one parameter, then restores the class invariants (marginals are
/// re-sorted, explicit tables take their monotone closure).
pub fn scale_parameter(v: &Valuation, param: usize, factor: f64) -> Result<Valuation> {
    match v {
        Valuation::UnitDemand { weights } => {
            let mut w = weights.clone();
            w[param] *= factor;
            Valuation::unit_demand(w)
        }
        Valuation::MultiUnit { marginals } => {
            let mut d = marginals.clone();
            d[param] *= factor;
            d.sort_by(|a, b| b.total_cmp(a));
            Valuation::multi_unit(d)
        }
        Valuation::Explicit { m, table } => {
            let mut t = table.clone();
            t[param + 1] *= factor;
            for mask in 1..t.len() {
                for j in 0..*m {
                    if mask >> j & 1 == 1 {
                        t[mask] = t[mask].max(t[mask & !(1 << j)]);
                    }
                }
            }
            Valuation::explicit(*m, t)
        }
        Valuation::DivisibleSeparable { curves } => {
            let mut c = curves.clone();
            c[param] = c[param].scaled(factor)?;
            Valuation::divisible(c)
        }
    }
}

fn random_class(v: &Valuation) -> RandomClass {
    match v {
        Valuation::UnitDemand { .. } => RandomClass::UnitDemand,
        Valuation::MultiUnit { .. } => RandomClass::MultiUnit,
        Valuation::Explicit { .. } => RandomClass::Explicit,
        Valuation::DivisibleSeparable { .. } => RandomClass::Divisible,
    }
}

/// Misreport family for one agent: whole-valuation scalings first, then
/// single-parameter scalings and random same-class draws in roughly equal
/// numbers.
pub fn deviations<R: Rng + ?Sized>(v: &Valuation, count: usize, rng: &mut R) -> Result<Vec<(String, Valuation)>> {
    let mut out = Vec::with_capacity(count);
    for &f in SCALINGS.iter().take(count) {
        out.push((format!("scale x{f}"), v.scaled(f)?));
    }
    let rest = count.saturating_sub(out.len());
    let singles: Vec<(usize, f64)> =
        (0..parameter_count(v)).flat_map(|p| SCALINGS.iter().map(move |&f| (p, f))).collect();
    for &(p, f) in singles.choose_multiple(rng, rest.div_ceil(2)) {
        out.push((format!("param {p} x{f}"), scale_parameter(v, p, f)?));
    }
    let scale = match max_parameter(v) {
        x if x > 0.0 => x / 2.5,
        _ => 1.0,
    };
    while out.len() < count {
        let draw = random_valuation(random_class(v), v.item_count(), rng)?.scaled(scale)?;
        out.push((format!("random draw {}", out.len()), draw));
    }
    Ok(out)
}

/// Utility gain of `agent` reporting `report` instead of its true valuation.
pub fn deviation_gain(mechanism: &MechanismFn, instance: &Instance, agent: usize, report: Valuation) -> Result<f64> {
    let truthful = agent_utility(&mechanism(instance)?, agent, instance.valuation(agent))?;
    let misreport = mechanism(&instance.with_report(agent, report)?)?;
    Ok(agent_utility(&misreport, agent, instance.valuation(agent))? - truthful)
}

/// Falsification test of truthfulness in expectation: every agent tries
/// `deviation_count` misreports and the largest utility gain is reported.
pub fn audit_tie(mechanism_id: &str, mechanism: &MechanismFn, instance: &Instance, deviation_count: usize, seed: u64) -> AuditReport {
    let mut report = AuditReport {
        mechanism: mechanism_id.to_string(),
        instance: instance.digest(),
        deviations: 0,
        rejected: 0,
        max_gain: 0.0,
        worst_agent: None,
        worst_deviation: None,
        pass: false,
    };
    let Ok(truthful) = mechanism(instance) else {
        report.max_gain = f64::INFINITY;
        return report;
    };
    let mut candidates = Vec::new();
    for agent in 0..instance.agent_count() {
        let mut rng = trial_rng(seed, agent as u64);
        match deviations(instance.valuation(agent), deviation_count, &mut rng) {
            Ok(list) => candidates.extend(list.into_iter().map(|(label, v)| (agent, label, v))),
            Err(_) => report.rejected += deviation_count,
        }
    }
    let truthful_utility: Vec<Option<f64>> = (0..instance.agent_count())
        .map(|i| agent_utility(&truthful, i, instance.valuation(i)).ok())
        .collect();
    let gains: Vec<Option<f64>> = with_pool(|| {
        candidates
            .par_iter()
            .map(|(agent, _, report_v)| {
                let base = truthful_utility[*agent]?;
                let inst = instance.with_report(*agent, report_v.clone()).ok()?;
                let dist = mechanism(&inst).ok()?;
                Some(agent_utility(&dist, *agent, instance.valuation(*agent)).ok()? - base)
            })
            .collect()
    });
    for ((agent, label, _), gain) in candidates.iter().zip(&gains) {
        report.deviations += 1;
        match gain {
            Some(g) if *g > report.max_gain => {
                report.max_gain = *g;
                report.worst_agent = Some(*agent);
                report.worst_deviation = Some(label.clone());
            }
            Some(_) => {}
            None => report.rejected += 1,
        }
    }
    report.pass = report.max_gain <= TOL;
    report
}

/// True iff every support triple leaves its agent nonnegative utility.
pub fn audit_epir(dist: &MechanismDistribution, true_profile: &Instance) -> bool {
    if check_agents(dist, true_profile).is_err() {
        return false;
    }
    dist.triples().all(|(i, _, e)| match true_profile.valuation(i).eval(&e.bundle) {
        Ok(value) => value - e.payment >= -TOL,
        Err(_) => false,
    })
}

/// Result of one inequality check `lhs >= rhs` (with `TOL` slack).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl CheckOutcome {
    fn new(check: &str, instance: &Instance, lhs: f64, rhs: f64) -> Self {
        Self { check: check.to_string(), instance: instance.digest(), lhs, rhs, pass: lhs - rhs >= -TOL }
    }

    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("check outcome serializes")
    }
}

fn copies_class(instance: &Instance) -> Result<()> {
    match instance.common_class() {
        Some("unit_demand" | "multi_unit") if instance.kind() == InstanceKind::Indivisible => Ok(()),
        other => Err(Error::Unsupported(format!("copies claims for class {}", other.unwrap_or("mixed")))),
    }
}

/// `SW(2c) - SW(c) >= p(2c) / 2` with `c = 2^level` copies.
pub fn verify_copies_payment_claim(instance: &Instance, level: u32) -> Result<CheckOutcome> {
    copies_class(instance)?;
    if level >= 30 {
        return Err(Error::InvalidParameter(format!("copy level {level} too large")));
    }
    let c = 1usize << level;
    let lhs = vcg::run_welfare(instance, Supply::Copies(2 * c), None)? - vcg::run_welfare(instance, Supply::Copies(c), None)?;
    let rhs = vcg::run_vcg(instance, Supply::Copies(2 * c))?.total_payments() / 2.0;
    Ok(CheckOutcome::new("copies-payment", instance, lhs, rhs))
}

/// Exact expected surplus of VCG with copies against `(q/(r+1)) (SW(1) - SW(2^r)/2^r)`.
pub fn verify_surplus_lower_bound(instance: &Instance, r: u32, q: Prob, kind: SubroutineKind) -> Result<CheckOutcome> {
    copies_class(instance)?;
    let dist = vcg_with_copies(instance, r, q, kind)?;
    let lhs = expected_surplus(&dist, instance)?.expected_surplus;
    let copies = 1usize << r;
    let sw1 = vcg::run_welfare(instance, Supply::Copies(1), None)?;
    let swr = vcg::run_welfare(instance, Supply::Copies(copies), None)?;
    let rhs = prob_to_f64(q) / (r as f64 + 1.0) * (sw1 - swr / copies as f64);
    Ok(CheckOutcome::new("surplus-lower-bound", instance, lhs, rhs))
}

/// `SW(q) - SW(2q)/2 >= p(q)/2` for capped divisible instances, `q <= 1/2`.
pub fn verify_divisible_payment_claim(instance: &Instance, q: f64) -> Result<CheckOutcome> {
    if instance.kind() != InstanceKind::Divisible {
        return Err(Error::ClassMismatch { expected: "divisible_separable", found: instance.common_class().unwrap_or("mixed") });
    }
    if !(q > 0.0 && q <= 0.5) {
        return Err(Error::InvalidCapacity(q));
    }
    let lhs = vcg::run_welfare(instance, Supply::Capacity(q), None)?
        - vcg::run_welfare(instance, Supply::Capacity(2.0 * q), None)? / 2.0;
    let rhs = vcg::run_vcg(instance, Supply::Capacity(q))?.total_payments() / 2.0;
    Ok(CheckOutcome::new("divisible-payment", instance, lhs, rhs))
}

/// Closed form `(m/n)(1 - (1 - 1/m)^n)` of `E[1 / (1 + Bin(n - 1, 1/m))]`.
pub fn binomial_inverse_expectation(n: u64, m: u64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("n and m must be positive".into()));
    }
    let (n, m) = (n as f64, m as f64);
    Ok(m / n * (1.0 - (1.0 - 1.0 / m).powf(n)))
}

/// Highest-weight item; ties go to whichever comes first in `tiebreak`.
pub fn favorite_item(v: &Valuation, tiebreak: &[usize]) -> Result<Item> {
    let Valuation::UnitDemand { weights } = v else {
        return Err(Error::ClassMismatch { expected: "unit_demand", found: v.class_name() });
    };
    let m = weights.len();
    let mut seen = vec![false; m];
    if tiebreak.len() != m || tiebreak.iter().any(|&j| j >= m || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::InvalidParameter(format!("tie-break order must be a permutation of 0..{m}")));
    }
    let best = tiebreak.iter().copied().fold(tiebreak[0], |best, j| if weights[j] > weights[best] { j } else { best });
    Ok(Item(best))
}
