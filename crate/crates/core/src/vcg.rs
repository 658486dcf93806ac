//! VCG on top of the welfare solvers.
//!
//! Every welfare term (the efficient allocation and both Clarke terms for
//! each agent) goes through the same deterministic solver, so payments are
//! consistent with the allocation the mechanism actually reports.

use serde::Serialize;

use crate::valuations::{Bundle, CopiedItem, Instance, InstanceKind, PiecewiseLinearCurve, Valuation};
use crate::welfare::{self, Allocation};
use crate::{Error, Result, TOL};

/// Supply parameters for one VCG run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Supply {
    /// Indivisible items, each available in this many copies.
    Copies(usize),
    /// Divisible items, no agent may receive more than this fraction of any item.
    Capacity(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
    pub welfare: f64,
    pub supply: Supply,
}

#[derive(Serialize)]
struct OutcomeJson<'a> {
    allocation: &'a Allocation,
    payments: &'a [f64],
    welfare: f64,
    surplus: f64,
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        OutcomeJson {
            allocation: &self.allocation,
            payments: &self.payments,
            welfare: self.welfare,
            surplus: self.surplus(),
        }
        .serialize(serializer)
    }
}

impl Outcome {
    pub fn total_payments(&self) -> f64 {
        self.payments.iter().sum()
    }

    pub fn surplus(&self) -> f64 {
        self.welfare - self.total_payments()
    }

    /// Utility `v_i(A_i) - p_i` of each agent under `profile`.
    pub fn utilities(&self, profile: &[Valuation]) -> Vec<f64> {
        profile
            .iter()
            .enumerate()
            .map(|(i, v)| self.allocation.agent_value(i, v) - self.payments[i])
            .collect()
    }

    /// The bundle of original items (or fractions) each agent ends up with.
    /// Unit counts are laid out as consecutive items starting from item 0
    /// in agent order, wrapping into the next copy when `m` is exhausted.
    pub fn projected_bundles(&self, m: usize) -> Vec<Bundle> {
        match &self.allocation {
            Allocation::Sets(sets) => sets.iter().map(|s| Bundle::items(s.iter().map(|c| c.item.0))).collect(),
            Allocation::Fractions(x) => x.iter().map(|row| Bundle::Fractions(row.clone())).collect(),
            Allocation::Units(counts) => {
                let layout = IntervalAllocation::layout(counts, m, usize::MAX);
                (0..counts.len()).map(|i| Bundle::items(layout.agent_items(i).iter().map(|c| c.item.0))).collect()
            }
        }
    }
}

/// A market the VCG driver can re-solve with agents removed or supply reduced.
trait Market {
    type Supply: Clone;
    type Bundle: Clone;

    fn full_supply(&self) -> Self::Supply;
    fn solve(&self, active: &[bool], supply: &Self::Supply) -> Result<(Vec<Self::Bundle>, f64)>;
    fn remove(&self, supply: &Self::Supply, bundle: &Self::Bundle) -> Self::Supply;
    fn value(&self, agent: usize, bundle: &Self::Bundle) -> f64;
    fn trim(&self, agent: usize, bundle: Self::Bundle) -> Self::Bundle;
}

struct VcgRun<B> {
    bundles: Vec<B>,
    welfare: f64,
    payments: Vec<f64>,
}

fn run_market<M: Market>(market: &M, n: usize) -> Result<VcgRun<M::Bundle>> {
    let full = market.full_supply();
    let everyone = vec![true; n];
    let (bundles, welfare) = market.solve(&everyone, &full)?;
    let bundles: Vec<M::Bundle> = bundles.into_iter().enumerate().map(|(i, b)| market.trim(i, b)).collect();
    debug_assert!((bundles.iter().enumerate().map(|(i, b)| market.value(i, b)).sum::<f64>() - welfare).abs() <= 1e-6);
    let mut payments = Vec::with_capacity(n);
    for (i, bundle) in bundles.iter().enumerate() {
        let mut others = everyone.clone();
        others[i] = false;
        let (_, with_all) = market.solve(&others, &full)?;
        let (_, without_bundle) = market.solve(&others, &market.remove(&full, bundle))?;
        payments.push((with_all - without_bundle).max(0.0));
    }
    Ok(VcgRun { bundles, welfare, payments })
}

struct UnitDemandMarket<'a> {
    weights: Vec<&'a [f64]>,
    copies: usize,
    m: usize,
}

impl Market for UnitDemandMarket<'_> {
    type Supply = Vec<usize>;
    type Bundle = Option<usize>;

    fn full_supply(&self) -> Vec<usize> {
        vec![self.copies; self.m]
    }

    fn solve(&self, active: &[bool], supply: &Vec<usize>) -> Result<(Vec<Option<usize>>, f64)> {
        Ok(welfare::unit_demand_market(&self.weights, active, supply))
    }

    fn remove(&self, supply: &Vec<usize>, bundle: &Option<usize>) -> Vec<usize> {
        let mut s = supply.clone();
        if let Some(j) = bundle {
            s[*j] -= 1;
        }
        s
    }

    fn value(&self, agent: usize, bundle: &Option<usize>) -> f64 {
        bundle.map_or(0.0, |j| self.weights[agent][j])
    }

    fn trim(&self, agent: usize, bundle: Option<usize>) -> Option<usize> {
        bundle.filter(|&j| self.weights[agent][j] > TOL)
    }
}

struct MultiUnitMarket<'a> {
    marginals: Vec<&'a [f64]>,
    units: usize,
    per_agent_cap: usize,
}

impl Market for MultiUnitMarket<'_> {
    type Supply = usize;
    type Bundle = usize;

    fn full_supply(&self) -> usize {
        self.units
    }

    fn solve(&self, active: &[bool], supply: &usize) -> Result<(Vec<usize>, f64)> {
        Ok(welfare::multiunit_market(&self.marginals, active, *supply, self.per_agent_cap))
    }

    fn remove(&self, supply: &usize, bundle: &usize) -> usize {
        supply - bundle
    }

    fn value(&self, agent: usize, bundle: &usize) -> f64 {
        self.marginals[agent].iter().take(*bundle).sum()
    }

    fn trim(&self, agent: usize, mut bundle: usize) -> usize {
        while bundle > 0 && self.marginals[agent][bundle - 1] <= TOL {
            bundle -= 1;
        }
        bundle
    }
}

struct ExplicitMarket<'a> {
    profile: &'a [Valuation],
    m: usize,
}

impl Market for ExplicitMarket<'_> {
    type Supply = u32;
    type Bundle = u32;

    fn full_supply(&self) -> u32 {
        u32::MAX >> (32 - self.m)
    }

    fn solve(&self, active: &[bool], supply: &u32) -> Result<(Vec<u32>, f64)> {
        welfare::explicit_market(self.profile, active, *supply)
    }

    fn remove(&self, supply: &u32, bundle: &u32) -> u32 {
        supply & !bundle
    }

    fn value(&self, agent: usize, bundle: &u32) -> f64 {
        self.profile[agent].eval_mask(*bundle)
    }

    fn trim(&self, agent: usize, mut bundle: u32) -> u32 {
        let v = &self.profile[agent];
        for j in (0..self.m).rev() {
            let without = bundle & !(1 << j);
            if bundle >> j & 1 == 1 && v.eval_mask(without) >= v.eval_mask(bundle) - TOL {
                bundle = without;
            }
        }
        bundle
    }
}

struct DivisibleMarket<'a> {
    curves: Vec<&'a [PiecewiseLinearCurve]>,
    cap: f64,
    m: usize,
}

impl Market for DivisibleMarket<'_> {
    type Supply = Vec<f64>;
    type Bundle = Vec<f64>;

    fn full_supply(&self) -> Vec<f64> {
        vec![1.0; self.m]
    }

    fn solve(&self, active: &[bool], supply: &Vec<f64>) -> Result<(Vec<Vec<f64>>, f64)> {
        Ok(welfare::divisible_market(&self.curves, active, supply, self.cap))
    }

    fn remove(&self, supply: &Vec<f64>, bundle: &Vec<f64>) -> Vec<f64> {
        supply.iter().zip(bundle).map(|(s, x)| (s - x).max(0.0)).collect()
    }

    fn value(&self, agent: usize, bundle: &Vec<f64>) -> f64 {
        self.curves[agent].iter().zip(bundle).map(|(c, &x)| c.eval(x)).sum()
    }

    fn trim(&self, _agent: usize, bundle: Vec<f64>) -> Vec<f64> {
        bundle
    }
}

/// Runs VCG: a welfare-maximising allocation, trimmed of redundant items,
/// with Clarke payments `SW(N - i, supply) - SW(N - i, supply - A_i)`.
pub fn run_vcg(instance: &Instance, supply: Supply) -> Result<Outcome> {
    let profile = instance.valuations();
    let n = profile.len();
    let m = instance.item_count();
    let (allocation, welfare, payments) = match (instance.kind(), supply) {
        (InstanceKind::Divisible, Supply::Capacity(q)) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidCapacity(q));
            }
            let market = DivisibleMarket { curves: welfare::divisible_curves(profile)?, cap: q, m };
            let run = run_market(&market, n)?;
            (Allocation::Fractions(run.bundles), run.welfare, run.payments)
        }
        (InstanceKind::Indivisible, Supply::Copies(copies)) => {
            if copies == 0 {
                return Err(Error::InvalidParameter("copies must be at least 1".into()));
            }
            match instance.common_class() {
                Some("unit_demand") => {
                    let market = UnitDemandMarket { weights: welfare::unit_weights(profile)?, copies, m };
                    let run = run_market(&market, n)?;
                    (Allocation::Sets(welfare::label_copies(&run.bundles)), run.welfare, run.payments)
                }
                Some("multi_unit") => {
                    let market = MultiUnitMarket {
                        marginals: welfare::multiunit_marginals(profile)?,
                        units: m * copies,
                        per_agent_cap: m,
                    };
                    let run = run_market(&market, n)?;
                    (Allocation::Units(run.bundles), run.welfare, run.payments)
                }
                class => {
                    if copies != 1 {
                        return Err(Error::Unsupported(format!(
                            "copies instance for class {}",
                            class.unwrap_or("mixed")
                        )));
                    }
                    let tables;
                    let profile = if class == Some("explicit") {
                        profile
                    } else {
                        tables = profile.iter().map(Valuation::to_explicit).collect::<Result<Vec<_>>>()?;
                        tables.as_slice()
                    };
                    let market = ExplicitMarket { profile, m };
                    let run = run_market(&market, n)?;
                    let sets = run
                        .bundles
                        .iter()
                        .map(|&mask| (0..m).filter(|j| mask >> j & 1 == 1).map(|j| CopiedItem::new(j, 0)).collect())
                        .collect();
                    (Allocation::Sets(sets), run.welfare, run.payments)
                }
            }
        }
        (kind, supply) => {
            return Err(Error::Unsupported(format!("{supply:?} supply on a {kind:?} instance")));
        }
    };
    Ok(Outcome { allocation, payments, welfare, supply })
}

/// Recomputes every payment in pivot form `SW(N - i) - (SW(N) - v_i(A_i))`
/// and checks it against the reported Clarke payment.
pub fn clarke_payment_crosscheck(instance: &Instance, outcome: &Outcome) -> bool {
    let Ok(full) = run_welfare(instance, outcome.supply, None) else {
        return false;
    };
    (0..instance.agent_count()).all(|i| {
        let Ok(without_i) = run_welfare(instance, outcome.supply, Some(i)) else {
            return false;
        };
        let own = outcome.allocation.agent_value(i, instance.valuation(i));
        let pivot = without_i - (full - own);
        (pivot - outcome.payments[i]).abs() <= TOL
    })
}

/// Optimal welfare under `supply`, optionally with one agent excluded.
pub fn run_welfare(instance: &Instance, supply: Supply, exclude: Option<usize>) -> Result<f64> {
    let profile = instance.valuations();
    let m = instance.item_count();
    let mut active = vec![true; profile.len()];
    if let Some(i) = exclude {
        active[i] = false;
    }
    match (instance.kind(), supply) {
        (InstanceKind::Divisible, Supply::Capacity(q)) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidCapacity(q));
            }
            Ok(welfare::divisible_market(&welfare::divisible_curves(profile)?, &active, &vec![1.0; m], q).1)
        }
        (InstanceKind::Indivisible, Supply::Copies(c)) => match instance.common_class() {
            Some("unit_demand") => Ok(welfare::unit_demand_market(&welfare::unit_weights(profile)?, &active, &vec![c; m]).1),
            Some("multi_unit") => Ok(welfare::multiunit_market(&welfare::multiunit_marginals(profile)?, &active, m * c, m).1),
            Some("explicit") if c == 1 => Ok(welfare::explicit_market(profile, &active, u32::MAX >> (32 - m))?.1),
            _ if c == 1 => {
                let tables = profile.iter().map(Valuation::to_explicit).collect::<Result<Vec<_>>>()?;
                Ok(welfare::explicit_market(&tables, &active, u32::MAX >> (32 - m))?.1)
            }
            _ => Err(Error::Unsupported("copies instance for this class".into())),
        },
        (kind, supply) => Err(Error::Unsupported(format!("{supply:?} supply on a {kind:?} instance"))),
    }
}

/// Drops items that do not contribute to their holder's value.
///
/// Bundles are scanned from the highest (item, copy) down, so among
/// duplicate copies the lowest copy index survives. Unit counts shrink while
/// the last marginal is zero. Fractional allocations are returned unchanged.
pub fn trim_redundant(allocation: &Allocation, profile: &[Valuation]) -> Allocation {
    match allocation {
        Allocation::Sets(sets) => Allocation::Sets(
            sets.iter()
                .zip(profile)
                .map(|(set, v)| {
                    let mut kept: Vec<CopiedItem> = set.clone();
                    kept.sort();
                    let value = |s: &[CopiedItem]| v.eval_items(&s.iter().map(|c| c.item.0).collect::<Vec<_>>());
                    for idx in (0..kept.len()).rev() {
                        let mut without = kept.clone();
                        without.remove(idx);
                        if value(&without) >= value(&kept) - TOL {
                            kept = without;
                        }
                    }
                    kept
                })
                .collect(),
        ),
        Allocation::Units(units) => Allocation::Units(
            units
                .iter()
                .zip(profile)
                .map(|(&k, v)| {
                    let mut k = k;
                    while k > 0 && v.eval_count(k - 1) >= v.eval_count(k) - TOL {
                        k -= 1;
                    }
                    k
                })
                .collect(),
        ),
        Allocation::Fractions(_) => allocation.clone(),
    }
}

/// Consecutive intervals over the copy-major order
/// `(item 0, copy 0), (item 1, copy 0), ..., (item m-1, copy 0), (item 0, copy 1), ...`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntervalAllocation {
    pub m: usize,
    pub copies: usize,
    /// Half-open `[lo, hi)` per agent, in service order.
    pub intervals: Vec<(usize, usize)>,
    /// The unallocated tail.
    pub unallocated: (usize, usize),
}

impl IntervalAllocation {
    /// Lays agents out back to back in index order.
    pub fn layout(counts: &[usize], m: usize, copies: usize) -> Self {
        let mut next = 0;
        let intervals = counts
            .iter()
            .map(|&k| {
                let iv = (next, next + k);
                next += k;
                iv
            })
            .collect();
        let total = m.saturating_mul(copies);
        Self { m, copies, intervals, unallocated: (next, total.max(next)) }
    }

    pub fn position(&self, pos: usize) -> CopiedItem {
        CopiedItem::new(pos % self.m, pos / self.m)
    }

    pub fn agent_items(&self, agent: usize) -> Vec<CopiedItem> {
        let (lo, hi) = self.intervals[agent];
        (lo..hi).map(|p| self.position(p)).collect()
    }

    /// First and last copy touched by the agent's interval, if non-empty.
    pub fn copy_span(&self, agent: usize) -> Option<(usize, usize)> {
        let (lo, hi) = self.intervals[agent];
        (hi > lo).then(|| (lo / self.m, (hi - 1) / self.m))
    }

    /// No interval is longer than `m`, so nobody holds two copies of one item.
    pub fn is_valid(&self) -> bool {
        self.intervals.windows(2).all(|w| w[0].1 == w[1].0)
            && self.intervals.iter().all(|(lo, hi)| hi >= lo && hi - lo <= self.m)
            && self.unallocated.0 == self.intervals.last().map_or(0, |iv| iv.1)
            && self.unallocated.1 <= self.m * self.copies
    }
}

/// Multi-unit VCG on `2^level` copies with the allocation laid out as
/// consecutive intervals in ascending agent order.
pub fn run_vcg_multiunit_sequential(instance: &Instance, level: u32) -> Result<(IntervalAllocation, Vec<f64>)> {
    if instance.common_class() != Some("multi_unit") {
        return Err(Error::ClassMismatch {
            expected: "multi_unit",
            found: instance.common_class().unwrap_or("mixed"),
        });
    }
    let copies = 1usize << level;
    let outcome = run_vcg(instance, Supply::Copies(copies))?;
    let Allocation::Units(counts) = &outcome.allocation else {
        unreachable!("multi-unit VCG returns unit counts");
    };
    let layout = IntervalAllocation::layout(counts, instance.item_count(), copies);
    debug_assert!(layout.is_valid());
    Ok((layout, outcome.payments))
}
