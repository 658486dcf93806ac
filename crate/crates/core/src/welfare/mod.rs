//! Exact welfare maximisation for each supported valuation class.
//!
//! The public `max_welfare_*` functions solve the full market. The
//! `*_market` functions underneath take an agent mask and a residual supply
//! so that VCG can re-solve with an agent removed or with a bundle taken out.

mod matching;

use serde::Serialize;

use crate::valuations::{CopiedItem, Instance, InstanceKind, PiecewiseLinearCurve, Valuation};
use crate::{Error, Result, TOL};

/// Largest number of assignments the explicit solver will enumerate.
pub const EXPLICIT_SIZE_GUARD: f64 = 1e7;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Per agent a set of (possibly copied) items.
    Sets(Vec<Vec<CopiedItem>>),
    /// Per agent a unit count.
    Units(Vec<usize>),
    /// Per agent a fraction of every item.
    Fractions(Vec<Vec<f64>>),
}

impl Allocation {
    pub fn agent_count(&self) -> usize {
        match self {
            Allocation::Sets(s) => s.len(),
            Allocation::Units(u) => u.len(),
            Allocation::Fractions(f) => f.len(),
        }
    }

    /// Value agent `agent` derives from its share under `v`. Copied items are projected first.
    pub fn agent_value(&self, agent: usize, v: &Valuation) -> f64 {
        match self {
            Allocation::Sets(sets) => {
                let items: Vec<usize> = sets[agent].iter().map(|c| c.item.0).collect();
                v.eval_items(&items)
            }
            Allocation::Units(units) => v.eval_count(units[agent]),
            Allocation::Fractions(x) => v.eval_fractions(&x[agent]),
        }
    }

    pub fn welfare(&self, profile: &[Valuation]) -> f64 {
        profile.iter().enumerate().map(|(i, v)| self.agent_value(i, v)).sum()
    }

    /// Checks the feasibility constraints: disjoint copied items (each copy
    /// index below `copies`), total units, or per-item supply.
    pub fn is_feasible(&self, m: usize, copies: usize) -> bool {
        match self {
            Allocation::Sets(sets) => {
                let mut seen = std::collections::HashSet::new();
                sets.iter().flatten().all(|c| c.item.0 < m && c.copy < copies && seen.insert(*c))
            }
            Allocation::Units(units) => units.iter().sum::<usize>() <= m * copies,
            Allocation::Fractions(x) => {
                x.iter().all(|row| row.len() == m && row.iter().all(|f| *f >= -TOL && *f <= 1.0 + TOL))
                    && (0..m).all(|j| x.iter().map(|row| row[j]).sum::<f64>() <= 1.0 + TOL)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WelfareResult {
    pub allocation: Allocation,
    pub welfare: f64,
}

pub(crate) fn unit_weights(profile: &[Valuation]) -> Result<Vec<&[f64]>> {
    profile
        .iter()
        .map(|v| match v {
            Valuation::UnitDemand { weights } => Ok(weights.as_slice()),
            other => Err(Error::ClassMismatch { expected: "unit_demand", found: other.class_name() }),
        })
        .collect()
}

pub(crate) fn multiunit_marginals(profile: &[Valuation]) -> Result<Vec<&[f64]>> {
    profile
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Valuation::MultiUnit { marginals } => {
                if marginals.windows(2).any(|w| w[1] > w[0] + TOL) {
                    Err(Error::IncreasingMarginals(i))
                } else {
                    Ok(marginals.as_slice())
                }
            }
            other => Err(Error::ClassMismatch { expected: "multi_unit", found: other.class_name() }),
        })
        .collect()
}

pub(crate) fn divisible_curves(profile: &[Valuation]) -> Result<Vec<&[PiecewiseLinearCurve]>> {
    profile
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Valuation::DivisibleSeparable { curves } => {
                if let Some(j) = curves.iter().position(|c| !c.is_concave()) {
                    Err(Error::NonConcave { agent: i, item: j })
                } else {
                    Ok(curves.as_slice())
                }
            }
            other => Err(Error::ClassMismatch { expected: "divisible_separable", found: other.class_name() }),
        })
        .collect()
}

pub(crate) fn explicit_profile(profile: &[Valuation]) -> Result<usize> {
    let mut m = None;
    for v in profile {
        match v {
            Valuation::Explicit { m: mi, .. } => {
                if *m.get_or_insert(*mi) != *mi {
                    return Err(Error::InvalidInstance("explicit tables over different item counts".into()));
                }
            }
            other => return Err(Error::ClassMismatch { expected: "explicit", found: other.class_name() }),
        }
    }
    m.ok_or_else(|| Error::InvalidInstance("no agents".into()))
}

/// Copy labels for a unit-demand assignment: the k-th agent (in index
/// order) assigned to item `j` receives copy `k`.
pub(crate) fn label_copies(assignment: &[Option<usize>]) -> Vec<Vec<CopiedItem>> {
    let mut next_copy = std::collections::HashMap::new();
    assignment
        .iter()
        .map(|slot| match slot {
            Some(j) => {
                let copy = next_copy.entry(*j).or_insert(0usize);
                let item = CopiedItem::new(*j, *copy);
                *copy += 1;
                vec![item]
            }
            None => Vec::new(),
        })
        .collect()
}

/// Unit-demand market restricted to `active` agents, with `capacities[j]` copies of item `j`.
pub(crate) fn unit_demand_market(weights: &[&[f64]], active: &[bool], capacities: &[usize]) -> (Vec<Option<usize>>, f64) {
    let rows: Vec<Option<&[f64]>> = weights.iter().zip(active).map(|(w, &a)| a.then_some(*w)).collect();
    matching::max_weight_b_matching(&rows, capacities)
}

/// Maximum-weight assignment of unit-demand agents, each item available in `copies_per_item` copies.
pub fn max_welfare_unit_demand(profile: &[Valuation], copies_per_item: usize) -> Result<WelfareResult> {
    if copies_per_item == 0 {
        return Err(Error::InvalidParameter("copies per item must be at least 1".into()));
    }
    let weights = unit_weights(profile)?;
    let m = weights.first().map_or(0, |w| w.len());
    let (assignment, welfare) = unit_demand_market(&weights, &vec![true; weights.len()], &vec![copies_per_item; m]);
    Ok(WelfareResult { allocation: Allocation::Sets(label_copies(&assignment)), welfare })
}

/// Greedy over the pooled marginals of the `active` agents. Only strictly
/// positive marginals are taken; ties go to the lower agent index.
pub(crate) fn multiunit_market(marginals: &[&[f64]], active: &[bool], units: usize, per_agent_cap: usize) -> (Vec<usize>, f64) {
    let mut pool: Vec<(f64, usize, usize)> = marginals
        .iter()
        .enumerate()
        .filter(|(i, _)| active[*i])
        .flat_map(|(i, d)| d.iter().take(per_agent_cap).enumerate().map(move |(t, &dt)| (dt, i, t)))
        .filter(|(dt, _, _)| *dt > TOL)
        .collect();
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut counts = vec![0; marginals.len()];
    let mut welfare = 0.0;
    for &(dt, i, _) in pool.iter().take(units) {
        counts[i] += 1;
        welfare += dt;
    }
    (counts, welfare)
}

pub fn max_welfare_multiunit(profile: &[Valuation], total_units: usize, per_agent_cap: usize) -> Result<WelfareResult> {
    let marginals = multiunit_marginals(profile)?;
    let (counts, welfare) = multiunit_market(&marginals, &vec![true; marginals.len()], total_units, per_agent_cap);
    Ok(WelfareResult { allocation: Allocation::Units(counts), welfare })
}

/// Exhaustive search over assignments of each available item to an active
/// agent or to nobody. Assignments are visited in lexicographic order with
/// "nobody" first, and only strict improvements replace the incumbent, so
/// the result is the lexicographically smallest optimum.
pub(crate) fn explicit_market(profile: &[Valuation], active: &[bool], available: u32) -> Result<(Vec<u32>, f64)> {
    let m = explicit_profile(profile)?;
    let n = profile.len();
    let items: Vec<usize> = (0..m).filter(|j| available >> j & 1 == 1).collect();
    let agents: Vec<usize> = (0..n).filter(|i| active[*i]).collect();
    let guard = (n as f64).powi(m as i32);
    let count = ((agents.len() + 1) as f64).powi(items.len() as i32);
    if guard > EXPLICIT_SIZE_GUARD || count > EXPLICIT_SIZE_GUARD {
        return Err(Error::SizeGuard(guard.max(count)));
    }

    let base = agents.len() + 1;
    let mut digits = vec![0usize; items.len()];
    let mut best_masks = vec![0u32; n];
    let mut best = f64::NEG_INFINITY;
    let mut masks = vec![0u32; n];
    loop {
        masks.iter_mut().for_each(|x| *x = 0);
        for (pos, &d) in digits.iter().enumerate() {
            if d > 0 {
                masks[agents[d - 1]] |= 1 << items[pos];
            }
        }
        let total: f64 = agents.iter().map(|&i| profile[i].eval_mask(masks[i])).sum();
        if total > best + TOL {
            best = total;
            best_masks.copy_from_slice(&masks);
        }
        // Odometer increment, last item varying fastest.
        let mut pos = items.len();
        loop {
            if pos == 0 {
                return Ok((best_masks, best.max(0.0)));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < base {
                break;
            }
            digits[pos] = 0;
        }
    }
}

pub fn max_welfare_explicit(profile: &[Valuation]) -> Result<WelfareResult> {
    let m = explicit_profile(profile)?;
    let full = if m == 0 { 0 } else { u32::MAX >> (32 - m) };
    let (masks, welfare) = explicit_market(profile, &vec![true; profile.len()], full)?;
    let sets = masks
        .iter()
        .map(|&mask| (0..m).filter(|j| mask >> j & 1 == 1).map(|j| CopiedItem::new(j, 0)).collect())
        .collect();
    Ok(WelfareResult { allocation: Allocation::Sets(sets), welfare })
}

/// Per item, fills the remaining `supply[j]` with the steepest segments
/// across active agents, never giving an agent more than `cap` of the item.
/// Ties between equal slopes go to the lower agent index.
pub(crate) fn divisible_market(curves: &[&[PiecewiseLinearCurve]], active: &[bool], supply: &[f64], cap: f64) -> (Vec<Vec<f64>>, f64) {
    let n = curves.len();
    let m = supply.len();
    let mut x = vec![vec![0.0; m]; n];
    let mut welfare = 0.0;
    for j in 0..m {
        let mut segments: Vec<(f64, usize, f64)> = Vec::new();
        for i in (0..n).filter(|i| active[*i]) {
            for (lo, hi, slope) in curves[i][j].segments() {
                let len = hi.min(cap) - lo;
                if len > 0.0 && slope > TOL {
                    segments.push((slope, i, len));
                }
            }
        }
        segments.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut remaining = supply[j].max(0.0);
        for (slope, i, len) in segments {
            if remaining <= 0.0 {
                break;
            }
            let take = len.min(remaining);
            x[i][j] += take;
            welfare += slope * take;
            remaining -= take;
        }
    }
    (x, welfare)
}

pub fn max_welfare_divisible(profile: &[Valuation], q: f64) -> Result<WelfareResult> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidCapacity(q));
    }
    let curves = divisible_curves(profile)?;
    let m = curves.first().map_or(0, |c| c.len());
    let (x, welfare) = divisible_market(&curves, &vec![true; curves.len()], &vec![1.0; m], q);
    Ok(WelfareResult { allocation: Allocation::Fractions(x), welfare })
}

/// Optimal social welfare of the instance as given (one copy, no cap).
pub fn first_best(instance: &Instance) -> Result<f64> {
    let profile = instance.valuations();
    if instance.kind() == InstanceKind::Divisible {
        return Ok(max_welfare_divisible(profile, 1.0)?.welfare);
    }
    match instance.common_class() {
        Some("unit_demand") => Ok(max_welfare_unit_demand(profile, 1)?.welfare),
        Some("multi_unit") => Ok(max_welfare_multiunit(profile, instance.item_count(), instance.item_count())?.welfare),
        Some("explicit") => Ok(max_welfare_explicit(profile)?.welfare),
        _ => {
            let tables = profile.iter().map(Valuation::to_explicit).collect::<Result<Vec<_>>>()?;
            Ok(max_welfare_explicit(&tables)?.welfare)
        }
    }
}
