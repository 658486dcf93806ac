//! The randomized surplus mechanisms, computed as exact finite-support
//! distributions.
//!
//! A [`MechanismDistribution`] is a list of branches (one per draw of the
//! copy level, capacity or coin), each carrying an [`AgentLottery`]: for
//! every agent, the (probability, bundle, payment) triples it may face. With
//! the remaining probability the agent gets nothing and pays nothing. Only
//! per-agent marginals are kept; surplus and utilities are linear in them.

use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::valuations::{Bundle, Instance, InstanceKind};
use crate::vcg::{self, IntervalAllocation, Outcome, Supply};
use crate::welfare::Allocation;
use crate::{Error, Result};

/// Exact probability.
pub type Prob = Ratio<u64>;

fn prob(numer: u64, denom: u64) -> Prob {
    Ratio::new(numer, denom)
}

pub fn prob_to_f64(p: Prob) -> f64 {
    *p.numer() as f64 / *p.denom() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct LotteryEntry {
    pub prob: Prob,
    pub bundle: Bundle,
    pub payment: f64,
}

/// Per-agent lotteries for one branch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentLottery {
    pub agents: Vec<Vec<LotteryEntry>>,
}

impl AgentLottery {
    pub fn new(n: usize) -> Self {
        Self { agents: vec![Vec::new(); n] }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn push(&mut self, agent: usize, prob: Prob, bundle: Bundle, payment: f64) {
        if prob > Prob::from_integer(0) {
            self.agents[agent].push(LotteryEntry { prob, bundle, payment });
        }
    }

    pub fn total_prob(&self, agent: usize) -> Prob {
        self.agents[agent].iter().map(|e| e.prob).sum()
    }

    /// Multiplies every probability by `factor`.
    pub fn scaled(mut self, factor: Prob) -> Self {
        self.agents.iter_mut().flatten().for_each(|e| e.prob *= factor);
        self.agents.iter_mut().for_each(|entries| entries.retain(|e| e.prob > Prob::from_integer(0)));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub prob: Prob,
    pub label: String,
    pub lottery: AgentLottery,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismDistribution {
    pub branches: Vec<Branch>,
}

impl MechanismDistribution {
    pub fn single(label: impl Into<String>, lottery: AgentLottery) -> Self {
        Self { branches: vec![Branch { prob: Prob::from_integer(1), label: label.into(), lottery }] }
    }

    pub fn agent_count(&self) -> usize {
        self.branches.first().map_or(0, |b| b.lottery.agent_count())
    }

    pub fn total_prob(&self) -> Prob {
        self.branches.iter().map(|b| b.prob).sum()
    }

    /// Unconditional per-agent lottery: branch weight folded into each triple.
    pub fn flatten(&self) -> AgentLottery {
        let mut flat = AgentLottery::new(self.agent_count());
        for branch in &self.branches {
            for (i, entries) in branch.lottery.agents.iter().enumerate() {
                for e in entries {
                    flat.push(i, branch.prob * e.prob, e.bundle.clone(), e.payment);
                }
            }
        }
        flat
    }

    /// Outer weights sum to one and no agent is served with probability above one in any branch.
    pub fn is_well_formed(&self) -> bool {
        self.total_prob() == Prob::from_integer(1)
            && self
                .branches
                .iter()
                .all(|b| (0..b.lottery.agent_count()).all(|i| b.lottery.total_prob(i) <= Prob::from_integer(1)))
    }

    /// Iterates `(agent, unconditional probability, entry)` over every support triple.
    pub fn triples(&self) -> impl Iterator<Item = (usize, Prob, &LotteryEntry)> + '_ {
        self.branches.iter().flat_map(|b| {
            b.lottery
                .agents
                .iter()
                .enumerate()
                .flat_map(move |(i, entries)| entries.iter().map(move |e| (i, b.prob * e.prob, e)))
        })
    }
}

#[derive(Serialize)]
struct EntryJson<'a> {
    prob: String,
    bundle: &'a Bundle,
    payment: f64,
}

#[derive(Serialize)]
struct BranchJson<'a> {
    prob: String,
    label: &'a str,
    agents: Vec<Vec<EntryJson<'a>>>,
}

impl Serialize for MechanismDistribution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let branches: Vec<BranchJson> = self
            .branches
            .iter()
            .map(|b| BranchJson {
                prob: b.prob.to_string(),
                label: &b.label,
                agents: b
                    .lottery
                    .agents
                    .iter()
                    .map(|entries| {
                        entries
                            .iter()
                            .map(|e| EntryJson { prob: format!("{}/{}", e.prob.numer(), e.prob.denom()), bundle: &e.bundle, payment: e.payment })
                            .collect()
                    })
                    .collect(),
            })
            .map(|mut b| {
                if !b.prob.contains('/') {
                    b.prob.push_str("/1");
                }
                b
            })
            .collect();
        #[derive(Serialize)]
        struct Wrapper<'a> {
            branches: Vec<BranchJson<'a>>,
        }
        Wrapper { branches }.serialize(serializer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubroutineKind {
    UnitDemand,
    MultiUnit,
}

impl SubroutineKind {
    pub fn default_q(self) -> Prob {
        match self {
            SubroutineKind::UnitDemand => prob(1, 1),
            SubroutineKind::MultiUnit => prob(1, 2),
        }
    }

    fn class(self) -> &'static str {
        match self {
            SubroutineKind::UnitDemand => "unit_demand",
            SubroutineKind::MultiUnit => "multi_unit",
        }
    }
}

/// Smallest `r` with `2^r >= n^2`, i.e. `ceil(2 log2 n)`.
pub fn worst_case_rounds(n: usize) -> u32 {
    let target = (n as u128) * (n as u128);
    (0..).find(|r| 1u128 << r >= target).unwrap()
}

/// `ceil(log2((2e/(e-1)) * max(1, n/m)))`.
pub fn bayesian_rounds(n: usize, m: usize) -> u32 {
    let e = std::f64::consts::E;
    let ratio = (n as f64 / m as f64).max(1.0);
    (2.0 * e / (e - 1.0) * ratio).log2().ceil().max(0.0) as u32
}

/// Smallest `r` with `2^r >= n`.
pub fn capacity_rounds(n: usize) -> u32 {
    (0..).find(|r| 1usize << r >= n).unwrap()
}

/// Serves an agent holding copy `(j, k)` the item `j` at its VCG price with
/// probability `1 / 2^level` (one copy of every item is drawn independently).
pub fn subroutine_unit_demand(outcome: &Outcome, level: u32) -> Result<AgentLottery> {
    let Allocation::Sets(sets) = &outcome.allocation else {
        return Err(Error::ClassMismatch { expected: "unit_demand", found: "non-set allocation" });
    };
    let copies = 1u64 << level;
    let mut lottery = AgentLottery::new(sets.len());
    for (i, set) in sets.iter().enumerate() {
        match set.as_slice() {
            [] => {}
            [held] => lottery.push(i, prob(1, copies), Bundle::items([held.item.0]), outcome.payments[i]),
            _ => {
                return Err(Error::Rounding(format!("agent {i} holds {} copied items in a unit-demand outcome", set.len())));
            }
        }
    }
    Ok(lottery)
}

/// Agents served together when copy `t` is drawn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyGroups {
    /// Agents whose whole (non-empty) interval lies in copy `t`.
    pub within: Vec<usize>,
    /// The agent whose interval runs from copy `t` into copy `t + 1`, if any.
    pub straddling: Option<usize>,
}

/// Builds the per-copy groups of the multi-unit rounding.
pub fn rounding_groups(intervals: &IntervalAllocation) -> Result<Vec<CopyGroups>> {
    if !intervals.is_valid() {
        return Err(Error::Rounding("intervals are not consecutive or exceed m".into()));
    }
    let mut groups: Vec<CopyGroups> = (0..intervals.copies).map(|_| CopyGroups { within: Vec::new(), straddling: None }).collect();
    for agent in 0..intervals.intervals.len() {
        let Some((first, last)) = intervals.copy_span(agent) else { continue };
        if first == last {
            groups[first].within.push(agent);
        } else if last == first + 1 {
            let slot = &mut groups[first].straddling;
            if let Some(other) = slot {
                return Err(Error::Rounding(format!("agents {other} and {agent} both straddle copy {first}")));
            }
            *slot = Some(agent);
        } else {
            return Err(Error::Rounding(format!("agent {agent} spans copies {first}..={last}")));
        }
    }
    Ok(groups)
}

/// Multi-unit rounding: draw a copy `t` uniformly, then a fair coin decides
/// between serving every agent inside copy `t` or the single agent that
/// straddles copies `t` and `t + 1`. Each allocated agent is served its
/// projected bundle at its VCG price with probability `1 / (2 * 2^level)`.
pub fn subroutine_multiunit(intervals: &IntervalAllocation, payments: &[f64], level: u32) -> Result<AgentLottery> {
    let copies = 1u64 << level;
    if intervals.copies as u64 != copies {
        return Err(Error::Rounding(format!("{} copies in layout, expected {copies}", intervals.copies)));
    }
    let groups = rounding_groups(intervals)?;
    let each = prob(1, 2 * copies);
    let mut lottery = AgentLottery::new(intervals.intervals.len());
    for group in &groups {
        for &agent in group.within.iter().chain(group.straddling.iter()) {
            let bundle = Bundle::items(intervals.agent_items(agent).iter().map(|c| c.item.0));
            lottery.push(agent, each, bundle, payments[agent]);
        }
    }
    Ok(lottery)
}

fn check_q(q: Prob, kind: SubroutineKind) -> Result<()> {
    let max = match kind {
        SubroutineKind::UnitDemand => prob(1, 1),
        SubroutineKind::MultiUnit => prob(1, 2),
    };
    if q == Prob::from_integer(0) || q > max {
        return Err(Error::InvalidParameter(format!("q = {q} outside (0, {max}] for {kind:?}")));
    }
    Ok(())
}

/// One branch of VCG with copies at a fixed level.
pub fn vcg_with_copies_branch(instance: &Instance, level: u32, q: Prob, kind: SubroutineKind) -> Result<AgentLottery> {
    check_q(q, kind)?;
    if instance.kind() != InstanceKind::Indivisible || instance.common_class() != Some(kind.class()) {
        return Err(Error::ClassMismatch { expected: kind.class(), found: instance.common_class().unwrap_or("mixed") });
    }
    match kind {
        SubroutineKind::UnitDemand => {
            let outcome = vcg::run_vcg(instance, Supply::Copies(1 << level))?;
            Ok(subroutine_unit_demand(&outcome, level)?.scaled(q))
        }
        SubroutineKind::MultiUnit => {
            let (intervals, payments) = vcg::run_vcg_multiunit_sequential(instance, level)?;
            // the rounding already serves with probability 1/2; thin further for q < 1/2
            Ok(subroutine_multiunit(&intervals, &payments, level)?.scaled(q * 2))
        }
    }
}

/// VCG with copies: level `l` uniform on `{0..=r}`, VCG on `2^l` copies of
/// every item, then the subroutine serves each agent its projected bundle
/// at its copies-instance price with probability `q / 2^l`.
pub fn vcg_with_copies(instance: &Instance, r: u32, q: Prob, kind: SubroutineKind) -> Result<MechanismDistribution> {
    if r >= 40 {
        return Err(Error::InvalidParameter(format!("r = {r} is too large")));
    }
    let weight = prob(1, r as u64 + 1);
    let branches = (0..=r)
        .map(|level| {
            Ok(Branch {
                prob: weight,
                label: format!("l={level}"),
                lottery: vcg_with_copies_branch(instance, level, q, kind)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MechanismDistribution { branches })
}

/// Deterministic VCG on the instance with every agent capped at `2^-level` of each item.
pub fn restricted_capacity_branch(instance: &Instance, level: u32) -> Result<AgentLottery> {
    if instance.kind() != InstanceKind::Divisible {
        return Err(Error::ClassMismatch { expected: "divisible_separable", found: instance.common_class().unwrap_or("mixed") });
    }
    let q = 0.5f64.powi(level as i32);
    let outcome = vcg::run_vcg(instance, Supply::Capacity(q))?;
    Ok(deterministic_lottery(&outcome, instance.item_count()))
}

/// Restricted-capacity VCG: level `l` uniform on `{0..=r}`, then VCG with capacity `2^-l`.
pub fn restricted_capacity_vcg(instance: &Instance, r: u32) -> Result<MechanismDistribution> {
    if r >= 60 {
        return Err(Error::InvalidParameter(format!("r = {r} is too large")));
    }
    let weight = prob(1, r as u64 + 1);
    let branches = (0..=r)
        .map(|level| {
            Ok(Branch { prob: weight, label: format!("q=2^-{level}"), lottery: restricted_capacity_branch(instance, level)? })
        })
        .collect::<Result<_>>()?;
    Ok(MechanismDistribution { branches })
}

fn deterministic_lottery(outcome: &Outcome, m: usize) -> AgentLottery {
    let bundles = outcome.projected_bundles(m);
    let mut lottery = AgentLottery::new(bundles.len());
    for (i, bundle) in bundles.into_iter().enumerate() {
        if !bundle.is_empty() || outcome.payments[i] != 0.0 {
            lottery.push(i, Prob::from_integer(1), bundle, outcome.payments[i]);
        }
    }
    lottery
}

/// Plain VCG as a one-branch distribution.
pub fn deterministic_vcg(instance: &Instance) -> Result<MechanismDistribution> {
    let supply = match instance.kind() {
        InstanceKind::Divisible => Supply::Capacity(1.0),
        InstanceKind::Indivisible => Supply::Copies(1),
    };
    let outcome = vcg::run_vcg(instance, supply)?;
    Ok(MechanismDistribution::single("vcg", deterministic_lottery(&outcome, instance.item_count())))
}

fn grand_bundle(instance: &Instance) -> Bundle {
    match instance.kind() {
        InstanceKind::Indivisible => Bundle::items(0..instance.item_count()),
        InstanceKind::Divisible => Bundle::Fractions(vec![1.0; instance.item_count()]),
    }
}

/// Two agents: VCG, grand bundle free to agent 0, grand bundle free to agent 1, each with probability 1/3.
pub fn two_agent_grand_bundle(instance: &Instance) -> Result<MechanismDistribution> {
    if instance.agent_count() != 2 {
        return Err(Error::AgentCount(instance.agent_count()));
    }
    if instance.kind() != InstanceKind::Indivisible {
        return Err(Error::Unsupported("two-agent grand-bundle mechanism on divisible goods".into()));
    }
    let third = prob(1, 3);
    let outcome = vcg::run_vcg(instance, Supply::Copies(1))?;
    let mut branches = vec![Branch {
        prob: third,
        label: "vcg".into(),
        lottery: deterministic_lottery(&outcome, instance.item_count()),
    }];
    for agent in 0..2 {
        let mut lottery = AgentLottery::new(2);
        lottery.push(agent, Prob::from_integer(1), grand_bundle(instance), 0.0);
        branches.push(Branch { prob: third, label: format!("grand_bundle_to_{agent}"), lottery });
    }
    Ok(MechanismDistribution { branches })
}

/// Two bidders, one item. With the higher report `h` and lower report `l`:
/// if `h > 3l` the high bidder wins w.p. 4/5 at price `5l/4` and the low
/// bidder w.p. 1/5 for free; otherwise each wins w.p. 1/2, the high bidder
/// paying `l/5` and the low bidder `h/5`. Results use the original indices.
pub fn two_agent_single_item_g(v1: f64, v2: f64) -> Result<MechanismDistribution> {
    for v in [v1, v2] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NegativeValue(v));
        }
    }
    // stable: ties keep the original order
    let (high, low) = if v2 > v1 { (1, 0) } else { (0, 1) };
    let (vh, vl) = if high == 0 { (v1, v2) } else { (v2, v1) };
    let item = Bundle::items([0]);
    let mut lottery = AgentLottery::new(2);
    if vh > 3.0 * vl {
        lottery.push(high, prob(4, 5), item.clone(), 5.0 * vl / 4.0);
        lottery.push(low, prob(1, 5), item, 0.0);
    } else {
        lottery.push(high, prob(1, 2), item.clone(), vl / 5.0);
        lottery.push(low, prob(1, 2), item, vh / 5.0);
    }
    Ok(MechanismDistribution::single(if vh > 3.0 * vl { "skewed" } else { "balanced" }, lottery))
}

/// [`two_agent_single_item_g`] on a two-agent, single-item instance.
pub fn two_agent_g(instance: &Instance) -> Result<MechanismDistribution> {
    if instance.agent_count() != 2 {
        return Err(Error::AgentCount(instance.agent_count()));
    }
    if instance.kind() != InstanceKind::Indivisible || instance.item_count() != 1 {
        return Err(Error::Unsupported("the two-agent benchmark mechanism needs a single indivisible item".into()));
    }
    let v = instance.valuations();
    two_agent_single_item_g(v[0].grand_value(), v[1].grand_value())
}

/// Grand bundle to a uniformly random agent, free of charge.
pub fn random_allocation(instance: &Instance) -> Result<MechanismDistribution> {
    let n = instance.agent_count();
    let mut lottery = AgentLottery::new(n);
    for i in 0..n {
        lottery.push(i, prob(1, n as u64), grand_bundle(instance), 0.0);
    }
    Ok(MechanismDistribution::single("random_allocation", lottery))
}

/// Control mechanism that is not truthful: the highest grand-bundle report
/// wins the grand bundle and pays its own report.
pub fn first_price_grand_bundle(instance: &Instance) -> Result<MechanismDistribution> {
    let reports: Vec<f64> = instance.valuations().iter().map(|v| v.grand_value()).collect();
    let winner = reports
        .iter()
        .enumerate()
        .fold(0, |best, (i, &r)| if r > reports[best] { i } else { best });
    let mut lottery = AgentLottery::new(reports.len());
    lottery.push(winner, Prob::from_integer(1), grand_bundle(instance), reports[winner]);
    Ok(MechanismDistribution::single("first_price", lottery))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    VcgCopies,
    RestrictedCapacity,
    TwoAgentBundle,
    #[serde(rename = "two_agent_G")]
    TwoAgentG,
    RandomAllocation,
    Vcg,
    FirstPriceControl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `r = ceil(2 log2 n)`.
    #[default]
    WorstCase,
    /// `r = ceil(log2((2e/(e-1)) max(1, n/m)))`, `q = 1`.
    Bayesian,
}

/// Mechanism configuration as read from JSON.
///
/// `q` is a rational string such as `"1/2"`; `r` and `q` fall back to the
/// preset defaults when omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub mechanism: MechanismKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subroutine: Option<SubroutineKind>,
    #[serde(default)]
    pub preset: Preset,
}

impl MechanismConfig {
    pub fn new(mechanism: MechanismKind) -> Self {
        Self { mechanism, r: None, q: None, subroutine: None, preset: Preset::default() }
    }

    pub fn vcg_copies(r: Option<u32>, q: Option<Prob>, subroutine: Option<SubroutineKind>) -> Self {
        Self { r, q: q.map(|q| q.to_string()), subroutine, ..Self::new(MechanismKind::VcgCopies) }
    }

    pub fn bayesian() -> Self {
        Self { preset: Preset::Bayesian, ..Self::new(MechanismKind::VcgCopies) }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.parsed_q()?;
        Ok(config)
    }

    fn parsed_q(&self) -> Result<Option<Prob>> {
        self.q
            .as_deref()
            .map(|s| Prob::from_str(s.trim()).map_err(|_| Error::InvalidParameter(format!("q = {s:?} is not a rational"))))
            .transpose()
    }

    pub fn subroutine_for(&self, instance: &Instance) -> Result<SubroutineKind> {
        if let Some(kind) = self.subroutine {
            return Ok(kind);
        }
        match instance.common_class() {
            Some("unit_demand") => Ok(SubroutineKind::UnitDemand),
            Some("multi_unit") => Ok(SubroutineKind::MultiUnit),
            other => Err(Error::Unsupported(format!("VCG with copies for class {}", other.unwrap_or("mixed")))),
        }
    }

    /// The `(r, q)` pair the copies mechanism would use on `instance`.
    pub fn copies_parameters(&self, instance: &Instance) -> Result<(u32, Prob, SubroutineKind)> {
        let kind = self.subroutine_for(instance)?;
        let (n, m) = (instance.agent_count(), instance.item_count());
        let r = self.r.unwrap_or(match self.preset {
            Preset::WorstCase => worst_case_rounds(n),
            Preset::Bayesian => bayesian_rounds(n, m),
        });
        let q = self.parsed_q()?.unwrap_or(match self.preset {
            Preset::WorstCase => kind.default_q(),
            Preset::Bayesian => prob(1, 1),
        });
        Ok((r, q, kind))
    }

    pub fn run(&self, instance: &Instance) -> Result<MechanismDistribution> {
        match self.mechanism {
            MechanismKind::VcgCopies => {
                let (r, q, kind) = self.copies_parameters(instance)?;
                vcg_with_copies(instance, r, q, kind)
            }
            MechanismKind::RestrictedCapacity => {
                restricted_capacity_vcg(instance, self.r.unwrap_or_else(|| capacity_rounds(instance.agent_count())))
            }
            MechanismKind::TwoAgentBundle => two_agent_grand_bundle(instance),
            MechanismKind::TwoAgentG => two_agent_g(instance),
            MechanismKind::RandomAllocation => random_allocation(instance),
            MechanismKind::Vcg => deterministic_vcg(instance),
            MechanismKind::FirstPriceControl => first_price_grand_bundle(instance),
        }
    }
}
