//! Valuation classes and problem instances.
//!
//! Four classes are supported: unit-demand, multi-unit (value depends on the
//! number of items only), explicit set functions given as a full table, and
//! separable piecewise-linear curves over divisible goods.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, TOL};

/// Largest item count accepted by [`Valuation::Explicit`].
pub const MAX_EXPLICIT_ITEMS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Item(pub usize);

/// Copy `copy` of an original item inside a copies instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CopiedItem {
    pub item: Item,
    pub copy: usize,
}

impl CopiedItem {
    pub fn new(item: usize, copy: usize) -> Self {
        Self { item: Item(item), copy }
    }
}

/// What an agent receives: a set of indivisible items or a fraction of each divisible item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bundle {
    Items(Vec<usize>),
    Fractions(Vec<f64>),
}

impl Bundle {
    pub fn empty_items() -> Self {
        Bundle::Items(Vec::new())
    }

    /// Builds an item bundle, sorting and deduplicating.
    pub fn items(items: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = items.into_iter().collect();
        Bundle::Items(set.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Bundle::Items(items) => items.is_empty(),
            Bundle::Fractions(x) => x.iter().all(|&f| f <= TOL),
        }
    }
}

/// Projection `g` from copied items to the distinct original items they stand for.
pub fn project_g(set: &[CopiedItem]) -> Vec<Item> {
    let distinct: BTreeSet<Item> = set.iter().map(|c| c.item).collect();
    distinct.into_iter().collect()
}

/// Concave piecewise-linear curve on `[0, 1]`.
///
/// `breakpoints` runs `0 = b_0 < b_1 < ... < b_K = 1`, and `slopes[k]` is the
/// slope on `[b_k, b_{k+1}]`. Adjacent segments whose slopes agree within
/// [`TOL`] are merged on construction. Concavity itself is not enforced here
/// (see [`Valuation::check_class`]), so that nonstandard inputs can still be
/// loaded and diagnosed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct PiecewiseLinearCurve {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCurve {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
}

impl TryFrom<RawCurve> for PiecewiseLinearCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        PiecewiseLinearCurve::new(raw.breakpoints, raw.slopes)
    }
}

impl From<PiecewiseLinearCurve> for RawCurve {
    fn from(curve: PiecewiseLinearCurve) -> Self {
        RawCurve { breakpoints: curve.breakpoints, slopes: curve.slopes }
    }
}

impl PiecewiseLinearCurve {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidValuation(msg.to_string()));
        if slopes.is_empty() || breakpoints.len() != slopes.len() + 1 {
            return bad("curve needs K slopes and K + 1 breakpoints");
        }
        if breakpoints[0] != 0.0 || (breakpoints[slopes.len()] - 1.0).abs() > TOL {
            return bad("breakpoints must start at 0 and end at 1");
        }
        if breakpoints.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return bad("breakpoints must be strictly increasing");
        }
        if slopes.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("slopes must be finite and nonnegative");
        }

        let mut merged_breaks = vec![0.0];
        let mut merged_slopes: Vec<f64> = Vec::with_capacity(slopes.len());
        for (k, &slope) in slopes.iter().enumerate() {
            match merged_slopes.last() {
                Some(&prev) if (prev - slope).abs() <= TOL => {
                    *merged_breaks.last_mut().unwrap() = breakpoints[k + 1];
                }
                _ => {
                    merged_slopes.push(slope);
                    merged_breaks.push(breakpoints[k + 1]);
                }
            }
        }
        *merged_breaks.last_mut().unwrap() = 1.0;
        Ok(Self { breakpoints: merged_breaks, slopes: merged_slopes })
    }

    /// Single segment `x -> slope * x`.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![slope])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Iterates `(start, end, slope)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.slopes
            .iter()
            .enumerate()
            .map(move |(k, &s)| (self.breakpoints[k], self.breakpoints[k + 1], s))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.segments()
            .map(|(lo, hi, s)| s * (x.min(hi) - lo).max(0.0))
            .sum()
    }

    pub fn is_concave(&self) -> bool {
        self.slopes.windows(2).all(|w| w[1] < w[0])
    }

    /// `x -> curve(min(q, x))`.
    pub fn cap(&self, q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidCapacity(q));
        }
        let mut breaks = vec![0.0];
        let mut slopes = Vec::new();
        for (lo, hi, s) in self.segments() {
            if lo >= q {
                break;
            }
            slopes.push(s);
            breaks.push(hi.min(q));
        }
        if q < 1.0 {
            slopes.push(0.0);
            breaks.push(1.0);
        }
        Self::new(breaks, slopes)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.breakpoints.clone(), self.slopes.iter().map(|s| s * factor).collect())
    }
}

/// A valuation over `m` items.
///
/// Prefer the checked constructors ([`Valuation::unit_demand`] and friends)
/// over building variants directly.
#[derive(Clone, Debug, PartialEq)]
pub enum Valuation {
    /// `v(S) = max_{j in S} w_j`.
    UnitDemand { weights: Vec<f64> },
    /// Value of `k` items is the sum of the first `k` marginals.
    MultiUnit { marginals: Vec<f64> },
    /// Full table indexed by subset bitmask.
    Explicit { m: usize, table: Vec<f64> },
    /// `v(x) = sum_j curve_j(x_j)` over divisible items.
    DivisibleSeparable { curves: Vec<PiecewiseLinearCurve> },
}

fn check_nonnegative(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(v) => Err(Error::InvalidValuation(format!("{what} entry {v} must be finite and nonnegative"))),
        None => Ok(()),
    }
}

impl Valuation {
    pub fn unit_demand(weights: Vec<f64>) -> Result<Self> {
        check_nonnegative(&weights, "unit-demand weight")?;
        Ok(Valuation::UnitDemand { weights })
    }

    pub fn multi_unit(marginals: Vec<f64>) -> Result<Self> {
        check_nonnegative(&marginals, "marginal")?;
        Ok(Valuation::MultiUnit { marginals })
    }

    pub fn explicit(m: usize, table: Vec<f64>) -> Result<Self> {
        if m > MAX_EXPLICIT_ITEMS {
            return Err(Error::InvalidValuation(format!(
                "explicit valuations support at most {MAX_EXPLICIT_ITEMS} items, got {m}"
            )));
        }
        if table.len() != 1 << m {
            return Err(Error::InvalidValuation(format!(
                "explicit table has {} entries, expected {}",
                table.len(),
                1usize << m
            )));
        }
        check_nonnegative(&table, "table")?;
        Ok(Valuation::Explicit { m, table })
    }

    pub fn divisible(curves: Vec<PiecewiseLinearCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidValuation("divisible valuation needs at least one curve".into()));
        }
        Ok(Valuation::DivisibleSeparable { curves })
    }

    /// Divisible valuation with slope `slopes[j]` on item `j` and no kinks.
    pub fn linear_divisible(slopes: &[f64]) -> Result<Self> {
        let curves = slopes.iter().map(|&s| PiecewiseLinearCurve::linear(s)).collect::<Result<_>>()?;
        Self::divisible(curves)
    }

    pub fn item_count(&self) -> usize {
        match self {
            Valuation::UnitDemand { weights } => weights.len(),
            Valuation::MultiUnit { marginals } => marginals.len(),
            Valuation::Explicit { m, .. } => *m,
            Valuation::DivisibleSeparable { curves } => curves.len(),
        }
    }

    pub fn class_name(&self) -> &'static str {
        match self {
            Valuation::UnitDemand { .. } => "unit_demand",
            Valuation::MultiUnit { .. } => "multi_unit",
            Valuation::Explicit { .. } => "explicit",
            Valuation::DivisibleSeparable { .. } => "divisible_separable",
        }
    }

    pub fn is_divisible(&self) -> bool {
        matches!(self, Valuation::DivisibleSeparable { .. })
    }

    /// Evaluates the valuation on a bundle, validating its shape.
    pub fn eval(&self, bundle: &Bundle) -> Result<f64> {
        let m = self.item_count();
        match (self, bundle) {
            (Valuation::DivisibleSeparable { .. }, Bundle::Fractions(x)) => {
                if x.len() != m {
                    return Err(Error::DimensionMismatch { expected: m, got: x.len() });
                }
                if let Some(&bad) = x.iter().find(|f| !(**f >= -TOL && **f <= 1.0 + TOL)) {
                    return Err(Error::FractionOutOfRange(bad));
                }
                Ok(self.eval_fractions(x))
            }
            (Valuation::DivisibleSeparable { .. }, Bundle::Items(items)) => {
                if let Some(&bad) = items.iter().find(|j| **j >= m) {
                    return Err(Error::ItemOutOfRange { index: bad, m });
                }
                let mut x = vec![0.0; m];
                items.iter().for_each(|&j| x[j] = 1.0);
                Ok(self.eval_fractions(&x))
            }
            (_, Bundle::Items(items)) => {
                if let Some(&bad) = items.iter().find(|j| **j >= m) {
                    return Err(Error::ItemOutOfRange { index: bad, m });
                }
                Ok(self.eval_items(items))
            }
            (_, Bundle::Fractions(_)) => Err(Error::ClassMismatch {
                expected: "divisible_separable",
                found: self.class_name(),
            }),
        }
    }

    /// Value of an item set given as indices; indices must be `< m`, duplicates are ignored.
    pub fn eval_items(&self, items: &[usize]) -> f64 {
        let mut mask: u64 = 0;
        for &j in items {
            mask |= 1 << j;
        }
        match self {
            Valuation::UnitDemand { weights } => items.iter().map(|&j| weights[j]).fold(0.0, f64::max),
            Valuation::MultiUnit { .. } => self.eval_count(mask.count_ones() as usize),
            Valuation::Explicit { table, .. } => table[mask as usize],
            Valuation::DivisibleSeparable { curves } => {
                let distinct: BTreeSet<usize> = items.iter().copied().collect();
                distinct.into_iter().map(|j| curves[j].eval(1.0)).sum()
            }
        }
    }

    /// Value of the item subset encoded as a bitmask.
    pub fn eval_mask(&self, mask: u32) -> f64 {
        match self {
            Valuation::Explicit { table, .. } => table[mask as usize],
            Valuation::MultiUnit { .. } => self.eval_count(mask.count_ones() as usize),
            _ => {
                let items: Vec<usize> = (0..self.item_count()).filter(|j| mask >> j & 1 == 1).collect();
                self.eval_items(&items)
            }
        }
    }

    /// Multi-unit value of `k` items (prefix sum of marginals, saturating at `m`).
    /// Other classes report the value of their first `k` items.
    pub fn eval_count(&self, k: usize) -> f64 {
        match self {
            Valuation::MultiUnit { marginals } => marginals.iter().take(k).sum(),
            _ => {
                let items: Vec<usize> = (0..k.min(self.item_count())).collect();
                self.eval_items(&items)
            }
        }
    }

    pub fn eval_fractions(&self, x: &[f64]) -> f64 {
        match self {
            Valuation::DivisibleSeparable { curves } => {
                curves.iter().zip(x).map(|(c, &xj)| c.eval(xj.clamp(0.0, 1.0))).sum()
            }
            _ => {
                let items: Vec<usize> = x.iter().enumerate().filter(|(_, f)| **f >= 1.0 - TOL).map(|(j, _)| j).collect();
                self.eval_items(&items)
            }
        }
    }

    /// Value of the whole item set.
    pub fn grand_value(&self) -> f64 {
        match self {
            Valuation::DivisibleSeparable { curves } => curves.iter().map(|c| c.eval(1.0)).sum(),
            _ => self.eval_items(&(0..self.item_count()).collect::<Vec<_>>()),
        }
    }

    /// Lifts an indivisible valuation to the instance with `2^level` copies of each item.
    pub fn lift_to_copies(&self, level: u32) -> Result<CopiesValuation<'_>> {
        if self.is_divisible() {
            return Err(Error::ClassMismatch { expected: "indivisible", found: self.class_name() });
        }
        if level >= usize::BITS - 1 {
            return Err(Error::InvalidParameter(format!("copy level {level} too large")));
        }
        Ok(CopiesValuation { base: self, copies: 1 << level })
    }

    /// Capacity cap `x -> v(min(q * 1, x))`.
    pub fn cap(&self, q: f64) -> Result<Valuation> {
        match self {
            Valuation::DivisibleSeparable { curves } => {
                let capped = curves.iter().map(|c| c.cap(q)).collect::<Result<_>>()?;
                Ok(Valuation::DivisibleSeparable { curves: capped })
            }
            other => Err(Error::ClassMismatch { expected: "divisible_separable", found: other.class_name() }),
        }
    }

    /// Multiplies every parameter by `factor` (which must be nonnegative).
    pub fn scaled(&self, factor: f64) -> Result<Valuation> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale factor {factor}")));
        }
        Ok(match self {
            Valuation::UnitDemand { weights } => Valuation::UnitDemand { weights: weights.iter().map(|w| w * factor).collect() },
            Valuation::MultiUnit { marginals } => Valuation::MultiUnit { marginals: marginals.iter().map(|d| d * factor).collect() },
            Valuation::Explicit { m, table } => Valuation::Explicit { m: *m, table: table.iter().map(|v| v * factor).collect() },
            Valuation::DivisibleSeparable { curves } => Valuation::DivisibleSeparable {
                curves: curves.iter().map(|c| c.scaled(factor)).collect::<Result<_>>()?,
            },
        })
    }

    /// Translates an indivisible valuation into its explicit table.
    pub fn to_explicit(&self) -> Result<Valuation> {
        let m = self.item_count();
        if self.is_divisible() {
            return Err(Error::ClassMismatch { expected: "indivisible", found: self.class_name() });
        }
        if m > MAX_EXPLICIT_ITEMS {
            return Err(Error::InvalidValuation(format!("{m} items is too many for an explicit table")));
        }
        let table = (0..1u32 << m).map(|mask| self.eval_mask(mask)).collect();
        Valuation::explicit(m, table)
    }

    /// Checks the class invariants without failing.
    pub fn check_class(&self) -> ClassDiagnostics {
        let mut diag = ClassDiagnostics::default();
        match self {
            Valuation::UnitDemand { weights } => {
                diag.monotone = weights.iter().all(|w| *w >= 0.0);
            }
            Valuation::MultiUnit { marginals } => {
                diag.monotone = marginals.iter().all(|d| *d >= 0.0);
                diag.submodular = marginals.windows(2).all(|w| w[1] <= w[0] + TOL);
            }
            Valuation::Explicit { m, table } => {
                let m = *m;
                let full = 1usize << m;
                diag.normalized = table[0].abs() <= TOL;
                diag.monotone = (0..full).all(|s| (0..m).all(|j| s >> j & 1 == 1 || table[s | 1 << j] + TOL >= table[s]));
                // Local form of submodularity: v(S+j) + v(S+k) >= v(S) + v(S+j+k).
                diag.submodular = (0..full).all(|s| {
                    (0..m).filter(|j| s >> j & 1 == 0).all(|j| {
                        (j + 1..m).filter(|k| s >> k & 1 == 0).all(|k| {
                            table[s | 1 << j] + table[s | 1 << k] + TOL >= table[s] + table[s | 1 << j | 1 << k]
                        })
                    })
                });
            }
            Valuation::DivisibleSeparable { curves } => {
                diag.monotone = curves.iter().all(|c| c.slopes().iter().all(|s| *s >= 0.0));
                diag.concave = curves.iter().all(PiecewiseLinearCurve::is_concave);
            }
        }
        diag
    }
}

/// Flags produced by [`Valuation::check_class`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClassDiagnostics {
    pub normalized: bool,
    pub monotone: bool,
    pub submodular: bool,
    pub concave: bool,
}

impl Default for ClassDiagnostics {
    fn default() -> Self {
        Self { normalized: true, monotone: true, submodular: true, concave: true }
    }
}

impl ClassDiagnostics {
    pub fn is_standard(&self) -> bool {
        self.normalized && self.monotone && self.submodular && self.concave
    }
}

/// `v'(S) = v(g(S))` on the instance with `copies` copies of each item.
#[derive(Clone, Copy, Debug)]
pub struct CopiesValuation<'a> {
    base: &'a Valuation,
    copies: usize,
}

impl CopiesValuation<'_> {
    pub fn base(&self) -> &Valuation {
        self.base
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn eval(&self, set: &[CopiedItem]) -> Result<f64> {
        let m = self.base.item_count();
        for c in set {
            if c.item.0 >= m {
                return Err(Error::ItemOutOfRange { index: c.item.0, m });
            }
            if c.copy >= self.copies {
                return Err(Error::InvalidParameter(format!("copy {} of {} copies", c.copy, self.copies)));
            }
        }
        let items: Vec<usize> = project_g(set).into_iter().map(|i| i.0).collect();
        Ok(self.base.eval_items(&items))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Indivisible,
    Divisible,
}

/// Item universe plus one valuation per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    kind: InstanceKind,
    m: usize,
    valuations: Vec<Valuation>,
}

impl Instance {
    pub fn new(kind: InstanceKind, m: usize, valuations: Vec<Valuation>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInstance("instance needs at least one item".into()));
        }
        if valuations.is_empty() {
            return Err(Error::InvalidInstance("instance needs at least one agent".into()));
        }
        for (i, v) in valuations.iter().enumerate() {
            if v.item_count() != m {
                return Err(Error::InvalidInstance(format!(
                    "agent {i} values {} items, instance has {m}",
                    v.item_count()
                )));
            }
            if v.is_divisible() != (kind == InstanceKind::Divisible) {
                return Err(Error::InvalidInstance(format!(
                    "agent {i} has class {} in a {kind:?} instance",
                    v.class_name()
                )));
            }
        }
        Ok(Self { kind, m, valuations })
    }

    /// Infers the kind from the valuations.
    pub fn from_valuations(valuations: Vec<Valuation>) -> Result<Self> {
        let first = valuations.first().ok_or_else(|| Error::InvalidInstance("no agents".into()))?;
        let kind = if first.is_divisible() { InstanceKind::Divisible } else { InstanceKind::Indivisible };
        let m = first.item_count();
        Self::new(kind, m, valuations)
    }

    /// Single indivisible item with one unit-demand value per agent.
    pub fn single_item(values: &[f64]) -> Result<Self> {
        let vals = values.iter().map(|&v| Valuation::unit_demand(vec![v])).collect::<Result<_>>()?;
        Self::new(InstanceKind::Indivisible, 1, vals)
    }

    pub fn kind(&self) -> InstanceKind {
        self.kind
    }

    pub fn item_count(&self) -> usize {
        self.m
    }

    pub fn agent_count(&self) -> usize {
        self.valuations.len()
    }

    pub fn valuations(&self) -> &[Valuation] {
        &self.valuations
    }

    pub fn valuation(&self, agent: usize) -> &Valuation {
        &self.valuations[agent]
    }

    /// Copy of the instance with agent `agent` reporting `report` instead.
    pub fn with_report(&self, agent: usize, report: Valuation) -> Result<Self> {
        let mut vals = self.valuations.clone();
        vals[agent] = report;
        Self::new(self.kind, self.m, vals)
    }

    /// Class shared by all agents, if any.
    pub fn common_class(&self) -> Option<&'static str> {
        let first = self.valuations[0].class_name();
        self.valuations.iter().all(|v| v.class_name() == first).then_some(first)
    }

    /// Index of the first agent whose valuation fails [`Valuation::check_class`].
    pub fn first_nonstandard(&self) -> Option<(usize, ClassDiagnostics)> {
        self.valuations
            .iter()
            .map(Valuation::check_class)
            .enumerate()
            .find(|(_, d)| !d.is_standard())
    }

    pub fn from_json(text: &str, allow_nonstandard: bool) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let instance = file.into_instance()?;
        if !allow_nonstandard {
            if let Some((agent, diag)) = instance.first_nonstandard() {
                return Err(Error::InvalidInstance(format!("agent {agent} fails class checks: {diag:?}")));
            }
        }
        Ok(instance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile::from(self)).expect("instance serializes")
    }

    /// Short stable fingerprint of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&hash[..8])
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} instance, {} agents, {} items", self.kind, self.agent_count(), self.m)
    }
}

/// On-disk instance schema.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    kind: InstanceKind,
    m: usize,
    agents: Vec<AgentFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
enum AgentFile {
    UnitDemand { weights: Vec<f64> },
    MultiUnit { marginals: Vec<f64> },
    Explicit { table: BTreeMap<String, f64> },
    DivisibleSeparable { curves: Vec<PiecewiseLinearCurve> },
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        let m = self.m;
        let valuations = self
            .agents
            .into_iter()
            .map(|agent| match agent {
                AgentFile::UnitDemand { weights } => Valuation::unit_demand(weights),
                AgentFile::MultiUnit { marginals } => Valuation::multi_unit(marginals),
                AgentFile::DivisibleSeparable { curves } => Valuation::divisible(curves),
                AgentFile::Explicit { table } => {
                    if m > MAX_EXPLICIT_ITEMS {
                        return Err(Error::InvalidValuation(format!("explicit table over {m} items")));
                    }
                    let mut values = vec![f64::NAN; 1 << m];
                    values[0] = 0.0;
                    for (key, value) in table {
                        let mask: usize = key
                            .parse()
                            .map_err(|_| Error::InvalidValuation(format!("table key {key:?} is not a bitmask")))?;
                        if mask >= values.len() {
                            return Err(Error::InvalidValuation(format!("table key {mask} out of range")));
                        }
                        values[mask] = value;
                    }
                    if let Some(missing) = values.iter().position(|v| v.is_nan()) {
                        return Err(Error::InvalidValuation(format!("table is missing subset {missing}")));
                    }
                    Valuation::explicit(m, values)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Instance::new(self.kind, m, valuations)
    }
}

impl From<&Instance> for InstanceFile {
    fn from(instance: &Instance) -> Self {
        let agents = instance
            .valuations
            .iter()
            .map(|v| match v {
                Valuation::UnitDemand { weights } => AgentFile::UnitDemand { weights: weights.clone() },
                Valuation::MultiUnit { marginals } => AgentFile::MultiUnit { marginals: marginals.clone() },
                Valuation::DivisibleSeparable { curves } => AgentFile::DivisibleSeparable { curves: curves.clone() },
                Valuation::Explicit { table, .. } => AgentFile::Explicit {
                    table: table.iter().enumerate().map(|(mask, &v)| (mask.to_string(), v)).collect(),
                },
            })
            .collect();
        InstanceFile { kind: instance.kind, m: instance.m, agents }
    }
}
