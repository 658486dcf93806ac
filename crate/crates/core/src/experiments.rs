//! Instance generators, Monte-Carlo estimation and ratio sweeps.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, trial)`,
//! and per-trial results are reduced with a fixed pairwise summation, so
//! reports do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, benchmark_g};
use crate::mechanisms::MechanismConfig;
use crate::valuations::{Instance, InstanceKind, PiecewiseLinearCurve, Valuation};
use crate::{welfare, Error, Result};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "SURPLUS_AUCTIONS_THREADS";

/// Generator for trial `stream` under `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard exponential draw by inverse CDF.
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

/// Runs `f` on a rayon pool sized by [`THREADS_ENV`] when set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|s| s.trim().parse::<usize>().ok()).filter(|&t| t > 0);
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Pairwise (cascade) sum; the split points depend only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleStats {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    /// `1.96 * stderr`.
    pub ci95: f64,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, variance: f64::NAN, stderr: f64::NAN, ci95: f64::NAN };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let variance = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        let stderr = (variance / n as f64).sqrt();
        Self { mean, variance, stderr, ci95: 1.96 * stderr }
    }

    /// `|mean - target| <= k * stderr`, with a tiny floor for zero-variance samples.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + 1e-12
    }
}

/// Per-value distribution for the i.i.d. generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDist {
    Exponential { rate: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl Default for ValueDist {
    fn default() -> Self {
        ValueDist::Exponential { rate: 1.0 }
    }
}

impl ValueDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            ValueDist::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                Err(Error::InvalidParameter(format!("exponential rate {rate}")))
            }
            ValueDist::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::InvalidParameter("discrete table needs matching values and weights".into()));
                }
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::NegativeValue(*v));
                }
                WeightedIndex::new(weights).map_err(|e| Error::InvalidParameter(format!("discrete weights: {e}")))?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<Sampler<'_>> {
        self.validate()?;
        Ok(match self {
            ValueDist::Exponential { rate } => Sampler::Exp(*rate),
            ValueDist::Discrete { values, weights } => Sampler::Table(values, WeightedIndex::new(weights).expect("validated")),
        })
    }
}

enum Sampler<'a> {
    Exp(f64),
    Table(&'a [f64], WeightedIndex<f64>),
}

impl Sampler<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exp(rate) => exp1(rng) / rate,
            Sampler::Table(values, index) => values[index.sample(rng)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `n` values Exp(1) for one item.
    ExpSingleItem,
    /// `n x m` i.i.d. unit-demand weights.
    IidUnitDemand,
    /// Linear divisible curves, one Exp(1) scale per agent shared by all items.
    AdditiveDivisibleLb,
    /// Unit-demand weight Exp(1) on item 0 and zero elsewhere.
    SingleItemInterestLb,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_single_item" => Ok(Family::ExpSingleItem),
            "iid_unit_demand" => Ok(Family::IidUnitDemand),
            "additive_divisible_lb" => Ok(Family::AdditiveDivisibleLb),
            "single_item_interest_lb" => Ok(Family::SingleItemInterestLb),
            other => Err(Error::InvalidParameter(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dist: ValueDist,
}

fn one() -> usize {
    1
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, m: usize, seed: u64) -> Self {
        Self { family, n, m, seed, dist: ValueDist::default() }
    }

    /// Item count actually generated (the single-item family ignores `m`).
    pub fn items(&self) -> usize {
        match self.family {
            Family::ExpSingleItem => 1,
            _ => self.m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if self.items() == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        self.dist.validate()
    }
}

/// A generated instance with the raw draws behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub instance: Instance,
    /// Drawn values in generation order.
    pub realization: Vec<f64>,
}

/// Instance for trial `trial` of `spec`.
pub fn gen_instance(spec: &GeneratorSpec, trial: u64) -> Result<Generated> {
    spec.validate()?;
    let mut rng = trial_rng(spec.seed, trial);
    let sampler = spec.dist.sampler()?;
    let (n, m) = (spec.n, spec.items());
    let (realization, valuations): (Vec<f64>, Vec<Valuation>) = match spec.family {
        Family::ExpSingleItem => {
            let values: Vec<f64> = (0..n).map(|_| sampler.draw(&mut rng)).collect();
            let vals = values.iter().map(|&v| Valuation::unit_demand(vec![v])).collect::<Result<_>>()?;
            (values, vals)
        }
        Family::IidUnitDemand => {
            let values: Vec<f64> = (0..n * m).map(|_| sampler.draw(&mut rng)).collect();
            let vals = values.chunks(m).map(|row| Valuation::unit_demand(row.to_vec())).collect::<Result<_>>()?;
            (values, vals)
        }
        Family::AdditiveDivisibleLb => {
            let scales: Vec<f64> = (0..n).map(|_| sampler.draw(&mut rng)).collect();
            let vals = scales.iter().map(|&s| Valuation::linear_divisible(&vec![s; m])).collect::<Result<_>>()?;
            (scales, vals)
        }
        Family::SingleItemInterestLb => {
            let values: Vec<f64> = (0..n).map(|_| sampler.draw(&mut rng)).collect();
            let vals = values
                .iter()
                .map(|&v| {
                    let mut w = vec![0.0; m];
                    w[0] = v;
                    Valuation::unit_demand(w)
                })
                .collect::<Result<_>>()?;
            (values, vals)
        }
    };
    let kind = if spec.family == Family::AdditiveDivisibleLb { InstanceKind::Divisible } else { InstanceKind::Indivisible };
    Ok(Generated { instance: Instance::new(kind, m, valuations)?, realization })
}

/// Classes for [`random_instance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomClass {
    UnitDemand,
    MultiUnit,
    /// Coverage functions: monotone, normalized and submodular.
    Explicit,
    /// Concave piecewise-linear curves with breakpoints on the 1/8 grid.
    Divisible,
    LinearDivisible,
}

/// Small values with frequent ties: half integers in `0..=4`, half uniform on `[0, 5)`.
pub fn draw_value<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        rng.random_range(0..=4) as f64
    } else {
        rng.random::<f64>() * 5.0
    }
}

pub fn random_valuation<R: Rng + ?Sized>(class: RandomClass, m: usize, rng: &mut R) -> Result<Valuation> {
    match class {
        RandomClass::UnitDemand => Valuation::unit_demand((0..m).map(|_| draw_value(rng)).collect()),
        RandomClass::MultiUnit => {
            let mut d: Vec<f64> = (0..m).map(|_| draw_value(rng)).collect();
            d.sort_by(|a, b| b.total_cmp(a));
            Valuation::multi_unit(d)
        }
        RandomClass::Explicit => {
            let elements = 4;
            let weights: Vec<f64> = (0..elements).map(|_| draw_value(rng)).collect();
            let covers: Vec<u32> = (0..m).map(|_| rng.random_range(0..1u32 << elements)).collect();
            let table = (0..1usize << m)
                .map(|mask| {
                    let union = (0..m).filter(|j| mask >> j & 1 == 1).fold(0u32, |acc, j| acc | covers[j]);
                    (0..elements).filter(|e| union >> e & 1 == 1).map(|e| weights[e]).sum()
                })
                .collect();
            Valuation::explicit(m, table)
        }
        RandomClass::Divisible => {
            let curves = (0..m).map(|_| random_concave_curve(rng)).collect::<Result<_>>()?;
            Valuation::divisible(curves)
        }
        RandomClass::LinearDivisible => Valuation::linear_divisible(&(0..m).map(|_| draw_value(rng)).collect::<Vec<_>>()),
    }
}

/// Concave curve with one to three segments, breakpoints on the 1/8 grid.
pub fn random_concave_curve<R: Rng + ?Sized>(rng: &mut R) -> Result<PiecewiseLinearCurve> {
    let segments = rng.random_range(1..=3usize);
    let mut cuts: Vec<u32> = Vec::new();
    while cuts.len() < segments - 1 {
        let c = rng.random_range(1..8u32);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut breaks = vec![0.0];
    breaks.extend(cuts.iter().map(|&c| c as f64 / 8.0));
    breaks.push(1.0);
    let mut slopes: Vec<f64> = (0..segments).map(|_| draw_value(rng)).collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    PiecewiseLinearCurve::new(breaks, slopes)
}

pub fn random_instance<R: Rng + ?Sized>(class: RandomClass, n: usize, m: usize, rng: &mut R) -> Result<Instance> {
    let vals = (0..n).map(|_| random_valuation(class, m, rng)).collect::<Result<Vec<_>>>()?;
    Instance::from_valuations(vals)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub trials: usize,
    pub surplus: SampleStats,
    pub welfare: SampleStats,
    /// Benchmark `G`, reported for two agents and one item.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark_g: Option<SampleStats>,
    /// `mean_welfare / mean_surplus`.
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_g: Option<f64>,
}

impl ExperimentReport {
    pub fn mean_surplus(&self) -> f64 {
        self.surplus.mean
    }

    pub fn mean_welfare(&self) -> f64 {
        self.welfare.mean
    }

    pub fn mean_g(&self) -> Option<f64> {
        self.benchmark_g.map(|g| g.mean)
    }
}

struct TrialResult {
    surplus: f64,
    welfare: f64,
    g: Option<f64>,
}

fn run_trial(config: &MechanismConfig, spec: &GeneratorSpec, trial: u64) -> Result<TrialResult> {
    let generated = gen_instance(spec, trial)?;
    let instance = &generated.instance;
    let dist = config.run(instance)?;
    let report = analysis::expected_surplus(&dist, instance)?;
    let g = if instance.agent_count() == 2 && instance.item_count() == 1 {
        let v = instance.valuations();
        Some(benchmark_g(v[0].grand_value(), v[1].grand_value())?)
    } else {
        None
    };
    Ok(TrialResult { surplus: report.expected_surplus, welfare: report.first_best, g })
}

/// Exact expected surplus and first-best per trial, aggregated over `trials` draws.
pub fn monte_carlo(config: &MechanismConfig, spec: &GeneratorSpec, trials: usize) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    spec.validate()?;
    let results: Vec<TrialResult> =
        with_pool(|| (0..trials as u64).into_par_iter().map(|t| run_trial(config, spec, t)).collect::<Result<_>>())?;
    let surplus: Vec<f64> = results.iter().map(|r| r.surplus).collect();
    let welfare: Vec<f64> = results.iter().map(|r| r.welfare).collect();
    let g: Option<Vec<f64>> = results.iter().map(|r| r.g).collect();
    let surplus = SampleStats::from_samples(&surplus);
    let welfare = SampleStats::from_samples(&welfare);
    let benchmark_g = g.map(|g| SampleStats::from_samples(&g));
    Ok(ExperimentReport {
        trials,
        surplus,
        welfare,
        benchmark_g,
        ratio: welfare.mean / surplus.mean,
        ratio_g: benchmark_g.map(|g| g.mean / surplus.mean),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub mean_surplus: f64,
    pub se_surplus: f64,
    pub mean_welfare: f64,
    pub se_welfare: f64,
    pub ratio: f64,
}

pub const SWEEP_HEADER: &str = "n,m,trials,mean_surplus,se_surplus,mean_welfare,se_welfare,ratio";

/// Monte-Carlo ratio `mean first-best / mean surplus` for each `n`.
///
/// `base` supplies the family, `m`, seed and value distribution; `n` is
/// replaced by each entry of `n_list`.
pub fn ratio_sweep(config: &MechanismConfig, base: &GeneratorSpec, n_list: &[usize], trials: usize) -> Result<Vec<SweepRow>> {
    n_list
        .iter()
        .map(|&n| {
            let spec = GeneratorSpec { n, ..base.clone() };
            let report = monte_carlo(config, &spec, trials)?;
            Ok(SweepRow {
                n,
                m: spec.items(),
                trials,
                mean_surplus: report.surplus.mean,
                se_surplus: report.surplus.stderr,
                mean_welfare: report.welfare.mean,
                se_welfare: report.welfare.stderr,
                ratio: report.ratio,
            })
        })
        .collect()
}

/// CSV with the fixed [`SWEEP_HEADER`] columns; floats use Rust's shortest round-trip form.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n, r.m, r.trials, r.mean_surplus, r.se_surplus, r.mean_welfare, r.se_welfare, r.ratio
        );
    }
    out
}

/// Monte-Carlo estimate of `E[1 / (1 + Bin(n - 1, 1/m))]`.
pub fn binomial_inverse_mc(n: u64, m: u64, samples: usize, seed: u64) -> Result<SampleStats> {
    if n == 0 || m == 0 || samples == 0 {
        return Err(Error::InvalidParameter("n, m and samples must be positive".into()));
    }
    let binomial = Binomial::new(n - 1, 1.0 / m as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    const CHUNK: usize = 1 << 14;
    let chunks = samples.div_ceil(CHUNK);
    let draws: Vec<f64> = with_pool(|| {
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = trial_rng(seed, c as u64);
                let len = CHUNK.min(samples - c * CHUNK);
                (0..len).map(move |_| 1.0 / (1.0 + binomial.sample(&mut rng) as f64)).collect::<Vec<_>>()
            })
            .collect()
    });
    Ok(SampleStats::from_samples(&draws))
}

/// Both sides of the shared-bound inequality on i.i.d. unit-demand draws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharedBoundReport {
    pub n: usize,
    pub m: usize,
    pub welfare: SampleStats,
    /// Sum over agents of the value of their favorite item.
    pub favorite_values: SampleStats,
    /// `(e / (e - 1)) * max(1, n / m)`.
    pub factor: f64,
}

impl SharedBoundReport {
    /// `E[SW] >= E[sum of favorites] / factor`, up to `k` combined standard errors.
    pub fn holds(&self, k: f64) -> bool {
        let se = (self.welfare.stderr.powi(2) + (self.favorite_values.stderr / self.factor).powi(2)).sqrt();
        self.welfare.mean + k * se >= self.favorite_values.mean / self.factor
    }
}

pub fn shared_bound_mc(spec: &GeneratorSpec, trials: usize) -> Result<SharedBoundReport> {
    if spec.family != Family::IidUnitDemand {
        return Err(Error::Unsupported("the shared bound is stated for i.i.d. unit-demand draws".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let rows: Vec<(f64, f64)> = with_pool(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let g = gen_instance(spec, t)?;
                let sw = welfare::first_best(&g.instance)?;
                let fav = g.instance.valuations().iter().map(|v| v.grand_value()).sum();
                Ok((sw, fav))
            })
            .collect::<Result<_>>()
    })?;
    let sw: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let fav: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let e = std::f64::consts::E;
    Ok(SharedBoundReport {
        n: spec.n,
        m: spec.items(),
        welfare: SampleStats::from_samples(&sw),
        favorite_values: SampleStats::from_samples(&fav),
        factor: e / (e - 1.0) * (spec.n as f64 / spec.items() as f64).max(1.0),
    })
}

/// How often each item is an agent's favorite over `draws` trials (identity tie-break).
pub fn favorite_counts(spec: &GeneratorSpec, draws: usize) -> Result<Vec<u64>> {
    let m = spec.items();
    let identity: Vec<usize> = (0..m).collect();
    let mut counts = vec![0u64; m];
    for t in 0..draws as u64 {
        let g = gen_instance(spec, t)?;
        for v in g.instance.valuations() {
            counts[analysis::favorite_item(v, &identity)?.0] += 1;
        }
    }
    Ok(counts)
}
