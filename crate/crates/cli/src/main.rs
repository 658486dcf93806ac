//! `surplus-auctions` command-line interface.
//!
//! Exit status: 0 on success, 1 on invalid input, 2 when a check or audit fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use surplus_auctions::analysis::{
    self, audit_epir, audit_tie, binomial_inverse_expectation, expected_surplus, CheckOutcome,
};
use surplus_auctions::experiments::{
    self, binomial_inverse_mc, random_instance, trial_rng, Family, GeneratorSpec, RandomClass,
};
use surplus_auctions::mechanisms::{MechanismConfig, Prob, SubroutineKind};
use surplus_auctions::vcg::{self, clarke_payment_crosscheck};
use surplus_auctions::{welfare, Instance, InstanceKind, Supply};

#[derive(Parser)]
#[command(name = "surplus-auctions", version, about = "Consumer-surplus auctions: mechanisms, audits and experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo trials (experiment) or samples (binomial check).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Welfare-maximising allocation and VCG outcome for an instance file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Copies of each indivisible item.
        #[arg(long, default_value_t = 1)]
        copies: usize,
        /// Per-agent capacity for divisible items.
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        #[arg(long)]
        allow_nonstandard: bool,
    },
    /// Exact outcome distribution of a mechanism and its surplus report.
    Mechanism {
        #[command(flatten)]
        mech: MechanismArgs,
        #[command(flatten)]
        input: InstanceArgs,
    },
    /// Truthfulness-in-expectation and ex-post IR audit.
    Audit {
        #[command(flatten)]
        mech: MechanismArgs,
        #[command(flatten)]
        input: InstanceArgs,
        /// Misreports tried per agent.
        #[arg(long, default_value_t = 20)]
        deviations: usize,
    },
    /// Inequality verifiers over random instances, one JSON line per check.
    Verify {
        #[arg(long, value_enum)]
        check: Check,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Largest agent and item counts drawn.
        #[arg(long, default_value_t = 5)]
        max_size: usize,
    },
    /// Monte-Carlo estimates and ratio sweeps over generated instances.
    Experiment {
        #[command(flatten)]
        mech: MechanismArgs,
        /// Generator spec file; overrides --family, --n and --m.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FamilyArg::ExpSingleItem)]
        family: FamilyArg,
        /// Agent counts, comma separated; one row per entry.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        m: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    SurplusLowerBound,
    CopiesPayment,
    DivisiblePayment,
    Binomial,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FamilyArg {
    ExpSingleItem,
    IidUnitDemand,
    AdditiveDivisibleLb,
    SingleItemInterestLb,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::ExpSingleItem => Family::ExpSingleItem,
            FamilyArg::IidUnitDemand => Family::IidUnitDemand,
            FamilyArg::AdditiveDivisibleLb => Family::AdditiveDivisibleLb,
            FamilyArg::SingleItemInterestLb => Family::SingleItemInterestLb,
        }
    }
}

#[derive(Args)]
struct MechanismArgs {
    /// Mechanism config JSON file.
    #[arg(long, conflicts_with = "mechanism")]
    config: Option<PathBuf>,
    /// Mechanism name, as an inline alternative to --config.
    #[arg(long)]
    mechanism: Option<String>,
}

impl MechanismArgs {
    fn load(&self) -> Result<MechanismConfig> {
        match (&self.config, &self.mechanism) {
            (Some(path), _) => Ok(MechanismConfig::from_json(&read(path)?).with_context(|| format!("config {}", path.display()))?),
            (None, Some(name)) => {
                Ok(MechanismConfig::from_json(&json!({ "mechanism": name }).to_string()).with_context(|| format!("mechanism {name:?}"))?)
            }
            (None, None) => bail!("one of --config or --mechanism is required"),
        }
    }
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with = "values")]
    instance: Option<PathBuf>,
    /// Single-item values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    #[arg(long)]
    allow_nonstandard: bool,
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance> {
        match (&self.instance, &self.values) {
            (Some(path), _) => load_instance(path, self.allow_nonstandard),
            (None, Some(values)) => Ok(Instance::single_item(values)?),
            (None, None) => bail!("one of --instance or --values is required"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_instance(path: &Path, allow_nonstandard: bool) -> Result<Instance> {
    Instance::from_json(&read(path)?, allow_nonstandard).with_context(|| format!("instance {}", path.display()))
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed,
}

struct Output {
    target: Option<PathBuf>,
    buf: String,
}

impl Output {
    fn line(&mut self, s: &str) {
        self.buf.push_str(s);
        self.buf.push('\n');
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.line(&text);
        Ok(())
    }

    fn flush(self) -> Result<()> {
        match self.target {
            Some(path) => fs::write(&path, self.buf).with_context(|| format!("writing {}", path.display())),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(self.buf.as_bytes())?;
                Ok(out.flush()?)
            }
        }
    }
}

fn json_only(format: Option<Format>, command: &str) -> Result<()> {
    if format == Some(Format::Csv) {
        bail!("{command} only emits JSON");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Status> {
    let g = &cli.global;
    let mut out = Output { target: g.out.clone(), buf: String::new() };
    let status = match &cli.command {
        Command::Solve { instance, copies, cap, allow_nonstandard } => {
            json_only(g.format, "solve")?;
            let inst = load_instance(instance, *allow_nonstandard)?;
            let supply = match inst.kind() {
                InstanceKind::Indivisible => Supply::Copies(*copies),
                InstanceKind::Divisible => Supply::Capacity(*cap),
            };
            let outcome = vcg::run_vcg(&inst, supply)?;
            out.json(&json!({
                "instance": inst.digest(),
                "first_best": welfare::first_best(&inst)?,
                "vcg": outcome,
                "clarke_crosscheck": clarke_payment_crosscheck(&inst, &outcome),
            }))?;
            Status::Ok
        }
        Command::Mechanism { mech, input } => {
            json_only(g.format, "mechanism")?;
            let config = mech.load()?;
            let inst = input.load()?;
            let dist = config.run(&inst)?;
            let report = expected_surplus(&dist, &inst)?;
            out.json(&json!({
                "instance": inst.digest(),
                "config": config,
                "distribution": dist,
                "report": report,
                "epir": audit_epir(&dist, &inst),
            }))?;
            Status::Ok
        }
        Command::Audit { mech, input, deviations } => {
            json_only(g.format, "audit")?;
            let config = mech.load()?;
            let inst = input.load()?;
            let dist = config.run(&inst)?;
            let run = |i: &Instance| config.run(i);
            let id = serde_json::to_value(config.mechanism)?.as_str().unwrap_or("mechanism").to_string();
            let tie = audit_tie(&id, &run, &inst, *deviations, g.seed);
            let epir = audit_epir(&dist, &inst);
            let pass = tie.pass && epir;
            out.json(&json!({ "tie": tie, "epir": epir, "pass": pass }))?;
            if pass { Status::Ok } else { Status::CheckFailed }
        }
        Command::Verify { check, instances, max_size } => verify(&mut out, g, *check, *instances, *max_size)?,
        Command::Experiment { mech, spec, family, n, m } => {
            let config = mech.load()?;
            let trials = g.trials.unwrap_or(1000);
            let base = match spec {
                Some(path) => serde_json::from_str::<GeneratorSpec>(&read(path)?).with_context(|| format!("spec {}", path.display()))?,
                None => GeneratorSpec::new((*family).into(), n[0], *m, g.seed),
            };
            let n_list = if spec.is_some() { vec![base.n] } else { n.clone() };
            match g.format.unwrap_or(Format::Csv) {
                Format::Csv => {
                    let rows = experiments::ratio_sweep(&config, &base, &n_list, trials)?;
                    out.buf.push_str(&experiments::sweep_csv(&rows));
                }
                Format::Json => {
                    let mut reports = Vec::new();
                    for &n in &n_list {
                        let spec = GeneratorSpec { n, ..base.clone() };
                        reports.push(json!({ "spec": spec, "report": experiments::monte_carlo(&config, &spec, trials)? }));
                    }
                    out.json(&reports)?;
                }
            }
            Status::Ok
        }
    };
    out.flush()?;
    Ok(status)
}

fn verify(out: &mut Output, g: &Global, check: Check, instances: usize, max_size: usize) -> Result<Status> {
    if max_size == 0 {
        bail!("--max-size must be at least 1");
    }
    let csv = g.format == Some(Format::Csv);
    if csv {
        out.line("check,instance,lhs,rhs,pass");
    }
    let mut failed = 0usize;
    let mut emit = |c: CheckOutcome, out: &mut Output| {
        failed += usize::from(!c.pass);
        if csv {
            out.line(&format!("{},{},{},{},{}", c.check, c.instance, c.lhs, c.rhs, c.pass));
        } else {
            out.line(&c.to_json_line());
        }
    };
    let run_all = matches!(check, Check::All);
    for k in 0..instances as u64 {
        let mut rng = trial_rng(g.seed, k);
        let class = if k % 2 == 0 { RandomClass::UnitDemand } else { RandomClass::MultiUnit };
        let (n, m) = (rng.random_range(1..=max_size), rng.random_range(1..=max_size));
        if run_all || matches!(check, Check::SurplusLowerBound) {
            let inst = random_instance(class, n, m, &mut rng)?;
            let r = rng.random_range(0..=3);
            let (q, kind) = match class {
                RandomClass::UnitDemand => (Prob::from_integer(1), SubroutineKind::UnitDemand),
                _ => (Prob::new(1, 2), SubroutineKind::MultiUnit),
            };
            emit(analysis::verify_surplus_lower_bound(&inst, r, q, kind)?, out);
        }
        if run_all || matches!(check, Check::CopiesPayment) {
            let inst = random_instance(class, n, m, &mut rng)?;
            emit(analysis::verify_copies_payment_claim(&inst, rng.random_range(0..=2))?, out);
        }
        if run_all || matches!(check, Check::DivisiblePayment) {
            let inst = random_instance(RandomClass::Divisible, 3, m.min(3), &mut rng)?;
            let q = if k % 2 == 0 { 0.25 } else { 0.5 };
            emit(analysis::verify_divisible_payment_claim(&inst, q)?, out);
        }
    }
    if run_all || matches!(check, Check::Binomial) {
        let samples = g.trials.unwrap_or(100_000);
        for n in 1..=8u64 {
            for m in 1..=8u64 {
                let closed = binomial_inverse_expectation(n, m)?;
                let stats = binomial_inverse_mc(n, m, samples, g.seed.wrapping_add(8 * n + m))?;
                let pass = stats.within(closed, 3.0);
                let c = CheckOutcome { check: "binomial".into(), instance: format!("n={n},m={m}"), lhs: stats.mean, rhs: closed, pass };
                failed += usize::from(!pass);
                if csv {
                    out.line(&format!("{},{},{},{},{}", c.check, c.instance, c.lhs, c.rhs, c.pass));
                } else {
                    out.line(&c.to_json_line());
                }
            }
        }
    }
    Ok(if failed == 0 { Status::Ok } else { Status::CheckFailed })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
