//! Consumer-surplus ("money burning") auctions.
//!
//! The crate is organised bottom-up:
//!
//! - [`valuations`]: valuation classes, instances, the copies lift and the capacity cap.
//! - [`welfare`]: exact welfare maximisation for every supported class.
//! - [`vcg`]: VCG outcomes with Clarke payments on top of the welfare solvers.
//! - [`mechanisms`]: the randomized surplus mechanisms as exact finite-support distributions.
//! - [`analysis`]: surplus accounting, truthfulness audits and inequality verifiers.
//! - [`experiments`]: instance generators and the Monte-Carlo harness.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod mechanisms;
pub mod valuations;
pub mod vcg;
pub mod welfare;

pub use error::{Error, Result};
pub use mechanisms::{
    AgentLottery, Branch, LotteryEntry, MechanismConfig, MechanismDistribution, MechanismKind,
    Prob, SubroutineKind,
};
pub use valuations::{Bundle, CopiedItem, Instance, InstanceKind, Item, PiecewiseLinearCurve, Valuation};
pub use vcg::{IntervalAllocation, Outcome, Supply};
pub use welfare::{Allocation, WelfareResult};

/// Absolute tolerance used for every floating-point comparison in the crate.
pub const TOL: f64 = 1e-9;
