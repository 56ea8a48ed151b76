//! Double-sided market mechanisms for a mediated ad exchange, plus the
//! audit machinery that checks their economic guarantees.
//!
//! The library side implements the deterministic price-by-removal
//! mechanism and the randomized threshold-by-partition mechanism over
//! exact rational money, and the `audit` module provides brute-force
//! oracles and property checkers (budget balance, individual rationality,
//! incentive compatibility, competitive ratio). The binary wires these
//! into `generate` / `run` / `audit` / `montecarlo` subcommands.

pub mod audit;
pub mod canonical;
pub mod cli;
pub mod gen;
pub mod io;
pub mod market;
pub mod money;
pub mod prm;
pub mod scalar;
pub mod tpm;
pub mod vcg;

pub use canonical::{canonical_assignment, full_canonical, CanonicalResult};
pub use market::{
    Advertiser, AgentId, AgentKind, Assignment, MarketInstance, Mediator, Outcome, Reports,
    SigmaOrder, Slot, User,
};
pub use money::Money;
pub use scalar::{compare, ExtendedScalar};
