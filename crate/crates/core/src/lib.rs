//! Selective call-out optimization for ad exchanges.
//!
//! Learn rate prices from sampled impressions, then decide per impression
//! which ad networks to solicit and how to auction the slots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bidmodel;
pub mod constraints;
pub mod duals;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod policies;

pub use bidmodel::{BidDistribution, DistKind, Impression, ImpressionKey, ImpressionType, SlotProfile};
pub use constraints::{ArrivalProcess, ConstraintMode, RateLedger, TokenBucket};
pub use duals::{DualSolution, LpMode};
pub use error::{Error, Result};
pub use harness::{Model, Objective, Scenario, SimOptions, SimReport};
pub use mechanisms::{AuctionOutcome, Bid};
pub use policies::{CallOutDecision, Mechanism, PolicyKind, PolicyParams};
