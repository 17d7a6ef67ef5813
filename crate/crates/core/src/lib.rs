//! Matching-point estimation for triangular models with a discrete
//! endogenous variable and a small instrument.
//!
//! The pipeline: simulate or load a [`Sample`], estimate matching points by
//! matching generalized propensity scores ([`matching`]), then fit the
//! outcome function either in closed form for separable models
//! ([`separable`]) or by a monotone sieve ([`nonseparable`]). Each stage
//! reports an overidentification test. [`montecarlo`] replicates the
//! simulation study.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cells;
pub mod cli;
pub mod dgp;
pub mod error;
pub mod gmm;
pub mod io;
pub mod kreg;
pub mod matching;
pub mod montecarlo;
pub mod nonseparable;
pub mod numerics;
pub mod points;
pub mod separable;

pub use dgp::{Dgp, DgpSpec, OrderedChoiceSpec, OutcomeOracle, TwoBinarySpec};
pub use error::{Error, Result};
pub use kreg::{Bandwidths, Sample};
pub use numerics::{RngStream, SmallMatrix};
pub use points::{ConditioningPoint, Location, MatchingPair};
