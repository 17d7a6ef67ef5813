//! Conditioning points and the matching pairs that link them to `x0`.

use serde::{Deserialize, Serialize};

/// `(x, z)` location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub z: u32,
}

impl Location {
    pub fn new(x: f64, z: u32) -> Self {
        Location { x, z }
    }
}

/// Two locations with identical selection behavior: `p(from) = p(to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingPair {
    pub from: Location,
    pub to: Location,
}

impl MatchingPair {
    pub fn new(from: Location, to: Location) -> Self {
        MatchingPair { from, to }
    }
}

/// A moment equation location together with the chain of matching pairs
/// that carries the outcome function from `x0` to `x`.
///
/// The first pair starts at `x0`; each later pair starts at the previous
/// pair's endpoint `x`. The equation itself is evaluated at `(x, z)`, which
/// uses the instrument value not used by the last pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningPoint {
    pub x: f64,
    pub z: u32,
    #[serde(default)]
    pub chain: Vec<MatchingPair>,
}

impl ConditioningPoint {
    /// Equation at `(x0, z)` with no chain.
    pub fn at_origin(x0: f64, z: u32) -> Self {
        ConditioningPoint { x: x0, z, chain: Vec::new() }
    }

    /// Equation at `(pair.to.x, z)` reached through one pair.
    pub fn through(pair: MatchingPair, z: u32) -> Self {
        ConditioningPoint { x: pair.to.x, z, chain: vec![pair] }
    }

    /// Chain is well formed: starts at `x0`, links are contiguous and end at `x`.
    pub fn chain_is_consistent(&self, x0: f64) -> bool {
        if self.chain.is_empty() {
            return self.x == x0;
        }
        if self.chain[0].from.x != x0 {
            return false;
        }
        for w in self.chain.windows(2) {
            if w[0].to.x != w[1].from.x {
                return false;
            }
        }
        self.chain.last().unwrap().to.x == self.x
    }
}

/// The benchmark four equations for a two-valued instrument:
/// `(x0,0)`, `(x0,1)`, `(x_m1,0)` via `(x0,0)~(x_m1,1)`, and
/// `(x_m2,1)` via `(x0,1)~(x_m2,0)`.
pub fn benchmark_points(x0: f64, xm1: f64, xm2: f64) -> Vec<ConditioningPoint> {
    vec![
        ConditioningPoint::at_origin(x0, 0),
        ConditioningPoint::at_origin(x0, 1),
        ConditioningPoint::through(
            MatchingPair::new(Location::new(x0, 0), Location::new(xm1, 1)),
            0,
        ),
        ConditioningPoint::through(
            MatchingPair::new(Location::new(x0, 1), Location::new(xm2, 0)),
            1,
        ),
    ]
}

/// Only the two equations at `x0`.
pub fn origin_points(x0: f64) -> Vec<ConditioningPoint> {
    vec![
        ConditioningPoint::at_origin(x0, 0),
        ConditioningPoint::at_origin(x0, 1),
    ]
}
