//! Quantile-matching maps `φ_d` between matched cells.

use crate::cells::{CellModel, CondCdf};
use crate::error::Result;
use crate::numerics::golden_section;
use crate::points::Location;

/// Grid nodes used by the argmin search.
pub const PHI_GRID: usize = 400;

fn grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    (0..size)
        .map(|i| {
            if i + 1 == size {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (size - 1) as f64
            }
        })
        .collect()
}

/// `argmin_{y'} (F_to(y') - level)²` over `[lo, hi]` given the CDF values on
/// a grid. A flat argmin set resolves to its midpoint; a single grid
/// minimizer is refined by golden section between its neighbours.
fn solve_level(to: &CondCdf<'_>, level: f64, nodes: &[f64], values: &[f64]) -> f64 {
    let loss: Vec<f64> = values.iter().map(|v| (v - level).powi(2)).collect();
    let best = loss.iter().copied().fold(f64::INFINITY, f64::min);
    let first = loss.iter().position(|&v| v == best).unwrap();
    let last = loss.iter().rposition(|&v| v == best).unwrap();
    if last > first {
        return 0.5 * (nodes[first] + nodes[last]);
    }
    let a = nodes[first.saturating_sub(1)];
    let b = nodes[(first + 1).min(nodes.len() - 1)];
    let tol = 1e-10 * (nodes[nodes.len() - 1] - nodes[0]);
    let (y, f) = golden_section(|t| (to.cdf(t) - level).powi(2), a, b, tol, 200);
    if f <= best {
        y
    } else {
        nodes[first]
    }
}

/// `φ̂(y)` for the map from cell `from` to cell `to`, searched on `[lo, hi]`.
pub fn phi_between(from: &CondCdf<'_>, to: &CondCdf<'_>, y: f64, lo: f64, hi: f64) -> f64 {
    let nodes = grid(lo, hi, PHI_GRID);
    let values: Vec<f64> = nodes.iter().map(|&t| to.cdf(t)).collect();
    solve_level(to, from.cdf(y), &nodes, &values)
}

/// `φ̂_d(y)` carrying level `d` from `(x0, z)` to the matched `(x_m, z')`.
pub fn phi_hat<C: CellModel + ?Sized>(cells: &C, y: f64, d: u32, from: Location, to: Location) -> Result<f64> {
    let (lo, hi) = cells.y_bounds(d)?;
    let a = cells.conditional_cdf(d, from.x, from.z)?;
    let b = cells.conditional_cdf(d, to.x, to.z)?;
    Ok(phi_between(&a, &b, y, lo, hi))
}

/// `φ̂` tabulated on the search grid, linearly interpolated in between and
/// clamped outside. Running maxima keep the table weakly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    ys: Vec<f64>,
    vals: Vec<f64>,
}

impl PhiTable {
    pub fn build(from: &CondCdf<'_>, to: &CondCdf<'_>, lo: f64, hi: f64) -> Self {
        let ys = grid(lo, hi, PHI_GRID);
        let values: Vec<f64> = ys.iter().map(|&t| to.cdf(t)).collect();
        let mut vals: Vec<f64> = ys
            .iter()
            .map(|&y| solve_level(to, from.cdf(y), &ys, &values))
            .collect();
        for i in 1..vals.len() {
            if vals[i] < vals[i - 1] {
                vals[i] = vals[i - 1];
            }
        }
        PhiTable { ys, vals }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let n = self.ys.len();
        if y <= self.ys[0] {
            return self.vals[0];
        }
        if y >= self.ys[n - 1] {
            return self.vals[n - 1];
        }
        let k = self.ys.partition_point(|&v| v <= y).clamp(1, n - 1);
        let (x0, x1) = (self.ys[k - 1], self.ys[k]);
        let t = (y - x0) / (x1 - x0);
        self.vals[k - 1] + t * (self.vals[k] - self.vals[k - 1])
    }
}

/// One link of a chain for one treatment level.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiMap {
    Identity,
    /// Exact location shift `y + s`.
    Shift(f64),
    Table(PhiTable),
}

impl PhiMap {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            PhiMap::Identity => y,
            PhiMap::Shift(s) => y + s,
            PhiMap::Table(t) => t.eval(y),
        }
    }
}
