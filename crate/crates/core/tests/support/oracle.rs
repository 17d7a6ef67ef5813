//! Exactness checks with population propensities, means and CDFs.

use matchpoint::cells::OracleCells;
use matchpoint::matching::{estimate_matching_set, qx_objective, Grid, OraclePropensity};
use matchpoint::nonseparable::{fit_nonseparable_with, path_following_start, MapSource, PsiSystem, SieveConfig};
use matchpoint::points::benchmark_points;
use matchpoint::separable::fit_separable_with;
use matchpoint::{Dgp, OrderedChoiceSpec, OutcomeOracle, SmallMatrix};

/// `Q_x` at the true pair: the value at `x0 = 0` and the largest value
/// over shifted `x0`, where the index is only equal up to rounding.
pub fn qx_at_truth() -> Result<(f64, f64), String> {
    let spec = OrderedChoiceSpec::default();
    let o = OraclePropensity { dgp: &spec, z_prob: spec.z_prob };
    let q = |x0: f64| qx_objective(&o, x0, x0 - 2.0, x0 + 2.0, &SmallMatrix::identity(4)).map_err(|e| e.to_string());
    let mut worst: f64 = 0.0;
    for x0 in [-0.6, -0.3, 0.3, 0.6] {
        worst = worst.max(q(x0)?);
    }
    Ok((q(0.0)?, worst))
}

type Cell = (usize, usize);

/// Grid argmin of the population objective against the nodes nearest the
/// truth; returns `((i, j) found, (i, j) nearest)`.
pub fn grid_argmin(size: usize) -> Result<(Cell, Cell), String> {
    let spec = OrderedChoiceSpec::default();
    let o = OraclePropensity { dgp: &spec, z_prob: spec.z_prob };
    let grid = Grid::new(-2.7, 2.7, size).map_err(|e| e.to_string())?;
    let set = estimate_matching_set(&o, 0.0, grid, &SmallMatrix::identity(4), 0.0).map_err(|e| e.to_string())?;
    let nearest = |t: f64| {
        (0..grid.size)
            .min_by(|&a, &b| (grid.node(a) - t).abs().total_cmp(&(grid.node(b) - t).abs()))
            .unwrap()
    };
    Ok(((set.argmin.i, set.argmin.j), (nearest(-2.0), nearest(2.0))))
}

/// Largest `|m̂ - m*|` over several `x0` and both weightings.
pub fn separable_error() -> Result<f64, String> {
    let spec = OrderedChoiceSpec::default();
    let cells = OracleCells::new(&spec, spec.z_prob, 2000, spec.true_m_separable(0.0));
    let mut worst: f64 = 0.0;
    for x0 in [-0.6, -0.3, 0.0, 0.3, 0.6] {
        let pts = benchmark_points(x0, x0 - 2.0, x0 + 2.0);
        let truth = spec.true_m_separable(x0);
        for two_step in [false, true] {
            let fit = fit_separable_with(&cells, x0, &pts, 0.3, two_step).map_err(|e| e.to_string())?;
            for (a, b) in fit.m_hat.iter().zip(&truth) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest `|ĝ(u_j) - g*(x0, u_j)|` over interior nodes of the population
/// sieve minimizer.
pub fn sieve_error(nodes: usize) -> Result<f64, String> {
    let spec = OrderedChoiceSpec::default();
    let centre = spec.true_m_separable(0.0);
    let cells = OracleCells::new(&spec, spec.z_prob, 5000, centre.clone());
    let pts = benchmark_points(0.0, -2.0, 2.0);
    let oracle: &dyn OutcomeOracle = &spec;
    let sys = PsiSystem::build(&cells, &pts, &MapSource::Oracle(oracle), None).map_err(|e| e.to_string())?;
    let cfg = SieveConfig { nodes, two_step: false, ..SieveConfig::default() };
    let init = path_following_start(&sys, &cfg, &centre).map_err(|e| e.to_string())?;
    let fit = fit_nonseparable_with(&cells, &sys, 0.0, &cfg, &[init], 0.3, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (j, &u) in fit.u_nodes.iter().enumerate().take(nodes - 1) {
        let truth = spec.true_g_nonseparable(0.0, u).map_err(|e| e.to_string())?;
        for (a, b) in fit.g_hat[j].iter().zip(&truth) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
