//! Estimators evaluated on population inputs: the matching objective is
//! zero at the true pair, and the separable and sieve fits return the
//! truth.
//!
//! Usage: `cargo run --example oracle_checks`

use matchpoint::cells::OracleCells;
use matchpoint::matching::{qx_objective, OraclePropensity};
use matchpoint::nonseparable::{fit_nonseparable_with, path_following_start, MapSource, PsiSystem, SieveConfig};
use matchpoint::points::benchmark_points;
use matchpoint::separable::fit_separable_with;
use matchpoint::{Dgp, OrderedChoiceSpec, SmallMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = OrderedChoiceSpec::default();
    let p = OraclePropensity { dgp: &spec, z_prob: spec.z_prob };
    let w = SmallMatrix::identity(4);
    println!("Q_x(-2, 2) = {:e}", qx_objective(&p, 0.0, -2.0, 2.0, &w)?);
    println!("Q_x(-1.9, 2) = {:e}", qx_objective(&p, 0.0, -1.9, 2.0, &w)?);

    let truth = spec.true_m_separable(0.0);
    let cells = OracleCells::new(&spec, spec.z_prob, 2000, truth.clone());
    let pts = benchmark_points(0.0, -2.0, 2.0);
    let fit = fit_separable_with(&cells, 0.0, &pts, 0.3, true)?;
    println!("m_hat = {:?}\nm*    = {truth:?}", fit.m_hat);

    let sys = PsiSystem::build(&cells, &pts, &MapSource::Oracle(&spec), None)?;
    let cfg = SieveConfig { nodes: 10, two_step: false, ..SieveConfig::default() };
    let init = path_following_start(&sys, &cfg, &truth)?;
    let fit = fit_nonseparable_with(&cells, &sys, 0.0, &cfg, &[init], 0.3, None)?;
    for (u, g) in fit.u_nodes.iter().zip(&fit.g_hat).take(cfg.nodes - 1) {
        let t = spec.true_g_nonseparable(0.0, *u)?;
        let err = g.iter().zip(&t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("u = {u:.1}: g = {g:.4?}, max error {err:.1e}");
    }
    Ok(())
}
