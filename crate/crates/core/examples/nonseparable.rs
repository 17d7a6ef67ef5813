//! Monotone sieve fit of `g(0, u)` on a large benchmark sample; prints the
//! node curve next to the truth and pointwise inference at `u = 0.5`.
//!
//! Usage: `cargo run --release --example nonseparable [n] [seed] [J]`

use matchpoint::matching::{two_step_matching, MatchingConfig};
use matchpoint::nonseparable::{fit_nonseparable, SieveConfig};
use matchpoint::points::benchmark_points;
use matchpoint::separable::fit_separable;
use matchpoint::{Bandwidths, Dgp, OrderedChoiceSpec, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let nodes: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let spec = OrderedChoiceSpec::default();
    let sample = spec.simulate(n, &mut RngStream::new(seed))?;
    let bw = Bandwidths::from_rule(&sample, &Default::default())?;
    let m = two_step_matching(&sample, bw.h_x, &MatchingConfig::default())?;
    let xm = (m.xm1_hat, m.xm2_hat);
    let sep = fit_separable(&sample, 0.0, &benchmark_points(0.0, xm.0, xm.1), &bw, true)?;
    let cfg = SieveConfig { nodes, ..SieveConfig::default() };
    let u0 = cfg.node_index(0.5).map(|_| 0.5);
    let fit = fit_nonseparable(&sample, 0.0, xm, &bw, &cfg, Some(&sep.m_hat), u0)?;

    println!("J = {nodes}, objective {:.3e}, start {}, sweeps {}", fit.objective, fit.start, fit.sweeps);
    println!("{:>6} {:>22} {:>22}", "u", "g_hat", "truth");
    for (u, g) in fit.u_nodes.iter().zip(&fit.g_hat) {
        let t = spec.true_g_nonseparable(0.0, *u).map(|t| format!("{:.2?}", t)).unwrap_or("-".into());
        println!("{u:>6.3} {:>22} {t:>22}", format!("{g:.2?}"));
    }
    if let Some(inf) = &fit.inference {
        println!("g(0.5) = {:.3?}, se {:.3?}", inf.g_hat, inf.se);
        println!("J_NSP = {:.3} (p = {:.3})", inf.j_nsp.statistic, inf.j_nsp.p_value.unwrap_or(f64::NAN));
    }
    let (a, b) = (fit.at(0.2), fit.at(0.8));
    let spread: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
    println!("spread g(0.8) - g(0.2) = {spread:.3?}");
    Ok(())
}
