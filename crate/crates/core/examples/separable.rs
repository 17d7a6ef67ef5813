//! Separable outcome fit at `x0 = 0`, with and without matching points.
//! Without matching the three outcome values have only two equations.
//!
//! Usage: `cargo run --release --example separable [n] [seed]`

use matchpoint::matching::{two_step_matching, MatchingConfig};
use matchpoint::numerics::normal_critical;
use matchpoint::points::{benchmark_points, origin_points};
use matchpoint::separable::fit_separable;
use matchpoint::{Bandwidths, Dgp, OrderedChoiceSpec, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let spec = OrderedChoiceSpec::default();
    let sample = spec.simulate(n, &mut RngStream::new(seed))?;
    let bw = Bandwidths::from_rule(&sample, &Default::default())?;

    match fit_separable(&sample, 0.0, &origin_points(0.0), &bw, true) {
        Ok(f) => println!("without matching: {:?}", f.m_hat),
        Err(e) => println!("without matching: {e}"),
    }

    let m = two_step_matching(&sample, bw.h_x, &MatchingConfig::default())?;
    let pts = benchmark_points(0.0, m.xm1_hat, m.xm2_hat);
    let z = normal_critical(0.95)?;
    let truth = spec.true_m_separable(0.0);
    for two_step in [false, true] {
        let f = fit_separable(&sample, 0.0, &pts, &bw, two_step)?;
        println!("{} step:", if two_step { "two" } else { "one" });
        for (d, (lo, hi)) in f.confidence_intervals(z).into_iter().enumerate() {
            println!("  m_{} = {:.4}  [{lo:.4}, {hi:.4}]  truth {}", d + 1, f.m_hat[d], truth[d]);
        }
        if let Some(j) = f.j_sp {
            println!("  J_SP = {:.3} (p = {:.3})", j.statistic, j.p_value.unwrap_or(f64::NAN));
        }
        println!("  rank: condition number {:.1}", f.rank.condition_number);
    }
    Ok(())
}
