//! Estimate the matching points of the benchmark design at several `x0`
//! and compare them with the truth `x0 ∓ α/β`.
//!
//! Usage: `cargo run --release --example matching [n] [seed]`

use matchpoint::matching::{two_step_matching, MatchingConfig};
use matchpoint::numerics::normal_critical;
use matchpoint::{Bandwidths, Dgp, OrderedChoiceSpec, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(3000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let spec = OrderedChoiceSpec::default();
    let sample = spec.simulate(n, &mut RngStream::new(seed))?;
    let bw = Bandwidths::from_rule(&sample, &Default::default())?;
    let z = normal_critical(0.95)?;
    println!("n = {n}, h_x = {:.4}", bw.h_x);
    println!("{:>6} {:>9} {:>9} {:>22} {:>9} {:>9}", "x0", "x_m1", "x_m2", "95% CI x_m2", "J_x", "p");
    for x0 in [-0.3, 0.0, 0.3] {
        let cfg = MatchingConfig { x0, ..MatchingConfig::default() };
        let fit = two_step_matching(&sample, bw.h_x, &cfg)?;
        let ci = fit.confidence_intervals(z);
        let (t1, t2) = spec.true_matching_points(x0)?;
        println!(
            "{x0:>6} {:>9.4} {:>9.4} {:>22} {:>9.3} {:>9.3}   truth ({:.1}, {:.1})",
            fit.xm1_hat,
            fit.xm2_hat,
            format!("[{:.3}, {:.3}]", ci[1].0, ci[1].1),
            fit.j_x.statistic,
            fit.j_x.p_value.unwrap_or(f64::NAN),
            t1.unwrap_or(f64::NAN),
            t2.unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
