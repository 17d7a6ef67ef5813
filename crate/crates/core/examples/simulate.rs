//! Draw a sample from the benchmark ordered-choice design and write it as CSV.
//!
//! Usage: `cargo run --example simulate [n] [seed] [out.csv]`

use matchpoint::io::{save_csv, write_csv};
use matchpoint::{Dgp, OrderedChoiceSpec, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let spec = OrderedChoiceSpec::default();
    let sample = spec.simulate(n, &mut RngStream::new(seed))?;

    let mut counts = vec![0usize; sample.num_levels()];
    for &d in sample.d() {
        counts[d as usize - 1] += 1;
    }
    eprintln!("n = {n}, seed = {seed}, level counts = {counts:?}");
    let (xm1, xm2) = spec.true_matching_points(0.0)?;
    eprintln!("matching points at x0 = 0: {xm1:?}, {xm2:?}");
    eprintln!("m*(0) = {:?}", spec.true_m_separable(0.0));

    match args.next() {
        Some(path) => save_csv(&sample, path)?,
        None => write_csv(&sample, std::io::stdout().lock())?,
    }
    Ok(())
}
