//! Special functions, small dense linear algebra and seeded random streams.

pub mod matrix;
pub mod rng;
pub mod special;

pub use matrix::{solve_psd, SmallMatrix};
pub use rng::RngStream;
pub use special::{
    chi_square_critical, chi_square_sf, normal_critical, std_normal_cdf, std_normal_pdf,
    std_normal_quantile, std_normal_sf,
};

/// Golden-section minimization of a unimodal function on `[a, b]`.
///
/// Returns `(argmin, value)`. Stops when the bracket is narrower than `tol`
/// or after `max_iter` shrink steps. The endpoints are also compared, so
/// monotone functions return the correct edge.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x);
        if v < best_f {
            best_x = x;
            best_f = v;
        }
    }
    (best_x, best_f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3).powi(2) + 1e-3, -2.0, 2.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((v - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn golden_handles_monotone() {
        let (x, _) = golden_section(|x| x, 1.0, 4.0, 1e-9, 200);
        assert_eq!(x, 1.0);
        let (x, _) = golden_section(|x| -x, 1.0, 4.0, 1e-9, 200);
        assert_eq!(x, 4.0);
    }
}
