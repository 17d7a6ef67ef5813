//! Normal and chi-square distribution functions.
//!
//! The normal CDF is computed from the complementary error function
//! (`libm::erfc`, a port of the FreeBSD/musl implementation with sub-ulp
//! accuracy in double precision). Using `erfc` on the tail side keeps
//! the relative accuracy of small tail probabilities.

use crate::error::{Error, Result};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail, `1 - Φ(x)`, without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation followed by one Halley step against
/// [`std_normal_cdf`], which brings the result to full double precision.
/// `p` must lie in the open interval `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "normal quantile needs p in (0,1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement; work with the smaller tail to avoid cancellation.
    let e = if x <= 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_sf(x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Two-sided standard normal critical value for confidence level `level`
/// (e.g. 0.95 gives 1.959964...).
pub fn normal_critical(level: f64) -> Result<f64> {
    std_normal_quantile(0.5 + 0.5 * level)
}

/// Chi-square survival function `P(χ²_k > x)` for `k ∈ {1, 2}`.
///
/// `k = 1`: `2(1 - Φ(√x)) = erfc(√(x/2))`; `k = 2`: `exp(-x/2)`.
pub fn chi_square_sf(x: f64, k: u32) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("chi-square argument must be >= 0, got {x}")));
    }
    match k {
        1 => Ok(libm::erfc((0.5 * x).sqrt())),
        2 => Ok((-0.5 * x).exp()),
        _ => Err(Error::invalid(format!(
            "chi-square degrees of freedom must be 1 or 2, got {k}"
        ))),
    }
}

/// Upper `alpha` critical value of `χ²_k`, `k ∈ {1, 2}`.
pub fn chi_square_critical(alpha: f64, k: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0,1), got {alpha}")));
    }
    match k {
        1 => {
            let z = std_normal_quantile(1.0 - 0.5 * alpha)?;
            Ok(z * z)
        }
        2 => Ok(-2.0 * alpha.ln()),
        _ => Err(Error::invalid(format!(
            "chi-square degrees of freedom must be 1 or 2, got {k}"
        ))),
    }
}
