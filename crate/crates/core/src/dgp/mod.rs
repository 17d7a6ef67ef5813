//! Simulators for triangular models and their population oracles.

pub mod bvn;
mod ordered;
mod two_binary;

pub use ordered::OrderedChoiceSpec;
pub use two_binary::{AffineIndex, TwoBinarySpec};

use crate::error::Result;
use crate::kreg::Sample;
use crate::numerics::RngStream;
use serde::{Deserialize, Serialize};

/// Latent disturbances behind one simulated observation. Never part of a
/// [`Sample`]; only [`Dgp::simulate_with_latent`] returns them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub u: f64,
    /// Selection disturbances; the second entry is NaN for single-index models.
    pub v: [f64; 2],
}

/// A selection + outcome model that can be simulated.
pub trait Dgp: Send + Sync {
    fn num_levels(&self) -> usize;

    fn x_support(&self) -> (f64, f64);

    fn simulate_with_latent(&self, n: usize, rng: &mut RngStream) -> Result<(Sample, Vec<LatentDraw>)>;

    fn simulate(&self, n: usize, rng: &mut RngStream) -> Result<Sample> {
        Ok(self.simulate_with_latent(n, rng)?.0)
    }

    /// Population propensity vector `p(x, z)`.
    fn true_propensity(&self, x: f64, z: u32) -> Vec<f64>;

    /// `m*(x0)` for the separable outcome `m*_d(x) = E[Y_d | X = x]`.
    fn true_m_separable(&self, x0: f64) -> Vec<f64>;

    /// `g*(x0, u)` under the uniform normalization of the disturbance.
    fn true_g_nonseparable(&self, x0: f64, u: f64) -> Result<Vec<f64>>;
}

/// Conditional outcome distribution given `(D, X, Z)`.
pub trait OutcomeOracle: Dgp {
    fn cond_mean(&self, d: u32, x: f64, z: u32) -> f64;
    fn cond_variance(&self, d: u32, x: f64, z: u32) -> f64;
    fn cond_cdf(&self, y: f64, d: u32, x: f64, z: u32) -> f64;
    fn cond_density(&self, y: f64, d: u32, x: f64, z: u32) -> f64;
    /// `g*_d(to_x, u) - g*_d(from_x, u)`, constant in `u` here.
    fn outcome_shift(&self, d: u32, from_x: f64, to_x: f64) -> f64;
}

/// Serializable choice of model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    OrderedChoice(OrderedChoiceSpec),
    TwoBinary(TwoBinarySpec),
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec::OrderedChoice(OrderedChoiceSpec::default())
    }
}

impl DgpSpec {
    pub fn as_dgp(&self) -> &dyn Dgp {
        match self {
            DgpSpec::OrderedChoice(s) => s,
            DgpSpec::TwoBinary(s) => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::OrderedChoice(s) => s.validate(),
            DgpSpec::TwoBinary(s) => s.validate(),
        }
    }

    pub fn z_prob(&self) -> f64 {
        match self {
            DgpSpec::OrderedChoice(s) => s.z_prob,
            DgpSpec::TwoBinary(s) => s.z_prob,
        }
    }

    /// Population matching points for the pairs `(x0,0)~(x_m1,1)` and
    /// `(x0,1)~(x_m2,0)`; `None` where none exists inside the support.
    pub fn true_matching_points(&self, x0: f64) -> Result<(Option<f64>, Option<f64>)> {
        match self {
            DgpSpec::OrderedChoice(s) => {
                if s.kappa2_z_shift != 0.0 {
                    return Ok((None, None));
                }
                s.true_matching_points(x0)
            }
            DgpSpec::TwoBinary(s) => {
                let inside = |x: f64| (x >= s.x_low && x <= s.x_high).then_some(x);
                Ok((
                    s.true_matching_point(x0, 0, 1).and_then(inside),
                    s.true_matching_point(x0, 1, 0).and_then(inside),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::std_normal_cdf;

    fn spec() -> OrderedChoiceSpec {
        OrderedChoiceSpec::default()
    }

    #[test]
    fn propensity_at_origin() {
        let p = spec().true_propensity(0.0, 0);
        assert!((p[0] - std_normal_cdf(-0.7)).abs() < 1e-15);
        assert!((p[1] - (std_normal_cdf(0.1) - std_normal_cdf(-0.7))).abs() < 1e-15);
        assert!((p[2] - (1.0 - std_normal_cdf(0.1))).abs() < 1e-15);
        assert!((p[0] - 0.2420).abs() < 5e-5);
        assert!((p[1] - 0.2978).abs() < 1e-4);
        assert!((p[2] - 0.4602).abs() < 5e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn index_shift_identity() {
        let s = spec();
        for i in 0..20 {
            let x = -3.0 + 0.2 * i as f64;
            let a = s.true_propensity(x, 1);
            let b = s.true_propensity(x + s.alpha / s.beta, 0);
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matching_points() {
        let s = spec();
        assert_eq!(s.true_matching_points(0.0).unwrap(), (Some(-2.0), Some(2.0)));
        let (m1, m2) = s.true_matching_points(2.5).unwrap();
        assert_eq!(m1, Some(0.5));
        assert_eq!(m2, None);
        let flat = OrderedChoiceSpec { alpha: 0.0, ..spec() };
        assert_eq!(flat.true_matching_points(0.7).unwrap(), (Some(0.7), Some(0.7)));
        let no_beta = OrderedChoiceSpec { beta: 0.0, ..spec() };
        assert!(no_beta.true_matching_points(0.0).is_err());
        // Δp exactly zero at the truth
        let p00 = s.true_propensity(0.0, 0);
        let p01 = s.true_propensity(0.0, 1);
        let pm1 = s.true_propensity(-2.0, 1);
        let pm2 = s.true_propensity(2.0, 0);
        for k in 0..2 {
            assert!((pm1[k] - p00[k]).abs() < 1e-12);
            assert!((pm2[k] - p01[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mconnected() {
        let s = spec();
        let pts = s.mconnected_chain(0.0, 2).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        assert_eq!(xs, vec![-2.0, 0.0, 2.0]);
        let only = s.mconnected_chain(0.0, 0).unwrap();
        assert_eq!(only.len(), 1);
        assert!(only[0].1.is_empty());
        let deep = OrderedChoiceSpec { alpha: 0.2, ..spec() };
        for (x, chain) in deep.mconnected_chain(0.1, 3).unwrap() {
            let mut prev = 0.1;
            for pair in &chain {
                assert_eq!(pair.from.x, prev);
                let a = deep.true_propensity(pair.from.x, pair.from.z);
                let b = deep.true_propensity(pair.to.x, pair.to.z);
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-12);
                }
                prev = pair.to.x;
            }
            assert_eq!(prev, x);
        }
    }

    #[test]
    fn separable_and_nonseparable_truth() {
        let s = spec();
        assert_eq!(s.true_m_separable(0.0), vec![1.5, 3.0, 3.5]);
        let m = s.true_m_separable(-0.3);
        for (a, b) in m.iter().zip([1.05, 2.1, 2.45]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.true_m_separable(-1.0), vec![0.0, 0.0, 0.0]);
        assert_eq!(s.true_g_nonseparable(0.0, 0.5).unwrap(), s.true_m_separable(0.0));
        let hi = s.true_g_nonseparable(0.0, 0.8).unwrap();
        let lo = s.true_g_nonseparable(0.0, 0.2).unwrap();
        let q = crate::numerics::std_normal_quantile(0.8).unwrap();
        for k in 0..3 {
            assert!((hi[k] - lo[k] - 2.0 * q).abs() < 1e-12);
        }
        assert!(s.true_g_nonseparable(0.0, 0.0).is_err());
        assert!(s.true_g_nonseparable(0.0, 1.0).is_err());
        let mut prev = s.true_g_nonseparable(0.0, 0.01).unwrap();
        for j in 2..100 {
            let g = s.true_g_nonseparable(0.0, j as f64 / 100.0).unwrap();
            assert!(g.iter().zip(&prev).all(|(a, b)| a > b));
            prev = g;
        }
    }

    #[test]
    fn determinism() {
        let s = spec();
        let a = s.simulate(500, &mut RngStream::new(3)).unwrap();
        let b = s.simulate(500, &mut RngStream::new(3)).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.d(), b.d());
        let c = s.simulate(500, &mut RngStream::new(4)).unwrap();
        assert_ne!(a.y(), c.y());
    }

    #[test]
    fn oracle_cdf_density_consistent() {
        let s = spec();
        for d in 1..=3 {
            let m = s.cond_mean(d, 0.3, 1);
            // moments of the density by Simpson on a wide grid
            let lo = m - 9.0;
            let hi = m + 9.0;
            let k = 4000;
            let h = (hi - lo) / k as f64;
            let mut mean = 0.0;
            let mut mass = 0.0;
            let mut second = 0.0;
            for i in 0..=k {
                let y = lo + i as f64 * h;
                let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let f = s.cond_density(y, d, 0.3, 1);
                mass += w * f;
                mean += w * y * f;
                second += w * y * y * f;
            }
            mass *= h / 3.0;
            mean *= h / 3.0;
            second *= h / 3.0;
            assert!((mass - 1.0).abs() < 1e-9);
            assert!((mean - m).abs() < 1e-9);
            assert!((second - mean * mean - s.cond_variance(d, 0.3, 1)).abs() < 1e-8);
            // CDF derivative equals density
            for &y in &[m - 1.0, m, m + 0.7] {
                let e = 1e-5;
                let fd = (s.cond_cdf(y + e, d, 0.3, 1) - s.cond_cdf(y - e, d, 0.3, 1)) / (2.0 * e);
                assert!((fd - s.cond_density(y, d, 0.3, 1)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn two_binary_matching_property() {
        let tb = TwoBinarySpec::default();
        // indices share cz/cx = 2, so x_m = x0 + 2 (z: 1 -> 0)
        let xm = tb.true_matching_point(0.0, 1, 0).unwrap();
        assert!((xm - 2.0).abs() < 1e-12);
        let (a1, a2) = tb.indices(0.0, 1);
        let (b1, b2) = tb.indices(xm, 0);
        assert!((a1 - b1).abs() < 1e-12 && (a2 - b2).abs() < 1e-12);
        let pa = tb.true_propensity(0.0, 1);
        let pb = tb.true_propensity(xm, 0);
        for k in 0..4 {
            assert!((pa[k] - pb[k]).abs() < 1e-12);
        }
        assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let skew = TwoBinarySpec {
            index2: AffineIndex { c0: 0.3, cx: -0.3, cz: 0.5 },
            ..tb
        };
        assert!(skew.true_matching_point(0.0, 1, 0).is_none());
    }

    #[test]
    fn two_binary_determinism_and_levels() {
        let tb = TwoBinarySpec::default();
        let a = tb.simulate(300, &mut RngStream::new(9)).unwrap();
        let b = tb.simulate(300, &mut RngStream::new(9)).unwrap();
        assert_eq!(a.y(), b.y());
        assert!(a.d().iter().all(|&d| (1..=4).contains(&d)));
        let bad = TwoBinarySpec {
            corr: [[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]],
            ..TwoBinarySpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
