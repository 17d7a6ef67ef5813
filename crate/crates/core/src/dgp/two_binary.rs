//! Two binary endogenous variables recoded as one four-level treatment.
//!
//! `D1 = 1(γ1(x,z) ≤ V1)`, `D2 = 1(γ2(x,z) ≤ V2)`, and
//! `D0 = 1 + 2·D1 + D2`, so `(0,0),(0,1),(1,0),(1,1)` map to `1,2,3,4`.
//! `Y = slope_{D0} (X + 1) + U` with `(U, V1, V2)` jointly normal.

use super::bvn::bvn_cdf;
use super::{Dgp, LatentDraw};
use crate::error::{Error, Result};
use crate::kreg::Sample;
use crate::numerics::{std_normal_cdf, std_normal_quantile, RngStream};
use serde::{Deserialize, Serialize};

/// `c0 + cx·x + cz·z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineIndex {
    pub c0: f64,
    pub cx: f64,
    pub cz: f64,
}

impl AffineIndex {
    pub fn eval(&self, x: f64, z: u32) -> f64 {
        self.c0 + self.cx * x + self.cz * z as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoBinarySpec {
    pub index1: AffineIndex,
    pub index2: AffineIndex,
    /// Correlation matrix of `(U, V1, V2)`.
    pub corr: [[f64; 3]; 3],
    pub slopes: [f64; 4],
    pub x_low: f64,
    pub x_high: f64,
    pub z_prob: f64,
}

impl Default for TwoBinarySpec {
    fn default() -> Self {
        TwoBinarySpec {
            index1: AffineIndex { c0: -0.2, cx: 0.4, cz: 0.8 },
            index2: AffineIndex { c0: 0.3, cx: -0.3, cz: -0.6 },
            corr: [[1.0, 0.4, 0.3], [0.4, 1.0, 0.2], [0.3, 0.2, 1.0]],
            slopes: [1.0, 2.0, 2.5, 3.0],
            x_low: -3.0,
            x_high: 3.0,
            z_prob: 0.5,
        }
    }
}

impl TwoBinarySpec {
    /// Lower Cholesky factor of `corr`.
    fn cholesky(&self) -> Result<[[f64; 3]; 3]> {
        let c = &self.corr;
        for i in 0..3 {
            if c[i][i] != 1.0 {
                return Err(Error::Config("correlation matrix needs a unit diagonal".into()));
            }
            for j in 0..3 {
                if c[i][j] != c[j][i] || !c[i][j].is_finite() {
                    return Err(Error::Config("correlation matrix must be symmetric".into()));
                }
            }
        }
        let mut l = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut d = c[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            if d < 0.0 {
                return Err(Error::Config("correlation matrix is not positive semidefinite".into()));
            }
            l[j][j] = d.sqrt();
            for i in (j + 1)..3 {
                let mut s = c[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = if l[j][j] > 0.0 { s / l[j][j] } else { 0.0 };
            }
        }
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        self.cholesky()?;
        if !(self.x_low < self.x_high) {
            return Err(Error::Config("need x_low < x_high".into()));
        }
        if !(self.z_prob > 0.0 && self.z_prob < 1.0) {
            return Err(Error::Config("need z_prob in (0,1)".into()));
        }
        Ok(())
    }

    /// Index values `(γ1, γ2)` at `(x, z)`.
    pub fn indices(&self, x: f64, z: u32) -> (f64, f64) {
        (self.index1.eval(x, z), self.index2.eval(x, z))
    }

    /// Solve `γ_k(x_m, z') = γ_k(x0, z)` for both indices; `None` when the
    /// two indices disagree on the location (no matching point).
    pub fn true_matching_point(&self, x0: f64, z: u32, z_to: u32) -> Option<f64> {
        let dz = z as f64 - z_to as f64;
        let solve = |ix: &AffineIndex| (ix.cx != 0.0).then(|| x0 + ix.cz * dz / ix.cx);
        let a = solve(&self.index1)?;
        let b = solve(&self.index2)?;
        ((a - b).abs() <= 1e-12 * (1.0 + a.abs())).then_some(a)
    }
}

impl Dgp for TwoBinarySpec {
    fn num_levels(&self) -> usize {
        4
    }

    fn x_support(&self) -> (f64, f64) {
        (self.x_low, self.x_high)
    }

    fn simulate_with_latent(&self, n: usize, rng: &mut RngStream) -> Result<(Sample, Vec<LatentDraw>)> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let l = self.cholesky()?;
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut latent = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = rng.uniform_range(self.x_low, self.x_high);
            let zi = rng.bernoulli(self.z_prob) as u32;
            let e = [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
            let u = l[0][0] * e[0];
            let v1 = l[1][0] * e[0] + l[1][1] * e[1];
            let v2 = l[2][0] * e[0] + l[2][1] * e[1] + l[2][2] * e[2];
            let (g1, g2) = self.indices(xi, zi);
            let d1 = (g1 <= v1) as u32;
            let d2 = (g2 <= v2) as u32;
            let d0 = 1 + 2 * d1 + d2;
            y.push(self.slopes[(d0 - 1) as usize] * (xi + 1.0) + u);
            d.push(d0);
            x.push(xi);
            z.push(zi);
            latent.push(LatentDraw { u, v: [v1, v2] });
        }
        Ok((Sample::new(y, d, x, z)?, latent))
    }

    fn true_propensity(&self, x: f64, z: u32) -> Vec<f64> {
        let (g1, g2) = self.indices(x, z);
        let r = self.corr[1][2];
        let p00 = bvn_cdf(g1, g2, r);
        let p0_ = std_normal_cdf(g1);
        let p_0 = std_normal_cdf(g2);
        let p01 = p0_ - p00;
        let p10 = p_0 - p00;
        let p11 = 1.0 - p00 - p01 - p10;
        vec![p00, p01, p10, p11]
    }

    fn true_m_separable(&self, x0: f64) -> Vec<f64> {
        self.slopes.iter().map(|s| s * (x0 + 1.0)).collect()
    }

    fn true_g_nonseparable(&self, x0: f64, u: f64) -> Result<Vec<f64>> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("quantile level must be in (0,1), got {u}")));
        }
        let q = std_normal_quantile(u)?;
        Ok(self.slopes.iter().map(|s| s * (x0 + 1.0) + q).collect())
    }
}
