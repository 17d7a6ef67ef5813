//! Ordered-choice selection with a linear-in-X outcome.
//!
//! `D = 1` if `V < κ1 + βx + αz`, `D = 3` if `V ≥ κ2 + βx + αz`, else `D = 2`;
//! `Y = γ_D (X + 1) + U` with `(U, V)` standard bivariate normal, corr `ρ`.

use super::bvn::bvn_cdf;
use super::{Dgp, LatentDraw, OutcomeOracle};
use crate::error::{Error, Result};
use crate::kreg::Sample;
use crate::numerics::{std_normal_cdf, std_normal_pdf, std_normal_quantile, RngStream};
use crate::points::{Location, MatchingPair};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderedChoiceSpec {
    pub alpha: f64,
    pub beta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gammas: [f64; 3],
    pub rho: f64,
    pub x_low: f64,
    pub x_high: f64,
    pub z_prob: f64,
    /// Added to `κ2` when `z = 1`. Nonzero values break the single-index
    /// structure, so no exact matching point exists.
    pub kappa2_z_shift: f64,
}

impl Default for OrderedChoiceSpec {
    fn default() -> Self {
        OrderedChoiceSpec {
            alpha: 0.8,
            beta: 0.4,
            kappa1: -0.7,
            kappa2: 0.1,
            gammas: [1.5, 3.0, 3.5],
            rho: 0.5,
            x_low: -3.0,
            x_high: 3.0,
            z_prob: 0.5,
            kappa2_z_shift: 0.0,
        }
    }
}

impl OrderedChoiceSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.beta,
            self.kappa1,
            self.kappa2,
            self.rho,
            self.x_low,
            self.x_high,
            self.z_prob,
            self.kappa2_z_shift,
        ]
        .iter()
        .chain(&self.gammas)
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("ordered-choice parameters must be finite".into()));
        }
        if !(self.kappa1 < self.kappa2) || !(self.kappa1 < self.kappa2 + self.kappa2_z_shift) {
            return Err(Error::Config("need kappa1 < kappa2".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config("need |rho| < 1".into()));
        }
        if !(self.x_low < self.x_high) {
            return Err(Error::Config("need x_low < x_high".into()));
        }
        if !(self.z_prob > 0.0 && self.z_prob < 1.0) {
            return Err(Error::Config("need z_prob in (0,1)".into()));
        }
        Ok(())
    }

    fn thresholds(&self, x: f64, z: u32) -> (f64, f64) {
        let t = self.beta * x + self.alpha * z as f64;
        let shift = if z == 1 { self.kappa2_z_shift } else { 0.0 };
        (self.kappa1 + t, self.kappa2 + shift + t)
    }

    /// Interval of `V` producing level `d`.
    fn v_interval(&self, d: u32, x: f64, z: u32) -> (f64, f64) {
        let (a1, a2) = self.thresholds(x, z);
        match d {
            1 => (f64::NEG_INFINITY, a1),
            2 => (a1, a2),
            _ => (a2, f64::INFINITY),
        }
    }

    fn gamma(&self, d: u32) -> f64 {
        self.gammas[(d - 1) as usize]
    }

    /// `(x0 - α/β, x0 + α/β)`, each `None` outside `[x_low, x_high]`.
    pub fn true_matching_points(&self, x0: f64) -> Result<(Option<f64>, Option<f64>)> {
        if self.beta == 0.0 {
            return Err(Error::invalid("matching points need beta != 0"));
        }
        let shift = self.alpha / self.beta;
        let inside = |x: f64| (x >= self.x_low && x <= self.x_high).then_some(x);
        Ok((inside(x0 - shift), inside(x0 + shift)))
    }

    /// Points `x0 + c α/β`, `|c| ≤ max_depth`, inside the support, each with
    /// the pair chain that reaches it from `x0`.
    pub fn mconnected_chain(&self, x0: f64, max_depth: usize) -> Result<Vec<(f64, Vec<MatchingPair>)>> {
        if self.beta == 0.0 {
            return Err(Error::invalid("m-connected sets need beta != 0"));
        }
        let step = self.alpha / self.beta;
        let inside = |x: f64| x >= self.x_low && x <= self.x_high;
        let mut out = vec![(x0, Vec::new())];
        for dir in [-1i32, 1] {
            let mut chain = Vec::new();
            let mut x = x0;
            for _ in 0..max_depth {
                // z=0 at x links to z=1 at x - α/β; z=1 links to z=0 at x + α/β
                let (zf, zt) = if dir < 0 { (0, 1) } else { (1, 0) };
                let next = x + dir as f64 * step;
                if !inside(next) {
                    break;
                }
                chain.push(MatchingPair::new(Location::new(x, zf), Location::new(next, zt)));
                out.push((next, chain.clone()));
                x = next;
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(out)
    }
}

impl Dgp for OrderedChoiceSpec {
    fn num_levels(&self) -> usize {
        3
    }

    fn x_support(&self) -> (f64, f64) {
        (self.x_low, self.x_high)
    }

    fn simulate_with_latent(&self, n: usize, rng: &mut RngStream) -> Result<(Sample, Vec<LatentDraw>)> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let s = (1.0 - self.rho * self.rho).sqrt();
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut latent = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = rng.uniform_range(self.x_low, self.x_high);
            let zi = rng.bernoulli(self.z_prob) as u32;
            let e1 = rng.standard_normal();
            let e2 = rng.standard_normal();
            let u = e1;
            let v = self.rho * e1 + s * e2;
            let (a1, a2) = self.thresholds(xi, zi);
            let di = if v < a1 {
                1
            } else if v >= a2 {
                3
            } else {
                2
            };
            y.push(self.gamma(di) * (xi + 1.0) + u);
            d.push(di);
            x.push(xi);
            z.push(zi);
            latent.push(LatentDraw { u, v: [v, f64::NAN] });
        }
        Ok((Sample::new(y, d, x, z)?, latent))
    }

    fn true_propensity(&self, x: f64, z: u32) -> Vec<f64> {
        let (a1, a2) = self.thresholds(x, z);
        let p1 = std_normal_cdf(a1);
        let p3 = std_normal_cdf(-a2);
        vec![p1, 1.0 - p1 - p3, p3]
    }

    fn true_m_separable(&self, x0: f64) -> Vec<f64> {
        self.gammas.iter().map(|g| g * (x0 + 1.0)).collect()
    }

    fn true_g_nonseparable(&self, x0: f64, u: f64) -> Result<Vec<f64>> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("quantile level must be in (0,1), got {u}")));
        }
        let q = std_normal_quantile(u)?;
        Ok(self.gammas.iter().map(|g| g * (x0 + 1.0) + q).collect())
    }
}

impl OutcomeOracle for OrderedChoiceSpec {
    fn cond_mean(&self, d: u32, x: f64, z: u32) -> f64 {
        let (a, b) = self.v_interval(d, x, z);
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        let pdf = |t: f64| if t.is_finite() { std_normal_pdf(t) } else { 0.0 };
        self.gamma(d) * (x + 1.0) + self.rho * (pdf(a) - pdf(b)) / mass
    }

    fn cond_variance(&self, d: u32, x: f64, z: u32) -> f64 {
        // Var(U | a < V < b) for a standard bivariate normal
        let (a, b) = self.v_interval(d, x, z);
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        let pdf = |t: f64| if t.is_finite() { std_normal_pdf(t) } else { 0.0 };
        let tpdf = |t: f64| if t.is_finite() { t * std_normal_pdf(t) } else { 0.0 };
        let m_v = (pdf(a) - pdf(b)) / mass;
        let e_v2 = 1.0 + (tpdf(a) - tpdf(b)) / mass;
        let var_v = e_v2 - m_v * m_v;
        let r2 = self.rho * self.rho;
        (1.0 - r2) + r2 * var_v
    }

    fn cond_cdf(&self, y: f64, d: u32, x: f64, z: u32) -> f64 {
        let (a, b) = self.v_interval(d, x, z);
        let u = y - self.gamma(d) * (x + 1.0);
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        let upper = if b.is_finite() { bvn_cdf(u, b, self.rho) } else { std_normal_cdf(u) };
        let lower = if a.is_finite() { bvn_cdf(u, a, self.rho) } else { 0.0 };
        ((upper - lower) / mass).clamp(0.0, 1.0)
    }

    fn cond_density(&self, y: f64, d: u32, x: f64, z: u32) -> f64 {
        let (a, b) = self.v_interval(d, x, z);
        let u = y - self.gamma(d) * (x + 1.0);
        let s = (1.0 - self.rho * self.rho).sqrt();
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        let cb = if b.is_finite() { std_normal_cdf((b - self.rho * u) / s) } else { 1.0 };
        let ca = if a.is_finite() { std_normal_cdf((a - self.rho * u) / s) } else { 0.0 };
        std_normal_pdf(u) * (cb - ca) / mass
    }

    fn outcome_shift(&self, d: u32, from_x: f64, to_x: f64) -> f64 {
        self.gamma(d) * (to_x - from_x)
    }
}
