//! Kernel regression primitives: the biweight kernel, its integral,
//! Nadaraya-Watson propensities and conditional means, and the smoothed
//! conditional CDF.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Biweight kernel `K(v) = 15/16 (1 - v^2)^2` on `[-1, 1]`.
#[inline]
pub fn kernel(v: f64) -> f64 {
    if v.abs() <= 1.0 {
        let t = 1.0 - v * v;
        0.9375 * t * t
    } else {
        0.0
    }
}

/// `K(0)`.
pub const KERNEL_AT_ZERO: f64 = 0.9375;

/// `L(v) = ∫_{-1}^{v} K`, a smooth CDF with `L' = K`.
#[inline]
pub fn integrated_kernel(v: f64) -> f64 {
    if v <= -1.0 {
        0.0
    } else if v >= 1.0 {
        1.0
    } else {
        let v2 = v * v;
        0.5 + 0.9375 * v * (1.0 - v2 * (2.0 / 3.0) + v2 * v2 * 0.2)
    }
}

/// `∫ K(v)^2 dv` for the biweight kernel.
pub fn kappa_constant() -> f64 {
    5.0 / 7.0
}

/// Minimum effective local count `Σ K / K(0)` for an `(x, z)` denominator.
pub const MIN_EFFECTIVE_COUNT: f64 = 10.0;

/// Bandwidths for the four smoothing stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Propensity scores and matching points.
    pub h_x: f64,
    /// Conditional means in the separable stage.
    pub h_m: f64,
    /// Conditional CDFs in the nonseparable stage (X direction).
    pub h_g: f64,
    /// CDF smoothing in the Y direction.
    pub h_0: f64,
}

/// Multipliers behind [`Bandwidths::from_rule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthRule {
    /// `h_x = c · sd(X) · n^{-1/4}`.
    pub c: f64,
    /// `h_m = ratio_m · h_x`.
    pub ratio_m: f64,
    /// `h_g = ratio_g · h_m`.
    pub ratio_g: f64,
    /// `h_0 = h_g^{power_0}`.
    pub power_0: f64,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule {
            c: 3.0,
            ratio_m: 0.8,
            ratio_g: 0.5,
            power_0: 1.5,
        }
    }
}

impl Bandwidths {
    pub fn new(h_x: f64, h_m: f64, h_g: f64, h_0: f64) -> Result<Self> {
        let b = Bandwidths { h_x, h_m, h_g, h_0 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("h_x", self.h_x),
            ("h_m", self.h_m),
            ("h_g", self.h_g),
            ("h_0", self.h_0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("bandwidth {name} must be positive, got {v}")));
            }
        }
        if !(self.h_m < self.h_x) {
            return Err(Error::invalid(format!(
                "need h_m < h_x, got h_m={} h_x={}",
                self.h_m, self.h_x
            )));
        }
        if !(self.h_0 < self.h_g) {
            return Err(Error::invalid(format!(
                "need h_0 < h_g, got h_0={} h_g={}",
                self.h_0, self.h_g
            )));
        }
        Ok(())
    }

    /// Rule-of-thumb bandwidths scaled by `sd(X) n^{-1/4}`.
    pub fn from_rule(sample: &Sample, rule: &BandwidthRule) -> Result<Self> {
        Self::from_scale(sample.sd_x(), sample.n(), rule)
    }

    pub fn from_scale(sd_x: f64, n: usize, rule: &BandwidthRule) -> Result<Self> {
        let h_x = rule.c * sd_x * (n as f64).powf(-0.25);
        let h_m = rule.ratio_m * h_x;
        let h_g = rule.ratio_g * h_m;
        let h_0 = h_g.powf(rule.power_0);
        Self::new(h_x, h_m, h_g, h_0)
    }
}

/// One observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub d: u32,
    pub x: f64,
    pub z: u32,
}

/// Observations sharing an instrument value, sorted by `(x, y, d)`.
#[derive(Debug, Clone, Default)]
struct ZSlice {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<u32>,
}

impl ZSlice {
    fn window(&self, x: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.x.partition_point(|&v| v <= x - h);
        let hi = self.x.partition_point(|&v| v < x + h);
        lo..hi.max(lo)
    }
}

/// Observed data `(Y, D, X, Z)`.
///
/// `D` takes values `1..=num_levels`, `Z` takes values `0..num_instruments`.
/// Kernel sums are always taken in `(z, x, y, d)` order, so every estimate
/// is invariant to the order of the input rows.
#[derive(Debug, Clone)]
pub struct Sample {
    y: Vec<f64>,
    d: Vec<u32>,
    x: Vec<f64>,
    z: Vec<u32>,
    num_levels: u32,
    num_instruments: u32,
    slices: Vec<ZSlice>,
    sd_x: f64,
}

impl Sample {
    pub fn new(y: Vec<f64>, d: Vec<u32>, x: Vec<f64>, z: Vec<u32>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.len() != n || z.len() != n {
            return Err(Error::Dimension(format!(
                "column lengths differ: y={}, d={}, x={}, z={}",
                n,
                d.len(),
                x.len(),
                z.len()
            )));
        }
        if n == 0 {
            return Err(Error::invalid("sample is empty"));
        }
        if let Some(i) = y.iter().chain(&x).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at position {}", i % n)));
        }
        if let Some(i) = d.iter().position(|&v| v == 0) {
            return Err(Error::invalid(format!("d must be >= 1 (row {i})")));
        }
        let num_levels = *d.iter().max().unwrap();
        let num_instruments = z.iter().max().unwrap() + 1;
        if num_instruments > 64 || num_levels > 64 {
            return Err(Error::invalid("at most 64 levels of d and z are supported"));
        }

        let mut slices = vec![ZSlice::default(); num_instruments as usize];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            z[a].cmp(&z[b])
                .then(x[a].total_cmp(&x[b]))
                .then(y[a].total_cmp(&y[b]))
                .then(d[a].cmp(&d[b]))
        });
        for &i in &order {
            let s = &mut slices[z[i] as usize];
            s.x.push(x[i]);
            s.y.push(y[i]);
            s.d.push(d[i]);
        }

        let mut sorted_x = x.clone();
        sorted_x.sort_by(f64::total_cmp);
        let mean = sorted_x.iter().sum::<f64>() / n as f64;
        let var = sorted_x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;

        Ok(Sample {
            y,
            d,
            x,
            z,
            num_levels,
            num_instruments,
            slices,
            sd_x: var.sqrt(),
        })
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        Self::new(
            obs.iter().map(|o| o.y).collect(),
            obs.iter().map(|o| o.d).collect(),
            obs.iter().map(|o| o.x).collect(),
            obs.iter().map(|o| o.z).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[u32] {
        &self.d
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[u32] {
        &self.z
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            y: self.y[i],
            d: self.d[i],
            x: self.x[i],
            z: self.z[i],
        }
    }

    /// Number of treatment levels (`D ∈ 1..=num_levels`).
    pub fn num_levels(&self) -> usize {
        self.num_levels as usize
    }

    /// Number of instrument values (`Z ∈ 0..num_instruments`).
    pub fn num_instruments(&self) -> usize {
        self.num_instruments as usize
    }

    /// Population-style standard deviation of `X`.
    pub fn sd_x(&self) -> f64 {
        self.sd_x
    }

    /// `[min, max]` of `Y` among observations with `D = d`.
    pub fn y_range(&self, d: u32) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, &di) in self.d.iter().enumerate() {
            if di == d {
                lo = lo.min(self.y[i]);
                hi = hi.max(self.y[i]);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Trimming interval `[x_(⌈0.02n⌉) + h, x_(⌊0.98n⌋) - h]`.
    pub fn trimmed_support(&self, h: f64) -> Result<(f64, f64)> {
        let n = self.n();
        let mut xs = self.x.clone();
        xs.sort_by(f64::total_cmp);
        let lo_rank = ((0.02 * n as f64).ceil() as usize).clamp(1, n);
        let hi_rank = ((0.98 * n as f64).floor() as usize).clamp(1, n);
        let low = xs[lo_rank - 1] + h;
        let high = xs[hi_rank - 1] - h;
        if !(low < high) {
            return Err(Error::EmptyTrimmedSupport { low, high });
        }
        Ok((low, high))
    }

    fn slice(&self, z: u32) -> Result<&ZSlice> {
        self.slices
            .get(z as usize)
            .ok_or_else(|| Error::invalid(format!("instrument level {z} not in sample")))
    }

    /// All kernel sums at `(x, z)` with bandwidth `h`.
    pub fn local_sums(&self, x: f64, z: u32, h: f64) -> Result<LocalSums> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
        }
        let s = self.slice(z)?;
        let mut levels = vec![LevelSums::default(); self.num_levels()];
        let mut total = 0.0;
        for i in s.window(x, h) {
            let w = kernel((s.x[i] - x) / h);
            if w == 0.0 {
                continue;
            }
            total += w;
            let c = &mut levels[(s.d[i] - 1) as usize];
            let y = s.y[i];
            c.w += w;
            c.wy += w * y;
            c.wy2 += w * y * y;
        }
        Ok(LocalSums {
            x,
            z,
            h,
            n: self.n(),
            total,
            levels,
        })
    }

    /// Kernel-weighted `Y` values of cell `(d, z)` around `x`.
    pub fn cell_distribution(&self, d: u32, x: f64, z: u32, h: f64) -> Result<CellDistribution> {
        let s = self.slice(z)?;
        let mut pts: Vec<(f64, f64)> = s
            .window(x, h)
            .filter(|&i| s.d[i] == d)
            .map(|i| (s.y[i], kernel((s.x[i] - x) / h)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if pts.is_empty() {
            return Err(Error::InsufficientLocalData {
                what: format!("cell (d={d}, x={x:.4}, z={z})"),
                mass: 0.0,
                floor: 0.0,
            });
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut cum = Vec::with_capacity(pts.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for &(_, w) in &pts {
            acc += w;
            cum.push(acc);
        }
        Ok(CellDistribution {
            y: pts.iter().map(|p| p.0).collect(),
            w: pts.iter().map(|p| p.1).collect(),
            cum,
        })
    }
}

/// Kernel sums for one treatment level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LevelSums {
    pub w: f64,
    pub wy: f64,
    pub wy2: f64,
}

/// Kernel sums at one `(x, z)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSums {
    pub x: f64,
    pub z: u32,
    pub h: f64,
    pub n: usize,
    pub total: f64,
    pub levels: Vec<LevelSums>,
}

impl LocalSums {
    fn check_denominator(&self) -> Result<()> {
        let floor = MIN_EFFECTIVE_COUNT * KERNEL_AT_ZERO;
        if self.total < floor {
            return Err(Error::InsufficientLocalData {
                what: format!("(x={:.4}, z={})", self.x, self.z),
                mass: self.total,
                floor,
            });
        }
        Ok(())
    }

    fn level(&self, d: u32) -> Result<&LevelSums> {
        if d == 0 {
            return Err(Error::invalid("treatment levels start at 1"));
        }
        self.levels
            .get((d - 1) as usize)
            .ok_or_else(|| Error::invalid(format!("treatment level {d} not in sample")))
    }

    fn check_cell(&self, d: u32) -> Result<&LevelSums> {
        self.check_denominator()?;
        let c = self.level(d)?;
        if !(c.w > 0.0) {
            return Err(Error::InsufficientLocalData {
                what: format!("cell (d={d}, x={:.4}, z={})", self.x, self.z),
                mass: c.w,
                floor: 0.0,
            });
        }
        Ok(c)
    }

    /// Propensity vector `p̂_d(x, z)`, `d = 1..=K`.
    pub fn propensities(&self) -> Result<Vec<f64>> {
        self.check_denominator()?;
        Ok(self.levels.iter().map(|c| c.w / self.total).collect())
    }

    pub fn propensity(&self, d: u32) -> Result<f64> {
        self.check_denominator()?;
        Ok(self.level(d)?.w / self.total)
    }

    /// `Ê[Y | D=d, X=x, Z=z]`.
    pub fn mean(&self, d: u32) -> Result<f64> {
        let c = self.check_cell(d)?;
        Ok(c.wy / c.w)
    }

    /// `V̂[Y | d, x, z] = NW(Y²) - NW(Y)²`, floored at `1e-10`.
    pub fn variance(&self, d: u32) -> Result<f64> {
        let c = self.check_cell(d)?;
        let m = c.wy / c.w;
        Ok((c.wy2 / c.w - m * m).max(1e-10))
    }

    /// Kernel density `f̂_XZ(x, z) = Σ K 1(Z=z) / (n h)`.
    pub fn density_xz(&self) -> f64 {
        self.total / (self.n as f64 * self.h)
    }

    /// Kernel density `f̂_DXZ(d, x, z)`.
    pub fn density_dxz(&self, d: u32) -> Result<f64> {
        Ok(self.level(d)?.w / (self.n as f64 * self.h))
    }

    /// Effective local count `Σ K / K(0)`.
    pub fn effective_count(&self) -> f64 {
        self.total / KERNEL_AT_ZERO
    }
}

/// Kernel-weighted `Y` values of one `(d, x, z)` cell, sorted by `Y`.
#[derive(Debug, Clone)]
pub struct CellDistribution {
    y: Vec<f64>,
    w: Vec<f64>,
    cum: Vec<f64>,
}

impl CellDistribution {
    pub fn total_weight(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn min_y(&self) -> f64 {
        self.y[0]
    }

    pub fn max_y(&self) -> f64 {
        *self.y.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `F̂(y) = Σ w_i L((y - Y_i)/h0) / Σ w_i`.
    pub fn cdf(&self, y: f64, h0: f64) -> f64 {
        // fully counted: Y_i <= y - h0; partially: |y - Y_i| < h0
        let full = self.y.partition_point(|&v| v <= y - h0);
        let end = self.y.partition_point(|&v| v < y + h0);
        let mut acc = self.cum[full];
        for i in full..end {
            acc += self.w[i] * integrated_kernel((y - self.y[i]) / h0);
        }
        (acc / self.total_weight()).clamp(0.0, 1.0)
    }

    /// Density as the difference quotient of `F̂` over `[y - h0, y + h0]`.
    pub fn density(&self, y: f64, h0: f64) -> f64 {
        (self.cdf(y + h0, h0) - self.cdf(y - h0, h0)) / (2.0 * h0)
    }

    /// Weighted median of the raw cell values.
    pub fn weighted_median(&self) -> f64 {
        let half = 0.5 * self.total_weight();
        let k = self.cum[1..].partition_point(|&c| c < half);
        self.y[k.min(self.y.len() - 1)]
    }
}

/// `p̂_d(x, z)` with bandwidth `h`.
pub fn nw_propensity(s: &Sample, d: u32, x: f64, z: u32, h: f64) -> Result<f64> {
    s.local_sums(x, z, h)?.propensity(d)
}

/// `Ê[Y | d, x, z]` with bandwidth `h`.
pub fn nw_cond_mean(s: &Sample, d: u32, x: f64, z: u32, h: f64) -> Result<f64> {
    s.local_sums(x, z, h)?.mean(d)
}

/// Smoothed conditional CDF `F̂(y | d, x, z)`.
pub fn smoothed_cond_cdf(
    s: &Sample,
    y: f64,
    d: u32,
    x: f64,
    z: u32,
    h_g: f64,
    h_0: f64,
) -> Result<f64> {
    Ok(s.cell_distribution(d, x, z, h_g)?.cdf(y, h_0))
}
