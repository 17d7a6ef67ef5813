//! Cell-level quantities `(d, x, z)` from a sample or from a population
//! oracle: propensities, conditional moments, densities and CDFs.

use crate::dgp::OutcomeOracle;
use crate::error::{Error, Result};
use crate::kreg::{CellDistribution, Sample};

/// Conditional CDF of `Y` in one cell.
#[derive(Clone)]
pub enum CondCdf<'a> {
    /// Smoothed kernel CDF with smoothing step `h0`.
    Estimated { dist: CellDistribution, h0: f64 },
    Oracle {
        model: &'a dyn OutcomeOracle,
        d: u32,
        x: f64,
        z: u32,
    },
}

impl CondCdf<'_> {
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            CondCdf::Estimated { dist, h0 } => dist.cdf(y, *h0),
            CondCdf::Oracle { model, d, x, z } => model.cond_cdf(y, *d, *x, *z),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        match self {
            CondCdf::Estimated { dist, h0 } => dist.density(y, *h0),
            CondCdf::Oracle { model, d, x, z } => model.cond_density(y, *d, *x, *z),
        }
    }
}

impl std::fmt::Debug for CondCdf<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CondCdf::Estimated { dist, h0 } => write!(f, "Estimated(len={}, h0={h0})", dist.len()),
            CondCdf::Oracle { d, x, z, .. } => write!(f, "Oracle(d={d}, x={x}, z={z})"),
        }
    }
}

/// Source of every cell-level input the outcome-stage estimators need.
pub trait CellModel: Sync {
    fn num_levels(&self) -> usize;

    /// Number of observations behind the estimates (scales variances).
    fn sample_size(&self) -> usize;

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>>;

    fn cond_mean(&self, d: u32, x: f64, z: u32) -> Result<f64>;

    fn cond_variance(&self, d: u32, x: f64, z: u32) -> Result<f64>;

    /// `f_DXZ(d, x, z)`.
    fn density_dxz(&self, d: u32, x: f64, z: u32) -> Result<f64>;

    fn conditional_cdf(&self, d: u32, x: f64, z: u32) -> Result<CondCdf<'_>>;

    /// `[y̲_d, ȳ_d]`.
    fn y_bounds(&self, d: u32) -> Result<(f64, f64)>;
}

/// Kernel estimates. Propensities use `h_p`; means, variances, densities and
/// CDFs use `h`; `h0` smooths the CDF.
#[derive(Debug, Clone, Copy)]
pub struct EstimatedCells<'a> {
    pub sample: &'a Sample,
    pub h_p: f64,
    pub h: f64,
    pub h0: f64,
}

impl CellModel for EstimatedCells<'_> {
    fn num_levels(&self) -> usize {
        self.sample.num_levels()
    }

    fn sample_size(&self) -> usize {
        self.sample.n()
    }

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>> {
        self.sample.local_sums(x, z, self.h_p)?.propensities()
    }

    fn cond_mean(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        self.sample.local_sums(x, z, self.h)?.mean(d)
    }

    fn cond_variance(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        self.sample.local_sums(x, z, self.h)?.variance(d)
    }

    fn density_dxz(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        self.sample.local_sums(x, z, self.h)?.density_dxz(d)
    }

    fn conditional_cdf(&self, d: u32, x: f64, z: u32) -> Result<CondCdf<'_>> {
        let dist = self.sample.cell_distribution(d, x, z, self.h)?;
        Ok(CondCdf::Estimated { dist, h0: self.h0 })
    }

    fn y_bounds(&self, d: u32) -> Result<(f64, f64)> {
        self.sample
            .y_range(d)
            .ok_or_else(|| Error::invalid(format!("no observations with d={d}")))
    }
}

/// Population values of a simulator with `X` uniform on its support.
/// `y_bounds` are `mean ± y_halfwidth` around the cell mean at the centre
/// of the support.
pub struct OracleCells<'a> {
    pub model: &'a dyn OutcomeOracle,
    pub z_prob: f64,
    /// Nominal sample size used to scale variances.
    pub n: usize,
    pub y_halfwidth: f64,
    pub y_centre: Vec<f64>,
}

impl<'a> OracleCells<'a> {
    pub fn new(model: &'a dyn OutcomeOracle, z_prob: f64, n: usize, y_centre: Vec<f64>) -> Self {
        OracleCells {
            model,
            z_prob,
            n,
            y_halfwidth: 6.0,
            y_centre,
        }
    }

    fn density_xz(&self, z: u32) -> f64 {
        let (lo, hi) = self.model.x_support();
        let pz = if z == 1 { self.z_prob } else { 1.0 - self.z_prob };
        pz / (hi - lo)
    }
}

impl CellModel for OracleCells<'_> {
    fn num_levels(&self) -> usize {
        self.model.num_levels()
    }

    fn sample_size(&self) -> usize {
        self.n
    }

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>> {
        Ok(self.model.true_propensity(x, z))
    }

    fn cond_mean(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        Ok(self.model.cond_mean(d, x, z))
    }

    fn cond_variance(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        Ok(self.model.cond_variance(d, x, z))
    }

    fn density_dxz(&self, d: u32, x: f64, z: u32) -> Result<f64> {
        let p = self.model.true_propensity(x, z);
        Ok(p[(d - 1) as usize] * self.density_xz(z))
    }

    fn conditional_cdf(&self, d: u32, x: f64, z: u32) -> Result<CondCdf<'_>> {
        Ok(CondCdf::Oracle { model: self.model, d, x, z })
    }

    fn y_bounds(&self, d: u32) -> Result<(f64, f64)> {
        let c = self
            .y_centre
            .get((d - 1) as usize)
            .ok_or_else(|| Error::invalid(format!("treatment level {d} not in model")))?;
        Ok((c - self.y_halfwidth, c + self.y_halfwidth))
    }
}
