//! Sources of generalized propensity scores.

use crate::dgp::Dgp;
use crate::error::Result;
use crate::kreg::Sample;

/// Anything that returns `p(x, z)` and the design density `f_XZ(x, z)`.
pub trait PropensityModel: Sync {
    fn num_levels(&self) -> usize;

    /// Full propensity vector over levels `1..=K`.
    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>>;

    /// Joint density `f_XZ(x, z)` used in the variance formulas.
    fn density_xz(&self, x: f64, z: u32) -> Result<f64>;
}

/// Nadaraya-Watson propensities from a sample.
#[derive(Debug, Clone, Copy)]
pub struct EstimatedPropensity<'a> {
    pub sample: &'a Sample,
    pub h: f64,
}

impl<'a> EstimatedPropensity<'a> {
    pub fn new(sample: &'a Sample, h: f64) -> Self {
        EstimatedPropensity { sample, h }
    }
}

impl PropensityModel for EstimatedPropensity<'_> {
    fn num_levels(&self) -> usize {
        self.sample.num_levels()
    }

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>> {
        self.sample.local_sums(x, z, self.h)?.propensities()
    }

    fn density_xz(&self, x: f64, z: u32) -> Result<f64> {
        Ok(self.sample.local_sums(x, z, self.h)?.density_xz())
    }
}

/// Population propensities of a simulator, with `X` uniform on its support
/// and `P(Z = 1) = z_prob`.
pub struct OraclePropensity<'a> {
    pub dgp: &'a dyn Dgp,
    pub z_prob: f64,
}

impl PropensityModel for OraclePropensity<'_> {
    fn num_levels(&self) -> usize {
        self.dgp.num_levels()
    }

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>> {
        Ok(self.dgp.true_propensity(x, z))
    }

    fn density_xz(&self, _x: f64, z: u32) -> Result<f64> {
        let (lo, hi) = self.dgp.x_support();
        let pz = if z == 1 { self.z_prob } else { 1.0 - self.z_prob };
        Ok(pz / (hi - lo))
    }
}

/// Propensities from a closure; the density is a constant.
pub struct FnPropensity<F> {
    pub levels: usize,
    pub f: F,
    pub density: f64,
}

impl<F> PropensityModel for FnPropensity<F>
where
    F: Fn(f64, u32) -> Vec<f64> + Sync,
{
    fn num_levels(&self) -> usize {
        self.levels
    }

    fn propensity(&self, x: f64, z: u32) -> Result<Vec<f64>> {
        Ok((self.f)(x, z))
    }

    fn density_xz(&self, _x: f64, _z: u32) -> Result<f64> {
        Ok(self.density)
    }
}
