//! Linear GMM pieces shared by the estimators.

use crate::error::{Error, Result};
use crate::numerics::{chi_square_sf, SmallMatrix};
use serde::{Deserialize, Serialize};

/// Overidentification test result. `p_value` is `None` when the degrees of
/// freedom are zero (just identified) or outside the supported `{1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JTest {
    pub statistic: f64,
    pub df: u32,
    pub p_value: Option<f64>,
}

impl JTest {
    pub fn new(statistic: f64, df: u32) -> Self {
        let statistic = statistic.max(0.0);
        let p_value = match df {
            1 | 2 => chi_square_sf(statistic, df).ok(),
            _ => None,
        };
        JTest { statistic, df, p_value }
    }

    /// Rejects at level `alpha`; `None` when no p-value exists.
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.p_value.map(|p| p < alpha)
    }
}

/// Map a singular solve to a weak-identification error.
pub(crate) fn weak_if_singular<T>(r: Result<T>, what: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::SingularMatrix { pivot, largest } => Error::WeakIdentification(format!(
            "{what}: smallest pivot {pivot:e} vs largest {largest:e}"
        )),
        other => other,
    })
}

/// `(Π'WΠ)^{-1} Π'WΦ`.
pub fn linear_gmm(pi: &SmallMatrix, phi: &[f64], w: &SmallMatrix) -> Result<Vec<f64>> {
    if pi.rows() != phi.len() || w.rows() != pi.rows() || !w.is_square() {
        return Err(Error::Dimension("GMM system shapes do not conform".into()));
    }
    let pt_w = pi.transpose().matmul(w)?;
    let a = pt_w.matmul(pi)?.symmetrize();
    let b = SmallMatrix::column(&pt_w.mul_vec(phi)?)?;
    let x = weak_if_singular(crate::numerics::solve_psd(&a, &b), "moment system")?;
    Ok(x.col(0))
}

/// `(G' S^{-1} G)^{-1} / scale`, the efficient GMM covariance.
pub fn efficient_covariance(g: &SmallMatrix, sigma_inv: &SmallMatrix, scale: f64) -> Result<SmallMatrix> {
    let a = g.transpose().matmul(sigma_inv)?.matmul(g)?.symmetrize();
    let inv = weak_if_singular(a.inverse_psd(), "covariance")?;
    Ok(inv.scale(1.0 / scale))
}
