//! Closed-form local GMM for the separable outcome `Y = m*_D(X) + U`.
//!
//! Every conditioning point `(x, z)` reached from `x0` through a chain of
//! matching pairs contributes one linear equation
//! `Σ_d p_d(x,z) m_d(x0) = Σ_d p_d(x,z) [E(d,x,z) - Δ_d(x0,x)]`, where
//! `Δ_d` adds `E(d,to) - E(d,from)` over the links of the chain.

use crate::cells::{CellModel, EstimatedCells};
use crate::error::{Error, Result};
use crate::gmm::{efficient_covariance, linear_gmm, weak_if_singular, JTest};
use crate::kreg::{kappa_constant, Bandwidths, Sample};
use crate::numerics::SmallMatrix;
use crate::points::{ConditioningPoint, Location};
use serde::{Deserialize, Serialize};

/// `δ̂_d = Ê(d, to) - Ê(d, from)`.
pub fn delta_hat<C: CellModel + ?Sized>(cells: &C, d: u32, from: Location, to: Location) -> Result<f64> {
    if from == to {
        return Ok(0.0);
    }
    Ok(cells.cond_mean(d, to.x, to.z)? - cells.cond_mean(d, from.x, from.z)?)
}

/// `Δ̂_d(x0, x)` summed over the chain of a conditioning point.
pub fn chain_delta<C: CellModel + ?Sized>(cells: &C, d: u32, point: &ConditioningPoint) -> Result<f64> {
    point
        .chain
        .iter()
        .map(|pair| delta_hat(cells, d, pair.from, pair.to))
        .sum()
}

/// One equation written as a linear combination of cell means:
/// `Φ_k = Σ_c Σ_d a[c][d] · E(d, c)`.
#[derive(Debug, Clone)]
struct RowTerms {
    p: Vec<f64>,
    cells: Vec<(Location, Vec<f64>)>,
}

fn row_terms<C: CellModel + ?Sized>(cells: &C, point: &ConditioningPoint) -> Result<RowTerms> {
    let p = cells.propensity(point.x, point.z)?;
    let mut out: Vec<(Location, Vec<f64>)> = Vec::new();
    let mut add = |loc: Location, sign: f64| {
        let coef: Vec<f64> = p.iter().map(|pd| sign * pd).collect();
        if let Some(slot) = out.iter_mut().find(|(l, _)| *l == loc) {
            for (a, b) in slot.1.iter_mut().zip(&coef) {
                *a += b;
            }
        } else {
            out.push((loc, coef));
        }
    };
    add(Location::new(point.x, point.z), 1.0);
    for pair in &point.chain {
        add(pair.to, -1.0);
        add(pair.from, 1.0);
    }
    out.retain(|(_, c)| c.iter().any(|v| *v != 0.0));
    Ok(RowTerms { p, cells: out })
}

/// The linear system `(Π̂, Φ̂)` for a list of conditioning points.
pub fn build_system<C: CellModel + ?Sized>(cells: &C, points: &[ConditioningPoint]) -> Result<(SmallMatrix, Vec<f64>)> {
    let k = cells.num_levels();
    if points.len() < k {
        return Err(Error::invalid(format!(
            "{} equations cannot identify {k} outcome values",
            points.len()
        )));
    }
    let mut pi = SmallMatrix::zeros(points.len(), k);
    let mut phi = Vec::with_capacity(points.len());
    for (r, point) in points.iter().enumerate() {
        let terms = row_terms(cells, point)?;
        for d in 0..k {
            pi[(r, d)] = terms.p[d];
        }
        let mut v = 0.0;
        for (loc, coef) in &terms.cells {
            for (d, a) in coef.iter().enumerate() {
                if *a != 0.0 {
                    v += a * cells.cond_mean(d as u32 + 1, loc.x, loc.z)?;
                }
            }
        }
        phi.push(v);
    }
    Ok((pi, phi))
}

/// `Σ_SP`: every pair of equations covaries through the cells they share,
/// `Σ[k,l] = κ Σ_d Σ_c a_k[c][d] a_l[c][d] V(d,c) / f_DXZ(d,c)`.
pub fn sigma_sp<C: CellModel + ?Sized>(cells: &C, points: &[ConditioningPoint]) -> Result<SmallMatrix> {
    let k = cells.num_levels();
    let rows: Vec<RowTerms> = points.iter().map(|p| row_terms(cells, p)).collect::<Result<_>>()?;
    // distinct cells and their V/f per level
    let mut uniq: Vec<(Location, Vec<f64>)> = Vec::new();
    for r in &rows {
        for (loc, _) in &r.cells {
            if uniq.iter().all(|(l, _)| l != loc) {
                let mut ratio = Vec::with_capacity(k);
                for d in 1..=k as u32 {
                    let f = cells.density_dxz(d, loc.x, loc.z)?;
                    if !(f > 0.0) {
                        return Err(Error::InsufficientLocalData {
                            what: format!("density of cell (d={d}, x={:.4}, z={})", loc.x, loc.z),
                            mass: f,
                            floor: 0.0,
                        });
                    }
                    ratio.push(cells.cond_variance(d, loc.x, loc.z)? / f);
                }
                uniq.push((*loc, ratio));
            }
        }
    }
    let kappa = kappa_constant();
    let m = points.len();
    let mut s = SmallMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut v = 0.0;
            for (loc, ca) in &rows[a].cells {
                if let Some((_, cb)) = rows[b].cells.iter().find(|(l, _)| l == loc) {
                    let ratio = &uniq.iter().find(|(l, _)| l == loc).unwrap().1;
                    for d in 0..k {
                        v += ca[d] * cb[d] * ratio[d];
                    }
                }
            }
            s[(a, b)] = kappa * v;
            s[(b, a)] = kappa * v;
        }
    }
    Ok(s)
}

/// Full-rank diagnostic for `Π̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    pub full_rank: bool,
    /// Both sides of the three-level rank inequality built from the first
    /// three rows `(x0,z)`, `(x0,z')`, `(x_m,z)`; absent for other shapes.
    pub inequality_lhs: Option<f64>,
    pub inequality_rhs: Option<f64>,
    /// `σ_max / σ_min` of `Π̂`.
    pub condition_number: f64,
    /// Smallest eigenvalue of `Π̂'Π̂`.
    pub min_eigenvalue: f64,
}

pub const RANK_GAP_TOLERANCE: f64 = 1e-6;
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

pub fn rank_condition(pi: &SmallMatrix) -> RankDiagnostic {
    let (lhs, rhs) = if pi.cols() == 3 && pi.rows() >= 3 {
        let (r1, r2, r3) = (pi.row(0), pi.row(1), pi.row(2));
        (
            Some((r3[0] - r1[0]) * (r1[2] - r2[2])),
            Some((r1[0] - r2[0]) * (r3[2] - r1[2])),
        )
    } else {
        (None, None)
    };
    let eig = pi
        .transpose()
        .matmul(pi)
        .and_then(|g| g.symmetrize().symmetric_eigenvalues())
        .unwrap_or_else(|_| vec![0.0]);
    let lo = eig[0].max(0.0);
    let hi = *eig.last().unwrap();
    let condition_number = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    let gap_ok = match (lhs, rhs) {
        (Some(a), Some(b)) => (a - b).abs() >= RANK_GAP_TOLERANCE,
        _ => true,
    };
    RankDiagnostic {
        full_rank: gap_ok && condition_number <= MAX_CONDITION_NUMBER,
        inequality_lhs: lhs,
        inequality_rhs: rhs,
        condition_number,
        min_eigenvalue: lo,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableFit {
    pub x0: f64,
    pub m_hat: Vec<f64>,
    pub cov: SmallMatrix,
    pub se: Vec<f64>,
    /// Absent for just-identified systems.
    pub j_sp: Option<JTest>,
    pub points: Vec<ConditioningPoint>,
    pub pi_hat: SmallMatrix,
    pub phi_hat: Vec<f64>,
    pub sigma_hat: SmallMatrix,
    pub rank: RankDiagnostic,
    pub two_step: bool,
    pub n: usize,
    pub h_m: f64,
}

impl SeparableFit {
    pub fn confidence_intervals(&self, z: f64) -> Vec<(f64, f64)> {
        self.m_hat
            .iter()
            .zip(&self.se)
            .map(|(m, s)| (m - z * s, m + z * s))
            .collect()
    }

    pub fn residuals(&self) -> Vec<f64> {
        let fitted = self.pi_hat.mul_vec(&self.m_hat).unwrap();
        fitted.iter().zip(&self.phi_hat).map(|(a, b)| a - b).collect()
    }
}

/// Fit from any cell source. `h_m` scales the covariance by `1/(n h_m)`.
pub fn fit_separable_with<C: CellModel + ?Sized>(
    cells: &C,
    x0: f64,
    points: &[ConditioningPoint],
    h_m: f64,
    two_step: bool,
) -> Result<SeparableFit> {
    for p in points {
        if !p.chain_is_consistent(x0) {
            return Err(Error::invalid(format!("chain of point (x={}, z={}) does not start at x0", p.x, p.z)));
        }
    }
    let (pi, phi) = build_system(cells, points)?;
    let rank = rank_condition(&pi);
    if !rank.full_rank {
        return Err(Error::WeakIdentification(format!(
            "propensity matrix fails the rank check (condition number {:.3e})",
            rank.condition_number
        )));
    }
    let sigma = sigma_sp(cells, points)?;
    let sigma_inv = weak_if_singular(sigma.inverse_psd(), "moment variance")?;
    let n = cells.sample_size();
    let scale = n as f64 * h_m;
    let (m_hat, cov) = if two_step {
        let m = linear_gmm(&pi, &phi, &sigma_inv)?;
        (m, efficient_covariance(&pi, &sigma_inv, scale)?)
    } else {
        let eye = SmallMatrix::identity(points.len());
        let m = linear_gmm(&pi, &phi, &eye)?;
        // sandwich (Π'Π)^{-1} Π'ΣΠ (Π'Π)^{-1}
        let bread = weak_if_singular(pi.transpose().matmul(&pi)?.symmetrize().inverse_psd(), "moment system")?;
        let meat = pi.transpose().matmul(&sigma)?.matmul(&pi)?;
        let cov = bread.matmul(&meat)?.matmul(&bread)?.symmetrize().scale(1.0 / scale);
        (m, cov)
    };
    let se = cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let df = points.len() - cells.num_levels();
    let j_sp = (df > 0).then(|| {
        let fitted = pi.mul_vec(&m_hat).unwrap();
        let r: Vec<f64> = fitted.iter().zip(&phi).map(|(a, b)| a - b).collect();
        JTest::new(scale * sigma_inv.quad_form(&r), df as u32)
    });
    Ok(SeparableFit {
        x0,
        m_hat,
        cov,
        se,
        j_sp,
        points: points.to_vec(),
        pi_hat: pi,
        phi_hat: phi,
        sigma_hat: sigma,
        rank,
        two_step,
        n,
        h_m,
    })
}

/// Kernel fit: propensities at `h_x`, cell moments at `h_m`.
pub fn fit_separable(
    sample: &Sample,
    x0: f64,
    points: &[ConditioningPoint],
    bw: &Bandwidths,
    two_step: bool,
) -> Result<SeparableFit> {
    let cells = EstimatedCells {
        sample,
        h_p: bw.h_x,
        h: bw.h_m,
        h0: bw.h_0,
    };
    fit_separable_with(&cells, x0, points, bw.h_m, two_step)
}

/// The overidentification statistic of a fit; errors when just identified.
pub fn jtest_separable(fit: &SeparableFit) -> Result<JTest> {
    fit.j_sp
        .ok_or_else(|| Error::invalid("just-identified system has no overidentifying restriction"))
}
