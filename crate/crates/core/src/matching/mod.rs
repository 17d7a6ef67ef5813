//! Matching points by generalized propensity score matching.
//!
//! For `x0` and a binary instrument the two matching points solve
//! `p(x_m1, 1) = p(x0, 0)` and `p(x_m2, 0) = p(x0, 1)`. Each equation
//! matches `K - 1` free propensities with one scalar, so a three-level
//! treatment gives two overidentified problems.

mod propensity;

pub use propensity::{EstimatedPropensity, FnPropensity, OraclePropensity, PropensityModel};

use crate::error::{Error, Result};
use crate::gmm::{efficient_covariance, weak_if_singular, JTest};
use crate::kreg::{kappa_constant, Sample};
use crate::numerics::{golden_section, SmallMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlackMode {
    /// `a_n = 0`: the single grid argmin.
    #[default]
    Point,
    /// `a_n = √(log n) c_n`: every grid pair within `a_n²` of the minimum.
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub x0: f64,
    pub grid_size: usize,
    pub slack_mode: SlackMode,
    /// Multiplier on `c_n = √(log n / (n h_x)) + h_x²`.
    pub slack_multiplier: f64,
    /// The search grid spans the 2% and 98% order statistics of `X`
    /// pulled inward by this many `h_x`.
    pub trim_margin: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            x0: 0.0,
            grid_size: 500,
            slack_mode: SlackMode::Point,
            slack_multiplier: 1.0,
            trim_margin: 0.5,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 50 {
            return Err(Error::Config(format!("grid_size must be >= 50, got {}", self.grid_size)));
        }
        if !(self.slack_multiplier >= 0.0) || !self.x0.is_finite() {
            return Err(Error::Config("slack_multiplier must be >= 0 and x0 finite".into()));
        }
        if !(self.trim_margin >= 0.0) {
            return Err(Error::Config(format!("trim_margin must be >= 0, got {}", self.trim_margin)));
        }
        Ok(())
    }
}

/// Rates of the set estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackRates {
    pub c_n: f64,
    pub a_n: f64,
    pub b_n: f64,
}

impl SlackRates {
    pub fn new(n: usize, h_x: f64, multiplier: f64) -> Self {
        let ln = (n as f64).ln();
        let c_n = multiplier * ((ln / (n as f64 * h_x)).sqrt() + h_x * h_x);
        let a_n = ln.sqrt() * c_n;
        SlackRates { c_n, a_n, b_n: ln * a_n }
    }
}

/// Equally spaced search nodes on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::EmptyTrimmedSupport { low: lo, high: hi });
        }
        if size < 2 {
            return Err(Error::Config("grid needs at least two nodes".into()));
        }
        Ok(Grid { lo, hi, size })
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.size {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.size - 1) as f64
        }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.size - 1) as f64
    }
}

/// One evaluated grid pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPair {
    pub i: usize,
    pub j: usize,
    pub x1: f64,
    pub x2: f64,
    pub objective: f64,
}

/// Grid pairs within the slack of the minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEstimate {
    pub grid: Grid,
    pub slack: f64,
    pub min_objective: f64,
    /// Sorted by `(i, j)`; the first entry with the minimal objective is the
    /// point estimate.
    pub pairs: Vec<GridPair>,
    pub argmin: GridPair,
}

impl SetEstimate {
    /// Hausdorff distance from the set to a single point.
    pub fn hausdorff_to(&self, x1: f64, x2: f64) -> f64 {
        self.pairs
            .iter()
            .map(|p| ((p.x1 - x1).powi(2) + (p.x2 - x2).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// A continuous minimizer inside one cluster of the set estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedPair {
    pub x1: f64,
    pub x2: f64,
    pub objective: f64,
    pub grid_objective: f64,
    pub cluster_size: usize,
}

fn free_levels<M: PropensityModel + ?Sized>(model: &M) -> Result<usize> {
    let k = model.num_levels();
    if k < 2 {
        return Err(Error::invalid("matching needs at least two treatment levels"));
    }
    Ok(k - 1)
}

fn head(mut p: Vec<f64>, m: usize) -> Vec<f64> {
    p.truncate(m);
    p
}

/// `Δp(x1, x2)`: the first `K - 1` entries of `p(x1,1) - p(x0,0)` followed by
/// those of `p(x2,0) - p(x0,1)`.
pub fn delta_p<M: PropensityModel + ?Sized>(model: &M, x0: f64, x1: f64, x2: f64) -> Result<Vec<f64>> {
    let m = free_levels(model)?;
    let b0 = model.propensity(x0, 0)?;
    let b1 = model.propensity(x0, 1)?;
    let p1 = model.propensity(x1, 1)?;
    let p2 = model.propensity(x2, 0)?;
    let mut out = Vec::with_capacity(2 * m);
    out.extend((0..m).map(|a| p1[a] - b0[a]));
    out.extend((0..m).map(|a| p2[a] - b1[a]));
    Ok(out)
}

/// `Q(x1, x2) = Δp' W Δp`.
pub fn qx_objective<M: PropensityModel + ?Sized>(
    model: &M,
    x0: f64,
    x1: f64,
    x2: f64,
    w: &SmallMatrix,
) -> Result<f64> {
    let dp = delta_p(model, x0, x1, x2)?;
    if w.rows() != dp.len() || !w.is_square() {
        return Err(Error::Dimension(format!(
            "weight is {}x{}, moment vector has length {}",
            w.rows(),
            w.cols(),
            dp.len()
        )));
    }
    Ok(w.quad_form(&dp))
}

/// Precomputed moment blocks on the grid.
struct GridTable {
    grid: Grid,
    /// `p(x_i, 1) - p(x0, 0)`, `None` where the propensity is unavailable.
    block1: Vec<Option<Vec<f64>>>,
    /// `p(x_j, 0) - p(x0, 1)`.
    block2: Vec<Option<Vec<f64>>>,
}

impl GridTable {
    fn build<M: PropensityModel + ?Sized>(model: &M, x0: f64, grid: Grid) -> Result<Self> {
        let m = free_levels(model)?;
        let b0 = head(model.propensity(x0, 0)?, m);
        let b1 = head(model.propensity(x0, 1)?, m);
        let eval = |z: u32, base: &[f64]| -> Vec<Option<Vec<f64>>> {
            (0..grid.size)
                .map(|i| {
                    model
                        .propensity(grid.node(i), z)
                        .ok()
                        .map(|p| (0..m).map(|a| p[a] - base[a]).collect())
                })
                .collect()
        };
        let block1 = eval(1, &b0);
        let block2 = eval(0, &b1);
        Ok(GridTable { grid, block1, block2 })
    }

    /// Objective on the full product grid, row-major in `(i, j)`.
    fn objectives(&self, w: &SmallMatrix) -> Vec<f64> {
        let m = w.rows() / 2;
        let sub = |r0: usize, c0: usize| {
            let mut s = SmallMatrix::zeros(m, m);
            for a in 0..m {
                for b in 0..m {
                    s[(a, b)] = w[(r0 + a, c0 + b)];
                }
            }
            s
        };
        let w11 = sub(0, 0);
        let w22 = sub(m, m);
        let w12 = sub(0, m);
        let q1: Vec<Option<(f64, Vec<f64>)>> = self
            .block1
            .iter()
            .map(|b| {
                b.as_ref().map(|v| {
                    let cross: Vec<f64> = (0..m).map(|c| (0..m).map(|a| v[a] * w12[(a, c)]).sum()).collect();
                    (w11.quad_form(v), cross)
                })
            })
            .collect();
        let q2: Vec<Option<f64>> = self.block2.iter().map(|b| b.as_ref().map(|v| w22.quad_form(v))).collect();
        let size = self.grid.size;
        (0..size)
            .into_par_iter()
            .flat_map_iter(|i| {
                let row = &q1[i];
                let q2 = &q2;
                let block2 = &self.block2;
                (0..size).map(move |j| match (row, q2[j], &block2[j]) {
                    (Some((a, cross)), Some(c), Some(v)) => {
                        let b: f64 = cross.iter().zip(v).map(|(x, y)| x * y).sum();
                        (a + 2.0 * b + c).max(0.0)
                    }
                    _ => f64::INFINITY,
                })
            })
            .collect()
    }
}

/// Grid set estimator: every pair with `Q ≤ min Q + slack`.
pub fn estimate_matching_set<M: PropensityModel + ?Sized>(
    model: &M,
    x0: f64,
    grid: Grid,
    w: &SmallMatrix,
    slack: f64,
) -> Result<SetEstimate> {
    let m = free_levels(model)?;
    if w.rows() != 2 * m || !w.is_square() {
        return Err(Error::Dimension(format!("weight must be {}x{}", 2 * m, 2 * m)));
    }
    let table = GridTable::build(model, x0, grid)?;
    let q = table.objectives(w);
    let size = grid.size;
    // first minimal entry in row-major order = lexicographically smallest pair
    let (best, qmin) = q
        .iter()
        .enumerate()
        .fold((usize::MAX, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    if !qmin.is_finite() {
        return Err(Error::InsufficientLocalData {
            what: "every grid node of the matching search".into(),
            mass: 0.0,
            floor: 0.0,
        });
    }
    let pair = |k: usize| GridPair {
        i: k / size,
        j: k % size,
        x1: grid.node(k / size),
        x2: grid.node(k % size),
        objective: q[k],
    };
    let argmin = pair(best);
    let pairs = if slack > 0.0 {
        let cut = qmin + slack;
        (0..q.len()).filter(|&k| q[k] <= cut).map(pair).collect()
    } else {
        vec![argmin]
    };
    Ok(SetEstimate {
        grid,
        slack,
        min_objective: qmin,
        pairs,
        argmin,
    })
}

/// Connected components of the set under Chebyshev adjacency on the grid.
pub fn clusters(set: &SetEstimate) -> Vec<Vec<GridPair>> {
    use std::collections::HashMap;
    let index: HashMap<(usize, usize), usize> =
        set.pairs.iter().enumerate().map(|(k, p)| ((p.i, p.j), k)).collect();
    let mut seen = vec![false; set.pairs.len()];
    let mut out = Vec::new();
    for start in 0..set.pairs.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(k) = stack.pop() {
            let p = set.pairs[k];
            comp.push(p);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (p.i as i64 + di, p.j as i64 + dj);
                    if ni < 0 || nj < 0 {
                        continue;
                    }
                    if let Some(&nk) = index.get(&(ni as usize, nj as usize)) {
                        if !seen[nk] {
                            seen[nk] = true;
                            stack.push(nk);
                        }
                    }
                }
            }
        }
        comp.sort_by_key(|p| (p.i, p.j));
        out.push(comp);
    }
    out
}

/// Continuous re-minimization inside each cluster of the set estimate.
///
/// Each cluster is covered by a square of side `b_n` centred at its best
/// grid pair, intersected with the cluster's bounding box widened by one
/// grid step. Coordinates are then minimized alternately by golden-section
/// search until neither moves by more than `tol`.
pub fn refine_isolated<M: PropensityModel + ?Sized>(
    model: &M,
    x0: f64,
    set: &SetEstimate,
    w: &SmallMatrix,
    b_n: f64,
    tol: f64,
) -> Vec<RefinedPair> {
    let grid = set.grid;
    let step = grid.step();
    let q = |x1: f64, x2: f64| qx_objective(model, x0, x1, x2, w).unwrap_or(f64::INFINITY);
    let mut out = Vec::new();
    for comp in clusters(set) {
        let best = *comp
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective).then((a.i, a.j).cmp(&(b.i, b.j))))
            .unwrap();
        let imin = comp.iter().map(|p| p.i).min().unwrap();
        let imax = comp.iter().map(|p| p.i).max().unwrap();
        let jmin = comp.iter().map(|p| p.j).min().unwrap();
        let jmax = comp.iter().map(|p| p.j).max().unwrap();
        let half = 0.5 * b_n.max(2.0 * step);
        let lo1 = (grid.node(imin) - step).max(best.x1 - half).max(grid.lo);
        let hi1 = (grid.node(imax) + step).min(best.x1 + half).min(grid.hi);
        let lo2 = (grid.node(jmin) - step).max(best.x2 - half).max(grid.lo);
        let hi2 = (grid.node(jmax) + step).min(best.x2 + half).min(grid.hi);

        let (mut x1, mut x2, mut fbest) = (best.x1, best.x2, best.objective);
        for _ in 0..200 {
            let (c1, f1) = golden_section(|t| q(t, x2), lo1, hi1, tol, 200);
            let moved1 = if f1 < fbest {
                let d = (c1 - x1).abs();
                x1 = c1;
                fbest = f1;
                d
            } else {
                0.0
            };
            let (c2, f2) = golden_section(|t| q(x1, t), lo2, hi2, tol, 200);
            let moved2 = if f2 < fbest {
                let d = (c2 - x2).abs();
                x2 = c2;
                fbest = f2;
                d
            } else {
                0.0
            };
            if moved1 <= tol && moved2 <= tol {
                break;
            }
        }
        out.push(RefinedPair {
            x1,
            x2,
            objective: fbest,
            grid_objective: best.objective,
            cluster_size: comp.len(),
        });
    }
    out
}

/// Multinomial covariance block `(diag(p) - pp')/f` over the first `m` levels.
fn multinomial_block(p: &[f64], f: f64, m: usize) -> SmallMatrix {
    let mut s = SmallMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let v = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
            s[(a, b)] = v / f;
        }
    }
    s
}

/// `Σ_x = κ · blockdiag(Σ_x1, Σ_x2)` at the four conditioning points
/// `(x0,0)`, `(x0,1)`, `(x1,1)`, `(x2,0)`.
pub fn sigma_x<M: PropensityModel + ?Sized>(model: &M, x0: f64, x1: f64, x2: f64) -> Result<SmallMatrix> {
    let m = free_levels(model)?;
    let kappa = kappa_constant();
    let term = |x: f64, z: u32| -> Result<SmallMatrix> {
        let p = model.propensity(x, z)?;
        let f = model.density_xz(x, z)?;
        if !(f > 0.0) {
            return Err(Error::InsufficientLocalData {
                what: format!("density at (x={x:.4}, z={z})"),
                mass: f,
                floor: 0.0,
            });
        }
        Ok(multinomial_block(&p, f, m))
    };
    let s1 = term(x0, 0)?.add(&term(x1, 1)?)?;
    let s2 = term(x0, 1)?.add(&term(x2, 0)?)?;
    let mut out = SmallMatrix::zeros(2 * m, 2 * m);
    for a in 0..m {
        for b in 0..m {
            out[(a, b)] = kappa * s1[(a, b)];
            out[(m + a, m + b)] = kappa * s2[(a, b)];
        }
    }
    Ok(out)
}

/// Jacobian of `Δp` with respect to `(x1, x2)` by central differences.
pub fn delta_p_jacobian<M: PropensityModel + ?Sized>(model: &M, x1: f64, x2: f64, step: f64) -> Result<SmallMatrix> {
    let m = free_levels(model)?;
    let mut g = SmallMatrix::zeros(2 * m, 2);
    let up1 = model.propensity(x1 + step, 1)?;
    let dn1 = model.propensity(x1 - step, 1)?;
    let up2 = model.propensity(x2 + step, 0)?;
    let dn2 = model.propensity(x2 - step, 0)?;
    for a in 0..m {
        g[(a, 0)] = (up1[a] - dn1[a]) / (2.0 * step);
        g[(m + a, 1)] = (up2[a] - dn2[a]) / (2.0 * step);
    }
    Ok(g)
}

/// Two-step matching estimate with inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingFit {
    pub x0: f64,
    pub xm1_hat: f64,
    pub xm2_hat: f64,
    /// First-step estimate (identity weight).
    pub first_step: (f64, f64),
    /// Set estimate of the first step when requested.
    pub set_estimate: Option<Vec<(f64, f64)>>,
    /// Refined pairs, one per cluster of the first-step set.
    pub refined: Vec<RefinedPair>,
    pub delta_p: Vec<f64>,
    pub sigma_x_hat: SmallMatrix,
    pub cov: SmallMatrix,
    pub se: [f64; 2],
    pub j_x: JTest,
    pub j_x1: JTest,
    pub j_x2: JTest,
    pub objective: f64,
    pub rates: SlackRates,
    pub grid: Grid,
    pub n: usize,
    pub h_x: f64,
}

impl MatchingFit {
    /// Symmetric normal interval for `x_m1` and `x_m2`.
    pub fn confidence_intervals(&self, z: f64) -> [(f64, f64); 2] {
        [
            (self.xm1_hat - z * self.se[0], self.xm1_hat + z * self.se[0]),
            (self.xm2_hat - z * self.se[1], self.xm2_hat + z * self.se[1]),
        ]
    }
}

/// J statistics at `(x1, x2)` under `Σ̂_x`.
pub fn jtest_matching(delta: &[f64], sigma: &SmallMatrix, n: usize, h_x: f64) -> Result<(JTest, JTest, JTest)> {
    let m = delta.len() / 2;
    let scale = n as f64 * h_x;
    let inv = weak_if_singular(sigma.inverse_psd(), "matching variance")?;
    let full = JTest::new(scale * inv.quad_form(delta), (2 * m - 2) as u32);
    let block = |off: usize| -> Result<JTest> {
        let mut s = SmallMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                s[(a, b)] = sigma[(off + a, off + b)];
            }
        }
        let inv = weak_if_singular(s.inverse_psd(), "matching variance block")?;
        Ok(JTest::new(scale * inv.quad_form(&delta[off..off + m]), (m - 1) as u32))
    };
    Ok((full, block(0)?, block(m)?))
}

/// Two-step GMM over a generic propensity source. `n` and `h_x` scale the
/// variance and the J statistics.
pub fn two_step_matching_with<M: PropensityModel + ?Sized>(
    model: &M,
    grid: Grid,
    cfg: &MatchingConfig,
    n: usize,
    h_x: f64,
    tol: f64,
) -> Result<MatchingFit> {
    cfg.validate()?;
    let m = free_levels(model)?;
    let x0 = cfg.x0;
    if x0 < grid.lo || x0 > grid.hi {
        return Err(Error::invalid(format!(
            "x0={x0} outside the trimmed support [{:.4}, {:.4}]",
            grid.lo, grid.hi
        )));
    }
    let rates = SlackRates::new(n, h_x, cfg.slack_multiplier);
    let slack = match cfg.slack_mode {
        SlackMode::Point => 0.0,
        SlackMode::Set => rates.a_n * rates.a_n,
    };

    // step 1: identity weight
    let eye = SmallMatrix::identity(2 * m);
    let set1 = estimate_matching_set(model, x0, grid, &eye, slack)?;
    let refined = refine_isolated(model, x0, &set1, &eye, rates.b_n, tol);
    let first = refined
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .map(|r| (r.x1, r.x2))
        .unwrap_or((set1.argmin.x1, set1.argmin.x2));

    // step 2: W = Σ̂_x^{-1} at the first-step estimate
    let sigma = sigma_x(model, x0, first.0, first.1)?;
    let w = weak_if_singular(sigma.inverse_psd(), "matching weight")?;
    let set2 = estimate_matching_set(model, x0, grid, &w, 0.0)?;
    let fin = refine_isolated(model, x0, &set2, &w, rates.b_n, tol);
    let best = fin
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .copied()
        .ok_or_else(|| Error::invalid("second step produced no candidate"))?;

    let delta = delta_p(model, x0, best.x1, best.x2)?;
    let g = delta_p_jacobian(model, best.x1, best.x2, h_x / 10.0)?;
    let cov = efficient_covariance(&g, &w, n as f64 * h_x)?;
    let se = [cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt()];
    let (j_x, j_x1, j_x2) = jtest_matching(&delta, &sigma, n, h_x)?;

    Ok(MatchingFit {
        x0,
        xm1_hat: best.x1,
        xm2_hat: best.x2,
        first_step: first,
        set_estimate: (cfg.slack_mode == SlackMode::Set)
            .then(|| set1.pairs.iter().map(|p| (p.x1, p.x2)).collect()),
        refined,
        delta_p: delta,
        sigma_x_hat: sigma,
        cov,
        se,
        j_x,
        j_x1,
        j_x2,
        objective: best.objective,
        rates,
        grid,
        n,
        h_x,
    })
}

/// Search grid over the trimmed support of a sample.
pub fn sample_grid(sample: &Sample, margin: f64, grid_size: usize) -> Result<Grid> {
    let (lo, hi) = sample.trimmed_support(margin)?;
    Grid::new(lo, hi, grid_size)
}

/// Two-step matching on a sample with Nadaraya-Watson propensities.
pub fn two_step_matching(sample: &Sample, h_x: f64, cfg: &MatchingConfig) -> Result<MatchingFit> {
    let grid = sample_grid(sample, cfg.trim_margin * h_x, cfg.grid_size)?;
    let model = EstimatedPropensity::new(sample, h_x);
    two_step_matching_with(&model, grid, cfg, sample.n(), h_x, 1e-6 * sample.sd_x())
}
