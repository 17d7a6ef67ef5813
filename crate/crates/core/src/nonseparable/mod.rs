//! Monotone sieve estimator of `g*(x0, ·)` for nonseparable outcomes.
//!
//! Equation `k` at `(x_k, z_k)` reads
//! `Ψ_k(g) = Σ_d p_d(x_k,z_k) F(φ_d(g_d) | d, x_k, z_k) = u`, where `φ_d`
//! carries `g_d(x0, u)` along the chain of matching pairs. The sieve fits
//! node values `g(u_j)`, `u_j = j/J`, under monotonicity and bounds.

mod phi;
mod solver;

pub use phi::{phi_between, phi_hat, PhiMap, PhiTable, PHI_GRID};
pub use solver::{is_feasible, NodeMatrix, SolveResult};

use crate::cells::{CellModel, CondCdf, EstimatedCells};
use crate::dgp::OutcomeOracle;
use crate::error::{Error, Result};
use crate::gmm::{efficient_covariance, weak_if_singular, JTest};
use crate::kreg::{kappa_constant, Bandwidths, Sample};
use crate::numerics::{std_normal_quantile, SmallMatrix};
use crate::points::{benchmark_points, ConditioningPoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SieveConfig {
    /// Number of nodes `J`.
    pub nodes: usize,
    /// Interval `U0` on which inference is reported.
    pub u0_interval: (f64, f64),
    pub lambda: f64,
    /// Per-level `[y̲_d, ȳ_d]`; defaults to the level's sample range.
    pub y_bounds: Option<Vec<(f64, f64)>>,
    pub max_sweeps: usize,
    pub tolerance: f64,
    /// Re-solve with `Σ̂_NSP^{-1}` weights at the nodes inside `U0`.
    pub two_step: bool,
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            nodes: 15,
            u0_interval: (0.1, 0.9),
            lambda: 0.0,
            y_bounds: None,
            max_sweeps: 500,
            tolerance: 1e-10,
            two_step: true,
        }
    }
}

impl SieveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(Error::Config(format!("need at least 3 nodes, got {}", self.nodes)));
        }
        let (a, b) = self.u0_interval;
        if !(a > 0.0 && a < b && b < 1.0) {
            return Err(Error::Config(format!("U0 = [{a}, {b}] must lie strictly inside (0,1)")));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be positive".into()));
        }
        Ok(())
    }

    pub fn u_nodes(&self) -> Vec<f64> {
        (1..=self.nodes).map(|j| j as f64 / self.nodes as f64).collect()
    }

    /// Index of the node equal to `u0` (to 1e-12).
    pub fn node_index(&self, u0: f64) -> Option<usize> {
        self.u_nodes().iter().position(|u| (u - u0).abs() < 1e-12)
    }

    fn in_u0(&self, u: f64) -> bool {
        u >= self.u0_interval.0 - 1e-12 && u <= self.u0_interval.1 + 1e-12
    }
}

/// How `φ_d` is obtained for each chain link.
pub enum MapSource<'a> {
    /// `φ̂` from the smoothed CDFs, tabulated on the search grid.
    Estimated,
    /// Exact location shifts of a simulator.
    Oracle(&'a dyn OutcomeOracle),
}

/// One stacked equation.
#[derive(Debug, Clone)]
pub struct PsiRow<'a> {
    pub point: ConditioningPoint,
    pub p: Vec<f64>,
    cdfs: Vec<CondCdf<'a>>,
    /// `maps[d][link]`.
    maps: Vec<Vec<PhiMap>>,
}

impl PsiRow<'_> {
    /// `φ` composed along the chain for level index `d`.
    pub fn carry(&self, d: usize, y: f64) -> f64 {
        self.maps[d].iter().fold(y, |v, m| m.eval(v))
    }
}

/// The stacked map `g ↦ Ψ(g)`.
#[derive(Debug, Clone)]
pub struct PsiSystem<'a> {
    pub rows: Vec<PsiRow<'a>>,
    pub bounds: Vec<(f64, f64)>,
}

impl<'a> PsiSystem<'a> {
    pub fn build<C: CellModel + ?Sized>(
        cells: &'a C,
        points: &[ConditioningPoint],
        maps: &MapSource<'_>,
        bounds: Option<&[(f64, f64)]>,
    ) -> Result<Self> {
        let k = cells.num_levels();
        let bounds: Vec<(f64, f64)> = match bounds {
            Some(b) if b.len() == k => b.to_vec(),
            Some(b) => {
                return Err(Error::Dimension(format!("{} y bounds for {k} levels", b.len())));
            }
            None => (1..=k as u32).map(|d| cells.y_bounds(d)).collect::<Result<_>>()?,
        };
        for &(lo, hi) in &bounds {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty y bounds [{lo}, {hi}]")));
            }
        }
        let mut rows = Vec::with_capacity(points.len());
        for point in points {
            let p = cells.propensity(point.x, point.z)?;
            let mut cdfs = Vec::with_capacity(k);
            let mut row_maps = Vec::with_capacity(k);
            for d in 1..=k as u32 {
                cdfs.push(cells.conditional_cdf(d, point.x, point.z)?);
                let (lo, hi) = bounds[(d - 1) as usize];
                let mut links = Vec::with_capacity(point.chain.len());
                for pair in &point.chain {
                    links.push(match maps {
                        MapSource::Oracle(model) => PhiMap::Shift(model.outcome_shift(d, pair.from.x, pair.to.x)),
                        MapSource::Estimated => {
                            let a = cells.conditional_cdf(d, pair.from.x, pair.from.z)?;
                            let b = cells.conditional_cdf(d, pair.to.x, pair.to.z)?;
                            PhiMap::Table(PhiTable::build(&a, &b, lo, hi))
                        }
                    });
                }
                row_maps.push(links);
            }
            rows.push(PsiRow {
                point: point.clone(),
                p,
                cdfs,
                maps: row_maps,
            });
        }
        Ok(PsiSystem { rows, bounds })
    }

    pub fn num_levels(&self) -> usize {
        self.bounds.len()
    }

    /// `Ψ(g)`, one entry per equation.
    pub fn eval(&self, g: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                (0..g.len())
                    .map(|d| row.p[d] * row.cdfs[d].cdf(row.carry(d, g[d])))
                    .sum()
            })
            .collect()
    }

    /// Central-difference Jacobian with per-level step `range_d / 200`.
    pub fn jacobian(&self, g: &[f64]) -> SmallMatrix {
        let k = g.len();
        let mut jac = SmallMatrix::zeros(self.rows.len(), k);
        for d in 0..k {
            let h = (self.bounds[d].1 - self.bounds[d].0) / 200.0;
            let mut up = g.to_vec();
            up[d] += h;
            let mut dn = g.to_vec();
            dn[d] -= h;
            let a = self.eval(&up);
            let b = self.eval(&dn);
            for i in 0..self.rows.len() {
                jac[(i, d)] = (a[i] - b[i]) / (2.0 * h);
            }
        }
        jac
    }
}

/// `Ψ̂(g)` for a built system.
pub fn psi_hat(system: &PsiSystem<'_>, g: &[f64]) -> Vec<f64> {
    system.eval(g)
}

/// Pointwise inference at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseInference {
    pub u0: f64,
    pub g_hat: Vec<f64>,
    pub cov: SmallMatrix,
    pub se: Vec<f64>,
    pub j_nsp: JTest,
    pub sigma_hat: SmallMatrix,
    pub pi_hat: SmallMatrix,
    /// Some adjacent monotonicity constraint holds with equality at `u0`.
    pub constraint_active: bool,
}

impl PointwiseInference {
    pub fn confidence_intervals(&self, z: f64) -> Vec<(f64, f64)> {
        self.g_hat
            .iter()
            .zip(&self.se)
            .map(|(g, s)| (g - z * s, g + z * s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonseparableFit {
    pub x0: f64,
    pub u_nodes: Vec<f64>,
    /// `g_hat[j][d]`.
    pub g_hat: NodeMatrix,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Index of the winning initialization.
    pub start: usize,
    /// Objective per sweep of the final solve.
    pub history: Vec<f64>,
    pub inference: Option<PointwiseInference>,
    pub n: usize,
    pub h_g: f64,
}

impl NonseparableFit {
    /// Piecewise-linear interpolation of the node curve at `u`.
    pub fn at(&self, u: f64) -> Vec<f64> {
        let us = &self.u_nodes;
        if u <= us[0] {
            return self.g_hat[0].clone();
        }
        let last = us.len() - 1;
        if u >= us[last] {
            return self.g_hat[last].clone();
        }
        let k = us.partition_point(|&v| v <= u).clamp(1, last);
        let t = (u - us[k - 1]) / (us[k] - us[k - 1]);
        self.g_hat[k - 1]
            .iter()
            .zip(&self.g_hat[k])
            .map(|(a, b)| a + t * (b - a))
            .collect()
    }

    /// Node curve as CSV with header `u,g1,...,gK`.
    pub fn to_csv(&self) -> String {
        let k = self.g_hat.first().map_or(0, |r| r.len());
        let mut s = String::from("u");
        for d in 1..=k {
            s.push_str(&format!(",g{d}"));
        }
        s.push('\n');
        for (u, row) in self.u_nodes.iter().zip(&self.g_hat) {
            s.push_str(&u.to_string());
            for v in row {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// `Σ_NSP` at node value `g` for the benchmark four equations, following the
/// printed pattern: the own-cell term of each matching equation carries
/// `φ_dk²` like the other two cells.
pub fn sigma_nsp<C: CellModel + ?Sized>(cells: &C, system: &PsiSystem<'_>, g: &[f64]) -> Result<SmallMatrix> {
    check_benchmark(system)?;
    let k = g.len();
    let rows = &system.rows;
    let x0 = rows[0].point.x;
    let xm1 = rows[2].point.x;
    let xm2 = rows[3].point.x;
    let kappa = kappa_constant();
    let mut s = SmallMatrix::zeros(4, 4);
    for di in 0..k {
        let d = di as u32 + 1;
        let y1 = g[di];
        let y2 = rows[2].carry(di, y1);
        let y5 = rows[3].carry(di, y1);
        // (x, z, evaluation point) for z̃1..z̃6
        let cellspec = [
            (x0, 0, y1),
            (xm1, 0, y2),
            (xm1, 1, y2),
            (x0, 1, y1),
            (xm2, 1, y5),
            (xm2, 0, y5),
        ];
        let mut vf = [0.0; 6];
        let mut dens = [0.0; 6];
        let mut p = [0.0; 6];
        for (i, &(x, z, y)) in cellspec.iter().enumerate() {
            let cdf = cells.conditional_cdf(d, x, z)?;
            let f_y = cdf.cdf(y);
            let fd = cells.density_dxz(d, x, z)?;
            if !(fd > 0.0) {
                return Err(Error::InsufficientLocalData {
                    what: format!("density of cell (d={d}, x={x:.4}, z={z})"),
                    mass: fd,
                    floor: 0.0,
                });
            }
            vf[i] = f_y * (1.0 - f_y) / fd;
            dens[i] = cdf.density(y);
            p[i] = cells.propensity(x, z)?[di];
        }
        let ratio = |num: f64, den: f64| -> Result<f64> {
            if !(den > 0.0) {
                return Err(Error::WeakIdentification(format!(
                    "zero outcome density for d={d} at a matching point"
                )));
            }
            Ok(num / den)
        };
        let phi1 = ratio(dens[1], dens[2])?;
        let phi2 = ratio(dens[4], dens[5])?;
        s[(0, 0)] += p[0] * p[0] * vf[0];
        s[(1, 1)] += p[3] * p[3] * vf[3];
        s[(0, 2)] += phi1 * p[0] * p[1] * vf[0];
        s[(1, 3)] += phi2 * p[3] * p[4] * vf[3];
        s[(2, 2)] += phi1 * phi1 * p[1] * p[1] * (vf[0] + vf[1] + vf[2]);
        s[(3, 3)] += phi2 * phi2 * p[4] * p[4] * (vf[3] + vf[4] + vf[5]);
    }
    s[(2, 0)] = s[(0, 2)];
    s[(3, 1)] = s[(1, 3)];
    Ok(s.scale(kappa))
}

fn check_benchmark(system: &PsiSystem<'_>) -> Result<()> {
    let r = &system.rows;
    let ok = r.len() == 4
        && r[0].point.chain.is_empty()
        && r[0].point.z == 0
        && r[1].point.chain.is_empty()
        && r[1].point.z == 1
        && r[2].point.chain.len() == 1
        && r[2].point.z == 0
        && r[2].point.chain[0].to.z == 1
        && r[3].point.chain.len() == 1
        && r[3].point.z == 1
        && r[3].point.chain[0].to.z == 0;
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "pointwise inference needs the benchmark four equations (x0,0), (x0,1), (x_m1,0), (x_m2,1)",
        ))
    }
}

fn equally_spaced(u: &[f64], bounds: &[(f64, f64)]) -> NodeMatrix {
    u.iter()
        .map(|&t| bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * t).collect())
        .collect()
}

fn clip_monotone(mut g: NodeMatrix, bounds: &[(f64, f64)]) -> NodeMatrix {
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let mut prev = lo;
        for row in g.iter_mut() {
            let v = row[d].clamp(lo, hi).max(prev);
            row[d] = v;
            prev = v;
        }
    }
    g
}

/// `centre_d + scale_d Φ^{-1}(u_j)`, clipped into the feasible set.
pub fn normal_quantile_start(u: &[f64], centre: &[f64], scale: &[f64], bounds: &[(f64, f64)]) -> NodeMatrix {
    let g = u
        .iter()
        .map(|&t| {
            let q = if t >= 1.0 {
                f64::INFINITY
            } else {
                std_normal_quantile(t).unwrap_or(0.0)
            };
            centre.iter().zip(scale).map(|(c, s)| c + s * q).collect()
        })
        .collect();
    clip_monotone(g, bounds)
}

/// Weighted empirical quantiles of `Y` in cell `d` around `x0`, both
/// instrument values pooled.
pub fn empirical_quantile_start(
    sample: &Sample,
    x0: f64,
    h: f64,
    u: &[f64],
    bounds: &[(f64, f64)],
) -> Result<NodeMatrix> {
    let k = bounds.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for d in 1..=k as u32 {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for z in 0..sample.num_instruments() as u32 {
            for i in 0..sample.n() {
                let o = sample.observation(i);
                if o.d == d && o.z == z {
                    let w = crate::kreg::kernel((o.x - x0) / h);
                    if w > 0.0 {
                        pts.push((o.y, w));
                    }
                }
            }
        }
        if pts.is_empty() {
            return Err(Error::InsufficientLocalData {
                what: format!("level {d} near x0={x0:.4}"),
                mass: 0.0,
                floor: 0.0,
            });
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let col = u
            .iter()
            .map(|&t| {
                let target = t * total;
                let mut acc = 0.0;
                for &(y, w) in &pts {
                    acc += w;
                    if acc >= target {
                        return y;
                    }
                }
                pts.last().unwrap().0
            })
            .collect();
        cols.push(col);
    }
    let g = (0..u.len()).map(|j| cols.iter().map(|c| c[j]).collect()).collect();
    Ok(clip_monotone(g, bounds))
}

fn identity_weights(nodes: usize, rows: usize) -> Vec<SmallMatrix> {
    vec![SmallMatrix::identity(rows); nodes]
}

fn best_of<'s, 'a>(
    problem: &solver::Problem<'s, 'a>,
    inits: &[NodeMatrix],
    cfg: &SieveConfig,
) -> (usize, SolveResult) {
    let mut best: Option<(usize, SolveResult)> = None;
    for (i, init) in inits.iter().enumerate() {
        let init = clip_monotone(init.clone(), &problem.bounds);
        let r = solver::solve(problem, init, cfg.max_sweeps, cfg.tolerance);
        if best.as_ref().is_none_or(|(_, b)| r.objective < b.objective) {
            best = Some((i, r));
        }
    }
    best.unwrap()
}

/// Initial node matrix that follows the solution path outward from the
/// median node, started at `centre`.
pub fn path_following_start(system: &PsiSystem<'_>, cfg: &SieveConfig, centre: &[f64]) -> Result<NodeMatrix> {
    let k = system.num_levels();
    if centre.len() != k {
        return Err(Error::Dimension(format!("centre has {} values for {k} levels", centre.len())));
    }
    let u = cfg.u_nodes();
    let problem = solver::Problem {
        system,
        weights: identity_weights(u.len(), system.rows.len()),
        u,
        bounds: system.bounds.clone(),
        lambda: 0.0,
    };
    Ok(solver::path_start(&problem, centre))
}

/// Sieve fit from a built system. `inits` are candidate starting node
/// matrices; the best final objective wins. With `cfg.two_step`, the
/// winner is re-solved with `Σ̂_NSP(u_j)^{-1}` at the nodes inside `U0`
/// where it can be formed, keeping the identity elsewhere.
/// Inference is attached when `u0` is a node inside `U0`.
pub fn fit_nonseparable_with<C: CellModel + ?Sized>(
    cells: &C,
    system: &PsiSystem<'_>,
    x0: f64,
    cfg: &SieveConfig,
    inits: &[NodeMatrix],
    h_g: f64,
    u0: Option<f64>,
) -> Result<NonseparableFit> {
    cfg.validate()?;
    if inits.is_empty() {
        return Err(Error::invalid("at least one initialization is required"));
    }
    let u = cfg.u_nodes();
    let rows = system.rows.len();
    let k = system.num_levels();
    if rows < k {
        return Err(Error::invalid(format!("{rows} equations cannot identify {k} outcome values")));
    }
    for init in inits {
        if init.len() != u.len() || init.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("initial node matrix has the wrong shape".into()));
        }
    }
    let mut problem = solver::Problem {
        system,
        u: u.clone(),
        weights: identity_weights(u.len(), rows),
        bounds: system.bounds.clone(),
        lambda: cfg.lambda,
    };
    let (start, mut result) = best_of(&problem, inits, cfg);
    let mut sigma_at_u0: Option<SmallMatrix> = None;
    let u0_index = match u0 {
        Some(v) => Some(cfg.node_index(v).filter(|&j| cfg.in_u0(u[j])).ok_or_else(|| {
            Error::invalid(format!("u0={v} is not a node inside U0 for J={}", cfg.nodes))
        })?),
        None => None,
    };

    if cfg.two_step && check_benchmark(system).is_ok() {
        let mut weights = identity_weights(u.len(), rows);
        for j in 0..u.len() {
            if !cfg.in_u0(u[j]) {
                continue;
            }
            if let Ok(s) = sigma_nsp(cells, system, &result.g[j]) {
                if let Ok(inv) = s.inverse_psd() {
                    if Some(j) == u0_index {
                        sigma_at_u0 = Some(s);
                    }
                    weights[j] = inv;
                }
            }
        }
        problem.weights = weights;
        result = solver::solve(&problem, result.g.clone(), cfg.max_sweeps, cfg.tolerance);
    }

    let inference = match u0_index {
        Some(j) => {
            let sigma = match sigma_at_u0 {
                Some(s) => s,
                None => sigma_nsp(cells, system, &result.g[j])?,
            };
            Some(pointwise_inference(system, &result.g, j, u[j], &sigma, cells.sample_size(), h_g)?)
        }
        None => None,
    };

    Ok(NonseparableFit {
        x0,
        u_nodes: u,
        g_hat: result.g,
        objective: result.objective,
        sweeps: result.sweeps,
        converged: result.converged,
        start,
        history: result.history,
        inference,
        n: cells.sample_size(),
        h_g,
    })
}

/// Covariance `[Π'Σ^{-1}Π]^{-1}/(n h_g)` and `J_NSP = n h_g Q̂(ĝ(u0), u0)`
/// at node `j`.
pub fn pointwise_inference(
    system: &PsiSystem<'_>,
    g: &NodeMatrix,
    j: usize,
    u0: f64,
    sigma: &SmallMatrix,
    n: usize,
    h_g: f64,
) -> Result<PointwiseInference> {
    let gj = &g[j];
    let sigma_inv = weak_if_singular(sigma.inverse_psd(), "sieve moment variance")?;
    let pi = system.jacobian(gj);
    let scale = n as f64 * h_g;
    let cov = efficient_covariance(&pi, &sigma_inv, scale)?;
    let se = cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let r: Vec<f64> = system.eval(gj).iter().map(|p| p - u0).collect();
    let df = (system.rows.len() - gj.len()) as u32;
    let j_nsp = JTest::new(scale * sigma_inv.quad_form(&r), df);
    let constraint_active = (0..gj.len()).any(|d| {
        (j > 0 && g[j - 1][d] == gj[d]) || (j + 1 < g.len() && g[j + 1][d] == gj[d])
    });
    Ok(PointwiseInference {
        u0,
        g_hat: gj.clone(),
        cov,
        se,
        j_nsp,
        sigma_hat: sigma.clone(),
        pi_hat: pi,
        constraint_active,
    })
}

/// Kernel sieve fit at `x0` through the matching points `(x_m1, x_m2)`.
/// `centre` seeds the normal-quantile and path-following starts (e.g. a
/// separable fit); the cell means at `x0` are used when absent.
#[allow(clippy::too_many_arguments)]
pub fn fit_nonseparable(
    sample: &Sample,
    x0: f64,
    xm: (f64, f64),
    bw: &Bandwidths,
    cfg: &SieveConfig,
    centre: Option<&[f64]>,
    u0: Option<f64>,
) -> Result<NonseparableFit> {
    cfg.validate()?;
    let cells = EstimatedCells {
        sample,
        h_p: bw.h_x,
        h: bw.h_g,
        h0: bw.h_0,
    };
    let points = benchmark_points(x0, xm.0, xm.1);
    let system = PsiSystem::build(&cells, &points, &MapSource::Estimated, cfg.y_bounds.as_deref())?;
    let u = cfg.u_nodes();
    let bounds = system.bounds.clone();
    let k = bounds.len();
    let mut pooled_mean = Vec::with_capacity(k);
    let mut pooled_sd = Vec::with_capacity(k);
    for d in 1..=k as u32 {
        let mut w = 0.0;
        let mut wy = 0.0;
        let mut wy2 = 0.0;
        for z in 0..sample.num_instruments() as u32 {
            let ls = sample.local_sums(x0, z, bw.h_g)?;
            let c = ls.levels[(d - 1) as usize];
            w += c.w;
            wy += c.wy;
            wy2 += c.wy2;
        }
        if !(w > 0.0) {
            return Err(Error::InsufficientLocalData {
                what: format!("level {d} near x0={x0:.4}"),
                mass: w,
                floor: 0.0,
            });
        }
        let m = wy / w;
        pooled_mean.push(m);
        pooled_sd.push((wy2 / w - m * m).max(1e-6).sqrt());
    }
    let centre: Vec<f64> = centre.map_or(pooled_mean, |c| c.to_vec());
    let inits = vec![
        equally_spaced(&u, &bounds),
        empirical_quantile_start(sample, x0, bw.h_g, &u, &bounds)?,
        normal_quantile_start(&u, &centre, &pooled_sd, &bounds),
        path_following_start(&system, cfg, &centre)?,
    ];
    fit_nonseparable_with(&cells, &system, x0, cfg, &inits, bw.h_g, u0)
}
