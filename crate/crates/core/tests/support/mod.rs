//! Property checks shared by the proptest suite and the acceptance run.
//! Each check draws its inputs from `seed` and returns a message on the
//! first violation.

#![allow(dead_code)]

use matchpoint::cells::{CellModel, EstimatedCells};
use matchpoint::kreg::{smoothed_cond_cdf, BandwidthRule};
use matchpoint::matching::{estimate_matching_set, two_step_matching, EstimatedPropensity, Grid, MatchingConfig};
use matchpoint::montecarlo::{run_mc, summarize, McConfig};
use matchpoint::nonseparable::{fit_nonseparable, is_feasible, phi_hat, NodeMatrix, SieveConfig};
use matchpoint::numerics::RngStream;
use matchpoint::points::benchmark_points;
use matchpoint::separable::fit_separable;
use matchpoint::{Bandwidths, Dgp, Location, OrderedChoiceSpec, Sample, SmallMatrix};

pub type Check = fn(u64) -> Result<(), String>;

/// Named checks in a fixed order.
pub const CHECKS: [(&str, Check); 10] = [
    ("propensity simplex", propensity_simplex),
    ("CDF monotonicity", cdf_monotone),
    ("phi monotonicity", phi_monotone),
    ("sieve feasible-set exactness", feasible_set_exact),
    ("MSE = bias^2 + variance", mse_identity),
    ("PSD covariances", psd_covariances),
    ("J >= 0", j_nonnegative),
    ("argmin invariant to weight scale", argmin_scale_invariant),
    ("set estimate monotone in slack", set_monotone_in_slack),
    ("determinism under fixed seeds", determinism),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Benchmark design with `alpha`, `beta` and `rho` perturbed by the seed.
pub fn spec_for(seed: u64) -> OrderedChoiceSpec {
    let mut rng = RngStream::new(seed ^ 0x5eed);
    OrderedChoiceSpec {
        alpha: rng.uniform_range(0.6, 1.0),
        beta: rng.uniform_range(0.3, 0.5),
        rho: rng.uniform_range(-0.6, 0.6),
        ..OrderedChoiceSpec::default()
    }
}

pub fn sample_for(seed: u64, n: usize) -> Sample {
    spec_for(seed).simulate(n, &mut RngStream::new(seed)).unwrap()
}

fn bandwidths(s: &Sample) -> Bandwidths {
    Bandwidths::from_rule(s, &BandwidthRule::default()).unwrap()
}

pub fn propensity_simplex(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 800);
    let bw = bandwidths(&s);
    let mut rng = RngStream::new(seed);
    for _ in 0..20 {
        let x = rng.uniform_range(-2.0, 2.0);
        let z = rng.bernoulli(0.5) as u32;
        let p = s.local_sums(x, z, bw.h_x).and_then(|l| l.propensities());
        let Ok(p) = p else { continue };
        let sum: f64 = p.iter().sum();
        ensure((sum - 1.0).abs() < 1e-12, || format!("sum {sum} at x={x}"))?;
        ensure(p.iter().all(|v| (0.0..=1.0).contains(v)), || format!("{p:?} at x={x}"))?;
    }
    Ok(())
}

pub fn cdf_monotone(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 800);
    let bw = bandwidths(&s);
    let mut rng = RngStream::new(seed);
    for d in 1..=3 {
        let x = rng.uniform_range(-1.5, 1.5);
        let z = rng.bernoulli(0.5) as u32;
        let mut prev = 0.0;
        for i in 0..=80 {
            let y = -12.0 + 0.3 * i as f64;
            let Ok(f) = smoothed_cond_cdf(&s, y, d, x, z, bw.h_g, bw.h_0) else {
                break;
            };
            ensure((0.0..=1.0).contains(&f) && f >= prev, || format!("F({y}) = {f} after {prev}"))?;
            prev = f;
        }
    }
    Ok(())
}

pub fn phi_monotone(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 1500);
    let bw = bandwidths(&s);
    let cells = EstimatedCells { sample: &s, h_p: bw.h_x, h: bw.h_g, h0: bw.h_0 };
    let mut rng = RngStream::new(seed);
    let from = Location::new(0.0, rng.bernoulli(0.5) as u32);
    let to = Location::new(rng.uniform_range(-1.5, 1.5), 1 - from.z);
    for d in 1..=3 {
        let Ok((lo, hi)) = cells.y_bounds(d) else { continue };
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=40 {
            let y = lo + (hi - lo) * i as f64 / 40.0;
            let Ok(v) = phi_hat(&cells, y, d, from, to) else { break };
            ensure(v >= prev - 1e-9 && v >= lo && v <= hi, || format!("phi({y}) = {v} after {prev}"))?;
            prev = v;
        }
    }
    Ok(())
}

fn monotone_in_bounds(g: &NodeMatrix, bounds: &[(f64, f64)]) -> bool {
    (0..bounds.len()).all(|d| {
        g.iter().all(|r| r[d] >= bounds[d].0 && r[d] <= bounds[d].1)
            && g.windows(2).all(|w| w[0][d] <= w[1][d])
    })
}

/// `is_feasible` agrees with the definition on random matrices, and a
/// fitted sieve lies in the set.
pub fn feasible_set_exact(seed: u64) -> Result<(), String> {
    let mut rng = RngStream::new(seed);
    let bounds = [(-1.0, 1.0), (0.0, 2.0)];
    for _ in 0..200 {
        let rows = 2 + (rng.next_u64() % 5) as usize;
        let mut g: NodeMatrix = Vec::new();
        let mut base = [rng.uniform_range(-1.2, 0.0), rng.uniform_range(-0.2, 1.0)];
        for _ in 0..rows {
            for (d, b) in base.iter_mut().enumerate() {
                *b += rng.uniform_range(-0.05, 0.4) * (d + 1) as f64;
            }
            g.push(base.to_vec());
        }
        ensure(is_feasible(&g, &bounds) == monotone_in_bounds(&g, &bounds), || format!("{g:?}"))?;
    }
    let s = sample_for(seed, 2000);
    let bw = bandwidths(&s);
    let m = two_step_matching(&s, bw.h_x, &MatchingConfig { grid_size: 150, ..MatchingConfig::default() })
        .map_err(|e| e.to_string())?;
    let cfg = SieveConfig { nodes: 8, two_step: false, ..SieveConfig::default() };
    let fit = fit_nonseparable(&s, 0.0, (m.xm1_hat, m.xm2_hat), &bw, &cfg, None, None).map_err(|e| e.to_string())?;
    let bounds: Vec<(f64, f64)> = (1..=3).map(|d| s.y_range(d).unwrap()).collect();
    ensure(is_feasible(&fit.g_hat, &bounds), || format!("fit not feasible: {:?}", fit.g_hat))
}

pub fn mse_identity(seed: u64) -> Result<(), String> {
    let mut rng = RngStream::new(seed);
    let n = 1 + (rng.next_u64() % 50) as usize;
    let truth = rng.uniform_range(-3.0, 3.0);
    let values: Vec<f64> = (0..n).map(|_| truth + rng.standard_normal() + 0.5).collect();
    let se = vec![Some(1.0); n];
    let row = summarize("t", Some(truth), &values, &se);
    let direct = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n as f64;
    let mse = row.mse.unwrap();
    ensure((mse - row.bias2.unwrap() - row.variance).abs() < 1e-12, || format!("{row:?}"))?;
    ensure((mse - direct).abs() < 1e-10 * (1.0 + direct), || format!("{mse} vs {direct}"))
}

fn psd(m: &SmallMatrix) -> bool {
    let scale = m.max_abs().max(1e-300);
    m.is_symmetric(1e-10 * scale) && m.symmetric_eigenvalues().unwrap().iter().all(|&e| e >= -1e-10 * scale)
}

pub fn psd_covariances(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 2000);
    let bw = bandwidths(&s);
    let Ok(m) = two_step_matching(&s, bw.h_x, &MatchingConfig { grid_size: 150, ..MatchingConfig::default() }) else {
        return Ok(());
    };
    ensure(psd(&m.cov) && psd(&m.sigma_x_hat), || format!("matching cov {:?}", m.cov))?;
    let pts = benchmark_points(0.0, m.xm1_hat, m.xm2_hat);
    if let Ok(f) = fit_separable(&s, 0.0, &pts, &bw, true) {
        ensure(psd(&f.cov) && psd(&f.sigma_hat), || format!("separable cov {:?}", f.cov))?;
    }
    Ok(())
}

pub fn j_nonnegative(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 1500);
    let bw = bandwidths(&s);
    let Ok(m) = two_step_matching(&s, bw.h_x, &MatchingConfig { grid_size: 120, ..MatchingConfig::default() }) else {
        return Ok(());
    };
    for j in [&m.j_x, &m.j_x1, &m.j_x2] {
        ensure(j.statistic >= 0.0, || format!("{j:?}"))?;
    }
    let pts = benchmark_points(0.0, m.xm1_hat, m.xm2_hat);
    for two in [false, true] {
        if let Ok(f) = fit_separable(&s, 0.0, &pts, &bw, two) {
            let j = f.j_sp.unwrap();
            ensure(j.statistic >= 0.0, || format!("{j:?}"))?;
        }
    }
    Ok(())
}

pub fn argmin_scale_invariant(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 1000);
    let bw = bandwidths(&s);
    let model = EstimatedPropensity::new(&s, bw.h_x);
    let grid = Grid::new(-2.4, 2.4, 60).unwrap();
    let mut rng = RngStream::new(seed);
    let w = SmallMatrix::from_diag(&[0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform()]);
    let c = rng.uniform_range(0.1, 10.0);
    let (Ok(a), Ok(b)) = (
        estimate_matching_set(&model, 0.0, grid, &w, 0.0),
        estimate_matching_set(&model, 0.0, grid, &w.scale(c), 0.0),
    ) else {
        return Ok(());
    };
    ensure((a.argmin.i, a.argmin.j) == (b.argmin.i, b.argmin.j), || format!("c={c}: {:?} vs {:?}", a.argmin, b.argmin))
}

pub fn set_monotone_in_slack(seed: u64) -> Result<(), String> {
    let s = sample_for(seed, 1000);
    let bw = bandwidths(&s);
    let model = EstimatedPropensity::new(&s, bw.h_x);
    let grid = Grid::new(-2.4, 2.4, 50).unwrap();
    let w = SmallMatrix::identity(4);
    let mut prev: Option<Vec<(usize, usize)>> = None;
    for a in [0.0, 1e-4, 1e-3, 1e-2, 1e-1] {
        let Ok(set) = estimate_matching_set(&model, 0.0, grid, &w, a * a) else {
            return Ok(());
        };
        let cur: Vec<(usize, usize)> = set.pairs.iter().map(|p| (p.i, p.j)).collect();
        ensure(cur.contains(&(set.argmin.i, set.argmin.j)), || "argmin outside set".into())?;
        if let Some(p) = &prev {
            ensure(p.iter().all(|x| cur.contains(x)), || format!("set shrank at a_n={a}"))?;
        }
        prev = Some(cur);
    }
    Ok(())
}

pub fn determinism(seed: u64) -> Result<(), String> {
    let a = sample_for(seed, 500);
    let b = sample_for(seed, 500);
    ensure(a.y() == b.y() && a.d() == b.d() && a.x() == b.x() && a.z() == b.z(), || "sample differs".into())?;
    let cfg = McConfig { n: 600, reps: 3, grid_size: 80, seed, ..McConfig::default() };
    let r1 = run_mc(&cfg).map_err(|e| e.to_string())?;
    let r2 = run_mc(&cfg).map_err(|e| e.to_string())?;
    ensure(r1 == r2, || "Monte Carlo report differs".into())
}
