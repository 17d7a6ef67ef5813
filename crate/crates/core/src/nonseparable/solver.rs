//! Monotone node minimization.
//!
//! Without the roughness penalty the objective is a sum of per-node terms
//! coupled only through `g(u_{j-1}) ≤ g(u_j) ≤ g(u_{j+1})`. Each sweep visits
//! every node, moves each coordinate by golden section inside the interval
//! its neighbours allow, then tries a projected Gauss-Newton step on the
//! whole node. Only improving moves are kept, so every iterate is feasible
//! and the objective never increases.
//!
//! [`path_start`] builds an initial value by solving the node nearest the
//! median first and walking outward, each node started at its neighbour's
//! solution. It follows the monotone solution path instead of letting a
//! level drift to its bound where another level can absorb the residual.

use super::PsiSystem;
use crate::numerics::{golden_section, SmallMatrix};

/// Node values `g[j][d]` at `u_j = j/J`, `j = 1..=J`.
pub type NodeMatrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub g: NodeMatrix,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep (starting value first).
    pub history: Vec<f64>,
}

pub(crate) struct Problem<'s, 'a> {
    pub system: &'s PsiSystem<'a>,
    pub u: Vec<f64>,
    pub weights: Vec<SmallMatrix>,
    pub bounds: Vec<(f64, f64)>,
    pub lambda: f64,
}

impl Problem<'_, '_> {
    fn node_term(&self, j: usize, gj: &[f64]) -> f64 {
        let psi = self.system.eval(gj);
        let r: Vec<f64> = psi.iter().map(|p| p - self.u[j]).collect();
        self.weights[j].quad_form(&r) / self.u.len() as f64
    }

    fn rough_at(&self, g: &NodeMatrix, j: usize, d: usize) -> f64 {
        // second differences centred at j-1, j, j+1 that involve node j
        let nj = g.len();
        let mut s = 0.0;
        for c in j.saturating_sub(1)..=(j + 1).min(nj - 1) {
            if c == 0 || c + 1 >= nj {
                continue;
            }
            let v = g[c + 1][d] - 2.0 * g[c][d] + g[c - 1][d];
            s += v * v;
        }
        self.lambda * s
    }

    pub fn total(&self, g: &NodeMatrix) -> f64 {
        let mut t: f64 = (0..g.len()).map(|j| self.node_term(j, &g[j])).sum();
        if self.lambda > 0.0 {
            for d in 0..self.bounds.len() {
                for c in 1..g.len().saturating_sub(1) {
                    let v = g[c + 1][d] - 2.0 * g[c][d] + g[c - 1][d];
                    t += self.lambda * v * v;
                }
            }
        }
        t
    }

    /// Objective terms that depend on node `j`, with node `j` set to `gj`.
    fn local(&self, g: &NodeMatrix, j: usize, gj: &[f64]) -> f64 {
        let mut v = self.node_term(j, gj);
        if self.lambda > 0.0 {
            let mut trial = g.clone();
            trial[j] = gj.to_vec();
            for d in 0..self.bounds.len() {
                v += self.rough_at(&trial, j, d);
            }
        }
        v
    }

    fn box_for(&self, g: &NodeMatrix, j: usize) -> (Vec<f64>, Vec<f64>) {
        let k = self.bounds.len();
        let lo = (0..k)
            .map(|d| if j == 0 { self.bounds[d].0 } else { g[j - 1][d] })
            .collect();
        let hi = (0..k)
            .map(|d| if j + 1 == g.len() { self.bounds[d].1 } else { g[j + 1][d] })
            .collect();
        (lo, hi)
    }

    /// Golden section on coordinate `d` of `x` inside `[lo, hi]`; keeps the
    /// move only if it improves `f`.
    fn coordinate_move(&self, f: &dyn Fn(&[f64]) -> f64, x: &mut [f64], d: usize, lo: f64, hi: f64) {
        if !(hi > lo) {
            return;
        }
        let current = f(x);
        let tol = 1e-10 * (self.bounds[d].1 - self.bounds[d].0);
        let mut trial = x.to_vec();
        let (t, v) = golden_section(
            |t| {
                trial[d] = t;
                f(&trial)
            },
            lo,
            hi,
            tol,
            200,
        );
        if v < current {
            x[d] = t;
        }
    }

    /// Projected Gauss-Newton step on node `j` inside the box, with
    /// step halving; keeps the move only if it improves `f`.
    fn gauss_newton(&self, f: &dyn Fn(&[f64]) -> f64, j: usize, x: &mut [f64], lo: &[f64], hi: &[f64]) {
        let k = self.bounds.len();
        let gj = x.to_vec();
        let psi = self.system.eval(&gj);
        let r: Vec<f64> = psi.iter().map(|p| p - self.u[j]).collect();
        let rows = r.len();
        let mut jac = SmallMatrix::zeros(rows, k);
        for d in 0..k {
            let step = 1e-5 * (self.bounds[d].1 - self.bounds[d].0);
            let a = (gj[d] - step).max(lo[d]);
            let b = (gj[d] + step).min(hi[d]);
            if !(b > a) {
                return;
            }
            let mut up = gj.clone();
            up[d] = b;
            let mut dn = gj.clone();
            dn[d] = a;
            let pu = self.system.eval(&up);
            let pd = self.system.eval(&dn);
            for i in 0..rows {
                jac[(i, d)] = (pu[i] - pd[i]) / (b - a);
            }
        }
        let w = &self.weights[j];
        let Ok(jt_w) = jac.transpose().matmul(w) else { return };
        let Ok(a) = jt_w.matmul(&jac) else { return };
        let Ok(rhs) = jt_w.mul_vec(&r) else { return };
        let Ok(chol) = a.symmetrize().cholesky() else { return };
        let step = chol.solve_vec(&rhs);
        let current = f(x);
        let mut scale = 1.0;
        for _ in 0..8 {
            let cand: Vec<f64> = (0..k)
                .map(|d| (gj[d] - scale * step[d]).clamp(lo[d], hi[d]))
                .collect();
            if f(&cand) < current {
                x.copy_from_slice(&cand);
                return;
            }
            scale *= 0.5;
        }
    }

    fn improve_node(&self, g: &mut NodeMatrix, j: usize) {
        let (lo, hi) = self.box_for(g, j);
        let snapshot = g.clone();
        let f = |gj: &[f64]| self.local(&snapshot, j, gj);
        let mut x = g[j].clone();
        for d in 0..self.bounds.len() {
            self.coordinate_move(&f, &mut x, d, lo[d], hi[d]);
        }
        self.gauss_newton(&f, j, &mut x, &lo, &hi);
        g[j] = x;
    }

    /// Minimize node `j`'s own term inside a box until moves stall.
    fn solve_node(&self, j: usize, x: &mut [f64], lo: &[f64], hi: &[f64]) {
        let f = |gj: &[f64]| self.node_term(j, gj);
        let mut current = f(x);
        for _ in 0..50 {
            self.gauss_newton(&f, j, x, lo, hi);
            for d in 0..self.bounds.len() {
                self.coordinate_move(&f, x, d, lo[d], hi[d]);
            }
            let next = f(x);
            if current - next < 1e-14 {
                break;
            }
            current = next;
        }
    }
}

/// Path-following initial value; see the module docs.
pub(crate) fn path_start(problem: &Problem<'_, '_>, centre: &[f64]) -> NodeMatrix {
    let nj = problem.u.len();
    let k = problem.bounds.len();
    let lo_b: Vec<f64> = problem.bounds.iter().map(|b| b.0).collect();
    let hi_b: Vec<f64> = problem.bounds.iter().map(|b| b.1).collect();
    let mid = (0..nj)
        .min_by(|&a, &b| (problem.u[a] - 0.5).abs().total_cmp(&(problem.u[b] - 0.5).abs()))
        .unwrap();
    let mut x: Vec<f64> = (0..k).map(|d| centre[d].clamp(lo_b[d], hi_b[d])).collect();
    problem.solve_node(mid, &mut x, &lo_b, &hi_b);
    let mut g = vec![x; nj];
    for j in mid + 1..nj {
        let mut x = g[j - 1].clone();
        let lo = g[j - 1].clone();
        problem.solve_node(j, &mut x, &lo, &hi_b);
        g[j] = x;
    }
    for j in (0..mid).rev() {
        let mut x = g[j + 1].clone();
        let hi = g[j + 1].clone();
        problem.solve_node(j, &mut x, &lo_b, &hi);
        g[j] = x;
    }
    g
}

pub(crate) fn solve(problem: &Problem<'_, '_>, init: NodeMatrix, max_sweeps: usize, tol: f64) -> SolveResult {
    let mut g = init;
    let mut obj = problem.total(&g);
    let mut history = vec![obj];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for j in 0..g.len() {
            problem.improve_node(&mut g, j);
        }
        let next = problem.total(&g);
        let gain = obj - next;
        obj = next.min(obj);
        history.push(obj);
        if gain < tol {
            converged = true;
            break;
        }
    }
    SolveResult {
        g,
        objective: obj,
        sweeps,
        converged,
        history,
    }
}

/// Every column weakly increasing and inside its bounds.
pub fn is_feasible(g: &NodeMatrix, bounds: &[(f64, f64)]) -> bool {
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let mut prev = lo;
        for row in g {
            let v = row[d];
            if !(v >= prev) || v > hi {
                return false;
            }
            prev = v;
        }
    }
    true
}
