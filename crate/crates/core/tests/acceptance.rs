//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The run exits 0 after reporting every criterion; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod support;

use matchpoint::montecarlo::{run_mc, McConfig, McReport, Stages, TargetRow};
use matchpoint::nonseparable::SieveConfig;
use matchpoint::numerics::chi_square_critical;
use matchpoint::{DgpSpec, OrderedChoiceSpec};
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn row<'a>(r: &'a McReport, name: &str) -> &'a TargetRow {
    r.table.targets.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("no row {name}"))
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn mc(cfg: McConfig) -> McReport {
    run_mc(&cfg).expect("valid configuration")
}

fn fmt3(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", parts.join(", "))
}

fn criterion1(bench: &McReport) -> Outcome {
    let means = [1.51, 2.88, 3.49];
    let mses = [0.06, 0.39, 0.12];
    let covs = [0.96, 0.95, 0.972];
    let mut pass = true;
    let mut avg = Vec::new();
    let mut mse = Vec::new();
    let mut cov = Vec::new();
    for d in 0..3 {
        let r = row(bench, &format!("m_{}", d + 1));
        let (a, m, c) = (r.average, r.mse.unwrap(), r.coverage95.unwrap());
        pass &= within(a, means[d], 0.10);
        pass &= m <= 1.5 * mses[d] && m >= mses[d] / 1.5;
        pass &= within(c, covs[d], 0.035);
        avg.push(a);
        mse.push(m);
        cov.push(100.0 * c);
    }
    Outcome {
        pass,
        detail: format!(
            "mean {} MSE {} cov95% {} ({} failed reps)",
            fmt3(&avg),
            fmt3(&mse),
            fmt3(&cov),
            bench.table.failures
        ),
    }
}

/// Acceptance rates recomputed from the per-replication statistics.
fn acceptance(r: &McReport, name: &str) -> f64 {
    let idx = r.config.jtests().iter().position(|n| n == name).unwrap();
    let mut hit = 0usize;
    let mut count = 0usize;
    for rec in r.records.iter().filter(|rec| rec.error.is_none()) {
        let j = &rec.jtests[idx];
        let crit = chi_square_critical(0.05, j.df).unwrap();
        count += 1;
        if j.statistic <= crit {
            hit += 1;
        }
    }
    hit as f64 / count as f64
}

fn criterion2(bench: &McReport) -> Outcome {
    let jx = acceptance(bench, "J_x");
    let jsp = acceptance(bench, "J_SP");
    let ok = |v: f64| (0.92..=0.99).contains(&v);
    Outcome {
        pass: ok(jx) && ok(jsp),
        detail: format!("P(J_x <= crit) = {:.1}%, P(J_SP <= crit) = {:.1}%", 100.0 * jx, 100.0 * jsp),
    }
}

fn criterion3() -> Outcome {
    let cfg = McConfig {
        n: 3000,
        reps: 200,
        stages: Stages { matching: true, separable: false, nonseparable: false },
        ..McConfig::default()
    };
    let r = mc(cfg);
    let hits = r
        .records
        .iter()
        .filter(|rec| rec.error.is_none() && within(rec.values[0], -2.0, 0.15) && within(rec.values[1], 2.0, 0.15))
        .count();
    let share = hits as f64 / r.records.len() as f64;
    let (found, nearest) = oracle::grid_argmin(500).expect("oracle grid");
    let pass = share >= 0.95 && found == nearest;
    Outcome {
        pass,
        detail: format!(
            "{:.1}% of 200 runs within 0.15 (need >= 95%), MSE ({:.3}, {:.3}); oracle grid argmin {:?} vs nearest {:?}",
            100.0 * share,
            row(&r, "x_m1").mse.unwrap(),
            row(&r, "x_m2").mse.unwrap(),
            found,
            nearest
        ),
    }
}

fn criterion4() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (x0, centre) in [(-0.3, [1.05, 2.1, 2.45]), (0.3, [1.95, 3.9, 4.55])] {
        let r = mc(McConfig { n: 3000, x0, ..McConfig::default() });
        let avg: Vec<f64> = (1..=3).map(|d| row(&r, &format!("m_{d}")).average).collect();
        pass &= avg.iter().zip(centre).all(|(a, c)| within(*a, c, 0.10));
        detail.push(format!("x0={x0}: mean {}", fmt3(&avg)));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn criterion5(bench: &McReport) -> Outcome {
    let weak = OrderedChoiceSpec { alpha: 0.16, beta: 0.08, ..OrderedChoiceSpec::default() };
    let r = mc(McConfig { dgp: DgpSpec::OrderedChoice(weak), ..McConfig::default() });
    let w = row(&r, "m_2");
    let b = row(bench, "m_2");
    let ratio = w.mse.unwrap() / b.mse.unwrap();
    let bias = w.average - w.truth.unwrap();
    Outcome {
        pass: ratio > 20.0 && bias.abs() < 0.25,
        detail: format!(
            "MSE(m_2) {:.3} vs {:.3} (ratio {:.1}), mean bias {:.3} ({} failed reps)",
            w.mse.unwrap(),
            b.mse.unwrap(),
            ratio,
            bias,
            r.table.failures
        ),
    }
}

fn criterion6() -> Outcome {
    let (q0, qs) = oracle::qx_at_truth().expect("oracle propensities");
    let sep = oracle::separable_error().expect("oracle separable fit");
    let sieve = oracle::sieve_error(20).expect("oracle sieve fit");
    Outcome {
        pass: q0 == 0.0 && qs < 1e-28 && sep < 1e-9 && sieve < 1e-3,
        detail: format!("Q_x at truth {q0:e} (shifted x0: {qs:.1e}); max |m - m*| {sep:.1e}; max interior |g - g*| {sieve:.1e}"),
    }
}

fn criterion7() -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in support::CHECKS {
        for seed in 0..10 {
            if let Err(e) = check(seed) {
                failed.push(format!("{name} (seed {seed}): {e}"));
                break;
            }
        }
    }
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} property checks x 10 seeds", support::CHECKS.len())
        } else {
            failed.join("; ")
        },
    }
}

fn criterion8() -> Outcome {
    let cfg = McConfig {
        n: 5000,
        reps: 200,
        stages: Stages { matching: true, separable: true, nonseparable: true },
        sieve: SieveConfig { nodes: 20, ..SieveConfig::default() },
        ..McConfig::default()
    };
    let r = mc(cfg);
    let names = r.config.targets();
    let first: Vec<_> = r.records.iter().filter(|rec| rec.error.is_none()).take(20).collect();
    let median = |name: &str| {
        let i = names.iter().position(|(n, _)| n == name).unwrap();
        let mut v: Vec<f64> = first.iter().map(|rec| rec.values[i]).collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let g_truth = [1.5, 3.0, 3.5];
    let spread_truth = 1.6832;
    let mut pass = first.len() == 20;
    let mut g = Vec::new();
    let mut spread = Vec::new();
    let mut cov = Vec::new();
    for d in 1..=3 {
        let gm = median(&format!("g_{d}(0.5)"));
        let sm = median(&format!("spread_{d}(0.2-0.8)"));
        let c = row(&r, &format!("g_{d}(0.5)")).coverage95.unwrap();
        pass &= within(gm, g_truth[d - 1], 0.2) && within(sm, spread_truth, 0.3) && (0.90..=0.99).contains(&c);
        g.push(gm);
        spread.push(sm);
        cov.push(100.0 * c);
    }
    Outcome {
        pass,
        detail: format!(
            "median g(0.5) {} spread {} over 20 seeds; cov95% {} over 200 ({} failed reps)",
            fmt3(&g),
            fmt3(&spread),
            fmt3(&cov),
            r.table.failures
        ),
    }
}

fn report(n: usize, o: Outcome, start: Instant, failed: &mut Vec<usize>) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {tag}  {}  [{:.1?}]", o.detail, start.elapsed());
    if !o.pass {
        failed.push(n);
    }
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    let t = Instant::now();
    let bench = mc(McConfig::default());
    report(1, criterion1(&bench), t, &mut failed);
    report(2, criterion2(&bench), t, &mut failed);
    let t = Instant::now();
    report(3, criterion3(), t, &mut failed);
    let t = Instant::now();
    report(4, criterion4(), t, &mut failed);
    let t = Instant::now();
    report(5, criterion5(&bench), t, &mut failed);
    let t = Instant::now();
    report(6, criterion6(), t, &mut failed);
    let t = Instant::now();
    report(7, criterion7(), t, &mut failed);
    let t = Instant::now();
    report(8, criterion8(), t, &mut failed);
    println!("{} of 8 criteria passed; failed: {:?}", 8 - failed.len(), failed);
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
